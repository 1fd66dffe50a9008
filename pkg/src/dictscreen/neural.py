"""Dense layers with hand-derived reverse-mode gradients.

All functions preserve the dtype of their inputs (float32 in normal use,
float64 when a test wants tighter finite-difference agreement).  Forward
passes are pure; backward passes return gradients rather than mutating,
except ``embedding_backward`` which accumulates into a provided buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamTensor:
    """Named parameter with a gradient buffer of matching shape.

    ``no_decay`` marks parameters (biases) exempt from L2 weight decay.
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    no_decay: bool = False

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self) -> None:
        self.grad.fill(0)


def embedding_forward(ids: np.ndarray, emb: np.ndarray) -> np.ndarray:
    """Row lookup: output[t] = emb[ids[t]].  Row 0 stays the zero vector."""
    if ids.size and (ids.min() < 0 or ids.max() >= emb.shape[0]):
        raise ValueError(
            f"id out of range: ids span [{ids.min()}, {ids.max()}], "
            f"embedding has {emb.shape[0]} rows"
        )
    return emb[ids]


def embedding_backward(ids: np.ndarray, d_out: np.ndarray, emb_grad: np.ndarray) -> None:
    """Accumulate d_out rows into emb_grad at their ids.

    Repeated ids sum.  Id 0 is skipped: the pad row is frozen at zero, so
    its gradient is zero by definition.
    """
    np.add.at(emb_grad, ids, d_out)
    emb_grad[0] = 0


def conv_maxpool_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Valid 1-D convolution, ReLU, then max over time per filter.

    x: [T, d1]; w: [k, d1, F]; b: [F].  Produces T-k+1 frames before the
    max reduces them to a single F-vector.
    """
    T, d1 = x.shape
    k, d1w, F = w.shape
    if d1 != d1w:
        raise ValueError(f"input width {d1} != kernel width {d1w}")
    if T < k:
        raise ValueError(f"sequence length T={T} shorter than kernel size k={k}")
    n_frames = T - k + 1
    frames = np.empty((n_frames, k * d1), dtype=x.dtype)
    for u in range(k):
        frames[:, u * d1 : (u + 1) * d1] = x[u : u + n_frames]
    z = frames @ w.reshape(k * d1, F) + b
    a = np.maximum(z, 0)
    best = a.argmax(axis=0)
    out = a[best, np.arange(F)]
    return out, (frames, w, z, best, T)


def conv_maxpool_backward(
    cache: tuple, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient flows only through each filter's winning frame, gated by ReLU."""
    frames, w, z, best, T = cache
    k, d1, F = w.shape
    n_frames = frames.shape[0]
    dz = np.zeros_like(z)
    cols = np.arange(F)
    dz[best, cols] = d_out * (z[best, cols] > 0)
    wm = w.reshape(k * d1, F)
    dw = (frames.T @ dz).reshape(k, d1, F)
    db = dz.sum(axis=0)
    dframes = dz @ wm.T
    dx = np.zeros((T, d1), dtype=frames.dtype)
    for u in range(k):
        dx[u : u + n_frames] += dframes[:, u * d1 : (u + 1) * d1]
    return dx, dw, db


def rnn_forward(
    x: np.ndarray, wxh: np.ndarray, whh: np.ndarray, bh: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """tanh recurrence h_t = tanh(x_t Wxh + h_{t-1} Whh + bh), h_0 = 0.

    Returns the final hidden state; the cache holds every h_t for BPTT.
    """
    T = x.shape[0]
    d2 = bh.shape[0]
    hs = np.zeros((T + 1, d2), dtype=x.dtype)
    for t in range(T):
        hs[t + 1] = np.tanh(x[t] @ wxh + hs[t] @ whh + bh)
    return hs[T], (x, wxh, whh, hs)


def rnn_backward(
    cache: tuple, d_h: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Full backpropagation through time from a gradient on the last state."""
    x, wxh, whh, hs = cache
    T = x.shape[0]
    dx = np.zeros_like(x)
    dwxh = np.zeros_like(wxh)
    dwhh = np.zeros_like(whh)
    dbh = np.zeros_like(hs[0])
    dh = d_h.astype(x.dtype, copy=True)
    for t in range(T - 1, -1, -1):
        dpre = dh * (1 - hs[t + 1] ** 2)
        dwxh += np.outer(x[t], dpre)
        dwhh += np.outer(hs[t], dpre)
        dbh += dpre
        dx[t] = wxh @ dpre
        dh = whh @ dpre
    return dx, dwxh, dwhh, dbh


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max subtraction)."""
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def dense_softmax_forward(
    h: np.ndarray, w: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Affine map into class logits followed by softmax."""
    p = softmax(h @ w + b)
    return p, (h, w, p)


def dense_softmax_backward(
    cache: tuple, d_p: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Softmax Jacobian then the affine layer: dz = p * (dp - <dp, p>)."""
    h, w, p = cache
    dz = p * (d_p - np.dot(d_p, p))
    dw = np.outer(h, dz)
    db = dz
    dh = w @ dz
    return dh, dw, db


def dropout_forward(
    x: np.ndarray,
    rate: float,
    train: bool,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: kept entries scale by 1/(1-rate); eval is identity."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype)
    return x * mask / (1 - rate), mask


def dropout_backward(d_out: np.ndarray, mask: np.ndarray | None, rate: float) -> np.ndarray:
    if mask is None:
        return d_out
    return d_out * mask / (1 - rate)
