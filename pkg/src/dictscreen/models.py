"""Classifier assembly: embedding front end, one of three bodies, softmax head.

* ``textcnn``   — parallel valid convolutions (one per kernel size), ReLU,
                  max-over-time, concatenated into the dense input.
* ``simplernn`` — tanh recurrence; the final hidden state feeds the head.
* ``meanpool``  — mean of the non-pad embedding rows; cheap and exactly
                  hand-checkable, used heavily by tests.

Parameter counting follows the closed form used for reduction-ratio
arithmetic: the embedding term is D*d1 and biases are excluded unless asked
for, so counts line up with the ratios the reports quote.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .corpus import EncodedDocument
from .neural import (
    ParamTensor,
    conv_maxpool_backward,
    conv_maxpool_forward,
    dense_softmax_backward,
    dense_softmax_forward,
    dropout_backward,
    dropout_forward,
    embedding_backward,
    embedding_forward,
    rnn_backward,
    rnn_forward,
)

MODEL_KINDS = ("textcnn", "simplernn", "meanpool")

CHECKPOINT_MAGIC = "DSCKPT1"


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    D: int
    d1: int
    K: int
    T: int
    d2: int = 0
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    filters_per_kernel: int = 128
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.D < 1:
            raise ValueError(f"D must be >= 1, got {self.D}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.kind == "simplernn" and self.d2 < 1:
            raise ValueError("simplernn needs d2 >= 1")
        if self.kind == "textcnn":
            if not self.kernel_sizes:
                raise ValueError("textcnn needs at least one kernel size")
            if self.T < max(self.kernel_sizes):
                raise ValueError(
                    f"T={self.T} shorter than largest kernel {max(self.kernel_sizes)}"
                )
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def count_params(config: ModelConfig, include_bias: bool = False) -> int:
    """Closed-form parameter count; embedding term is D*d1.

    The physical embedding carries one extra frozen pad row that the
    reduction-ratio arithmetic ignores.
    """
    emb = config.D * config.d1
    if config.kind == "simplernn":
        total = emb + config.d2 * config.d1 + config.d2 * config.d2 + config.d2 * config.K
        if include_bias:
            total += config.d2 + config.K
    elif config.kind == "textcnn":
        F = config.filters_per_kernel
        conv = sum(k * config.d1 * F for k in config.kernel_sizes)
        total = emb + conv + len(config.kernel_sizes) * F * config.K
        if include_bias:
            total += len(config.kernel_sizes) * F + config.K
    else:  # meanpool
        total = emb + config.d1 * config.K
        if include_bias:
            total += config.K
    return total


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, ParamTensor]

    def param_list(self) -> list[ParamTensor]:
        return list(self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def copy_param_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def set_param_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            np.copyto(self.params[name].value, arr)

    def forward(
        self,
        ids: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[np.ndarray, tuple]:
        """Class probabilities for one id sequence, plus a backward cache."""
        cfg = self.config
        if ids.shape != (cfg.T,):
            raise ValueError(f"expected id sequence of shape ({cfg.T},), got {ids.shape}")
        if ids.max(initial=0) > cfg.D:
            raise ValueError(f"id {int(ids.max())} outside dictionary of size {cfg.D}")
        x = embedding_forward(ids, self.params["embedding"].value)

        if cfg.kind == "meanpool":
            denom = max(int(np.count_nonzero(ids)), 1)
            rep = x.sum(axis=0) / denom
            body_cache = (denom,)
        elif cfg.kind == "simplernn":
            rep, body_cache = rnn_forward(
                x,
                self.params["rnn_wxh"].value,
                self.params["rnn_whh"].value,
                self.params["rnn_bh"].value,
            )
            body_cache = (body_cache,)
        else:
            outs = []
            caches = []
            for k in cfg.kernel_sizes:
                out_k, cache_k = conv_maxpool_forward(
                    x, self.params[f"conv{k}_w"].value, self.params[f"conv{k}_b"].value
                )
                outs.append(out_k)
                caches.append(cache_k)
            rep = np.concatenate(outs)
            body_cache = (caches,)

        dropped, mask = dropout_forward(rep, cfg.dropout_rate, train, rng)
        p, head_cache = dense_softmax_forward(
            dropped, self.params["dense_w"].value, self.params["dense_b"].value
        )
        return p, (ids, body_cache, mask, head_cache)

    def backward(self, cache: tuple, d_p: np.ndarray) -> None:
        """Accumulate parameter gradients from a gradient on the probabilities."""
        cfg = self.config
        ids, body_cache, mask, head_cache = cache
        d_rep, dw, db = dense_softmax_backward(head_cache, d_p)
        self.params["dense_w"].grad += dw
        self.params["dense_b"].grad += db
        d_rep = dropout_backward(d_rep, mask, cfg.dropout_rate)

        if cfg.kind == "meanpool":
            (denom,) = body_cache
            dx = np.repeat((d_rep / denom)[None, :], cfg.T, axis=0)
        elif cfg.kind == "simplernn":
            dx, dwxh, dwhh, dbh = rnn_backward(body_cache[0], d_rep)
            self.params["rnn_wxh"].grad += dwxh
            self.params["rnn_whh"].grad += dwhh
            self.params["rnn_bh"].grad += dbh
        else:
            (caches,) = body_cache
            F = cfg.filters_per_kernel
            dx = None
            for j, k in enumerate(cfg.kernel_sizes):
                dx_k, dw_k, db_k = conv_maxpool_backward(
                    caches[j], d_rep[j * F : (j + 1) * F]
                )
                self.params[f"conv{k}_w"].grad += dw_k
                self.params[f"conv{k}_b"].grad += db_k
                dx = dx_k if dx is None else dx + dx_k
        embedding_backward(ids, dx, self.params["embedding"].grad)


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Seeded initialization: U(-0.05, 0.05) embeddings (pad row zeroed),
    fan-in-scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params: dict[str, ParamTensor] = {}

    emb = rng.uniform(-0.05, 0.05, size=(config.D + 1, config.d1)).astype(dtype)
    emb[0] = 0
    params["embedding"] = ParamTensor("embedding", emb)

    if config.kind == "simplernn":
        params["rnn_wxh"] = ParamTensor(
            "rnn_wxh", _fan_in_uniform(rng, (config.d1, config.d2), config.d1, dtype)
        )
        params["rnn_whh"] = ParamTensor(
            "rnn_whh", _fan_in_uniform(rng, (config.d2, config.d2), config.d2, dtype)
        )
        params["rnn_bh"] = ParamTensor(
            "rnn_bh", np.zeros(config.d2, dtype=dtype), no_decay=True
        )
        dense_in = config.d2
    elif config.kind == "textcnn":
        F = config.filters_per_kernel
        for k in config.kernel_sizes:
            params[f"conv{k}_w"] = ParamTensor(
                f"conv{k}_w", _fan_in_uniform(rng, (k, config.d1, F), k * config.d1, dtype)
            )
            params[f"conv{k}_b"] = ParamTensor(
                f"conv{k}_b", np.zeros(F, dtype=dtype), no_decay=True
            )
        dense_in = len(config.kernel_sizes) * F
    else:
        dense_in = config.d1

    params["dense_w"] = ParamTensor(
        "dense_w", _fan_in_uniform(rng, (dense_in, config.K), dense_in, dtype)
    )
    params["dense_b"] = ParamTensor("dense_b", np.zeros(config.K, dtype=dtype), no_decay=True)
    return Model(config=config, params=params)


def predict_proba(model: Model, doc: EncodedDocument) -> np.ndarray:
    """Eval-mode class probabilities for one document."""
    p, _ = model.forward(doc.ids, train=False)
    return p


def _write_param(fh: BinaryIO, p: ParamTensor) -> None:
    shape = " ".join(str(s) for s in p.value.shape)
    fh.write(f"{p.name} {shape}\n".encode("utf-8"))
    fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def save_checkpoint(model: Model, path: Path | str) -> None:
    """Binary checkpoint: one header line, then per-parameter name/shape
    lines each followed by the raw little-endian float32 buffer."""
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(
            f"{CHECKPOINT_MAGIC} {cfg.kind} {cfg.D} {cfg.d1} {cfg.d2} {cfg.K} {cfg.T}\n".encode()
        )
        for p in model.params.values():
            _write_param(fh, p)


def load_checkpoint(path: Path | str) -> Model:
    """Rebuild a model from a checkpoint; byte-exact round trip with save.

    Kernel sizes and filter counts come back from the conv parameter
    records.  The dropout rate is not persisted (it only matters while
    training) and loads as 0.
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").split()
        if len(header) != 7 or header[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
        kind = header[1]
        D, d1, d2, K, T = (int(v) for v in header[2:])
        raw: dict[str, np.ndarray] = {}
        while True:
            line = fh.readline()
            if not line:
                break
            fields = line.decode("utf-8").split()
            name, shape = fields[0], tuple(int(s) for s in fields[1:])
            n = int(np.prod(shape))
            buf = fh.read(n * 4)
            if len(buf) != n * 4:
                raise ValueError(f"{path}: truncated buffer for parameter {name}")
            raw[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)

    if kind == "textcnn":
        kernel_sizes = tuple(
            sorted(int(name[4:-2]) for name in raw if name.startswith("conv") and name.endswith("_w"))
        )
        filters = raw[f"conv{kernel_sizes[0]}_w"].shape[2]
    else:
        kernel_sizes, filters = (3, 4, 5), 128
    config = ModelConfig(
        kind=kind,
        D=D,
        d1=d1,
        d2=d2,
        K=K,
        T=T,
        kernel_sizes=kernel_sizes,
        filters_per_kernel=filters,
        dropout_rate=0.0,
    )
    reference = build_model(config, seed=0)
    if set(reference.params) != set(raw):
        raise ValueError(f"{path}: parameter set does not match a {kind} model")
    params = {}
    for name, ref in reference.params.items():
        if raw[name].shape != ref.value.shape:
            raise ValueError(
                f"{path}: parameter {name} has shape {raw[name].shape}, expected {ref.value.shape}"
            )
        params[name] = ParamTensor(name, raw[name], no_decay=ref.no_decay)
    return Model(config=config, params=params)
