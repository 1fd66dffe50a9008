"""Cross-entropy loss, AdaDelta with L2 weight decay, and the training loop.

Training is deterministic given the seed in ``TrainSpec``: the stratified
validation split, the per-epoch batch shuffles, and the dropout masks all
draw from one generator in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, EncodedDocument
from .models import Model
from .neural import ParamTensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainSpec:
    batch_size: int = 128
    rho: float = 0.95
    epsilon: float = 1e-5
    weight_decay: float = 5e-4
    dropout_rate: float = 0.5
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")


@dataclass
class OptimizerState:
    """Per-parameter decayed accumulators of g^2 and update^2."""

    eg2: dict[str, np.ndarray]
    edx2: dict[str, np.ndarray]

    @classmethod
    def zeros_for(cls, params: list[ParamTensor]) -> "OptimizerState":
        return cls(
            eg2={p.name: np.zeros_like(p.value) for p in params},
            edx2={p.name: np.zeros_like(p.value) for p in params},
        )


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_acc: float
    best: bool

    def line(self) -> str:
        return f"{self.epoch}\t{self.train_loss:.6f}\t{self.val_acc:.6f}\t{int(self.best)}"


def cross_entropy(p: np.ndarray, y: int) -> float:
    """-log p[y] with a 1e-12 floor; y is a 1-based class id."""
    if not 1 <= y <= p.shape[0]:
        raise ValueError(f"class id {y} outside 1..{p.shape[0]}")
    return -math.log(max(float(p[y - 1]), PROB_FLOOR))


def cross_entropy_grad(p: np.ndarray, y: int) -> np.ndarray:
    """dL/dp for the clamped cross-entropy: -1/p[y] on the true class."""
    if not 1 <= y <= p.shape[0]:
        raise ValueError(f"class id {y} outside 1..{p.shape[0]}")
    d = np.zeros_like(p)
    d[y - 1] = -1.0 / max(float(p[y - 1]), PROB_FLOOR)
    return d


def adadelta_step(
    params: list[ParamTensor], state: OptimizerState, spec: TrainSpec
) -> None:
    """One AdaDelta update over all parameters, in place.

    Weight decay enters as an additive gradient term, skipped for
    parameters flagged ``no_decay``.  The frozen pad embedding row has
    zero gradient and zero value, so it never moves.
    """
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
        if spec.weight_decay != 0 and not p.no_decay:
            g = g + spec.weight_decay * p.value
        eg2 = state.eg2[p.name]
        edx2 = state.edx2[p.name]
        eg2 *= spec.rho
        eg2 += (1 - spec.rho) * g * g
        dx = -np.sqrt(edx2 + spec.epsilon) / np.sqrt(eg2 + spec.epsilon) * g
        edx2 *= spec.rho
        edx2 += (1 - spec.rho) * dx * dx
        p.value += dx


def stratified_split(
    labels: list[int], val_fraction: float, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Per-class shuffled split into (train, val) index lists.

    Fails if any class would lose all its documents to validation.
    """
    by_label: dict[int, list[int]] = {}
    for i, y in enumerate(labels):
        by_label.setdefault(y, []).append(i)
    train_idx: list[int] = []
    val_idx: list[int] = []
    for y in sorted(by_label):
        members = np.array(by_label[y])
        rng.shuffle(members)
        n_val = round(len(members) * val_fraction)
        if n_val == len(members):
            raise ValueError(f"class {y} would have no training documents")
        val_idx.extend(int(i) for i in members[:n_val])
        train_idx.extend(int(i) for i in members[n_val:])
    return sorted(train_idx), sorted(val_idx)


def batch_loss_and_grads(
    model: Model,
    docs: list[EncodedDocument],
    train: bool = True,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean cross-entropy over docs; gradients of that mean accumulate
    into the model (in document order, so results are worker-independent)."""
    model.zero_grads()
    total = 0.0
    scale = 1.0 / len(docs)
    for doc in docs:
        p, cache = model.forward(doc.ids, train=train, rng=rng)
        total += cross_entropy(p, doc.label)
        model.backward(cache, cross_entropy_grad(p, doc.label) * scale)
    return total * scale


def evaluate_accuracy(model: Model, docs: list[EncodedDocument] | tuple) -> float:
    """Fraction of documents whose argmax class matches the label.

    Probability ties resolve to the smallest class id (argmax takes the
    first maximum).
    """
    if len(docs) == 0:
        raise ValueError("cannot evaluate accuracy on an empty document list")
    hits = 0
    for doc in docs:
        p, _ = model.forward(doc.ids, train=False)
        if int(np.argmax(p)) + 1 == doc.label:
            hits += 1
    return hits / len(docs)


def train(
    model: Model, corpus: Corpus, spec: TrainSpec
) -> tuple[Model, list[EpochLog]]:
    """Mini-batch AdaDelta training with early stopping.

    Splits off a stratified validation set, shuffles batches each epoch,
    applies dropout in train mode, and keeps the parameter snapshot from
    the epoch with the best validation accuracy.  Stops after ``patience``
    epochs without improvement or at ``max_epochs``.  With an empty
    validation split (small corpora or val_fraction 0) epochs are scored
    on the training split instead.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    if spec.max_epochs == 0:
        return model, []

    rng = np.random.default_rng(spec.seed)
    labels = corpus.labels()
    train_idx, val_idx = stratified_split(labels, spec.val_fraction, rng)
    train_docs = [corpus.docs[i] for i in train_idx]
    score_docs = [corpus.docs[i] for i in val_idx] if val_idx else train_docs

    # Training uses the spec's dropout rate regardless of how the model
    # was configured for inference.
    effective_model = model
    if model.config.dropout_rate != spec.dropout_rate:
        effective_model = Model(
            config=_with_dropout(model.config, spec.dropout_rate), params=model.params
        )

    state = OptimizerState.zeros_for(model.param_list())
    log: list[EpochLog] = []
    best_val = -1.0
    best_values = model.copy_param_values()
    epochs_since_best = 0

    for epoch in range(1, spec.max_epochs + 1):
        order = np.arange(len(train_docs))
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), spec.batch_size):
            batch = [train_docs[i] for i in order[start : start + spec.batch_size]]
            loss = batch_loss_and_grads(effective_model, batch, train=True, rng=rng)
            epoch_loss += loss * len(batch)
            adadelta_step(model.param_list(), state, spec)
        epoch_loss /= len(train_docs)

        val_acc = evaluate_accuracy(model, score_docs)
        improved = val_acc > best_val
        if improved:
            best_val = val_acc
            best_values = model.copy_param_values()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        log.append(EpochLog(epoch, epoch_loss, val_acc, improved))
        if epochs_since_best >= spec.patience:
            break

    model.set_param_values(best_values)
    return model, log


def _with_dropout(config, rate):
    from dataclasses import replace

    return replace(config, dropout_rate=rate)


def write_training_log(log: list[EpochLog]) -> str:
    """Tab-separated epoch lines: epoch, train_loss, val_acc, best_flag."""
    return "".join(entry.line() + "\n" for entry in log)
