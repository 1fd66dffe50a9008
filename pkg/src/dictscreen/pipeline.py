"""End-to-end experiment orchestration.

A run walks: ingest -> train benchmark -> score keywords -> screen the
dictionary -> re-encode -> retrain from fresh initialization -> report.
Every stage persists its artifact in the output directory and is skipped
on re-run if the artifact already exists, so a run is resumable at any
point and reproduces byte-identical outputs from its intermediates.
Failures abort with the stage name; interrupted writes only ever leave
files with a ``.partial`` suffix.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .corpus import (
    Corpus,
    Dictionary,
    build_dictionary,
    encode_corpus,
    load_labeled_csv,
    reencode_corpus,
)
from .metrics import (
    CompressionReport,
    RunSummary,
    build_report,
    load_report,
    render_report_table,
    report_to_tsv,
)
from .models import Model, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .screening import (
    ScoreTable,
    cpe_scores,
    load_score_table,
    save_score_table,
    select_by_threshold,
    select_top_k,
    tfidf_scores,
    tstat_scores,
)
from .training import TrainSpec, evaluate_accuracy, stratified_split, train, write_training_log

ARTIFACTS = {
    "dictionary": "dictionary.txt",
    "benchmark_ckpt": "benchmark.ckpt",
    "benchmark_log": "benchmark_train.log",
    "scores": "scores.tsv",
    "screened_dictionary": "screened_dictionary.txt",
    "reduced_ckpt": "reduced.ckpt",
    "reduced_log": "reduced_train.log",
    "report_tsv": "report.tsv",
    "report_txt": "report.txt",
}

STAGES = ("ingest", "train", "score", "screen", "retrain", "report")


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for the CLI."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass
class StageCounters:
    """How many times each stage actually computed (vs loaded) its artifact."""

    computed: dict[str, int] = field(default_factory=dict)

    def bump(self, stage: str) -> None:
        self.computed[stage] = self.computed.get(stage, 0) + 1


_CONFIG_DEFAULTS = dict(
    dataset_name=None,
    pretokenized=False,
    token_separator=" ",
    min_count=1,
    max_dict_size=None,
    model="meanpool",
    d1=32,
    d2=32,
    T=None,
    kernel_sizes="3,4,5",
    filters=32,
    dropout=0.5,
    batch_size=128,
    rho=0.95,
    epsilon=1e-5,
    weight_decay=5e-4,
    max_epochs=200,
    patience=10,
    val_fraction=0.1,
    scorer="cpe",
    score_on="train",
    top_k=None,
    threshold=None,
    seed=0,
)


@dataclass(frozen=True)
class ExperimentConfig:
    train_csv: Path
    test_csv: Path
    out_dir: Path
    T: int
    dataset_name: str
    pretokenized: bool = False
    token_separator: str = " "
    min_count: int = 1
    max_dict_size: int | None = None
    model: str = "meanpool"
    d1: int = 32
    d2: int = 32
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    filters: int = 32
    dropout: float = 0.5
    batch_size: int = 128
    rho: float = 0.95
    epsilon: float = 1e-5
    weight_decay: float = 5e-4
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1
    scorer: str = "cpe"
    score_on: str = "train"
    top_k: int | None = None
    threshold: float | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.top_k is None) == (self.threshold is None):
            raise ValueError("exactly one of top_k / threshold must be set")
        if self.scorer not in ("cpe", "tfidf", "tstat"):
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.score_on not in ("train", "val"):
            raise ValueError(f"score_on must be 'train' or 'val', got {self.score_on!r}")

    def train_spec(self) -> TrainSpec:
        return TrainSpec(
            batch_size=self.batch_size,
            rho=self.rho,
            epsilon=self.epsilon,
            weight_decay=self.weight_decay,
            dropout_rate=self.dropout,
            max_epochs=self.max_epochs,
            patience=self.patience,
            val_fraction=self.val_fraction,
            seed=self.seed,
        )

    def model_config(self, d_size: int, n_classes: int) -> ModelConfig:
        return ModelConfig(
            kind=self.model,
            D=d_size,
            d1=self.d1,
            d2=self.d2 if self.model == "simplernn" else 0,
            K=n_classes,
            T=self.T,
            kernel_sizes=self.kernel_sizes,
            filters_per_kernel=self.filters,
            dropout_rate=self.dropout,
        )

    def digest(self) -> str:
        """Digest over everything that shapes the result, paths included
        but the output directory excluded."""
        parts = []
        for f in fields(self):
            if f.name == "out_dir":
                continue
            parts.append(f"{f.name}={getattr(self, f.name)}")
        return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()


def _parse_scalar(key: str, raw: str):
    if raw == "":
        return None
    if key in ("pretokenized",):
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"{key} must be true or false, got {raw!r}")
        return raw.lower() == "true"
    if key in ("min_count", "max_dict_size", "d1", "d2", "T", "filters", "batch_size",
               "max_epochs", "patience", "top_k", "seed"):
        return int(raw)
    if key in ("dropout", "rho", "epsilon", "weight_decay", "val_fraction", "threshold"):
        return float(raw)
    return raw


def load_config(path: Path | str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a flat `key = value` config file (# starts a comment)."""
    path = Path(path)
    raw: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        raw[key] = str(value)

    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {sorted(unknown)}")
    for required in ("train_csv", "test_csv", "out_dir", "T"):
        if required not in raw:
            raise ValueError(f"{path}: missing required key {required!r}")

    kwargs: dict[str, object] = dict(_CONFIG_DEFAULTS)
    kwargs.update({k: _parse_scalar(k, str(v)) for k, v in raw.items()})
    kwargs["train_csv"] = (path.parent / str(kwargs["train_csv"])).resolve()
    kwargs["test_csv"] = (path.parent / str(kwargs["test_csv"])).resolve()
    kwargs["out_dir"] = (path.parent / str(kwargs["out_dir"])).resolve()
    if kwargs["dataset_name"] is None:
        kwargs["dataset_name"] = Path(str(kwargs["train_csv"])).stem
    ks = kwargs["kernel_sizes"]
    if isinstance(ks, str):
        kwargs["kernel_sizes"] = tuple(int(v) for v in ks.split(",") if v.strip())
    return ExperimentConfig(**kwargs)  # type: ignore[arg-type]


def write_atomic(path: Path, data: bytes) -> None:
    """Write via a .partial sibling and rename; interrupted runs never
    leave a half-written final file."""
    tmp = path.with_name(path.name + ".partial")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir: Path) -> None:
    """Digest every artifact in the directory (manifest itself excluded)."""
    lines = []
    for p in sorted(out_dir.rglob("*")):
        if p.is_dir() or p.name == "manifest.txt" or p.name.endswith(".partial"):
            continue
        lines.append(f"{_sha256_file(p)}  {p.relative_to(out_dir).as_posix()}")
    write_atomic(out_dir / "manifest.txt", ("\n".join(lines) + "\n").encode("utf-8"))


@dataclass
class ExperimentContext:
    """Shared in-memory state across stage calls for one experiment run."""

    config: ExperimentConfig
    counters: StageCounters = field(default_factory=StageCounters)
    _train_rows: list | None = None
    _test_rows: list | None = None

    def path(self, artifact: str) -> Path:
        return self.config.out_dir / ARTIFACTS[artifact]

    def train_rows(self) -> list:
        if self._train_rows is None:
            self._train_rows = load_labeled_csv(
                self.config.train_csv, self.config.pretokenized, self.config.token_separator
            )
        return self._train_rows

    def test_rows(self) -> list:
        if self._test_rows is None:
            self._test_rows = load_labeled_csv(
                self.config.test_csv, self.config.pretokenized, self.config.token_separator
            )
        return self._test_rows

    def n_classes(self) -> int:
        return max(label for label, _ in self.train_rows())


def _stage(name: str):
    def decorate(fn):
        def wrapper(ctx: ExperimentContext, *args, **kwargs):
            try:
                return fn(ctx, *args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc

        wrapper.__name__ = fn.__name__
        return wrapper

    return decorate


@_stage("ingest")
def ensure_dictionary(ctx: ExperimentContext) -> Dictionary:
    path = ctx.path("dictionary")
    if path.exists():
        return Dictionary.load(path)
    ctx.config.out_dir.mkdir(parents=True, exist_ok=True)
    dictionary = build_dictionary(
        (tokens for _, tokens in ctx.train_rows()),
        min_count=ctx.config.min_count,
        max_size=ctx.config.max_dict_size,
    )
    write_atomic(path, ("\n".join(dictionary.entries) + "\n").encode("utf-8"))
    ctx.counters.bump("ingest")
    return dictionary


@_stage("ingest")
def ensure_corpora(ctx: ExperimentContext) -> tuple[Corpus, Corpus]:
    dictionary = ensure_dictionary(ctx)
    train_corpus = encode_corpus(ctx.train_rows(), dictionary, ctx.config.T)
    test_corpus = encode_corpus(ctx.test_rows(), dictionary, ctx.config.T)
    return train_corpus, test_corpus


@_stage("train")
def ensure_benchmark(ctx: ExperimentContext, train_corpus: Corpus) -> Model:
    path = ctx.path("benchmark_ckpt")
    if path.exists():
        return load_checkpoint(path)
    model_config = ctx.config.model_config(train_corpus.dictionary.size, ctx.n_classes())
    model = build_model(model_config, seed=ctx.config.seed)
    model, log = train(model, train_corpus, ctx.config.train_spec())
    write_atomic(ctx.path("benchmark_log"), write_training_log(log).encode("utf-8"))
    _save_checkpoint_atomic(model, path)
    ctx.counters.bump("train")
    return model


def _save_checkpoint_atomic(model: Model, path: Path) -> None:
    tmp = path.with_name(path.name + ".partial")
    save_checkpoint(model, tmp)
    os.replace(tmp, path)


@_stage("score")
def ensure_scores(ctx: ExperimentContext, model: Model, train_corpus: Corpus) -> ScoreTable:
    path = ctx.path("scores")
    if path.exists():
        return load_score_table(path)
    doc_indices = None
    if ctx.config.score_on == "val":
        rng = np.random.default_rng(ctx.config.seed)
        _, val_idx = stratified_split(train_corpus.labels(), ctx.config.val_fraction, rng)
        doc_indices = val_idx
    if ctx.config.scorer == "cpe":
        table = cpe_scores(model, train_corpus, doc_indices)
    elif ctx.config.scorer == "tstat":
        table = tstat_scores(model, train_corpus, doc_indices)
    else:
        table = tfidf_scores(train_corpus)
    tmp = path.with_name(path.name + ".partial")
    save_score_table(table, train_corpus, tmp)
    os.replace(tmp, path)
    ctx.counters.bump("score")
    return table


@_stage("screen")
def ensure_screened(ctx: ExperimentContext, table: ScoreTable, dictionary: Dictionary) -> frozenset[int]:
    path = ctx.path("screened_dictionary")
    if path.exists():
        reduced = Dictionary.load(path)
        kept = frozenset([0, *(dictionary.index[w] for w in reduced.entries[1:])])
        return kept
    if ctx.config.top_k is not None:
        kept = select_top_k(table, ctx.config.top_k)
    else:
        kept = select_by_threshold(table, ctx.config.threshold)
    reduced, _ = corpus_mod.screen_dictionary(dictionary, kept)
    write_atomic(path, ("\n".join(reduced.entries) + "\n").encode("utf-8"))
    ctx.counters.bump("screen")
    return kept


@_stage("retrain")
def ensure_reduced(ctx: ExperimentContext, train_corpus: Corpus, kept: frozenset[int]) -> tuple[Model, Corpus]:
    reduced_train = reencode_corpus(train_corpus, kept, ctx.config.T)
    path = ctx.path("reduced_ckpt")
    if path.exists():
        return load_checkpoint(path), reduced_train
    model_config = ctx.config.model_config(reduced_train.dictionary.size, ctx.n_classes())
    model = build_model(model_config, seed=ctx.config.seed)
    model, log = train(model, reduced_train, ctx.config.train_spec())
    write_atomic(ctx.path("reduced_log"), write_training_log(log).encode("utf-8"))
    _save_checkpoint_atomic(model, path)
    ctx.counters.bump("retrain")
    return model, reduced_train


def _test_digest(test_corpus: Corpus) -> str:
    labels = ",".join(str(d.label) for d in test_corpus.docs)
    return hashlib.sha256(f"{len(test_corpus.docs)}:{labels}".encode()).hexdigest()


@_stage("report")
def ensure_report(
    ctx: ExperimentContext,
    benchmark: Model,
    reduced: Model,
    train_corpus: Corpus,
    reduced_train: Corpus,
    test_corpus: Corpus,
    kept: frozenset[int],
) -> CompressionReport:
    path = ctx.path("report_tsv")
    if path.exists():
        return load_report(path)
    reduced_test = reencode_corpus(test_corpus, kept, ctx.config.T)
    digest = _test_digest(test_corpus)
    benchmark_summary = RunSummary(
        config=benchmark.config,
        accuracy=evaluate_accuracy(benchmark, test_corpus.docs),
        mean_seq_length=train_corpus.mean_true_length(),
        test_digest=digest,
    )
    reduced_summary = RunSummary(
        config=reduced.config,
        accuracy=evaluate_accuracy(reduced, reduced_test.docs),
        mean_seq_length=reduced_train.mean_true_length(),
        test_digest=_test_digest(reduced_test),
    )
    report = build_report(
        benchmark_summary,
        reduced_summary,
        dataset=ctx.config.dataset_name,
        scorer=ctx.config.scorer,
        k_kept=len(kept) - 1,
        config_digest=ctx.config.digest(),
    )
    write_atomic(path, report_to_tsv(report).encode("utf-8"))
    write_atomic(ctx.path("report_txt"), render_report_table([report]).encode("utf-8"))
    ctx.counters.bump("report")
    return report


def run_experiment(
    config: ExperimentConfig, counters: StageCounters | None = None
) -> CompressionReport:
    """Run (or resume) every stage and return the comparison report."""
    ctx = ExperimentContext(config=config, counters=counters or StageCounters())
    train_corpus, test_corpus = ensure_corpora(ctx)
    benchmark = ensure_benchmark(ctx, train_corpus)
    table = ensure_scores(ctx, benchmark, train_corpus)
    kept = ensure_screened(ctx, table, train_corpus.dictionary)
    reduced, reduced_train = ensure_reduced(ctx, train_corpus, kept)
    report = ensure_report(
        ctx, benchmark, reduced, train_corpus, reduced_train, test_corpus, kept
    )
    write_manifest(config.out_dir)
    return report


def sweep_k(
    config: ExperimentConfig,
    k_values: list[int],
    counters: StageCounters | None = None,
) -> list[CompressionReport]:
    """One screened run per K, sharing the benchmark checkpoint and score
    file; per-K artifacts land in ``k_<K>/`` subdirectories."""
    if not k_values:
        raise ValueError("k_values must be nonempty")
    counters = counters or StageCounters()
    ctx = ExperimentContext(config=config, counters=counters)
    train_corpus, test_corpus = ensure_corpora(ctx)
    d_size = train_corpus.dictionary.size
    for k in k_values:
        if k > d_size:
            raise StageError("screen", f"K={k} exceeds dictionary size {d_size}")
    benchmark = ensure_benchmark(ctx, train_corpus)
    ensure_scores(ctx, benchmark, train_corpus)

    reports = []
    from dataclasses import replace as dc_replace

    for k in k_values:
        sub = dc_replace(config, out_dir=config.out_dir / f"k_{k}", top_k=k, threshold=None)
        sub.out_dir.mkdir(parents=True, exist_ok=True)
        for shared in ("dictionary", "benchmark_ckpt", "benchmark_log", "scores"):
            src = ctx.path(shared)
            dst = sub.out_dir / ARTIFACTS[shared]
            if not dst.exists():
                write_atomic(dst, src.read_bytes())
        reports.append(run_experiment(sub, counters))

    table = render_report_table(reports)
    tsv = "".join(
        report_to_tsv(r) if i == 0 else report_to_tsv(r).splitlines()[2] + "\n"
        for i, r in enumerate(reports)
    )
    write_atomic(config.out_dir / "sweep.tsv", tsv.encode("utf-8"))
    write_atomic(config.out_dir / "sweep.txt", table.encode("utf-8"))
    write_manifest(config.out_dir)
    return reports


def make_synthetic(
    classes: int,
    docs_per_class: int,
    vocab_size: int,
    planted_per_class: int,
    doc_length: int,
    noise_rate: float,
    seed: int,
    out_dir: Path | str,
    test_docs_per_class: int | None = None,
) -> tuple[Path, Path]:
    """Planted-keyword dataset: each class owns disjoint discriminative
    keywords; remaining tokens are shared noise.  Emits train.csv and
    test.csv in the ingestion format and returns their paths.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if planted_per_class < 1 or doc_length < 1 or docs_per_class < 1:
        raise ValueError("planted_per_class, doc_length, docs_per_class must be >= 1")
    if not 0 <= noise_rate <= 1:
        raise ValueError(f"noise_rate must be in [0, 1], got {noise_rate}")
    n_planted = classes * planted_per_class
    if n_planted >= vocab_size:
        raise ValueError(
            f"planted keywords ({n_planted}) must be fewer than vocab size ({vocab_size})"
        )
    if test_docs_per_class is None:
        test_docs_per_class = max(1, docs_per_class // 5)

    planted = {
        c: [f"k{c}w{j}" for j in range(planted_per_class)] for c in range(1, classes + 1)
    }
    noise = [f"noise{m}" for m in range(vocab_size - n_planted)]
    rng = np.random.default_rng(seed)

    def rows(per_class: int):
        out = []
        for c in range(1, classes + 1):
            for _ in range(per_class):
                tokens = []
                for _ in range(doc_length):
                    if noise_rate > 0 and rng.random() < noise_rate:
                        tokens.append(noise[int(rng.integers(len(noise)))])
                    else:
                        tokens.append(planted[c][int(rng.integers(planted_per_class))])
                out.append((c, " ".join(tokens)))
        return out

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = (out_dir / "train.csv", out_dir / "test.csv")
    for path, per_class in zip(paths, (docs_per_class, test_docs_per_class)):
        lines = [f'"{label}","","{text}"' for label, text in rows(per_class)]
        write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))
    return paths
