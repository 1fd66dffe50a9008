"""Reduction ratios and the benchmark-vs-reduced comparison report."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, EncodedDocument
from .models import ModelConfig, count_params

REPORT_COLUMNS = (
    "model",
    "dataset",
    "benchmark_acc",
    "reduced_acc",
    "delta_acc",
    "prr",
    "drr",
    "trr",
    "scorer",
    "K",
)


def prr(config_full: ModelConfig, config_reduced: ModelConfig) -> float:
    """Parameter reduction ratio, bias-excluded: 1 - reduced/full."""
    if replace(config_full, D=config_reduced.D) != config_reduced:
        raise ValueError("configs must be identical except for D")
    return 1.0 - count_params(config_reduced) / count_params(config_full)


def drr(d_full: int, d_reduced: int) -> float:
    """Dictionary reduction ratio over non-pad keyword counts."""
    if d_full == 0:
        raise ValueError("full dictionary is empty")
    if d_reduced > d_full:
        raise ValueError(f"reduced size {d_reduced} exceeds full size {d_full}")
    return 1.0 - d_reduced / d_full


def _doc_list(docs) -> Sequence[EncodedDocument]:
    return docs.docs if isinstance(docs, Corpus) else docs


def trr(docs_before, docs_after) -> float:
    """Mean effective-length reduction: 1 - mean(after)/mean(before).

    Effective length is the non-pad token count per document.
    """
    before = _doc_list(docs_before)
    after = _doc_list(docs_after)
    if len(before) != len(after):
        raise ValueError(f"document counts differ: {len(before)} vs {len(after)}")
    mean_before = sum(d.true_length for d in before) / len(before)
    if mean_before == 0:
        raise ValueError("mean effective length before screening is zero")
    mean_after = sum(d.true_length for d in after) / len(after)
    return 1.0 - mean_after / mean_before


@dataclass(frozen=True)
class RunSummary:
    """What one trained-and-evaluated model contributes to a report."""

    config: ModelConfig
    accuracy: float
    mean_seq_length: float
    test_digest: str


@dataclass(frozen=True)
class CompressionReport:
    model_kind: str
    dataset: str
    benchmark_acc: float
    reduced_acc: float
    delta_acc: float
    prr: float
    drr: float
    trr: float
    scorer: str
    k_kept: int
    config_digest: str

    def __post_init__(self):
        if abs(self.delta_acc - (self.benchmark_acc - self.reduced_acc)) > 1e-12:
            raise ValueError("delta_acc must equal benchmark_acc - reduced_acc")
        for name in ("prr", "drr", "trr"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name}={v} outside [0, 1]")


def build_report(
    benchmark: RunSummary,
    reduced: RunSummary,
    dataset: str,
    scorer: str,
    k_kept: int,
    config_digest: str,
) -> CompressionReport:
    """Assemble the four measures from a benchmark run and a reduced run."""
    if benchmark.test_digest != reduced.test_digest:
        raise ValueError("benchmark and reduced runs were evaluated on different test sets")
    return CompressionReport(
        model_kind=benchmark.config.kind,
        dataset=dataset,
        benchmark_acc=benchmark.accuracy,
        reduced_acc=reduced.accuracy,
        delta_acc=benchmark.accuracy - reduced.accuracy,
        prr=prr(benchmark.config, reduced.config),
        drr=drr(benchmark.config.D, reduced.config.D),
        trr=1.0 - reduced.mean_seq_length / benchmark.mean_seq_length,
        scorer=scorer,
        k_kept=k_kept,
        config_digest=config_digest,
    )


def _report_values(report: CompressionReport) -> list[str]:
    return [
        report.model_kind,
        report.dataset,
        repr(report.benchmark_acc),
        repr(report.reduced_acc),
        repr(report.delta_acc),
        repr(report.prr),
        repr(report.drr),
        repr(report.trr),
        report.scorer,
        str(report.k_kept),
    ]


def report_to_tsv(report: CompressionReport) -> str:
    """Machine-readable report: digest comment, header, one value row."""
    return (
        f"#config_digest={report.config_digest}\n"
        + "\t".join(REPORT_COLUMNS)
        + "\n"
        + "\t".join(_report_values(report))
        + "\n"
    )


def report_from_tsv(text: str) -> CompressionReport:
    lines = text.splitlines()
    if len(lines) != 3 or not lines[0].startswith("#config_digest="):
        raise ValueError("malformed report file")
    digest = lines[0].split("=", 1)[1]
    header = lines[1].split("\t")
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError(f"unexpected report columns: {header}")
    row = lines[2].split("\t")
    values = dict(zip(header, row))
    return CompressionReport(
        model_kind=values["model"],
        dataset=values["dataset"],
        benchmark_acc=float(values["benchmark_acc"]),
        reduced_acc=float(values["reduced_acc"]),
        delta_acc=float(values["delta_acc"]),
        prr=float(values["prr"]),
        drr=float(values["drr"]),
        trr=float(values["trr"]),
        scorer=values["scorer"],
        k_kept=int(values["K"]),
        config_digest=digest,
    )


def load_report(path: Path | str) -> CompressionReport:
    return report_from_tsv(Path(path).read_text(encoding="utf-8"))


def _pct(value: float) -> str:
    return f"{value * 100:.2f}"


def render_report_table(reports: Sequence[CompressionReport]) -> str:
    """Aligned plain-text table, percentages to two decimals."""
    rows = [list(REPORT_COLUMNS)]
    for r in reports:
        rows.append(
            [
                r.model_kind,
                r.dataset,
                _pct(r.benchmark_acc),
                _pct(r.reduced_acc),
                _pct(r.delta_acc),
                _pct(r.prr),
                _pct(r.drr),
                _pct(r.trr),
                r.scorer,
                str(r.k_kept),
            ]
        )
    widths = [max(len(row[c]) for row in rows) for c in range(len(REPORT_COLUMNS))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
