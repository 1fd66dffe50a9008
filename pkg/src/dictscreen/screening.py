"""Keyword importance scoring and dictionary selection.

Three scorers rank every keyword in a dictionary:

* ``cpe``   — mean squared L2 distance between a trained model's class
              probabilities before and after ablating the keyword from
              each document.  Documents that never contain the keyword
              contribute exactly zero and are skipped via the inverted
              index, which is what makes full-corpus scoring tractable.
* ``tfidf`` — corpus-wide occurrence count times ln(N / document frequency).
* ``tstat`` — per-class paired t-test on the probability shifts; the
              smallest two-sided p-value across classes is the score, so
              smaller means more important.

Selection takes the top K keywords (or a score threshold) and always
keeps the pad token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .corpus import Corpus, ablate
from .models import Model, predict_proba

SCORERS = ("cpe", "tfidf", "tstat")

HIGHER = "higher_is_important"
LOWER = "lower_is_important"


@dataclass(frozen=True)
class ScoreTable:
    """One importance value per non-pad keyword id."""

    scorer: str
    scores: dict[int, float]
    direction: str
    n_docs: int

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.direction not in (HIGHER, LOWER):
            raise ValueError(f"unknown direction {self.direction!r}")
        if 0 in self.scores:
            raise ValueError("the pad token is never scored")

    def ranked_ids(self) -> list[int]:
        """Keyword ids from most to least important; ties break on id."""
        sign = -1.0 if self.direction == HIGHER else 1.0
        return sorted(self.scores, key=lambda d: (sign * self.scores[d], d))


def _check_model_matches(model: Model, corpus: Corpus) -> None:
    if model.config.D != corpus.dictionary.size:
        raise ValueError(
            f"model dictionary size {model.config.D} != corpus dictionary "
            f"size {corpus.dictionary.size}"
        )


def _baseline_probs(
    model: Model, corpus: Corpus, doc_indices: Sequence[int]
) -> dict[int, np.ndarray]:
    return {i: predict_proba(model, corpus.docs[i]) for i in doc_indices}


def _scored_indices(corpus: Corpus, doc_indices: Sequence[int] | None) -> list[int]:
    if doc_indices is None:
        return list(range(len(corpus.docs)))
    idx = sorted(set(int(i) for i in doc_indices))
    if idx and (idx[0] < 0 or idx[-1] >= len(corpus.docs)):
        raise ValueError("doc index outside corpus")
    return idx


def cpe_scores(
    model: Model, corpus: Corpus, doc_indices: Sequence[int] | None = None
) -> ScoreTable:
    """Ablation impact score per keyword.

    For keyword d the score is the mean over all scored documents of
    ||p_i - p_i^(d)||^2, where p_i^(d) is the prediction after every
    occurrence of d is blanked to pad.  Baseline probabilities are
    computed once; only documents actually containing d are re-predicted.
    """
    _check_model_matches(model, corpus)
    indices = _scored_indices(corpus, doc_indices)
    if not indices:
        raise ValueError("no documents to score")
    scored_set = set(indices)
    baseline = _baseline_probs(model, corpus, indices)
    n = len(indices)
    scores: dict[int, float] = {}
    for d in range(1, corpus.dictionary.size + 1):
        total = 0.0
        for i in corpus.postings(d):
            if i not in scored_set:
                continue
            p_ablated = predict_proba(model, ablate(corpus.docs[i], d))
            diff = baseline[i] - p_ablated
            total += float(np.dot(diff, diff))
        scores[d] = total / n
    return ScoreTable(scorer="cpe", scores=scores, direction=HIGHER, n_docs=n)


def tfidf_scores(corpus: Corpus) -> ScoreTable:
    """Total occurrence count times ln(N / document frequency).

    Keywords present in every document score 0 (ln 1); keywords absent
    everywhere score 0 as well.
    """
    if len(corpus.docs) == 0:
        raise ValueError("empty corpus")
    n = len(corpus.docs)
    tf = np.zeros(corpus.dictionary.size + 1, dtype=np.int64)
    for doc in corpus.docs:
        np.add.at(tf, doc.ids, 1)
    scores: dict[int, float] = {}
    for d in range(1, corpus.dictionary.size + 1):
        df = len(corpus.postings(d))
        scores[d] = float(tf[d]) * math.log(n / df) if df else 0.0
    return ScoreTable(scorer="tfidf", scores=scores, direction=HIGHER, n_docs=n)


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value 2*(1 - CDF(|t|)) of Student's t.

    Uses the regularized incomplete beta identity
    2*(1 - CDF(|t|; df)) = I_{df/(df+t^2)}(df/2, 1/2).
    """
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if not math.isfinite(t):
        raise ValueError(f"t must be finite, got {t}")
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def tstat_scores(
    model: Model, corpus: Corpus, doc_indices: Sequence[int] | None = None
) -> ScoreTable:
    """Smallest per-class paired-t p-value for each keyword.

    Pairs are formed only over documents containing the keyword; with
    fewer than two such documents, or zero variance and zero mean, the
    p-value degenerates to 1 (unimportant); zero variance with nonzero
    mean degenerates to 0.
    """
    _check_model_matches(model, corpus)
    indices = _scored_indices(corpus, doc_indices)
    if not indices:
        raise ValueError("no documents to score")
    scored_set = set(indices)
    baseline = _baseline_probs(model, corpus, indices)
    scores: dict[int, float] = {}
    for d in range(1, corpus.dictionary.size + 1):
        deltas = []
        for i in corpus.postings(d):
            if i not in scored_set:
                continue
            p_ablated = predict_proba(model, ablate(corpus.docs[i], d))
            deltas.append((baseline[i] - p_ablated).astype(np.float64))
        n = len(deltas)
        if n < 2:
            scores[d] = 1.0
            continue
        mat = np.stack(deltas)
        means = mat.mean(axis=0)
        sds = mat.std(axis=0, ddof=1)
        best = 1.0
        for k in range(mat.shape[1]):
            if sds[k] == 0.0:
                p_k = 1.0 if means[k] == 0.0 else 0.0
            else:
                t_k = means[k] / (sds[k] / math.sqrt(n))
                p_k = student_t_two_sided_p(t_k, n - 1)
            best = min(best, p_k)
        scores[d] = best
    return ScoreTable(scorer="tstat", scores=scores, direction=LOWER, n_docs=len(indices))


def select_top_k(table: ScoreTable, k: int) -> frozenset[int]:
    """Ids of the K most important keywords, plus the pad id.

    Boundary ties break toward the smaller keyword id.  Equivalent to a
    threshold at the K-th order statistic of the scores.
    """
    d_total = len(table.scores)
    if k < 0:
        raise ValueError(f"K must be >= 0, got {k}")
    if k > d_total:
        raise ValueError(f"K={k} exceeds dictionary size {d_total}")
    return frozenset([0, *table.ranked_ids()[:k]])


def select_by_threshold(table: ScoreTable, threshold: float) -> frozenset[int]:
    """Ids at least as important as ``threshold``, plus the pad id."""
    if not math.isfinite(threshold):
        raise ValueError(f"threshold must be finite, got {threshold}")
    if table.direction == HIGHER:
        kept = [d for d, s in table.scores.items() if s >= threshold]
    else:
        kept = [d for d, s in table.scores.items() if s <= threshold]
    return frozenset([0, *kept])


def save_score_table(table: ScoreTable, corpus: Corpus, path: Path | str) -> str:
    """Tab-separated `keyword_id keyword score`, most important first."""
    lines = [f"#scorer={table.scorer} direction={table.direction} n_docs={table.n_docs}"]
    for d in table.ranked_ids():
        lines.append(f"{d}\t{corpus.dictionary.entries[d]}\t{table.scores[d]!r}")
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text


def load_score_table(path: Path | str) -> ScoreTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#scorer="):
        raise ValueError(f"{path}: missing score table header")
    head = dict(part.split("=", 1) for part in lines[0][1:].split())
    scores = {}
    for line in lines[1:]:
        keyword_id, _, score = line.split("\t")
        scores[int(keyword_id)] = float(score)
    return ScoreTable(
        scorer=head["scorer"],
        scores=scores,
        direction=head["direction"],
        n_docs=int(head["n_docs"]),
    )
