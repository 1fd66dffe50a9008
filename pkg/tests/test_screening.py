import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dictscreen.corpus import Corpus, Dictionary, ablate, build_dictionary, encode_corpus
from dictscreen.models import ModelConfig, build_model, predict_proba
from dictscreen.screening import (
    HIGHER,
    LOWER,
    ScoreTable,
    cpe_scores,
    load_score_table,
    save_score_table,
    select_by_threshold,
    select_top_k,
    student_t_two_sided_p,
    tfidf_scores,
    tstat_scores,
)


def _corpus_from_rows(rows, T=5):
    d = build_dictionary((tokens for _, tokens in rows))
    return encode_corpus(rows, d, T)


def _model_for(corpus, kind="meanpool", seed=0, **overrides):
    base = dict(
        kind=kind,
        D=corpus.dictionary.size,
        d1=4,
        d2=3,
        K=2,
        T=len(corpus.docs[0].ids),
        kernel_sizes=(2,),
        filters_per_kernel=3,
        dropout_rate=0.0,
    )
    base.update(overrides)
    return build_model(ModelConfig(**base), seed=seed)


def dense_cpe_oracle(model, corpus, indices=None):
    """Brute-force CPE: re-run every (document, keyword) pair, no skipping."""
    if indices is None:
        indices = list(range(len(corpus.docs)))
    scores = {}
    for d in range(1, corpus.dictionary.size + 1):
        total = 0.0
        for i in indices:
            p_base = predict_proba(model, corpus.docs[i])
            p_abl = predict_proba(model, ablate(corpus.docs[i], d))
            diff = p_base - p_abl
            total += float(np.dot(diff, diff))
        scores[d] = total / len(indices)
    return scores


def t_density(x: float, df: float) -> float:
    return (
        math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2))
        / math.sqrt(df * math.pi)
        * (1 + x * x / df) ** (-(df + 1) / 2)
    )


def quadrature_two_sided_p(t: float, df: float) -> float:
    tail, _ = integrate.quad(t_density, abs(t), np.inf, args=(df,), epsabs=1e-13, limit=200)
    return 2 * tail


class TestCpeScores:
    def test_absent_keyword_zero(self):
        rows = [(1, ["a", "b"]), (2, ["b", "c"])]
        corpus = _corpus_from_rows(rows)
        # Add a keyword to the dictionary that no document contains.
        d = Dictionary([*corpus.dictionary.entries[1:], "ghost"])
        corpus = Corpus.build(corpus.docs, d)
        model = _model_for(corpus, seed=1)
        table = cpe_scores(model, corpus)
        assert table.scores[d.index["ghost"]] == 0.0

    def test_constant_model_all_zero(self):
        rows = [(1, ["a", "b"]), (2, ["c", "a"]), (1, ["b", "b", "c"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=2)
        for name, p in model.params.items():
            if name != "dense_b":
                p.value[:] = 0
        model.params["dense_b"].value[:] = [0.3, -0.2]
        table = cpe_scores(model, corpus)
        assert all(v == 0.0 for v in table.scores.values())

    def test_three_doc_toy_equals_dense_oracle_exactly(self):
        rows = [(1, ["a", "b", "a"]), (2, ["c"]), (1, ["b", "c", "d"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=3)
        table = cpe_scores(model, corpus)
        oracle = dense_cpe_oracle(model, corpus)
        assert table.scores == oracle

    @pytest.mark.parametrize("kind", ["meanpool", "simplernn", "textcnn"])
    def test_sparse_equals_dense_random_corpora(self, kind):
        rng = np.random.default_rng(17)
        for trial in range(3):
            n_docs = int(rng.integers(3, 20))
            n_kw = int(rng.integers(3, 15))
            rows = []
            words = [f"w{j}" for j in range(n_kw)]
            for _ in range(n_docs):
                length = int(rng.integers(1, 6))
                rows.append(
                    (int(rng.integers(1, 3)), [words[int(rng.integers(n_kw))] for _ in range(length)])
                )
            corpus = _corpus_from_rows(rows, T=6)
            model = _model_for(corpus, kind=kind, seed=trial)
            table = cpe_scores(model, corpus)
            assert table.scores == dense_cpe_oracle(model, corpus)

    def test_scores_cover_all_keywords_once(self):
        rows = [(1, ["a", "b"]), (2, ["c", "d", "e"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus)
        table = cpe_scores(model, corpus)
        assert set(table.scores) == set(range(1, corpus.dictionary.size + 1))

    def test_scores_bounded_by_simplex_diameter(self):
        rows = [(1, ["a", "a", "b"]), (2, ["b", "c"]), (2, ["a", "c", "c"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=9)
        table = cpe_scores(model, corpus)
        assert all(0 <= v <= 2 for v in table.scores.values())

    def test_doc_indices_subset(self):
        rows = [(1, ["a"]), (2, ["b"]), (1, ["a", "b"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=4)
        table = cpe_scores(model, corpus, doc_indices=[0, 2])
        assert table.n_docs == 2
        assert table.scores == dense_cpe_oracle(model, corpus, [0, 2])

    def test_dictionary_mismatch_error(self):
        rows = [(1, ["a"]), (2, ["b"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, D=corpus.dictionary.size + 5)
        with pytest.raises(ValueError):
            cpe_scores(model, corpus)


class TestTfidfScores:
    def test_keyword_in_every_document_scores_zero(self):
        rows = [(1, ["a", "b"]), (2, ["a"]), (1, ["a", "c"])]
        corpus = _corpus_from_rows(rows)
        table = tfidf_scores(corpus)
        assert table.scores[corpus.dictionary.index["a"]] == 0.0

    def test_concentrated_keyword_value(self):
        rows = [(1, ["x", "x", "x"]), (2, ["y"]), (1, ["z"]), (2, ["y", "z"])]
        corpus = _corpus_from_rows(rows)
        score = tfidf_scores(corpus).scores[corpus.dictionary.index["x"]]
        assert math.isclose(score, 3 * math.log(4), rel_tol=1e-12)
        assert math.isclose(score, 4.1588830833596715, rel_tol=1e-9)

    def test_against_recount_oracle(self):
        rng = np.random.default_rng(5)
        words = [f"w{j}" for j in range(8)]
        rows = [
            (1, [words[int(rng.integers(8))] for _ in range(int(rng.integers(1, 7)))])
            for _ in range(12)
        ]
        corpus = _corpus_from_rows(rows, T=7)
        table = tfidf_scores(corpus)

        # Independent recount from the encoded documents.
        n = len(corpus.docs)
        for d in range(1, corpus.dictionary.size + 1):
            tf = sum(int(np.sum(doc.ids == d)) for doc in corpus.docs)
            df = sum(1 for doc in corpus.docs if d in doc.ids)
            expected = tf * math.log(n / df) if df else 0.0
            assert math.isclose(table.scores[d], expected, rel_tol=1e-12)

    def test_truncated_tokens_do_not_count(self):
        rows = [(1, ["a", "b", "b", "b"]), (2, ["b"])]
        corpus = _corpus_from_rows(rows, T=2)  # doc 1 truncates to [a, b]
        table = tfidf_scores(corpus)
        b = corpus.dictionary.index["b"]
        assert table.scores[b] == 2 * math.log(2 / 2)  # == 0.0


class TestStudentT:
    def test_t_zero_is_one(self):
        for df in (1, 2, 5, 10, 30):
            assert student_t_two_sided_p(0.0, df) == 1.0

    def test_cauchy_quartile(self):
        assert math.isclose(student_t_two_sided_p(1.0, 1), 0.5, abs_tol=1e-12)

    def test_df10_t2_vs_quadrature(self):
        p = student_t_two_sided_p(2.0, 10)
        assert math.isclose(p, quadrature_two_sided_p(2.0, 10), abs_tol=1e-8)
        assert math.isclose(p, 0.07338803477074042, abs_tol=1e-10)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            student_t_two_sided_p(1.0, 0)
        with pytest.raises(ValueError):
            student_t_two_sided_p(float("nan"), 5)

    @given(
        t=st.floats(min_value=0.0, max_value=30.0),
        df=st.integers(min_value=1, max_value=40),
    )
    @settings(max_examples=60)
    def test_even_in_t(self, t, df):
        assert student_t_two_sided_p(t, df) == student_t_two_sided_p(-t, df)

    def test_decreasing_in_abs_t(self):
        for df in (1, 3, 12):
            grid = [student_t_two_sided_p(t, df) for t in np.linspace(0, 8, 50)]
            assert all(a >= b for a, b in zip(grid, grid[1:]))

    def test_values_in_unit_interval(self):
        for t in (-5, -0.3, 0.0, 0.7, 4.0):
            for df in (1, 2, 9):
                assert 0.0 <= student_t_two_sided_p(t, df) <= 1.0


class TestTstatScores:
    def test_all_zero_differences_score_one(self):
        # A constant model produces identical probabilities pre/post ablation.
        rows = [(1, ["a", "b"]), (2, ["a", "c"]), (1, ["b", "c"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=6)
        for name, p in model.params.items():
            p.value[:] = 0
        table = tstat_scores(model, corpus)
        assert all(v == 1.0 for v in table.scores.values())

    def test_min_rule(self):
        assert min([0.3, 0.01, 0.5]) == 0.01

    def test_spec_delta_vector_against_quadrature(self):
        deltas = np.array([0.1, 0.2, 0.15, 0.05])
        n = 4
        t = deltas.mean() / (deltas.std(ddof=1) / math.sqrt(n))
        assert math.isclose(t, 3.8729833462074184, rel_tol=1e-12)
        p = student_t_two_sided_p(t, n - 1)
        assert math.isclose(p, quadrature_two_sided_p(t, n - 1), abs_tol=1e-8)
        assert math.isclose(p, 0.030466291662170963, abs_tol=1e-10)

    def test_rare_keyword_degenerates_to_one(self):
        rows = [(1, ["a", "b"]), (2, ["b"]), (1, ["b", "b"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=7)
        table = tstat_scores(model, corpus)
        assert table.scores[corpus.dictionary.index["a"]] == 1.0  # n=1 < 2

    def test_direction_is_lower(self):
        rows = [(1, ["a", "a"]), (2, ["b", "a"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=8)
        table = tstat_scores(model, corpus)
        assert table.direction == LOWER
        assert all(0 <= v <= 1 for v in table.scores.values())


class TestSelection:
    def _table(self, scores, direction=HIGHER):
        return ScoreTable(scorer="cpe" if direction == HIGHER else "tstat",
                          scores=scores, direction=direction, n_docs=1)

    def test_top_k_ordering(self):
        table = self._table({1: 0.5, 2: 0.2, 3: 0.9, 4: 0.1})
        assert select_top_k(table, 3) == frozenset({0, 3, 1, 2})

    def test_top_k_full_dictionary(self):
        table = self._table({1: 0.5, 2: 0.2})
        assert select_top_k(table, 2) == frozenset({0, 1, 2})

    def test_top_zero_keeps_only_pad(self):
        table = self._table({1: 0.5})
        assert select_top_k(table, 0) == frozenset({0})

    def test_top_k_exceeding_dictionary_errors(self):
        with pytest.raises(ValueError):
            select_top_k(self._table({1: 0.5}), 2)

    def test_tie_breaks_toward_smaller_id(self):
        table = self._table({1: 0.5, 2: 0.5, 3: 0.5})
        assert select_top_k(table, 2) == frozenset({0, 1, 2})

    def test_lower_direction_ranks_ascending(self):
        table = self._table({1: 0.9, 2: 0.01, 3: 0.5}, direction=LOWER)
        assert select_top_k(table, 1) == frozenset({0, 2})

    def test_threshold_zero_keeps_all_for_nonnegative_scores(self):
        table = self._table({1: 0.0, 2: 0.7, 3: 0.2})
        assert select_by_threshold(table, 0.0) == frozenset({0, 1, 2, 3})

    def test_threshold_above_max_keeps_only_pad(self):
        table = self._table({1: 0.1, 2: 0.7})
        assert select_by_threshold(table, 0.71) == frozenset({0})

    def test_threshold_lower_direction(self):
        table = self._table({1: 0.9, 2: 0.01, 3: 0.5}, direction=LOWER)
        assert select_by_threshold(table, 0.5) == frozenset({0, 2, 3})

    @given(
        st.lists(
            st.floats(min_value=0, max_value=1, allow_nan=False),
            min_size=1,
            max_size=12,
        ),
        st.data(),
    )
    @settings(max_examples=60)
    def test_threshold_at_kth_score_matches_top_k(self, values, data):
        scores = {i + 1: v for i, v in enumerate(values)}
        table = self._table(scores)
        k = data.draw(st.integers(min_value=1, max_value=len(values)))
        kth = sorted(values, reverse=True)[k - 1]
        if sorted(values, reverse=True).count(kth) > 1:
            return  # only claimed when the boundary score is unique
        assert select_by_threshold(table, kth) == select_top_k(table, k)


class TestScoreTableIO:
    def test_round_trip(self, tmp_path):
        rows = [(1, ["aa", "bb"]), (2, ["cc", "aa"])]
        corpus = _corpus_from_rows(rows)
        model = _model_for(corpus, seed=10)
        table = cpe_scores(model, corpus)
        path = tmp_path / "scores.tsv"
        save_score_table(table, corpus, path)
        loaded = load_score_table(path)
        assert loaded == table

    def test_header_and_order(self, tmp_path):
        table = ScoreTable(scorer="cpe", scores={1: 0.1, 2: 0.9}, direction=HIGHER, n_docs=7)
        rows = [(1, ["a", "b"])]
        corpus = _corpus_from_rows(rows)
        path = tmp_path / "scores.tsv"
        save_score_table(table, corpus, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "#scorer=cpe direction=higher_is_important n_docs=7"
        assert lines[1].startswith("2\t")  # most important first

    def test_pad_never_scored(self):
        with pytest.raises(ValueError):
            ScoreTable(scorer="cpe", scores={0: 1.0}, direction=HIGHER, n_docs=1)
