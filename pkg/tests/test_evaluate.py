"""Correlation metrics against brute-force oracles, evaluation scopes,
and the retrieval machinery."""

import math

import numpy as np
import pytest
import scipy.stats

from conftest import make_dataset
from sgembed.evaluate import (
    EvalReport,
    RECALL_KS,
    UndefinedMetricError,
    evaluate,
    evaluate_embeddings,
    kendall_tau,
    noise_sweep,
    pearson_r,
    random_unit_embeddings,
    rank_queries,
    retrieval_experiment,
    spearman_rho,
)
from sgembed.model import GcnModel, ModelConfig
from sgembed.scene import split_dataset


# ---------------------------------------------------------------------------
# brute-force oracles (pure python, independent of the vectorized path)
# ---------------------------------------------------------------------------


def oracle_kendall_tau_b(x, y):
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) / 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0:
        raise ZeroDivisionError
    return (concordant - discordant) / denom


def oracle_ranks(values):
    """Average ranks via sorted-position lookup, one tie group at a time."""
    pairs = sorted((v, i) for i, v in enumerate(values))
    ranks = [0.0] * len(values)
    i = 0
    while i < len(pairs):
        j = i
        while j + 1 < len(pairs) and pairs[j + 1][0] == pairs[i][0]:
            j += 1
        avg = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[pairs[k][1]] = avg
        i = j + 1
    return ranks


def oracle_pearson(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    cov = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = math.fsum((a - mx) ** 2 for a in x)
    vy = math.fsum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def oracle_spearman(x, y):
    return oracle_pearson(oracle_ranks(x), oracle_ranks(y))


def random_vector_pairs(n_pairs=100):
    rng = np.random.default_rng(12345)
    for k in range(n_pairs):
        n = int(rng.integers(2, 201))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        if k % 3 == 0:  # quantize to force ties
            x = np.round(x, 1)
            y = np.round(y, 1)
        if np.unique(x).size < 2 or np.unique(y).size < 2:
            continue
        yield x, y


class TestMetricOracles:
    def test_identity_and_reversal(self):
        x = [1.0, 2.0, 3.0]
        assert kendall_tau(x, x) == 1.0
        assert spearman_rho(x, x) == 1.0
        assert pearson_r(x, x) == 1.0
        rev = [3.0, 2.0, 1.0]
        assert kendall_tau(x, rev) == -1.0
        assert spearman_rho(x, rev) == -1.0

    def test_single_swap_hand_case(self):
        # 6 pairs, one discordant: tau = (5-1)/6
        x = [1.0, 2.0, 3.0, 4.0]
        y = [1.0, 3.0, 2.0, 4.0]
        assert abs(kendall_tau(x, y) - 4.0 / 6.0) < 1e-15
        assert abs(kendall_tau(x, y) - oracle_kendall_tau_b(x, y)) < 1e-15

    def test_brute_force_agreement(self):
        checked = 0
        for x, y in random_vector_pairs():
            assert abs(kendall_tau(x, y) - oracle_kendall_tau_b(list(x), list(y))) < 1e-12
            assert abs(spearman_rho(x, y) - oracle_spearman(list(x), list(y))) < 1e-12
            assert abs(pearson_r(x, y) - oracle_pearson(list(x), list(y))) < 1e-12
            checked += 1
        assert checked >= 90

    def test_scipy_agreement(self):
        for x, y in random_vector_pairs(40):
            assert abs(kendall_tau(x, y) - scipy.stats.kendalltau(x, y).statistic) < 1e-10
            assert abs(spearman_rho(x, y) - scipy.stats.spearmanr(x, y).statistic) < 1e-10
            assert abs(pearson_r(x, y) - scipy.stats.pearsonr(x, y).statistic) < 1e-10

    def test_constant_input_undefined(self):
        with pytest.raises(UndefinedMetricError):
            kendall_tau([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedMetricError):
            spearman_rho([1.0, 1.0], [1.0, 2.0])
        with pytest.raises(UndefinedMetricError):
            pearson_r([2.0, 2.0], [1.0, 2.0])

    def test_short_input_undefined(self):
        with pytest.raises(UndefinedMetricError):
            kendall_tau([1.0], [1.0])

    def test_monotone_transform_leaves_rank_metrics_unchanged(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=50)
        y = rng.normal(size=50)
        y2 = np.exp(3.0 * y) + 7.0  # strictly increasing map of the scores
        assert kendall_tau(x, y) == kendall_tau(x, y2)
        assert abs(spearman_rho(x, y) - spearman_rho(x, y2)) < 1e-15


class TestEvaluateEmbeddings:
    def test_engineered_monotone_embeddings_give_tau_one(self):
        # 1-d positive embeddings: model similarity x_i * x_j is strictly
        # increasing in s once s is defined as a monotone map of it.
        rng = np.random.default_rng(1)
        x = np.sort(rng.uniform(0.5, 2.0, size=8))
        emb = x.reshape(-1, 1)
        prods = emb @ emb.T
        s = 1.0 / (1.0 + np.exp(-prods))  # monotone map into (0,1)
        report = evaluate_embeddings(emb, s)
        assert abs(report.row_wise["kendall_tau"] - 1.0) < 1e-12
        assert abs(report.row_wise["spearman_rho"] - 1.0) < 1e-12
        assert abs(report.all_pairs["kendall_tau"] - 1.0) < 1e-12
        assert report.all_pairs["pearson_r"] < 1.0  # sigmoid is not affine

    def test_affine_relation_gives_pearson_one(self):
        rng = np.random.default_rng(2)
        x = np.sort(rng.uniform(0.5, 1.5, size=6))
        emb = x.reshape(-1, 1)
        prods = emb @ emb.T
        s = 0.2 + 0.3 * (prods - prods.min()) / (prods.max() - prods.min())
        report = evaluate_embeddings(emb, s)
        assert abs(report.all_pairs["pearson_r"] - 1.0) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_random_embeddings_near_zero_tau(self, seed):
        rng = np.random.default_rng(seed)
        n = 100
        emb = random_unit_embeddings(n, 16, seed)
        s = rng.uniform(0.3, 0.9, size=(n, n))
        s = (s + s.T) / 2
        np.fill_diagonal(s, 1.0)
        report = evaluate_embeddings(emb, s)
        assert abs(report.row_wise["kendall_tau"]) < 0.1

    def test_two_image_split_rows_skipped(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0]])
        s = np.array([[1.0, 0.4], [0.4, 1.0]])
        report = evaluate_embeddings(emb, s)
        assert report.row_wise["kendall_tau"] is None
        assert report.row_coverage["kendall_tau"] == 0

    def test_evaluate_runs_on_model(self, tiny_vocab):
        ds = make_dataset(8, tiny_vocab, seed=5)
        model = GcnModel.create(
            ModelConfig(label_dim=6, message_dim=5, out_dim=4, num_layers=1, mlp_hidden=6), tiny_vocab, seed=0
        )
        report = evaluate(model, ds, range(8))
        assert report.n_images == 8
        for v in report.row_wise.values():
            assert v is None or -1.0 <= v <= 1.0


class TestRetrieval:
    def test_hand_built_ranking(self):
        index = np.array([[1.0, 0.0], [0.0, 1.0]])
        queries = np.array([[0.9, 0.1]])
        assert rank_queries(index, queries, [0]) == (1,)
        assert rank_queries(index, queries, [1]) == (2,)

    def test_tie_break_by_ascending_index(self):
        index = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        queries = np.array([[1.0, 0.0]])
        # indexes 0 and 1 tie; target 1 must rank second
        assert rank_queries(index, queries, [0]) == (1,)
        assert rank_queries(index, queries, [1]) == (2,)

    def _trained_free_setup(self, tiny_vocab, n=10):
        ds = make_dataset(n, tiny_vocab, seed=9)
        model = GcnModel.create(
            ModelConfig(label_dim=6, message_dim=5, out_dim=4, num_layers=1, mlp_hidden=6), tiny_vocab, seed=4
        )
        return ds, model

    def test_noise_zero_gives_perfect_retrieval(self, tiny_vocab):
        ds, model = self._trained_free_setup(tiny_vocab)
        report = retrieval_experiment(model, ds, range(10), 0, seed=0)
        assert report.mrr == 1.0
        assert report.recall_at[1] == 1.0
        assert report.ranks == tuple([1] * 10)

    def test_huge_noise_still_well_defined(self, tiny_vocab):
        ds, model = self._trained_free_setup(tiny_vocab)
        report = retrieval_experiment(model, ds, range(10), 999, seed=0)
        assert 0.0 < report.mrr <= 1.0
        ks = sorted(report.recall_at)
        for a, b in zip(ks, ks[1:]):
            assert report.recall_at[a] <= report.recall_at[b]

    def test_recall_monotone_and_mrr_bound(self, tiny_vocab):
        ds, model = self._trained_free_setup(tiny_vocab)
        report = retrieval_experiment(model, ds, range(10), 2, seed=3)
        r = report.recall_at
        for a, b in zip(RECALL_KS, RECALL_KS[1:]):
            assert r[a] <= r[b]
        # non-first ranks contribute at most 1/2 to the reciprocal mean
        assert report.mrr <= r[1] + (1.0 - r[1]) / 2.0 + 1e-12

    def test_deterministic_given_seed(self, tiny_vocab):
        ds, model = self._trained_free_setup(tiny_vocab)
        r1 = retrieval_experiment(model, ds, range(10), 2, seed=5)
        r2 = retrieval_experiment(model, ds, range(10), 2, seed=5)
        assert r1.ranks == r2.ranks

    def test_sweep_shares_index_and_matches_individual_runs(self, tiny_vocab):
        ds, model = self._trained_free_setup(tiny_vocab)
        reports = noise_sweep(model, ds, range(10), [0, 1, 2], seed=1)
        assert [r.noise_level for r in reports] == [0, 1, 2]
        solo = retrieval_experiment(model, ds, range(10), 1, seed=1)
        assert reports[1].ranks == solo.ranks

    def test_split_subset_retrieval(self, tiny_vocab):
        ds = make_dataset(12, tiny_vocab, seed=2)
        split = split_dataset(ds, (0.7, 0.2, 0.1), seed=0)
        model = GcnModel.create(
            ModelConfig(label_dim=6, message_dim=5, out_dim=4, num_layers=1, mlp_hidden=6), tiny_vocab, seed=4
        )
        report = retrieval_experiment(model, ds, split.train, 0, seed=0)
        assert report.mrr == 1.0


class TestReportShapes:
    def test_report_dict_round_trip(self):
        report = EvalReport(
            row_wise={"kendall_tau": 0.5, "spearman_rho": None, "pearson_r": 0.1},
            all_pairs={"kendall_tau": 0.4, "spearman_rho": 0.6, "pearson_r": 0.2},
            n_images=10,
            row_coverage={"kendall_tau": 10, "spearman_rho": 0, "pearson_r": 10},
        )
        d = report.to_dict()
        assert d["row_wise"]["spearman_rho"] is None
        assert d["n_images"] == 10
