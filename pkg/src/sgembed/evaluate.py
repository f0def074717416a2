"""Rank-correlation evaluation against the supervision matrix and the
noisy-query retrieval experiment.

Correlations come in two scopes: row-wise (per anchor image, averaged over
rows where the metric is defined) and all-pairs (flattened strict upper
triangles). Kendall is the tie-corrected tau-b variant; Spearman uses
average ranks for ties.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .model import GcnModel, embed_graphs
from .scene import Dataset, augment_trivial, corrupt
from .tensor import Mode

RECALL_KS = (1, 5, 10, 20, 50)

METRIC_NAMES = ("kendall_tau", "spearman_rho", "pearson_r")


class UndefinedMetricError(ValueError):
    """The metric has no value for this input (constant vector or n < 2)."""


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"inputs must be equal-length 1-d vectors, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise UndefinedMetricError("correlation requires at least 2 observations")
    return x, y


def _tie_term(v: np.ndarray) -> float:
    _, counts = np.unique(v, return_counts=True)
    return float((counts * (counts - 1) // 2).sum())


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall correlation (tau-b)."""
    x, y = _check_pair(x, y)
    n = x.shape[0]
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, 1)
    concordant_minus_discordant = float((sx[iu] * sy[iu]).sum())
    n0 = n * (n - 1) / 2.0
    denom = (n0 - _tie_term(x)) * (n0 - _tie_term(y))
    if denom <= 0.0:
        raise UndefinedMetricError("kendall tau undefined for a constant input")
    return concordant_minus_discordant / np.sqrt(denom)


def _average_ranks(v: np.ndarray) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.shape[0])
    sorted_v = v[order]
    i = 0
    while i < v.shape[0]:
        j = i
        while j + 1 < v.shape[0] and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _check_pair(x, y)
    return pearson_r(_average_ranks(x), _average_ranks(y))


def pearson_r(x, y) -> float:
    x, y = _check_pair(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise UndefinedMetricError("pearson r undefined for a constant input")
    return float((xc * yc).sum() / denom)


_METRICS = {"kendall_tau": kendall_tau, "spearman_rho": spearman_rho, "pearson_r": pearson_r}


@dataclass
class EvalReport:
    """Correlation bundle; a metric is None when undefined on every row/pair.

    row_coverage counts the rows over which each row-wise metric was
    actually defined.
    """

    row_wise: dict[str, float | None]
    all_pairs: dict[str, float | None]
    n_images: int
    row_coverage: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "row_wise": self.row_wise,
            "all_pairs": self.all_pairs,
            "row_coverage": self.row_coverage,
        }


def evaluate_embeddings(embeddings: np.ndarray, sim_values: np.ndarray) -> EvalReport:
    """Correlate model inner products against supervision values.

    ``embeddings`` is (n, dim) and ``sim_values`` the matching (n, n)
    supervision block; rows where a metric is undefined are skipped and
    reported via coverage.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    sim_values = np.asarray(sim_values, dtype=np.float64)
    n = embeddings.shape[0]
    if sim_values.shape != (n, n):
        raise ValueError(f"similarity block must be {n}x{n}, got {sim_values.shape}")
    model_sims = embeddings @ embeddings.T

    row_sums: dict[str, float] = {name: 0.0 for name in METRIC_NAMES}
    row_counts: dict[str, int] = {name: 0 for name in METRIC_NAMES}
    for i in range(n):
        others = np.arange(n) != i
        x = sim_values[i, others]
        y = model_sims[i, others]
        for name, fn in _METRICS.items():
            try:
                row_sums[name] += fn(x, y)
            except UndefinedMetricError:
                continue
            row_counts[name] += 1
    row_wise = {
        name: (row_sums[name] / row_counts[name] if row_counts[name] else None) for name in METRIC_NAMES
    }

    all_pairs: dict[str, float | None] = {}
    iu = np.triu_indices(n, 1)
    for name, fn in _METRICS.items():
        try:
            all_pairs[name] = fn(sim_values[iu], model_sims[iu]) if iu[0].size >= 2 else None
        except UndefinedMetricError:
            all_pairs[name] = None
    return EvalReport(row_wise=row_wise, all_pairs=all_pairs, n_images=n, row_coverage=row_counts)


def evaluate(model: GcnModel, dataset: Dataset, indices) -> EvalReport:
    """Embed the given dataset indices (EVAL mode) and correlate against supervision."""
    indices = list(indices)
    if not indices:
        raise ValueError("cannot evaluate an empty split")
    graphs = [augment_trivial(dataset.graphs[i], dataset.vocab) for i in indices]
    embeddings = embed_graphs(model, graphs, Mode.EVAL)
    sim_values = dataset.similarity.values[np.ix_(indices, indices)]
    return evaluate_embeddings(embeddings, sim_values)


def random_unit_embeddings(n: int, dim: int, seed: int) -> np.ndarray:
    """The random-feature baseline: seeded unit-norm gaussian vectors."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
    emb = rng.normal(size=(n, dim))
    return emb / np.linalg.norm(emb, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


@dataclass
class RetrievalReport:
    """Metrics for one noise level; ranks are 1-based, one per query."""

    noise_level: int
    mrr: float
    recall_at: dict[int, float]
    ranks: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "noise_level": self.noise_level,
            "mrr": self.mrr,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "ranks": list(self.ranks),
        }


def rank_queries(index_embeddings: np.ndarray, query_embeddings: np.ndarray, targets) -> tuple[int, ...]:
    """1-based rank of each query's target under descending inner product.

    Ties are broken by ascending index position, so an exact-duplicate
    query of its own index entry ranks first deterministically.
    """
    index_embeddings = np.asarray(index_embeddings)
    query_embeddings = np.asarray(query_embeddings)
    n = index_embeddings.shape[0]
    ranks = []
    for q, target in zip(query_embeddings, targets):
        scores = index_embeddings @ q
        order = np.lexsort((np.arange(n), -scores))
        position = np.empty(n, dtype=np.int64)
        position[order] = np.arange(1, n + 1)
        ranks.append(int(position[target]))
    return tuple(ranks)


def _report_from_ranks(noise_level: int, ranks: tuple[int, ...]) -> RetrievalReport:
    arr = np.asarray(ranks, dtype=np.float64)
    mrr = float((1.0 / arr).mean())
    recall_at = {k: float((arr <= k).mean()) for k in RECALL_KS}
    # report invariants: mrr in (0,1], recall monotone in k, and non-first
    # ranks can contribute at most 1/2 each to the reciprocal mean
    assert 0.0 < mrr <= 1.0
    assert all(recall_at[a] <= recall_at[b] for a, b in zip(RECALL_KS, RECALL_KS[1:]))
    assert mrr <= recall_at[1] + (1.0 - recall_at[1]) / 2.0 + 1e-12
    return RetrievalReport(noise_level=noise_level, mrr=mrr, recall_at=recall_at, ranks=ranks)


def _corrupted_queries(dataset: Dataset, indices, m: int, seed: int):
    noisy = []
    for qpos, i in enumerate(indices):
        g = corrupt(dataset.graphs[i], m, np.random.SeedSequence((seed, m, qpos)))
        noisy.append(augment_trivial(g, dataset.vocab))
    return noisy


def retrieval_experiment(model: GcnModel, dataset: Dataset, indices, m: int, seed: int) -> RetrievalReport:
    """Corrupt every split image's graph, re-embed it and rank the clean index."""
    indices = list(indices)
    if not indices:
        raise ValueError("cannot run retrieval on an empty split")
    clean = [augment_trivial(dataset.graphs[i], dataset.vocab) for i in indices]
    index_embeddings = embed_graphs(model, clean, Mode.EVAL)
    return _retrieval_against_index(model, dataset, indices, index_embeddings, m, seed)


def _retrieval_against_index(model, dataset, indices, index_embeddings, m, seed) -> RetrievalReport:
    queries = _corrupted_queries(dataset, indices, m, seed)
    query_embeddings = embed_graphs(model, queries, Mode.EVAL)
    ranks = rank_queries(index_embeddings, query_embeddings, range(len(indices)))
    return _report_from_ranks(m, ranks)


def noise_sweep(model: GcnModel, dataset: Dataset, indices, m_list, seed: int) -> list[RetrievalReport]:
    """One retrieval experiment per noise level, sharing the clean index embeddings."""
    m_list = list(m_list)
    if not m_list:
        raise ValueError("noise sweep requires at least one noise level")
    indices = list(indices)
    clean = [augment_trivial(dataset.graphs[i], dataset.vocab) for i in indices]
    index_embeddings = embed_graphs(model, clean, Mode.EVAL)
    return [
        _retrieval_against_index(model, dataset, indices, index_embeddings, m, seed) for m in m_list
    ]


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def _fmt(v: float | None) -> str:
    return "" if v is None else "%.6f" % v


def write_eval_report_json(reports: dict[str, EvalReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({name: r.to_dict() for name, r in reports.items()}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_eval_report_csv(reports: dict[str, EvalReport], path) -> None:
    """Rows of scope,metric,value; scope is e.g. 'model.row_wise'."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "metric", "value"])
        for name in sorted(reports):
            report = reports[name]
            for scope, metrics in (("row_wise", report.row_wise), ("all_pairs", report.all_pairs)):
                for metric in METRIC_NAMES:
                    writer.writerow([f"{name}.{scope}", metric, _fmt(metrics[metric])])


def write_retrieval_csv(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["M", "mrr"] + [f"r_at_{k}" for k in RECALL_KS])
        for r in reports:
            writer.writerow([r.noise_level, _fmt(r.mrr)] + [_fmt(r.recall_at[k]) for k in RECALL_KS])


def write_sweep_csv(rows, path) -> None:
    """rows: iterable of (seed, RetrievalReport)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["M", "seed", "mrr"] + [f"r_at_{k}" for k in RECALL_KS])
        for seed, r in rows:
            writer.writerow([r.noise_level, seed, _fmt(r.mrr)] + [_fmt(r.recall_at[k]) for k in RECALL_KS])


def write_ranks_csv(report: RetrievalReport, image_ids, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "rank"])
        for image_id, rank in zip(image_ids, report.ranks):
            writer.writerow([image_id, rank])


def write_recall_curve_csv(report: RetrievalReport, path) -> None:
    """Recall at every k from 1 to the index size, for recall-vs-k plots."""
    arr = np.asarray(report.ranks, dtype=np.float64)
    n = arr.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "recall"])
        for k in range(1, n + 1):
            writer.writerow([k, _fmt(float((arr <= k).mean()))])
