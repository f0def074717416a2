"""Contrastive objectives over (anchor, positive, negative) embedding triples
and the sampling strategies that pick the triples from a similarity matrix.

All three losses compare the anchor-positive and anchor-negative inner
products. The ranking loss is a soft-target cross-entropy: the posterior
that the pair ordering is correct is sigmoid of the scaled similarity gap,
and the target is s_ap / (s_ap + s_an), so near-equal supervision values
contribute a proportionally weak ordering constraint instead of a hard one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .scene import SimilarityMatrix
from .tensor import Tensor

LOSS_KINDS = ("triplet", "infonce", "ranking")
SAMPLER_KINDS = ("random", "extreme", "probability", "reject")

REDRAW_CAP = 10_000


class SamplerExhaustedError(RuntimeError):
    """A rejection-based sampler hit the redraw cap without an admissible triple."""


class DegenerateDistributionError(ValueError):
    """A similarity row admits no valid draw (e.g. all zeros or all ones)."""


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ranking"
    margin: float = 0.5
    infonce_temperature: float = 1.0
    ranking_temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.infonce_temperature <= 0 or self.ranking_temperature <= 0:
            raise ValueError("temperatures must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "probability"
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class Triple:
    """Anchor, positive and negative image indices with their supervision values."""

    anchor: int
    positive: int
    negative: int
    s_ap: float
    s_an: float

    def __post_init__(self):
        if len({self.anchor, self.positive, self.negative}) != 3:
            raise ValueError(f"triple members must be distinct, got {self}")
        for v in (self.s_ap, self.s_an):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"similarity values must lie in [0,1], got {v}")


def _dot(a: Tensor, b: Tensor) -> Tensor:
    return T.sum(T.mul(a, b))


def ranking_target(s_ap: float, s_an: float) -> float:
    """Soft target probability that the positive outranks the negative."""
    total = s_ap + s_an
    if total <= 0.0:
        raise ValueError("ranking target undefined: both similarities are zero")
    return s_ap / total


def ranking_loss(
    f_a: Tensor, f_p: Tensor, f_n: Tensor, s_ap: float, s_an: float, nu: float = 1.0
) -> Tensor:
    """Cross-entropy between the ordering posterior and the soft target.

    Evaluated in log-sigmoid form, which stays finite for any gap size.
    """
    if nu <= 0:
        raise ValueError("ranking temperature must be positive")
    target = ranking_target(s_ap, s_an)
    gap = T.mul_scalar(T.sub(_dot(f_a, f_p), _dot(f_a, f_n)), 1.0 / nu)
    return T.add(
        T.mul_scalar(T.logsigmoid(gap), -target),
        T.mul_scalar(T.logsigmoid(T.mul_scalar(gap, -1.0)), -(1.0 - target)),
    )


def triplet_loss(f_a: Tensor, f_p: Tensor, f_n: Tensor, margin: float = 0.5) -> Tensor:
    """Hinge on the similarity gap; the kink's subgradient is 0 (inactive)."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    gap = T.sub(_dot(f_a, f_n), _dot(f_a, f_p))
    return T.relu(T.add(gap, T.scalar(margin)))


def infonce_loss(f_a: Tensor, f_p: Tensor, f_n: Tensor, temperature: float = 1.0) -> Tensor:
    """Two-way softmax loss on the positive vs negative similarity.

    -log(e^(ap/t) / (e^(ap/t) + e^(an/t))) == -logsigmoid((ap - an)/t),
    which is the stabilized log-sum-exp form for the two-candidate case.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    gap = T.mul_scalar(T.sub(_dot(f_a, f_p), _dot(f_a, f_n)), 1.0 / temperature)
    return T.mul_scalar(T.logsigmoid(gap), -1.0)


def compute_loss(config: LossConfig, f_a: Tensor, f_p: Tensor, f_n: Tensor, triple: Triple) -> Tensor:
    if config.kind == "ranking":
        return ranking_loss(f_a, f_p, f_n, triple.s_ap, triple.s_an, config.ranking_temperature)
    if config.kind == "triplet":
        return triplet_loss(f_a, f_p, f_n, config.margin)
    return infonce_loss(f_a, f_p, f_n, config.infonce_temperature)


class TripleSampler:
    """Draws (positive, negative) pairs for anchors from a similarity matrix.

    The sampler owns its RNG, so a fixed seed gives a reproducible draw
    sequence. ``candidates`` restricts both triple members to a subset of
    images (e.g. the train split); the anchor itself is always excluded.
    """

    def __init__(self, similarity: SimilarityMatrix | np.ndarray, config: SamplerConfig, candidates=None):
        self._values = similarity.values if isinstance(similarity, SimilarityMatrix) else np.asarray(similarity)
        self._config = config
        self._rng = np.random.default_rng(config.rng_seed)
        n = self._values.shape[0]
        self._candidates = np.arange(n) if candidates is None else np.asarray(sorted(candidates), dtype=np.int64)
        if len(self._candidates) < 3:
            raise ValueError("sampling requires at least 3 candidate images")

    def sample_triple(self, anchor: int) -> Triple:
        cands = self._candidates[self._candidates != anchor]
        if len(cands) < 2:
            raise ValueError(f"anchor {anchor}: not enough candidates to form a triple")
        row = self._values[anchor, cands]
        kind = self._config.kind
        if kind == "random":
            pi, ni = self._sample_random(anchor, row)
        elif kind == "extreme":
            pi, ni = self._sample_extreme(anchor, row)
        elif kind == "probability":
            pi, ni = self._sample_probability(anchor, row)
        else:
            pi, ni = self._sample_reject(anchor, row)
        return Triple(
            anchor=int(anchor),
            positive=int(cands[pi]),
            negative=int(cands[ni]),
            s_ap=float(row[pi]),
            s_an=float(row[ni]),
        )

    def _sample_random(self, anchor: int, row: np.ndarray) -> tuple[int, int]:
        # Uniform over correctly-ordered pairs, realized by rejection of
        # uniform distinct pairs; exact because every ordered pair is
        # proposed with equal probability.
        for _ in range(REDRAW_CAP):
            pi, ni = self._rng.choice(len(row), size=2, replace=False)
            if row[pi] > row[ni]:
                return int(pi), int(ni)
        raise SamplerExhaustedError(
            f"anchor {anchor}: no strictly ordered pair found in {REDRAW_CAP} draws"
        )

    def _sample_extreme(self, anchor: int, row: np.ndarray) -> tuple[int, int]:
        pi = int(np.argmax(row))  # argmax/argmin take the smallest index on ties
        ni = int(np.argmin(row))
        if pi == ni:
            raise DegenerateDistributionError(f"anchor {anchor}: constant similarity row")
        return pi, ni

    def _probability_weights(self, anchor: int, row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pos_total = row.sum()
        if pos_total <= 0.0:
            raise DegenerateDistributionError(f"anchor {anchor}: all similarities are zero")
        neg_weights = 1.0 - row
        neg_total = neg_weights.sum()
        if neg_total <= 0.0:
            raise DegenerateDistributionError(f"anchor {anchor}: all similarities are one")
        return row / pos_total, neg_weights / neg_total

    def _sample_probability(self, anchor: int, row: np.ndarray) -> tuple[int, int]:
        pos_p, neg_p = self._probability_weights(anchor, row)
        pi = int(self._rng.choice(len(row), p=pos_p))
        for _ in range(REDRAW_CAP):
            ni = int(self._rng.choice(len(row), p=neg_p))
            if ni != pi:
                return pi, ni
        raise SamplerExhaustedError(f"anchor {anchor}: could not draw a negative distinct from the positive")

    def _sample_reject(self, anchor: int, row: np.ndarray) -> tuple[int, int]:
        # Probability sampling with the ordering constraint; equality is accepted.
        for _ in range(REDRAW_CAP):
            pi, ni = self._sample_probability(anchor, row)
            if row[pi] >= row[ni]:
                return pi, ni
        raise SamplerExhaustedError(
            f"anchor {anchor}: no correctly-ordered pair accepted in {REDRAW_CAP} draws"
        )
