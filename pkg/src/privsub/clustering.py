"""Private metric k-median (q=1) and k-means (q=2) over a finite metric.

Pipeline: a Repeated-EM bicriteria solution of size O(k log n), a one-sided
noisy histogram of users snapped to it, and a non-private single-swap local
search on the weighted synthetic points. The whole thing runs on one Poisson
subsample to become two-sided DP.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from privsub.core import (
    LN2,
    Dataset,
    ParameterError,
    PrivacyParams,
    RandomSource,
    poisson_subsample,
    rate_for_target,
    sample_exponential,
)
from privsub.mechanisms import EmRound, ScoringOracle, run_repeated_em


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteMetric:
    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        object.__setattr__(self, "d", d)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or len(d) == 0:
            raise MetricError(f"distance matrix must be square and nonempty, got {d.shape}")

    @property
    def m(self) -> int:
        return len(self.d)

    def validate(self, tol: float = 1e-9) -> None:
        d = self.d
        if np.abs(np.diag(d)).max() > tol:
            raise MetricError("nonzero diagonal")
        if np.abs(d - d.T).max() > tol:
            raise MetricError("asymmetric distances")
        if d.min() < -tol:
            raise MetricError("negative distance")
        if d.max() > 1 + tol:
            raise MetricError(f"diameter {d.max()} exceeds 1")
        if self.m <= 200:
            for c in range(self.m):
                if (d > d[:, c][:, None] + d[c, :][None, :] + tol).any():
                    raise MetricError(f"triangle inequality fails through point {c}")

    @classmethod
    def from_lower_triangle(cls, m: int, values) -> "FiniteMetric":
        """Rows ``i = 1..m-1`` of ``d[i, :i]``, either nested or flattened."""
        flat = [v for row in values for v in row] if values and isinstance(values[0], (list, tuple)) else list(values)
        if len(flat) != m * (m - 1) // 2:
            raise MetricError(f"expected {m * (m - 1) // 2} distances for m={m}, got {len(flat)}")
        d = np.zeros((m, m))
        d[np.tril_indices(m, -1)] = flat
        return cls(d + d.T)

    def lower_triangle(self) -> list:
        return self.d[np.tril_indices(self.m, -1)].tolist()


@dataclass(frozen=True)
class ClusterInstance:
    """Users (records are point ids) to be served by ``k`` centers under ``d^q``."""

    metric: FiniteMetric
    dataset: Dataset
    k: int
    q: int = 1

    def __post_init__(self):
        if self.q not in (1, 2):
            raise ParameterError("q must be 1 (k-median) or 2 (k-means)")
        if not 1 <= self.k <= self.metric.m:
            raise ParameterError(f"need 1 <= k <= m, got k={self.k}, m={self.metric.m}")

    @property
    def m(self) -> int:
        return self.metric.m

    @property
    def n(self) -> int:
        return len(self.dataset)

    @property
    def dq(self) -> np.ndarray:
        return self.metric.d**self.q

    def point_counts(self, dataset: Optional[Dataset] = None) -> np.ndarray:
        dataset = self.dataset if dataset is None else dataset
        return np.bincount(np.asarray(dataset.records, dtype=int), minlength=self.m).astype(float)

    def with_dataset(self, dataset: Dataset) -> "ClusterInstance":
        return dataclasses.replace(self, dataset=dataset)


def _nearest(dq: np.ndarray, centers: Sequence[int]) -> np.ndarray:
    """Per point, the ``d^q`` distance to the closest center (1 when there are no centers)."""
    if len(centers) == 0:
        return np.ones(dq.shape[1])
    return dq[list(centers)].min(axis=0)


def weighted_cost(dq: np.ndarray, weights: np.ndarray, centers: Sequence[int]) -> float:
    return float(weights @ _nearest(dq, centers))


def cost(instance: ClusterInstance, centers: Iterable[int], dataset: Optional[Dataset] = None) -> float:
    """``sum_x min_{c in S} d(c, x)^q``, with ``n`` for the empty set."""
    return weighted_cost(instance.dq, instance.point_counts(dataset), sorted(set(centers)))


def bicriteria_rounds(k: int, n: int) -> int:
    return max(1, math.ceil(2 * k * math.log(n))) if n > 1 else 1


def bicriteria_oracle(instance: ClusterInstance, rounds: int) -> ScoringOracle:
    """Candidates are unopened points; score is the cost reduction from opening one."""
    dq = instance.dq
    m = instance.m

    def propose(history):
        remaining = tuple(c for c in range(m) if c not in history)
        base = _nearest(dq, history)

        def score(D):
            counts = instance.point_counts(D)
            return (base[None, :] - np.minimum(base[None, :], dq[list(remaining)])) @ counts

        return EmRound(remaining, score)

    return ScoringOracle(rounds, propose)


def bicriteria(
    instance: ClusterInstance,
    epsilon0: float,
    beta: float,
    rng: RandomSource,
    rounds: Optional[int] = None,
) -> tuple:
    """``epsilon0``-add-DP center set of size at most ``ceil(2 k ln n)``.

    Returns every point when ``2 k ln n >= m``. ``beta`` only enters the
    utility analysis; it does not change the algorithm.
    """
    n, m, k = instance.n, instance.m, instance.k
    if rounds is None:
        if n > 1 and 2 * k * math.log(n) >= m:
            return tuple(range(m))
        rounds = bicriteria_rounds(k, n)
    rounds = min(rounds, m)
    return run_repeated_em(bicriteria_oracle(instance, rounds), instance.dataset, epsilon0, 1.0, rng).chosen


@dataclass(frozen=True)
class WeightedSyntheticData:
    centers: tuple
    weights: np.ndarray
    snapped: np.ndarray

    def as_dict(self) -> dict:
        return dict(zip(self.centers, self.weights.tolist()))


def snap(instance: ClusterInstance, centers: Sequence[int], dataset: Optional[Dataset] = None) -> np.ndarray:
    """Users per center after moving each to its nearest center (lowest index on ties)."""
    centers = sorted(centers)
    if not centers:
        raise ParameterError("need at least one center to snap to")
    owner = np.argmin(instance.metric.d[centers], axis=0)
    counts = instance.point_counts(dataset)
    return np.bincount(owner, weights=counts, minlength=len(centers))


def synthesize(
    instance: ClusterInstance, centers: Sequence[int], epsilon0_half: float, rng: RandomSource
) -> WeightedSyntheticData:
    """Snapped counts plus independent ``Exp(epsilon0_half)`` noise per center."""
    centers = tuple(sorted(centers))
    hist = snap(instance, centers)
    noise = sample_exponential(epsilon0_half, rng, size=len(centers))
    return WeightedSyntheticData(centers, hist + noise, hist)


def local_search(
    instance: ClusterInstance,
    data: WeightedSyntheticData,
    gamma: float = 0.1,
    max_swaps: Optional[int] = None,
) -> tuple:
    """Single-swap local search for ``k`` centers on the weighted synthetic points.

    Starts from weighted greedy and accepts a swap only when it cuts the cost
    by a factor of at least ``1 - gamma/k``.
    """
    m, k = instance.m, instance.k
    if k >= m:
        return tuple(range(m))
    dq = instance.dq[:, list(data.centers)]
    w = np.asarray(data.weights, dtype=float)
    current: list = []
    for _ in range(k):
        base = _nearest(dq, current)
        cands = [c for c in range(m) if c not in current]
        gains = (base[None, :] - np.minimum(base[None, :], dq[cands])) @ w
        current.append(cands[int(np.argmax(gains))])
    current_cost = weighted_cost(dq, w, current)
    cap = 10 * k * m if max_swaps is None else max_swaps
    swaps = 0
    improved = True
    while improved and swaps < cap and current_cost > 0:
        improved = False
        for out in sorted(current):
            rest = [c for c in current if c != out]
            base = _nearest(dq, rest)
            cands = [c for c in range(m) if c not in current]
            costs = np.minimum(base[None, :], dq[cands]) @ w
            best = int(np.argmin(costs))
            if costs[best] < (1 - gamma / k) * current_cost:
                current = rest + [cands[best]]
                current_cost = float(costs[best])
                swaps += 1
                improved = True
                break
    return tuple(sorted(current))


def dp_cluster(instance: ClusterInstance, params: PrivacyParams, rng: RandomSource) -> tuple:
    """epsilon-DP ``k`` centers: subsample once, then bicriteria, noisy histogram, local search."""
    if not params.epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if instance.k >= instance.m:
        return tuple(range(instance.m))
    sub = instance.with_dataset(poisson_subsample(instance.dataset, rate_for_target(params.epsilon), rng))
    centers = bicriteria(sub, LN2 / 2, params.beta / 2, rng)
    data = synthesize(sub, centers, LN2 / 2, rng)
    return local_search(instance, data)
