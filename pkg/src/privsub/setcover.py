"""Private set cover in the open-set model: the output is an ordering of the sets.

Records of the dataset are the universe elements. Each record is the
collection of set indices that contain it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from privsub.core import (
    LN2,
    Dataset,
    ParameterError,
    PrivacyParams,
    RandomSource,
    poisson_subsample,
    rate_for_target,
    sample_laplace,
)
from privsub.mechanisms import AtRound, ThresholdOracle, run_repeated_at
from privsub.submodular import BudgetAdditive, dp_submod_greedy_cardinality


class InstanceError(ValueError):
    """The set system cannot be covered or is malformed."""


@dataclass(frozen=True)
class SetSystem:
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ParameterError("a set system needs at least one set")

    def membership(self, dataset: Dataset) -> np.ndarray:
        """Boolean ``(n, m)`` matrix: record ``x`` lies in set ``i``."""
        out = np.zeros((len(dataset), self.m), dtype=bool)
        for row, sets in enumerate(dataset.records):
            for i in sets:
                if not 0 <= i < self.m:
                    raise InstanceError(f"record {dataset.ids[row]!r} names set {i} outside [0, {self.m})")
                out[row, i] = True
        return out

    def validate(self, dataset: Dataset) -> None:
        member = self.membership(dataset)
        bare = np.flatnonzero(~member.any(axis=1))
        if len(bare):
            raise InstanceError(f"records {[dataset.ids[i] for i in bare[:5]]} belong to no set")


def is_permutation(pi: Sequence[int], m: int) -> bool:
    return sorted(pi) == list(range(m))


def cost_set_cov(pi: Sequence[int], system: SetSystem, dataset: Dataset) -> int:
    """Number of distinct positions chosen when every record takes its first covering set."""
    if not is_permutation(pi, system.m):
        raise ParameterError("pi is not a permutation of the sets")
    if len(dataset) == 0:
        return 0
    member = system.membership(dataset)[:, list(pi)]
    covered = member.any(axis=1)
    if not covered.all():
        raise InstanceError("some record is covered by no set")
    return int(len(np.unique(member.argmax(axis=1))))


@dataclass(frozen=True)
class GreedyScalingConfig:
    threshold_factor: float = 1000.0
    n_min_factor: float = 100.0
    budget_base: float = 4.0

    def __post_init__(self):
        if min(self.threshold_factor, self.n_min_factor, self.budget_base) <= 0:
            raise ParameterError("greedy scaling constants must be positive")


@dataclass
class GreedyScalingTrace:
    """Intermediate quantities of one run (for reporting and tests)."""

    n_noisy: float = 0.0
    n_min: float = 0.0
    rounds: int = 0
    laplace_eps: float = 0.0
    round_eps: list = field(default_factory=list)
    accepted: list = field(default_factory=list)  # per round, sets appended in that round

    @property
    def total_epsilon(self) -> float:
        return self.laplace_eps + sum(self.round_eps)


def round_budgets(epsilon: float, rounds: int, base: float = 4.0) -> list[float]:
    """``epsilon / (base * 2^(R - r))`` for ``r = 1..R``."""
    return [epsilon / (base * 2 ** (rounds - r)) for r in range(1, rounds + 1)]


def cover_round_oracle(system: SetSystem, order: Sequence[int], covered_by: Sequence[int], threshold: float) -> ThresholdOracle:
    """One greedy-scaling round as a Repeated-AT instance.

    Round ``i`` asks whether set ``order[i]`` still covers more than
    ``threshold`` records outside the sets already accepted (``covered_by``
    plus those accepted earlier in this round). Records are 0/1 membership
    vectors as produced by :func:`as_coverage_dataset`.
    """
    order = tuple(order)
    covered_by = tuple(covered_by)

    def propose(history):
        taken = list(covered_by) + [order[j] for j, o in enumerate(history) if o]
        i = order[len(history)]

        def query(D):
            if len(D) == 0:
                return 0.0
            member = D.array > 0.5
            fresh = member[:, i].copy()
            if taken:
                fresh &= ~member[:, taken].any(axis=1)
            return float(fresh.sum())

        return AtRound(query, threshold)

    return ThresholdOracle(len(order), propose)


def dp_greedy_scaling(
    system: SetSystem,
    dataset: Dataset,
    epsilon: float,
    rng: RandomSource,
    config: GreedyScalingConfig = GreedyScalingConfig(),
    trace: Optional[GreedyScalingTrace] = None,
) -> tuple:
    """Order the sets with the private greedy-scaling scheme; epsilon-DP.

    A Laplace estimate of ``n`` fixes ``R`` rounds with geometrically halving
    thresholds. Round ``r`` draws a fresh subsample at ``p_r = 1 - e^{-eps_r}``
    and runs Repeated-AT over the surviving sets in ascending index order.
    Sets never accepted are appended in ascending index order.
    """
    if not 0 < epsilon <= 1:
        raise ParameterError("epsilon must lie in (0, 1]")
    m = system.m
    trace = trace if trace is not None else GreedyScalingTrace()
    if m == 1:
        return (0,)
    n_min = config.n_min_factor * math.log(m)
    n_noisy = max(len(dataset) + sample_laplace(0.5 / epsilon, rng), n_min)
    rounds = int(math.floor(math.log2(n_noisy / n_min)))
    budgets = round_budgets(epsilon, rounds, config.budget_base)
    if 0.5 * epsilon + sum(budgets) > epsilon * (1 + 1e-12):
        raise ParameterError("round budgets exceed epsilon; budget_base too small")
    trace.n_noisy, trace.n_min, trace.rounds = n_noisy, n_min, rounds
    trace.laplace_eps, trace.round_eps = 0.5 * epsilon, budgets

    coverage = as_coverage_dataset(system, dataset)
    pi: list = []
    surviving = list(range(m))
    for r, eps_r in enumerate(budgets, start=1):
        tau_r = config.threshold_factor * n_noisy / 2**r
        p_r = rate_for_target(eps_r)
        sub = poisson_subsample(coverage, p_r, rng)
        oracle = cover_round_oracle(system, surviving, pi, p_r * tau_r)
        outcome = run_repeated_at(oracle, sub, LN2, 1.0, rng).outcomes
        accepted = [i for i, o in zip(surviving, outcome) if o]
        trace.accepted.append(accepted)
        pi.extend(accepted)
        surviving = [i for i in surviving if i not in set(accepted)]
    pi.extend(surviving)
    return tuple(pi)


def setcover_function(system: SetSystem) -> BudgetAdditive:
    """``|union of chosen sets ∩ D|`` as a decomposable coverage function over set indices."""
    return BudgetAdditive(system.m)


def as_coverage_dataset(system: SetSystem, dataset: Dataset) -> Dataset:
    """Same records re-encoded as 0/1 membership vectors of length ``m``."""
    rows = system.membership(dataset).astype(float)
    return Dataset(tuple(map(tuple, rows)), dataset.ids)


def dp_setcover_via_em(
    system: SetSystem, dataset: Dataset, epsilon: float, beta: float, rng: RandomSource
) -> tuple:
    """Order all ``m`` sets with the subsampled greedy on coverage gains; epsilon-DP."""
    params = PrivacyParams(epsilon=epsilon, beta=beta)
    return dp_submod_greedy_cardinality(
        setcover_function(system), as_coverage_dataset(system, dataset), system.m, params, rng
    )
