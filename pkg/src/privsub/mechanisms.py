"""Adaptive Repeated-EM and Repeated-AT engines plus the subsampling wrapper.

Both engines take an oracle that, given the history of earlier outputs, emits
the next round. Oracle contracts (monotonicity under record addition and a
bounded realized sensitivity) are declared here and checked offline by
:func:`privsub.audit.contract_check`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from privsub.core import (
    LN2,
    ContractViolation,
    Dataset,
    ParameterError,
    RandomSource,
    exp_mech,
    poisson_subsample,
    rate_for_target,
    sample_exponential,
)


@dataclass(frozen=True)
class EmRound:
    """One round of Repeated-EM.

    ``score`` maps a dataset to one real score per entry of ``candidates``.
    """

    candidates: tuple
    score: Callable[[Dataset], Sequence[float]]


@dataclass(frozen=True)
class AtRound:
    query: Callable[[Dataset], float]
    threshold: float


@dataclass(frozen=True)
class ScoringOracle:
    rounds: int
    propose: Callable[[tuple], EmRound]


@dataclass(frozen=True)
class ThresholdOracle:
    rounds: int
    propose: Callable[[tuple], AtRound]


@dataclass(frozen=True)
class EmTranscript:
    chosen: tuple


@dataclass(frozen=True)
class AtTranscript:
    outcomes: tuple
    noise: Optional[tuple] = None

    @property
    def above(self) -> list:
        """Indices of the rounds that answered above threshold."""
        return [i for i, o in enumerate(self.outcomes) if o]


def em_round_scores(round_: EmRound, dataset: Dataset) -> np.ndarray:
    if len(round_.candidates) == 0:
        raise ContractViolation("oracle emitted an empty candidate set")
    scores = np.asarray(round_.score(dataset), dtype=float)
    if scores.shape != (len(round_.candidates),):
        raise ContractViolation(
            f"score function returned shape {scores.shape} for {len(round_.candidates)} candidates"
        )
    return scores


def run_repeated_em(
    oracle: ScoringOracle,
    dataset: Dataset,
    epsilon0: float,
    delta_sens: float,
    rng: RandomSource,
) -> EmTranscript:
    """Run ``oracle.rounds`` exponential mechanisms at rate ``epsilon0 / delta_sens``."""
    if not epsilon0 > 0 or not delta_sens > 0:
        raise ParameterError("epsilon0 and delta_sens must be positive")
    rate = epsilon0 / delta_sens
    history = ()
    for _ in range(oracle.rounds):
        round_ = oracle.propose(history)
        scores = em_round_scores(round_, dataset)
        history += (exp_mech(round_.candidates, scores, rate, rng),)
    return EmTranscript(history)


def run_repeated_at(
    oracle: ThresholdOracle,
    dataset: Dataset,
    epsilon0: float,
    delta_sens: float,
    rng: RandomSource,
    record_noise: bool = False,
) -> AtTranscript:
    """Report, per round, whether ``h_i(D) + Exp(epsilon0/delta_sens) > tau_i``.

    Only the query is noised; thresholds are used as given.
    """
    if not epsilon0 > 0 or not delta_sens > 0:
        raise ParameterError("epsilon0 and delta_sens must be positive")
    rate = epsilon0 / delta_sens
    history = ()
    noise = [] if record_noise else None
    for _ in range(oracle.rounds):
        round_ = oracle.propose(history)
        theta = sample_exponential(rate, rng)
        if record_noise:
            noise.append(theta)
        history += (bool(round_.query(dataset) + theta > round_.threshold),)
    return AtTranscript(history, tuple(noise) if record_noise else None)


def bind_em(oracle: ScoringOracle, delta_sens: float = 1.0) -> Callable:
    """Bind Repeated-EM to an oracle, giving a ``(dataset, epsilon0, rng)`` mechanism."""

    def mechanism(dataset, epsilon0, rng):
        return run_repeated_em(oracle, dataset, epsilon0, delta_sens, rng)

    return mechanism


def bind_at(oracle: ThresholdOracle, delta_sens: float = 1.0) -> Callable:
    def mechanism(dataset, epsilon0, rng):
        return run_repeated_at(oracle, dataset, epsilon0, delta_sens, rng)

    return mechanism


def run_subsampled(
    mechanism: Callable[[Dataset, float, RandomSource], Any],
    dataset: Dataset,
    epsilon: float,
    rng: RandomSource,
):
    """Run an ln(2)-add-DP mechanism on a single Poisson subsample at ``p = 1 - e^{-epsilon}``.

    The result is epsilon-DP for add and remove neighbours alike.
    """
    p = rate_for_target(epsilon)
    subsample = poisson_subsample(dataset, p, rng)
    return mechanism(subsample, LN2, rng)
