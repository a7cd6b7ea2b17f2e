"""Randomness, noise samplers, the exponential mechanism and Poisson subsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Hashable, Sequence

import numpy as np

LN2 = math.log(2.0)


class ParameterError(ValueError):
    """An argument is outside the domain of the operation."""


class ContractViolation(RuntimeError):
    """A caller-supplied oracle broke a declared contract."""


class CapacityError(RuntimeError):
    """An exact enumeration would exceed its configured size cap."""


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    epsilon0: float = LN2
    beta: float = 0.1
    eta: float = 0.2
    delta_sens: float = 1.0

    def __post_init__(self):
        for name in ("epsilon", "epsilon0", "beta", "eta", "delta_sens"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta >= 1 or self.eta >= 1:
            raise ParameterError("beta and eta must lie in (0, 1)")


@dataclass(frozen=True)
class Dataset:
    """A finite multiset of user records, each tagged with a stable identity.

    ``ids`` defaults to ``0..n-1``. Subsampling keeps the ids of the retained
    records so that neighbouring datasets can be compared record by record.
    """

    records: tuple = ()
    ids: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.ids is None:
            object.__setattr__(self, "ids", tuple(range(len(self.records))))
        else:
            object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) != len(self.records):
            raise ParameterError("ids and records differ in length")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def array(self) -> np.ndarray:
        """Records stacked into a 2-D float array (records must be equal-length vectors)."""
        if not self.records:
            return np.zeros((0, 0))
        return np.asarray(self.records, dtype=float)

    @cached_property
    def grouped(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct rows of :attr:`array` and their multiplicities."""
        if not self.records:
            return np.zeros((0, 0)), np.zeros(0)
        rows, counts = np.unique(self.array, axis=0, return_counts=True)
        return rows, counts.astype(float)

    def select(self, mask: Sequence[bool]) -> "Dataset":
        keep = [i for i, flag in enumerate(mask) if flag]
        return Dataset(tuple(self.records[i] for i in keep), tuple(self.ids[i] for i in keep))

    def add(self, record: Any, record_id: Hashable = None) -> "Dataset":
        """Return the neighbour ``D ∪ {record}``."""
        if record_id is None:
            record_id = max((i for i in self.ids if isinstance(i, int)), default=-1) + 1
        if record_id in self.ids:
            raise ParameterError(f"identity {record_id!r} already present")
        return Dataset(self.records + (record,), self.ids + (record_id,))

    def remove(self, index: int) -> "Dataset":
        """Return the neighbour with the record at position ``index`` dropped."""
        return Dataset(
            self.records[:index] + self.records[index + 1 :],
            self.ids[:index] + self.ids[index + 1 :],
        )


class RandomSource:
    """Seeded randomness. The same ``(seed, stream)`` always replays the same draws."""

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, self.stream])))

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream})"

    def child(self, stream: int) -> "RandomSource":
        """An independent source for sub-stream ``stream`` of this seed."""
        return RandomSource(self.seed, self.stream * 1_000_003 + int(stream) + 1)

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen


def exponential_inverse_cdf(u, rate: float):
    return -np.log1p(-np.asarray(u, dtype=float)) / rate


def laplace_inverse_cdf(u, scale: float):
    u = np.asarray(u, dtype=float) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_exponential(rate: float, rng: RandomSource, size=None):
    """Draw from Exp(rate), i.e. CDF ``1 - exp(-rate * x)`` on ``[0, inf)``."""
    if not rate > 0:
        raise ParameterError(f"rate must be positive, got {rate}")
    out = exponential_inverse_cdf(rng.uniform(size), rate)
    return float(out) if size is None else out


def sample_laplace(scale: float, rng: RandomSource, size=None):
    if not scale > 0:
        raise ParameterError(f"scale must be positive, got {scale}")
    out = laplace_inverse_cdf(rng.uniform(size), scale)
    return float(out) if size is None else out


def _check_scores(candidates, scores) -> np.ndarray:
    if len(candidates) == 0:
        raise ContractViolation("exponential mechanism called with an empty candidate set")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(candidates),):
        raise ParameterError(f"expected {len(candidates)} scores, got shape {scores.shape}")
    if np.isnan(scores).any():
        raise ParameterError("NaN score")
    if np.isinf(scores).any():
        raise ParameterError("infinite score")
    return scores


def exp_mech_distribution(candidates: Sequence, scores, rate: float) -> np.ndarray:
    """Selection probabilities of the exponential mechanism, aligned with ``candidates``."""
    if not rate > 0:
        raise ParameterError(f"rate must be positive, got {rate}")
    scores = _check_scores(candidates, scores)
    logits = rate * scores
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


def exp_mech(candidates: Sequence, scores, rate: float, rng: RandomSource):
    """Pick ``c`` with probability proportional to ``exp(rate * score(c))``."""
    probs = exp_mech_distribution(candidates, scores, rate)
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.uniform() * cum[-1], side="right"))
    return candidates[min(idx, len(candidates) - 1)]


def poisson_subsample(dataset: Dataset, p: float, rng: RandomSource) -> Dataset:
    """Keep every record independently with probability ``p``.

    One uniform is drawn per record position, so the decision never looks at
    the record payloads.
    """
    if not 0 <= p < 1:
        raise ParameterError(f"subsampling rate must lie in [0, 1), got {p}")
    keep = rng.uniform(len(dataset)) < p
    return dataset.select(keep)


def amplification_epsilon(p: float, epsilon0: float) -> float:
    """Two-sided epsilon of an ``epsilon0``-add-DP mechanism run on a rate-``p`` Poisson subsample."""
    if not 0 <= p < 1:
        raise ParameterError(f"p must lie in [0, 1), got {p}")
    if not epsilon0 > 0:
        raise ParameterError(f"epsilon0 must be positive, got {epsilon0}")
    # -log1p(-p) == ln(1/(1-p)); log1p(p * expm1(eps0)) == ln(1 + p(e^eps0 - 1))
    return max(-math.log1p(-p), math.log1p(p * math.expm1(epsilon0)))


def rate_for_target(epsilon: float) -> float:
    """Subsampling rate ``1 - e^{-epsilon}`` that turns ln(2)-add-DP into epsilon-DP."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    return -math.expm1(-epsilon)
