"""Private maximization of decomposable monotone submodular functions.

Two pipelines live here: the subsampled greedy for a cardinality constraint
and the subsampled continuous greedy with swap rounding for a matroid
constraint.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from privsub.core import (
    LN2,
    CapacityError,
    ContractViolation,
    Dataset,
    ParameterError,
    PrivacyParams,
    RandomSource,
    exp_mech,
    poisson_subsample,
    rate_for_target,
)
from privsub.mechanisms import EmRound, ScoringOracle, bind_em, run_subsampled

MAX_SAMPLE_ENTRIES = 2 * 10**7
EXACT_MULTILINEAR_MAX_M = 20


class DecomposableSubmodular:
    """``F_D(S) = sum over x in D of f_x(S)`` with each ``f_x`` monotone submodular into [0, 1].

    Subclasses override :meth:`evaluate_many` for speed; the generic version
    calls ``f(record, S)`` record by record.
    """

    def __init__(self, m: int, f: Optional[Callable[[object, frozenset], float]] = None):
        if m < 1:
            raise ParameterError("universe size m must be positive")
        self.m = int(m)
        self._f = f

    def value(self, record, subset: Iterable[int]) -> float:
        return float(self._f(record, frozenset(subset)))

    def evaluate_many(self, dataset: Dataset, masks: np.ndarray) -> np.ndarray:
        """``F_D`` on every row of a boolean ``(r, m)`` membership matrix."""
        masks = self._check_masks(masks)
        out = np.zeros(len(masks))
        for row, mask in enumerate(masks):
            subset = frozenset(np.flatnonzero(mask).tolist())
            out[row] = sum(self.value(rec, subset) for rec in dataset.records)
        return out

    def evaluate(self, dataset: Dataset, subset: Iterable[int]) -> float:
        return float(self.evaluate_many(dataset, self.indicator(subset)[None, :])[0])

    def marginal_gains(self, dataset: Dataset, subset: Iterable[int], candidates: Sequence[int]) -> np.ndarray:
        base = self.indicator(subset)
        masks = np.repeat(base[None, :], len(candidates) + 1, axis=0)
        for row, u in enumerate(candidates, start=1):
            masks[row, u] = True
        vals = self.evaluate_many(dataset, masks)
        return vals[1:] - vals[0]

    def indicator(self, subset: Iterable[int]) -> np.ndarray:
        mask = np.zeros(self.m, dtype=bool)
        idx = list(subset)
        if idx and (min(idx) < 0 or max(idx) >= self.m):
            raise ParameterError(f"subset {sorted(idx)} leaves the universe [0, {self.m})")
        mask[idx] = True
        return mask

    def _check_masks(self, masks) -> np.ndarray:
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim != 2 or masks.shape[1] != self.m:
            raise ParameterError(f"expected masks of shape (r, {self.m}), got {masks.shape}")
        return masks


class BudgetAdditive(DecomposableSubmodular):
    """Records are weight vectors ``w`` in [0, 1]^m with ``f_x(S) = min(1, sum_{u in S} w_u)``.

    With 0/1 weights this is the coverage indicator ``min(1, |S ∩ A_x|)``.
    """

    def __init__(self, m: int):
        super().__init__(m)

    def value(self, record, subset):
        return float(min(1.0, sum(record[u] for u in subset)))

    def evaluate_many(self, dataset, masks):
        masks = self._check_masks(masks)
        if len(dataset) == 0:
            return np.zeros(len(masks))
        rows, counts = dataset.grouped
        if rows.shape[1] != self.m:
            raise ParameterError(f"records have length {rows.shape[1]}, expected {self.m}")
        covered = np.minimum(masks.astype(float) @ rows.T, 1.0)
        return covered @ counts

    def marginal_gains(self, dataset, subset, candidates):
        candidates = list(candidates)
        subset = sorted(set(subset))
        if len(dataset) == 0:
            return np.zeros(len(candidates))
        rows, counts = dataset.grouped
        base = rows[:, subset].sum(axis=1) if subset else np.zeros(len(rows))
        before = np.minimum(base, 1.0)
        fresh = np.array([u not in subset for u in candidates], dtype=float)
        after = np.minimum(base[:, None] + rows[:, candidates] * fresh[None, :], 1.0)
        return counts @ (after - before[:, None])


def coverage_records(covers: Iterable[Iterable[int]], m: int) -> list[tuple]:
    """0/1 weight vectors for users covered by the listed items."""
    out = []
    for items in covers:
        w = [0.0] * m
        for u in items:
            w[u] = 1.0
        out.append(tuple(w))
    return out


def check_submodular(f: Callable[[frozenset], float], m: int, tol: float = 1e-12) -> Optional[str]:
    """Exhaustively check range, monotonicity and diminishing returns of ``f`` on [m].

    Uses the local form ``f(S+u) + f(S+v) >= f(S+u+v) + f(S)``, which is
    equivalent to submodularity. Returns a description of the first violation
    or ``None``.
    """
    if m > 12:
        raise CapacityError("exhaustive submodularity check limited to m <= 12")
    cache = {}

    def val(s):
        if s not in cache:
            cache[s] = f(s)
        return cache[s]

    for r in range(m + 1):
        for combo in itertools.combinations(range(m), r):
            s = frozenset(combo)
            fs = val(s)
            if fs < -tol or fs > 1 + tol:
                return f"f({sorted(s)}) = {fs} outside [0, 1]"
            rest = [u for u in range(m) if u not in s]
            for u in rest:
                if val(s | {u}) < fs - tol:
                    return f"not monotone at S={sorted(s)}, u={u}"
            for u, v in itertools.combinations(rest, 2):
                if val(s | {u}) + val(s | {v}) < val(s | {u, v}) + fs - tol:
                    return f"not submodular at S={sorted(s)}, u={u}, v={v}"
    return None


# --- matroids -------------------------------------------------------------


class Matroid:
    """Independence-oracle matroid on the ground set ``{0, ..., m-1}``."""

    m: int

    def is_independent(self, subset: Iterable[int]) -> bool:
        raise NotImplementedError

    @property
    def rank(self) -> int:
        return len(self.greedy_base(range(self.m)))

    def greedy_base(self, within: Iterable[int], start: Iterable[int] = ()) -> frozenset:
        """Extend ``start`` to a maximal independent subset of ``start ∪ within`` (ascending scan)."""
        base = set(start)
        for u in sorted(set(within)):
            if u not in base and self.is_independent(base | {u}):
                base.add(u)
        return frozenset(base)


@dataclass(frozen=True)
class UniformMatroid(Matroid):
    m: int
    k: int

    def is_independent(self, subset):
        subset = set(subset)
        return len(subset) <= self.k and all(0 <= u < self.m for u in subset)

    @property
    def rank(self):
        return min(self.k, self.m)


@dataclass(frozen=True)
class PartitionMatroid(Matroid):
    """At most ``budgets[b]`` elements from block ``blocks[b]``; blocks partition [m]."""

    blocks: tuple
    budgets: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(sorted(b)) for b in self.blocks))
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        if len(self.blocks) != len(self.budgets):
            raise ParameterError("one budget per block required")
        flat = [u for b in self.blocks for u in b]
        if sorted(flat) != list(range(len(flat))):
            raise ParameterError("blocks must partition {0, ..., m-1}")
        object.__setattr__(self, "_block_of", {u: i for i, b in enumerate(self.blocks) for u in b})

    @property
    def m(self):
        return sum(len(b) for b in self.blocks)

    def is_independent(self, subset):
        used = [0] * len(self.blocks)
        for u in subset:
            if u not in self._block_of:
                return False
            used[self._block_of[u]] += 1
        return all(c <= b for c, b in zip(used, self.budgets))

    @property
    def rank(self):
        return sum(min(len(b), c) for b, c in zip(self.blocks, self.budgets))


# --- multilinear extension --------------------------------------------------


@dataclass(frozen=True)
class MultilinearSamples:
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2 or len(z) < 1:
            raise ParameterError("need at least one draw of shape (s, m)")
        object.__setattr__(self, "z", z)

    @classmethod
    def draw(cls, s: int, m: int, rng: RandomSource) -> "MultilinearSamples":
        if s < 1:
            raise ParameterError("s must be at least 1")
        if s * m > MAX_SAMPLE_ENTRIES:
            raise CapacityError(f"{s} draws of dimension {m} exceed {MAX_SAMPLE_ENTRIES} entries; pass a smaller s")
        return cls(rng.uniform((s, m)))

    @property
    def s(self) -> int:
        return len(self.z)

    def masks(self, y) -> np.ndarray:
        return self.z < np.asarray(y, dtype=float)[None, :]


def continuous_greedy_samples(k: int, steps: int, m: int, beta: float) -> int:
    """Draw count ``6 k^2 T^4 ln(m / beta)`` for the sampled multilinear proxy."""
    return max(1, math.ceil(6 * k**2 * steps**4 * math.log(m / beta)))


def multilinear_estimate(F: DecomposableSubmodular, dataset: Dataset, samples: MultilinearSamples, y) -> float:
    """``(1/s) * sum_j F({u : z^j_u < y_u})``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (F.m,) or samples.z.shape[1] != F.m:
        raise ParameterError(f"dimension mismatch: m={F.m}, y{y.shape}, z{samples.z.shape}")
    if (y < 0).any() or (y > 1).any():
        raise ParameterError("y must lie in [0, 1]^m")
    return float(F.evaluate_many(dataset, samples.masks(y)).mean())


def exact_multilinear(F: DecomposableSubmodular, dataset: Dataset, y, chunk: int = 1 << 14) -> float:
    """Multilinear extension by enumerating all ``2^m`` subsets."""
    y = np.asarray(y, dtype=float)
    if y.shape != (F.m,):
        raise ParameterError(f"y has shape {y.shape}, expected ({F.m},)")
    if F.m > EXACT_MULTILINEAR_MAX_M:
        raise CapacityError(f"exact multilinear extension limited to m <= {EXACT_MULTILINEAR_MAX_M}")
    total = 0.0
    bits = np.arange(F.m)
    for start in range(0, 1 << F.m, chunk):
        codes = np.arange(start, min(start + chunk, 1 << F.m))
        masks = ((codes[:, None] >> bits[None, :]) & 1).astype(bool)
        probs = np.where(masks, y[None, :], 1.0 - y[None, :]).prod(axis=1)
        keep = probs > 0
        if keep.any():
            total += float(probs[keep] @ F.evaluate_many(dataset, masks[keep]))
    return total


# --- fractional solution and rounding ---------------------------------------


@dataclass(frozen=True)
class FractionalPoint:
    """``y = sum_t weight_t * 1[B_t]`` kept together with its certificate."""

    y: np.ndarray
    certificate: tuple  # of (weight, frozenset)

    def validate(self, matroid: Matroid, tol: float = 1e-9) -> None:
        total = 0.0
        rebuilt = np.zeros_like(self.y)
        for weight, members in self.certificate:
            if weight < -tol:
                raise ContractViolation(f"negative certificate weight {weight}")
            if not matroid.is_independent(members):
                raise ContractViolation(f"certificate set {sorted(members)} is not independent")
            total += weight
            rebuilt[list(members)] += weight
        if total > 1 + tol:
            raise ContractViolation(f"certificate weights sum to {total} > 1")
        if not np.allclose(rebuilt, self.y, atol=tol):
            raise ContractViolation("certificate does not reproduce y")


def priv_cont_greedy(
    F: DecomposableSubmodular,
    dataset: Dataset,
    matroid: Matroid,
    epsilon0: float,
    eta: float,
    s: int,
    rng: RandomSource,
    samples: Optional[MultilinearSamples] = None,
) -> FractionalPoint:
    """Continuous greedy whose every direction is picked by the exponential mechanism.

    Runs ``T = ceil(1/eta)`` outer steps of size ``1/T``; each step greedily builds
    an independent set ``B^t`` through up to ``rank`` exponential-mechanism picks
    scored by the sampled multilinear gain, then moves ``y`` by ``(1/T) * 1[B^t]``.
    """
    if not 0 < eta <= 1:
        raise ParameterError("eta must lie in (0, 1]")
    if s < 1:
        raise ParameterError("s must be at least 1")
    if matroid.m != F.m:
        raise ParameterError("matroid and function disagree on m")
    steps = math.ceil(1.0 / eta)
    step = 1.0 / steps
    k = matroid.rank
    if samples is None:
        samples = MultilinearSamples.draw(s, F.m, rng)
    z = samples.z
    y = np.zeros(F.m)
    mask = np.zeros_like(z, dtype=bool)
    certificate = []
    for _ in range(steps):
        chosen: set = set()
        for _ in range(k):
            cands = [u for u in range(F.m) if u not in chosen and matroid.is_independent(chosen | {u})]
            if not cands:
                continue
            scores = np.empty(len(cands))
            for pos, u in enumerate(cands):
                rows = np.flatnonzero((z[:, u] >= y[u]) & (z[:, u] < y[u] + step))
                if len(rows) == 0:
                    scores[pos] = 0.0
                    continue
                before = mask[rows]
                after = before.copy()
                after[:, u] = True
                gain = F.evaluate_many(dataset, after) - F.evaluate_many(dataset, before)
                scores[pos] = gain.sum() / samples.s
            u = exp_mech(cands, scores, epsilon0, rng)
            rows = (z[:, u] >= y[u]) & (z[:, u] < y[u] + step)
            mask[rows, u] = True
            y[u] += step
            chosen.add(u)
        certificate.append((step, frozenset(chosen)))
    return FractionalPoint(y, tuple(certificate))


def _merge(matroid: Matroid, a: frozenset, wa: float, b: frozenset, wb: float, rng: RandomSource) -> frozenset:
    union = a | b
    a = set(matroid.greedy_base(union, a))
    b = set(matroid.greedy_base(union, b))
    while a != b:
        i = min(a - b)
        for j in sorted(b - a):
            if matroid.is_independent((a - {i}) | {j}) and matroid.is_independent((b - {j}) | {i}):
                break
        else:
            raise ContractViolation(f"no symmetric exchange for {i} between {sorted(a)} and {sorted(b)}")
        if wa + wb <= 0 or rng.uniform() < wa / (wa + wb):
            b = (b - {j}) | {i}
        else:
            a = (a - {i}) | {j}
    return frozenset(a)


def swap_round(point: FractionalPoint, matroid: Matroid, rng: RandomSource) -> frozenset:
    """Round a certified point of the matroid polytope to an independent set.

    Certificate sets are folded left to right; each merge pads both sides to
    bases of the matroid restricted to their union, then exchanges elements
    one at a time, keeping each side's element with probability proportional
    to that side's accumulated weight.
    """
    members = list(point.certificate)
    for weight, s in members:
        if not matroid.is_independent(s):
            raise ContractViolation(f"certificate set {sorted(s)} is not independent")
    residual = 1.0 - sum(w for w, _ in members)
    if residual > 1e-12:
        members.append((residual, frozenset()))
    if not members:
        return frozenset()
    acc_w, acc = members[0]
    for weight, s in members[1:]:
        acc = _merge(matroid, acc, acc_w, s, weight, rng)
        acc_w += weight
    if not matroid.is_independent(acc):
        raise ContractViolation("swap rounding produced a dependent set")
    return frozenset(acc)


# --- end-to-end pipelines ----------------------------------------------------


def greedy_oracle(F: DecomposableSubmodular, k: int) -> ScoringOracle:
    """Candidates are the unchosen items; scores are marginal gains of ``F_D``."""

    def propose(history):
        remaining = tuple(u for u in range(F.m) if u not in history)
        return EmRound(remaining, lambda D: F.marginal_gains(D, history, remaining))

    return ScoringOracle(k, propose)


def dp_submod_greedy_cardinality(
    F: DecomposableSubmodular, dataset: Dataset, k: int, params: PrivacyParams, rng: RandomSource
) -> tuple:
    """Pick ``k`` items with the subsampled greedy; epsilon-DP for ``params.epsilon``.

    Returns the items in the order they were selected.
    """
    if not 1 <= k <= F.m:
        raise ParameterError(f"need 1 <= k <= m, got k={k}, m={F.m}")
    return run_subsampled(bind_em(greedy_oracle(F, k), 1.0), dataset, params.epsilon, rng).chosen


def rounding_count(eta: float, beta: float) -> int:
    return math.ceil(10 * math.log(3 / beta) / eta)


def integral_add_dp(
    F: DecomposableSubmodular,
    dataset: Dataset,
    matroid: Matroid,
    epsilon0: float,
    eta: float,
    beta: float,
    rng: RandomSource,
    s: Optional[int] = None,
) -> frozenset:
    """``epsilon0``-add-DP independent set: half the budget on the fractional
    solution, repeated swap rounding, half on picking the best rounding."""
    frac_eta = eta / 2
    steps = math.ceil(1 / frac_eta)
    if s is None:
        s = continuous_greedy_samples(matroid.rank, steps, F.m, beta / 3)
    point = priv_cont_greedy(F, dataset, matroid, epsilon0 / 2, frac_eta, s, rng)
    roundings = [swap_round(point, matroid, rng) for _ in range(rounding_count(eta, beta))]
    masks = np.array([F.indicator(r) for r in roundings])
    scores = F.evaluate_many(dataset, masks)
    return exp_mech(roundings, scores, epsilon0 / 2, rng)


def dp_submod_matroid(
    F: DecomposableSubmodular,
    dataset: Dataset,
    matroid: Matroid,
    params: PrivacyParams,
    rng: RandomSource,
    s: Optional[int] = None,
) -> frozenset:
    """epsilon-DP independent set via the subsampled ln(2)-add-DP pipeline.

    ``s`` overrides the number of multilinear draws (the default formula is
    very large for small ``eta``).
    """
    p = rate_for_target(params.epsilon)
    sub = poisson_subsample(dataset, p, rng)
    return integral_add_dp(F, sub, matroid, LN2, params.eta / 2, params.beta / 2, rng, s=s)
