"""Exact verification of privacy claims and oracle contracts on tiny instances.

Distributions are computed by walking the adaptive transcript tree and
multiplying per-round probabilities: softmax tables for Repeated-EM and
exponential survival terms for Repeated-AT. Subsampled mechanisms are handled
by mixing over every subset of the input.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import mpmath
import numpy as np

from privsub.core import CapacityError, Dataset, ParameterError, exp_mech_distribution
from privsub.mechanisms import (
    EmRound,
    ScoringOracle,
    ThresholdOracle,
    em_round_scores,
)

DEFAULT_CAP = 10**6
SLACK = 1e-9


@dataclass
class OutcomeDistribution:
    """Exact law of a mechanism's transcript: ``probs[transcript] = probability``."""

    probs: dict = field(default_factory=dict)
    cap: int = DEFAULT_CAP

    def add(self, outcome, mass: float) -> None:
        if outcome not in self.probs and len(self.probs) >= self.cap:
            raise CapacityError(f"outcome support exceeds cap {self.cap}")
        self.probs[outcome] = self.probs.get(outcome, 0.0) + mass

    def __getitem__(self, outcome) -> float:
        return self.probs.get(outcome, 0.0)

    def __len__(self) -> int:
        return len(self.probs)

    def support(self) -> list:
        return [o for o, q in self.probs.items() if q > 0]

    @property
    def total(self) -> float:
        return math.fsum(self.probs.values())


def exact_em_distribution(
    oracle: ScoringOracle,
    dataset: Dataset,
    epsilon0: float,
    delta_sens: float = 1.0,
    cap: int = DEFAULT_CAP,
) -> OutcomeDistribution:
    """Transcript law of Repeated-EM as a product of per-round softmax tables."""
    rate = epsilon0 / delta_sens
    out = OutcomeDistribution(cap=cap)

    def walk(history, mass):
        if len(history) == oracle.rounds:
            out.add(history, mass)
            return
        round_ = oracle.propose(history)
        probs = exp_mech_distribution(round_.candidates, em_round_scores(round_, dataset), rate)
        for c, q in zip(round_.candidates, probs):
            walk(history + (c,), mass * float(q))

    walk((), 1.0)
    return out


def at_above_probability(h: float, threshold: float, rate: float) -> float:
    """``Pr[h + Exp(rate) > threshold]``."""
    if h >= threshold:
        return 1.0
    return math.exp(-rate * (threshold - h))


def exact_at_distribution(
    oracle: ThresholdOracle,
    dataset: Dataset,
    epsilon0: float,
    delta_sens: float = 1.0,
    cap: int = DEFAULT_CAP,
) -> OutcomeDistribution:
    """Transcript law of Repeated-AT via exponential survival products."""
    if oracle.rounds > 62 or 2**oracle.rounds > cap:
        raise CapacityError(f"2^{oracle.rounds} transcripts exceed cap {cap}")
    rate = epsilon0 / delta_sens
    out = OutcomeDistribution(cap=cap)

    def walk(history, mass):
        if len(history) == oracle.rounds:
            out.add(history, mass)
            return
        round_ = oracle.propose(history)
        up = at_above_probability(float(round_.query(dataset)), round_.threshold, rate)
        walk(history + (True,), mass * up)
        walk(history + (False,), mass * (1.0 - up))

    walk((), 1.0)
    return out


def exact_subsampled_distribution(
    inner: Callable[[Dataset], OutcomeDistribution],
    dataset: Dataset,
    p: float,
    cap: int = DEFAULT_CAP,
) -> OutcomeDistribution:
    """Mix ``inner`` over all ``2^n`` subsets, subset ``S`` weighted ``p^|S| (1-p)^(n-|S|)``."""
    if not 0 <= p < 1:
        raise ParameterError(f"subsampling rate must lie in [0, 1), got {p}")
    n = len(dataset)
    if n > 40 or 2**n > cap:
        raise CapacityError(f"2^{n} subsets exceed cap {cap}")
    cache: dict = {}
    out = OutcomeDistribution(cap=cap)
    for keep in itertools.product((False, True), repeat=n):
        size = sum(keep)
        weight = p**size * (1 - p) ** (n - size)
        if weight == 0:
            continue
        sub = dataset.select(np.array(keep, dtype=bool))
        key = sub.records
        if key not in cache:
            cache[key] = inner(sub)
        for o, q in cache[key].probs.items():
            out.add(o, weight * q)
    return out


def dataset_family(record_types: Sequence, max_n: int) -> list[Dataset]:
    """Every multiset of at most ``max_n`` records over ``record_types``, records sorted by type."""
    out = []
    for n in range(max_n + 1):
        for combo in itertools.combinations_with_replacement(range(len(record_types)), n):
            out.append(Dataset(tuple(record_types[i] for i in combo)))
    return out


def neighbor_pairs(family: Iterable[Dataset]) -> list[tuple[Dataset, Dataset]]:
    """Pairs ``(smaller, larger)`` from ``family`` where ``larger`` adds one record."""
    family = list(family)
    index = {d.records: d for d in family}
    pairs = []
    for big in family:
        seen = set()
        for j, rec in enumerate(big.records):
            if rec in seen:
                continue
            seen.add(rec)
            small = index.get(big.records[:j] + big.records[j + 1 :])
            if small is not None:
                pairs.append((small, big))
    return pairs


@dataclass
class AuditReport:
    claimed_eps: float
    max_add_ratio: float
    max_remove_ratio: float
    witness: dict
    passed: bool

    def as_dict(self) -> dict:
        return {
            "claimed_eps": self.claimed_eps,
            "max_add_ratio": _json_float(self.max_add_ratio),
            "max_remove_ratio": _json_float(self.max_remove_ratio),
            "witness": self.witness,
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, default=_json_default)


def _json_float(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, set, frozenset)):
        return list(obj)
    return str(obj)


def _log_ratio(a: float, b: float) -> float:
    if a <= 0:
        return -math.inf
    if b <= 0:
        return math.inf
    return math.log(a) - math.log(b)


def verify_dp(
    mechanism: Callable[[Dataset], OutcomeDistribution],
    pairs: Iterable[tuple[Dataset, Dataset]],
    claimed_eps: float,
    mode: str = "add",
) -> AuditReport:
    """Worst log-ratios over neighbour pairs and transcripts.

    The add ratio is ``ln Pr[M(larger)=o] - ln Pr[M(smaller)=o]``; the remove
    ratio is its negation. ``add`` mode passes iff the add ratio is within
    ``claimed_eps``; ``two_sided`` mode needs both within.
    """
    if mode not in ("add", "two_sided"):
        raise ParameterError(f"mode must be 'add' or 'two_sided', got {mode!r}")
    cache: dict = {}

    def law(d):
        if d.records not in cache:
            cache[d.records] = mechanism(d)
        return cache[d.records]

    best_add, best_rem = -math.inf, -math.inf
    wit_add, wit_rem = {}, {}
    for small, big in pairs:
        ps, pb = law(small), law(big)
        for o in set(ps.probs) | set(pb.probs):
            a, b = pb[o], ps[o]
            if a <= 0 and b <= 0:
                continue
            add = _log_ratio(a, b)
            if add > best_add:
                best_add = add
                wit_add = _witness(small, big, o, b, a)
            if -add > best_rem:
                best_rem = -add
                wit_rem = _witness(small, big, o, b, a)
    ok_add = best_add <= claimed_eps + SLACK
    ok_rem = best_rem <= claimed_eps + SLACK
    passed = ok_add if mode == "add" else ok_add and ok_rem
    if mode == "add" or not ok_add or best_add >= best_rem:
        witness = {"direction": "add", **wit_add}
    else:
        witness = {"direction": "remove", **wit_rem}
    return AuditReport(claimed_eps, best_add, best_rem, witness, passed)


def _witness(small, big, outcome, p_small, p_large) -> dict:
    return {
        "smaller": list(small.records),
        "larger": list(big.records),
        "transcript": outcome,
        "p_smaller": p_small,
        "p_larger": p_large,
    }


def appendix_c_size(L: int, eps: float, eps_prime: float) -> int:
    """Ground-set size ``ceil(1 + (e^eps - 1) L / (e^eps - e^(eps'/L)))``."""
    return int(math.ceil(1 + math.expm1(eps) * L / (math.exp(eps) - math.exp(eps_prime / L))))


def appendix_c_closed_form(L: int, eps, m: int, dps: int = 50):
    """``prod_i (e^eps (m-L) + L - i + 1) / (m - i + 1)`` in ``dps``-digit arithmetic."""
    with mpmath.workdps(dps):
        e = mpmath.exp(mpmath.mpf(eps))
        ratio = mpmath.mpf(1)
        for i in range(1, L + 1):
            ratio *= (e * (m - L) + L - i + 1) / (m - i + 1)
        return +ratio


def appendix_c_counterexample(
    L: int, eps: float, eps_prime: float, max_m: int = 10**6, cap: int = DEFAULT_CAP
) -> AuditReport:
    """Show that Repeated-EM with ``L`` rounds at ``eps`` is not ``eps_prime``-DP.

    Builds ``D' = {}`` and ``D = {x}`` with ``f_x(S) = min(1, |S ∩ [m-L]|)``
    and compares ``Pr[M(D') = o] / Pr[M(D) = o]`` for ``o`` the last ``L``
    items in order. The report fails (``passed`` is False) when that ratio
    exceeds ``e^eps_prime``. The exact EM enumeration is cross-checked
    against the high-precision closed form whenever it fits under ``cap``.
    """
    from privsub.submodular import BudgetAdditive, coverage_records, greedy_oracle

    if L < 1 or not eps > 0 or not eps_prime > 0:
        raise ParameterError("need L >= 1 and positive eps, eps_prime")
    if not eps_prime < L * eps:
        raise ParameterError("eps_prime must be below L * eps")
    m = appendix_c_size(L, eps, eps_prime)
    if m > max_m:
        raise CapacityError(f"construction needs m={m} > {max_m}")
    closed = appendix_c_closed_form(L, eps, m)
    bound = mpmath.exp(mpmath.mpf(eps_prime))
    outcome = tuple(range(m - L, m))

    exact_ratio = None
    if math.perm(m, L) <= cap:
        F = BudgetAdditive(m)
        oracle = greedy_oracle(F, L)
        empty = Dataset(())
        single = Dataset(tuple(coverage_records([range(m - L)], m)))
        p_small = exact_em_distribution(oracle, empty, eps, 1.0, cap)[outcome]
        p_large = exact_em_distribution(oracle, single, eps, 1.0, cap)[outcome]
        exact_ratio = p_small / p_large
    witness = {
        "m": m,
        "L": L,
        "smaller": [],
        "larger": [list(range(m - L))],
        "transcript": list(outcome),
        "closed_form_ratio": float(closed),
        "exact_ratio": exact_ratio,
        "bound": float(bound),
        "exceeds": bool(closed > bound),
    }
    remove = float(mpmath.log(closed))
    return AuditReport(eps_prime, -remove, remove, witness, passed=not closed > bound)


@dataclass
class ContractReport:
    passed: bool
    witness: Optional[dict] = None
    pairs: int = 0
    transcripts: int = 0


def _em_histories(oracle: ScoringOracle, cap: int):
    """Every full transcript of the oracle with the rounds proposed along it."""
    count = 0
    stack = [((), ())]
    while stack:
        history, rounds = stack.pop()
        if len(history) == oracle.rounds:
            count += 1
            if count > cap:
                raise CapacityError(f"more than {cap} transcripts")
            yield history, rounds
            continue
        round_ = oracle.propose(history)
        for c in reversed(round_.candidates):
            stack.append((history + (c,), rounds + (round_,)))


def contract_check(
    oracle,
    pairs: Iterable[tuple[Dataset, Dataset]],
    delta_sens: float,
    cap: int = DEFAULT_CAP,
) -> ContractReport:
    """Exhaustively check monotonicity and realized sensitivity of an oracle.

    For Repeated-EM oracles every candidate score must not drop when a record
    is added, and along each transcript the selected scores may move by at
    most ``delta_sens`` in total. For Repeated-AT oracles the query must be
    monotone and the total movement over above-threshold rounds is bounded.
    """
    pairs = list(pairs)
    tol = SLACK
    checked = 0
    if isinstance(oracle, ScoringOracle):
        memo: dict = {}

        def scores(prefix: tuple, round_: EmRound, d: Dataset):
            key = (prefix, d.records)
            if key not in memo:
                memo[key] = em_round_scores(round_, d)
            return memo[key]

        for history, rounds in _em_histories(oracle, cap):
            checked += 1
            for small, big in pairs:
                total = 0.0
                for i, (round_, chosen) in enumerate(zip(rounds, history)):
                    lo, hi = scores(history[:i], round_, small), scores(history[:i], round_, big)
                    drop = np.flatnonzero(hi < lo - tol)
                    if len(drop):
                        c = round_.candidates[drop[0]]
                        return ContractReport(
                            False,
                            _contract_witness("monotonicity", small, big, history[:i], c, lo[drop[0]], hi[drop[0]]),
                            len(pairs),
                            checked,
                        )
                    j = round_.candidates.index(chosen)
                    total += abs(hi[j] - lo[j])
                if total > delta_sens + tol:
                    w = _contract_witness("sensitivity", small, big, history, None, None, None)
                    w["realized"] = total
                    return ContractReport(False, w, len(pairs), checked)
        return ContractReport(True, None, len(pairs), checked)

    if isinstance(oracle, ThresholdOracle):
        if oracle.rounds > 62 or 2**oracle.rounds > cap:
            raise CapacityError(f"2^{oracle.rounds} transcripts exceed cap {cap}")
        for small, big in pairs:
            stack = [((), 0.0)]
            while stack:
                history, total = stack.pop()
                if len(history) == oracle.rounds:
                    checked += 1
                    continue
                round_ = oracle.propose(history)
                lo, hi = float(round_.query(small)), float(round_.query(big))
                if hi < lo - tol:
                    return ContractReport(
                        False, _contract_witness("monotonicity", small, big, history, None, lo, hi), len(pairs), checked
                    )
                up = total + abs(hi - lo)
                if up > delta_sens + tol:
                    w = _contract_witness("sensitivity", small, big, history + (True,), None, lo, hi)
                    w["realized"] = up
                    return ContractReport(False, w, len(pairs), checked)
                stack.append((history + (False,), total))
                stack.append((history + (True,), up))
        return ContractReport(True, None, len(pairs), checked)

    raise ParameterError(f"unsupported oracle type {type(oracle).__name__}")


def _contract_witness(kind, small, big, history, candidate, lo, hi) -> dict:
    return {
        "violation": kind,
        "smaller": list(small.records),
        "larger": list(big.records),
        "history": list(history),
        "candidate": candidate,
        "value_smaller": lo,
        "value_larger": hi,
    }


def empirical_distribution(sample: Callable[[int], object], trials: int) -> dict:
    """Frequencies of ``sample(trial)`` over ``trials`` independent runs."""
    counts: dict = {}
    for t in range(trials):
        o = sample(t)
        counts[o] = counts.get(o, 0) + 1
    return {o: c / trials for o, c in counts.items()}


def max_z_score(exact: OutcomeDistribution, freqs: dict, trials: int) -> float:
    """Largest ``|freq - p| / stderr`` over the union of supports.

    Outcomes with zero exact mass and positive frequency give ``inf``.
    """
    worst = 0.0
    for o in set(exact.probs) | set(freqs):
        p, f = exact[o], freqs.get(o, 0.0)
        se = math.sqrt(p * (1 - p) / trials)
        if se == 0:
            if abs(f - p) > 0:
                return math.inf
            continue
        worst = max(worst, abs(f - p) / se)
    return worst
