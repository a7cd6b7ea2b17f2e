"""Shifting heavy hitters with per-user contribution caps (ThreshMonitor).

A stream holds one bucket per user per time step. ThreshMonitor flags a
bucket at time ``t`` when its count among still-active users, plus one-sided
exponential noise, exceeds a threshold. A user stops being counted after
contributing to ``k`` reported buckets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from privsub.core import (
    LN2,
    Dataset,
    ParameterError,
    RandomSource,
    poisson_subsample,
    rate_for_target,
    sample_exponential,
)
from privsub.mechanisms import AtRound, ThresholdOracle


@dataclass(frozen=True)
class Stream:
    """``rows[i, t]`` is the index into ``alphabet`` of user ``i``'s bucket at step ``t``."""

    rows: np.ndarray
    alphabet: tuple

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=int)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, 0)
        if rows.ndim != 2:
            raise ParameterError("stream rows must form an (n, T) array")
        if rows.size and (rows.min() < 0 or rows.max() >= len(self.alphabet)):
            raise ParameterError("bucket index outside the alphabet")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "alphabet", tuple(self.alphabet))

    @classmethod
    def empty(cls, steps: int, alphabet: Sequence) -> "Stream":
        return cls(np.zeros((0, steps), dtype=int), tuple(alphabet))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def steps(self) -> int:
        return self.rows.shape[1]

    def counts(self) -> np.ndarray:
        """``w_t(y)``: users in bucket ``y`` at step ``t``, shape ``(T, |Y|)``."""
        out = np.zeros((self.steps, len(self.alphabet)), dtype=int)
        for t in range(self.steps):
            out[t] = np.bincount(self.rows[:, t], minlength=len(self.alphabet))
        return out

    def dataset(self) -> Dataset:
        return Dataset(tuple(map(tuple, self.rows.tolist())))

    @classmethod
    def from_dataset(cls, dataset: Dataset, steps: int, alphabet: Sequence) -> "Stream":
        if len(dataset) == 0:
            return cls.empty(steps, alphabet)
        return cls(np.asarray(dataset.records, dtype=int), tuple(alphabet))


@dataclass(frozen=True)
class MonitorConfig:
    k: int
    tau: float
    epsilon0: float = LN2
    tau_star_constant: float = 1000.0
    beta: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("contribution cap k must be at least 1")
        if not self.tau > 0 or not self.epsilon0 > 0:
            raise ParameterError("tau and epsilon0 must be positive")


@dataclass(frozen=True)
class ReportLog:
    """Per time step, the reported bucket labels in alphabet order."""

    reports: tuple

    def pairs(self) -> list:
        return [(t, y) for t, ys in enumerate(self.reports) for y in ys]

    @property
    def total(self) -> int:
        return sum(len(ys) for ys in self.reports)


def thresh_monitor(stream: Stream, config: MonitorConfig, rng: RandomSource) -> ReportLog:
    """Run ThreshMonitor with noise ``Exp(epsilon0 / k)`` per (step, bucket)."""
    rate = config.epsilon0 / config.k
    active = np.ones(stream.n, dtype=bool)
    contributions = np.zeros(stream.n, dtype=int)
    reports = []
    for t in range(stream.steps):
        column = stream.rows[:, t]
        counts = np.bincount(column[active], minlength=len(stream.alphabet))
        reported = []
        for y in range(len(stream.alphabet)):
            theta = sample_exponential(rate, rng)
            if counts[y] + theta > config.tau:
                reported.append(stream.alphabet[y])
                hit = active & (column == y)
                contributions[hit] += 1
                active &= contributions < config.k
        reports.append(tuple(reported))
    return ReportLog(tuple(reports))


def thresh_monitor_oracle(steps: int, alphabet_size: int, k: int, tau: float) -> ThresholdOracle:
    """ThreshMonitor as a Repeated-AT oracle over records that are bucket tuples.

    Round ``t * |Y| + y`` queries the number of still-active users in bucket
    ``y`` at step ``t``; a user is active while fewer than ``k`` earlier
    reported rounds matched its own bucket.
    """

    def propose(history):
        t, y = divmod(len(history), alphabet_size)
        reported = [divmod(i, alphabet_size) for i, o in enumerate(history) if o]

        def query(D):
            total = 0
            for row in D.records:
                if row[t] == y and sum(row[t2] == y2 for t2, y2 in reported) < k:
                    total += 1
            return float(total)

        return AtRound(query, tau)

    return ThresholdOracle(steps * alphabet_size, propose)


def tau_star(k: int, steps: int, alphabet_size: int, beta: float, epsilon: float, constant: float = 1000.0) -> float:
    """``constant * k * ln(T |Y| / beta) / epsilon``."""
    if min(k, steps, alphabet_size, beta, epsilon, constant) <= 0:
        raise ParameterError("all arguments must be positive")
    return constant * k * math.log(steps * alphabet_size / beta) / epsilon


def shifting_hh(
    stream: Stream,
    k: int,
    epsilon: float,
    beta: float,
    rng: RandomSource,
    constant: float = 1000.0,
) -> ReportLog:
    """epsilon-DP shifting heavy hitters: ThreshMonitor at ln(2) on a user subsample."""
    if not 0 < epsilon <= 1:
        raise ParameterError("epsilon must lie in (0, 1]")
    p = rate_for_target(epsilon)
    threshold = 1.5 * p * tau_star(k, stream.steps, len(stream.alphabet), beta, epsilon, constant)
    keep = poisson_subsample(stream.dataset(), p, rng)
    sub = Stream.from_dataset(keep, stream.steps, stream.alphabet)
    return thresh_monitor(sub, MonitorConfig(k=k, tau=threshold, tau_star_constant=constant, beta=beta), rng)


def check_assumption(stream: Stream, k: int, tau_star_value: float) -> tuple[bool, list]:
    """Check that no user sits in a ``tau*``-heavy bucket at more than ``k`` steps.

    Returns ``(ok, violating user indices)``.
    """
    counts = stream.counts()
    if stream.n == 0:
        return True, []
    heavy = counts[np.arange(stream.steps)[None, :], stream.rows] > tau_star_value
    violators = np.flatnonzero(heavy.sum(axis=1) > k).tolist()
    return not violators, violators


def read_stream_csv(path) -> Stream:
    """Load a ``user,t,bucket`` CSV; users and steps are ordered by value, buckets by label."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    users = sorted({r["user"] for r in rows}, key=_natural)
    steps = sorted({int(r["t"]) for r in rows})
    alphabet = tuple(sorted({r["bucket"] for r in rows}, key=_natural))
    uidx = {u: i for i, u in enumerate(users)}
    tidx = {t: i for i, t in enumerate(steps)}
    bidx = {b: i for i, b in enumerate(alphabet)}
    grid = np.full((len(users), len(steps)), -1, dtype=int)
    for r in rows:
        grid[uidx[r["user"]], tidx[int(r["t"])]] = bidx[r["bucket"]]
    if (grid < 0).any():
        raise ParameterError("stream CSV is not rectangular: some (user, t) pair is missing")
    return Stream(grid, alphabet)


def write_stream_csv(stream: Stream, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "t", "bucket"])
        for i in range(stream.n):
            for t in range(stream.steps):
                writer.writerow([i, t, stream.alphabet[stream.rows[i, t]]])


def write_reports_csv(log: ReportLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "bucket"])
        for t, y in log.pairs():
            writer.writerow([t, y])


def _natural(label: str):
    return (0, int(label), "") if label.lstrip("-").isdigit() else (1, 0, label)
