"""Experiment driver: load or generate an instance, run a solver per (seed, trial), write CSV rows.

CSV columns (stable order): ``task, seed, trial, epsilon, eta, beta, n, m, k,
utility, opt, gap, valid, solution`` and, only with timing enabled,
``runtime_ms``. Floats are written with ``repr`` so identical runs produce
identical bytes.

Utility per task:

* submod-cardinality / submod-matroid: ``F_D(S)``; gap ``opt - utility``.
* setcover: permutation cost; gap ``utility - opt``.
* clustering: ``cost^q``; gap ``utility - opt``.
* heavyhitters: 1 when every report is ``tau*``-heavy and every
  ``2 tau*``-heavy bucket is reported at its step, else 0.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from privsub.audit import (
    AuditReport,
    appendix_c_counterexample,
    dataset_family,
    exact_at_distribution,
    exact_em_distribution,
    exact_subsampled_distribution,
    neighbor_pairs,
    verify_dp,
)
from privsub.clustering import ClusterInstance, FiniteMetric, bicriteria_oracle, cost, dp_cluster
from privsub.core import LN2, CapacityError, Dataset, PrivacyParams, RandomSource, rate_for_target
from privsub.heavyhitters import shifting_hh, tau_star, thresh_monitor_oracle
from privsub.instances import (
    SetCoverInstance,
    StreamInstance,
    SubmodularInstance,
    generate_instance,
    load_instance,
)
from privsub.oracles import brute_force_clustering, brute_force_setcover, brute_force_submodular
from privsub.setcover import (
    GreedyScalingConfig,
    SetSystem,
    cost_set_cov,
    cover_round_oracle,
    dp_greedy_scaling,
    is_permutation,
)
from privsub.submodular import BudgetAdditive, coverage_records, dp_submod_greedy_cardinality, dp_submod_matroid, greedy_oracle

TASKS = ("submod-cardinality", "submod-matroid", "setcover", "clustering", "heavyhitters", "audit")
AUDIT_TARGETS = ("em-greedy", "subsampled-greedy", "at-monitor", "setcover-round", "bicriteria", "appendix-c")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment.

    Exactly one of ``instance`` (a file path) and ``generator`` (a spec
    dict for :func:`privsub.instances.generate_instance`) is needed, except
    for the ``audit`` task, which uses ``audit_target`` instead.
    """

    task: str
    instance: Optional[str] = None
    generator: Optional[dict] = None
    epsilon: float = 1.0
    eta: float = 0.2
    beta: float = 0.1
    seeds: list = field(default_factory=lambda: [0])
    trials: int = 1
    out: Optional[str] = None
    k: Optional[int] = None
    s: Optional[int] = None
    threshold_factor: float = 1000.0
    tau_star_constant: float = 1000.0
    audit_target: str = "em-greedy"
    audit_eps: Optional[float] = None
    timing: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.task == "audit":
            if self.audit_target not in AUDIT_TARGETS:
                raise ConfigError(f"audit_target must be one of {', '.join(AUDIT_TARGETS)}")
        elif (self.instance is None) == (self.generator is None):
            raise ConfigError("give exactly one of 'instance' or 'generator'")

    @property
    def params(self) -> PrivacyParams:
        return PrivacyParams(epsilon=self.epsilon, eta=self.eta, beta=self.beta)

    @classmethod
    def from_dict(cls, obj: dict, **overrides) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        merged = {**obj, **{k: v for k, v in overrides.items() if v is not None}}
        unknown = set(merged) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seeds" in merged and isinstance(merged["seeds"], int):
            merged["seeds"] = [merged["seeds"]]
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), **overrides)


@dataclass
class MetricsRow:
    task: str
    seed: int
    trial: int
    epsilon: float
    eta: float
    beta: float
    n: int
    m: int
    k: int
    utility: float
    opt: Optional[float]
    gap: Optional[float]
    valid: bool
    solution: str
    runtime_ms: Optional[float] = None


COLUMNS = [f.name for f in dataclasses.fields(MetricsRow)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows: list[MetricsRow], timing: bool = False) -> str:
    cols = COLUMNS if timing else [c for c in COLUMNS if c != "runtime_ms"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_fmt(getattr(r, c)) for c in cols])
    return buf.getvalue()


# --- per-task solvers ------------------------------------------------------------


def _load(config: ExperimentConfig):
    if config.instance is not None:
        return load_instance(config.task, config.instance)
    return generate_instance(config.generator)


def _solution(items) -> str:
    return " ".join(str(int(i)) for i in items)


class _Task:
    """Solver plus utility and brute-force optimum for one loaded instance."""

    def __init__(self, config: ExperimentConfig, inst):
        self.config = config
        self.inst = inst
        self._opt = None
        self._opt_done = False

    def opt(self):
        if not self._opt_done:
            try:
                self._opt = self.compute_opt()
            except CapacityError:
                self._opt = None
            self._opt_done = True
        return self._opt


class _SubmodTask(_Task):
    def __init__(self, config, inst: SubmodularInstance):
        super().__init__(config, inst)
        if config.task == "submod-matroid" and inst.matroid is None:
            raise ConfigError("submod-matroid needs a partition constraint")
        self.k = inst.k if config.k is None or config.task == "submod-matroid" else config.k

    def shape(self):
        return len(self.inst.dataset), self.inst.m, self.k

    def compute_opt(self):
        if self.config.task == "submod-matroid":
            return brute_force_submodular(self.inst.F, self.inst.dataset, matroid=self.inst.matroid)[0]
        return brute_force_submodular(self.inst.F, self.inst.dataset, k=self.k)[0]

    def run(self, rng):
        inst = self.inst
        if self.config.task == "submod-cardinality":
            chosen = dp_submod_greedy_cardinality(inst.F, inst.dataset, self.k, self.config.params, rng)
            valid = len(set(chosen)) == self.k
        else:
            chosen = tuple(sorted(dp_submod_matroid(inst.F, inst.dataset, inst.matroid, self.config.params, rng, s=self.config.s)))
            valid = inst.matroid.is_independent(chosen)
        value = inst.F.evaluate(inst.dataset, chosen)
        opt = self.opt()
        return value, opt, (None if opt is None else opt - value), valid, _solution(chosen)


class _SetCoverTask(_Task):
    def shape(self):
        return len(self.inst.dataset), self.inst.system.m, 0

    def compute_opt(self):
        if "opt" in self.inst.meta:
            return float(self.inst.meta["opt"])
        return float(brute_force_setcover(self.inst.system, self.inst.dataset)[0])

    def run(self, rng):
        inst: SetCoverInstance = self.inst
        cfg = GreedyScalingConfig(threshold_factor=self.config.threshold_factor)
        pi = dp_greedy_scaling(inst.system, inst.dataset, self.config.epsilon, rng, cfg)
        valid = is_permutation(pi, inst.system.m)
        value = float(cost_set_cov(pi, inst.system, inst.dataset))
        opt = self.opt()
        return value, opt, (None if opt is None else value - opt), valid, _solution(pi)


class _ClusterTask(_Task):
    def shape(self):
        return self.inst.n, self.inst.m, self.inst.k

    def compute_opt(self):
        return brute_force_clustering(self.inst)[0]

    def run(self, rng):
        inst: ClusterInstance = self.inst
        centers = dp_cluster(inst, self.config.params, rng)
        valid = len(centers) == inst.k and all(0 <= c < inst.m for c in centers)
        value = cost(inst, centers)
        opt = self.opt()
        return value, opt, (None if opt is None else value - opt), valid, _solution(centers)


class _HeavyHitterTask(_Task):
    def __init__(self, config, inst: StreamInstance):
        super().__init__(config, inst)
        self.k = config.k if config.k is not None else int(inst.meta.get("k", 1))
        s = inst.stream
        self.tau = tau_star(self.k, s.steps, len(s.alphabet), config.beta, config.epsilon, config.tau_star_constant)
        self.counts = s.counts()

    def shape(self):
        return self.inst.stream.n, len(self.inst.stream.alphabet), self.k

    def compute_opt(self):
        return 1.0

    def run(self, rng):
        stream = self.inst.stream
        log = shifting_hh(stream, self.k, self.config.epsilon, self.config.beta, rng, self.config.tau_star_constant)
        label = {y: i for i, y in enumerate(stream.alphabet)}
        reported = {(t, label[y]) for t, y in log.pairs()}
        sound = all(self.counts[t, y] > self.tau for t, y in reported)
        heavy = {(t, y) for t, y in zip(*np.nonzero(self.counts > 2 * self.tau))}
        complete = heavy <= reported
        value = float(sound and complete)
        return value, 1.0, 1.0 - value, True, " ".join(f"{t}:{stream.alphabet[y]}" for t, y in sorted(reported))


_TASKS = {
    "submod-cardinality": _SubmodTask,
    "submod-matroid": _SubmodTask,
    "setcover": _SetCoverTask,
    "clustering": _ClusterTask,
    "heavyhitters": _HeavyHitterTask,
}


def run_experiment(config: ExperimentConfig) -> list[MetricsRow]:
    """Run every (seed, trial) of a solver task; rows come back in seed, trial order.

    Trial ``t`` of seed ``s`` draws from ``RandomSource(s, t)``.
    """
    if config.task == "audit":
        raise ConfigError("use run_audit for the audit task")
    task = _TASKS[config.task](config, _load(config))
    n, m, k = task.shape()
    rows = []
    for seed in config.seeds:
        for trial in range(config.trials):
            start = time.perf_counter()
            value, opt, gap, valid, sol = task.run(RandomSource(int(seed), trial))
            elapsed = (time.perf_counter() - start) * 1000 if config.timing else None
            rows.append(
                MetricsRow(
                    config.task, int(seed), trial, config.epsilon, config.eta, config.beta,
                    n, m, k, float(value), opt, gap, bool(valid), sol, elapsed,
                )
            )
    return rows


def write_rows(rows: list[MetricsRow], path, timing: bool = False) -> None:
    Path(path).write_text(rows_to_csv(rows, timing))


# --- audit task ------------------------------------------------------------------


def _coverage_family(max_n: int = 3, m: int = 3):
    F = BudgetAdditive(m)
    types = coverage_records([(0,), (1,), (0, 1), (1, 2)], m)
    return F, dataset_family(types, max_n)


def run_audit(target: str, epsilon: Optional[float] = None) -> AuditReport:
    """Exact privacy audit of a built-in tiny mechanism family.

    ``em-greedy``: Repeated-EM greedy (m=3, k=2) at ln 2, add mode.
    ``subsampled-greedy``: the same, subsampled to ``epsilon`` (default 0.5), two-sided.
    ``at-monitor``: ThreshMonitor (T=2, two buckets, k=1, n <= 2) at ln 2, add mode.
    ``setcover-round``: one greedy-scaling round (m=3, n <= 3) at ln 2, add mode.
    ``bicriteria``: two Repeated-EM clustering picks on three points at ln 2, add mode.
    ``appendix-c``: the L=2 counterexample at eps=1 against ``epsilon`` (default 1.5).
    """
    if target == "em-greedy":
        F, family = _coverage_family()
        oracle = greedy_oracle(F, 2)
        return verify_dp(lambda d: exact_em_distribution(oracle, d, LN2), neighbor_pairs(family), LN2, "add")
    if target == "subsampled-greedy":
        eps = 0.5 if epsilon is None else epsilon
        F, family = _coverage_family()
        oracle = greedy_oracle(F, 2)
        p = rate_for_target(eps)
        inner = lambda d: exact_em_distribution(oracle, d, LN2)  # noqa: E731
        mech = lambda d: exact_subsampled_distribution(inner, d, p)  # noqa: E731
        return verify_dp(mech, neighbor_pairs(family), eps, "two_sided")
    if target == "at-monitor":
        oracle = thresh_monitor_oracle(2, 2, 1, 1.0)
        rows = [(a, b) for a in range(2) for b in range(2)]
        family = dataset_family(rows, 2)
        return verify_dp(lambda d: exact_at_distribution(oracle, d, LN2, 1.0), neighbor_pairs(family), LN2, "add")
    if target == "setcover-round":
        oracle = cover_round_oracle(SetSystem(3), (0, 1, 2), (), 1.0)
        family = dataset_family(coverage_records([(0,), (1,), (0, 1), (1, 2)], 3), 3)
        return verify_dp(lambda d: exact_at_distribution(oracle, d, LN2, 1.0), neighbor_pairs(family), LN2, "add")
    if target == "bicriteria":
        metric = FiniteMetric(np.array([[0.0, 0.3, 1.0], [0.3, 0.0, 0.8], [1.0, 0.8, 0.0]]))
        oracle = bicriteria_oracle(ClusterInstance(metric, Dataset(()), 1), 2)
        family = dataset_family([0, 1, 2], 3)
        return verify_dp(lambda d: exact_em_distribution(oracle, d, LN2), neighbor_pairs(family), LN2, "add")
    if target == "appendix-c":
        return appendix_c_counterexample(2, 1.0, 1.5 if epsilon is None else epsilon)
    raise ConfigError(f"unknown audit target {target!r}")


AUDIT_FOR_TASK = {
    "submod-cardinality": "subsampled-greedy",
    "submod-matroid": "em-greedy",
    "setcover": "setcover-round",
    "clustering": "bicriteria",
    "heavyhitters": "at-monitor",
}
