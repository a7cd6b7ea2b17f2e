"""Instance files and deterministic instance generators for every task.

JSON layouts:

* submodular: ``{m, users, constraint}`` where each user is a list of covered
  items, ``{"type": "coverage", "items": [...]}`` or
  ``{"type": "budget_additive", "weights": [...]}``, and the constraint is
  ``{"cardinality": k}`` or ``{"partition": {"blocks": [...], "budgets": [...]}}``.
* set cover: ``{m, records: [{id, sets: [...]}]}``.
* clustering: ``{m, distances: lower-triangular list, users: [point ids], k, q}``.
* heavy hitters: a ``user,t,bucket`` CSV stream.

Generated instances may carry an extra ``meta`` object (for example the
planted optimum) which loaders ignore.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from privsub.clustering import ClusterInstance, FiniteMetric
from privsub.core import Dataset, ParameterError
from privsub.heavyhitters import Stream, read_stream_csv, tau_star, write_stream_csv
from privsub.setcover import SetSystem
from privsub.submodular import BudgetAdditive, Matroid, PartitionMatroid, UniformMatroid


class SpecError(ValueError):
    """A generator spec or instance file is malformed."""


@dataclass(frozen=True)
class SubmodularInstance:
    F: BudgetAdditive
    dataset: Dataset
    k: int
    matroid: Optional[Matroid] = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.F.m

    @property
    def constraint(self) -> Matroid:
        return self.matroid if self.matroid is not None else UniformMatroid(self.m, self.k)


@dataclass(frozen=True)
class SetCoverInstance:
    system: SetSystem
    dataset: Dataset
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StreamInstance:
    stream: Stream
    meta: dict = field(default_factory=dict)


Instance = Union[SubmodularInstance, SetCoverInstance, ClusterInstance, StreamInstance]


# --- parsing -----------------------------------------------------------------


def _user_weights(user, m: int) -> tuple:
    if isinstance(user, dict):
        kind = user.get("type", "coverage")
        if kind == "coverage":
            user = user["items"]
        elif kind == "budget_additive":
            w = [float(x) for x in user["weights"]]
            if len(w) != m or min(w, default=0) < 0 or max(w, default=0) > 1:
                raise SpecError("budget_additive weights must be m values in [0, 1]")
            return tuple(w)
        else:
            raise SpecError(f"unknown user function type {kind!r}")
    w = [0.0] * m
    for u in user:
        if not 0 <= int(u) < m:
            raise SpecError(f"item {u} outside [0, {m})")
        w[int(u)] = 1.0
    return tuple(w)


def submodular_from_json(obj: dict) -> SubmodularInstance:
    m = int(obj["m"])
    records = tuple(_user_weights(u, m) for u in obj["users"])
    constraint = obj.get("constraint", {})
    if "cardinality" in constraint:
        k = int(constraint["cardinality"])
        if not 1 <= k <= m:
            raise SpecError(f"cardinality {k} outside [1, {m}]")
        return SubmodularInstance(BudgetAdditive(m), Dataset(records), k, None, obj.get("meta", {}))
    if "partition" in constraint:
        part = constraint["partition"]
        matroid = PartitionMatroid(tuple(map(tuple, part["blocks"])), tuple(part["budgets"]))
        if matroid.m != m:
            raise SpecError("partition blocks must cover all m items")
        return SubmodularInstance(BudgetAdditive(m), Dataset(records), matroid.rank, matroid, obj.get("meta", {}))
    raise SpecError("constraint must be {'cardinality': k} or {'partition': {...}}")


def submodular_to_json(inst: SubmodularInstance) -> dict:
    users = []
    for rec in inst.dataset.records:
        if all(w in (0.0, 1.0) for w in rec):
            users.append([u for u, w in enumerate(rec) if w])
        else:
            users.append({"type": "budget_additive", "weights": list(rec)})
    if inst.matroid is None:
        constraint = {"cardinality": inst.k}
    else:
        constraint = {"partition": {"blocks": [list(b) for b in inst.matroid.blocks], "budgets": list(inst.matroid.budgets)}}
    return {"m": inst.m, "users": users, "constraint": constraint, "meta": inst.meta}


def setcover_from_json(obj: dict) -> SetCoverInstance:
    m = int(obj["m"])
    records, ids = [], []
    for r in obj["records"]:
        records.append(tuple(sorted(int(i) for i in r["sets"])))
        ids.append(r.get("id", len(ids)))
    system = SetSystem(m)
    dataset = Dataset(tuple(records), tuple(ids))
    system.validate(dataset)
    return SetCoverInstance(system, dataset, obj.get("meta", {}))


def setcover_to_json(inst: SetCoverInstance) -> dict:
    records = [{"id": i, "sets": list(s)} for i, s in zip(inst.dataset.ids, inst.dataset.records)]
    return {"m": inst.system.m, "records": records, "meta": inst.meta}


def clustering_from_json(obj: dict) -> ClusterInstance:
    m = int(obj["m"])
    metric = FiniteMetric.from_lower_triangle(m, obj["distances"])
    metric.validate()
    users = tuple(int(u) for u in obj["users"])
    if any(not 0 <= u < m for u in users):
        raise SpecError("user point id outside [0, m)")
    return ClusterInstance(metric, Dataset(users), int(obj["k"]), int(obj.get("q", 1)))


def clustering_to_json(inst: ClusterInstance, meta: Optional[dict] = None) -> dict:
    return {
        "m": inst.m,
        "distances": inst.metric.lower_triangle(),
        "users": list(inst.dataset.records),
        "k": inst.k,
        "q": inst.q,
        "meta": meta or {},
    }


TASK_KIND = {
    "submod-cardinality": "submodular",
    "submod-matroid": "submodular",
    "setcover": "setcover",
    "clustering": "clustering",
    "heavyhitters": "stream",
}


def load_instance(task: str, path) -> Instance:
    """Read an instance file for ``task``."""
    kind = TASK_KIND.get(task)
    if kind is None:
        raise SpecError(f"task {task!r} has no instance format")
    if kind == "stream":
        meta_path = Path(str(path) + ".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return StreamInstance(read_stream_csv(path), meta)
    with open(path) as fh:
        obj = json.load(fh)
    try:
        if kind == "submodular":
            return submodular_from_json(obj)
        if kind == "setcover":
            return setcover_from_json(obj)
        return clustering_from_json(obj)
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed {kind} instance: {exc}") from exc


def save_instance(inst: Instance, path) -> None:
    path = Path(path)
    if isinstance(inst, StreamInstance):
        write_stream_csv(inst.stream, path)
        if inst.meta:
            path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(inst.meta, sort_keys=True))
        return
    if isinstance(inst, SubmodularInstance):
        obj = submodular_to_json(inst)
    elif isinstance(inst, SetCoverInstance):
        obj = setcover_to_json(inst)
    elif isinstance(inst, ClusterInstance):
        obj = clustering_to_json(inst)
    else:
        raise SpecError(f"cannot save {type(inst).__name__}")
    path.write_text(json.dumps(obj, sort_keys=True))


# --- generators --------------------------------------------------------------


def _rng(spec: dict, seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng([int(spec.get("seed", 0) if seed is None else seed), 7])


def random_coverage(spec: dict, seed: Optional[int] = None) -> SubmodularInstance:
    """Users cover each item independently with probability ``density``.

    Item ``u`` is covered with probability ``density * (1 + skew * u / m)`` so
    that instances are not fully symmetric. A ``partition`` entry
    ``{"blocks": b, "budget": c}`` splits the items into ``b`` contiguous
    blocks with budget ``c`` each.
    """
    g = _rng(spec, seed)
    m, n = int(spec["m"]), int(spec["n"])
    density = float(spec.get("density", 0.1))
    skew = float(spec.get("skew", 1.0))
    probs = np.clip(density * (1 + skew * np.arange(m)[::-1] / m), 0, 1)
    rows = (g.random((n, m)) < probs).astype(float)
    records = tuple(map(tuple, rows.tolist()))
    if "partition" in spec:
        blocks = np.array_split(np.arange(m), int(spec["partition"]["blocks"]))
        budgets = [int(spec["partition"].get("budget", 1))] * len(blocks)
        matroid = PartitionMatroid(tuple(tuple(b.tolist()) for b in blocks), tuple(budgets))
        return SubmodularInstance(BudgetAdditive(m), Dataset(records), matroid.rank, matroid)
    return SubmodularInstance(BudgetAdditive(m), Dataset(records), int(spec.get("k", 3)))


def planted_setcover(spec: dict, seed: Optional[int] = None) -> SetCoverInstance:
    """``q`` disjoint sets partition the universe; the other sets are small.

    Decoy sets hold at most ``n / (2q)`` elements, so no ``q - 1`` sets can
    cover everything and the optimum is exactly ``q`` (for ``q >= 2``).
    """
    g = _rng(spec, seed)
    q, n, m = int(spec.get("q", 3)), int(spec["n"]), int(spec["m"])
    if not 2 <= q <= m:
        raise SpecError("planted set cover needs 2 <= q <= m")
    slots = g.permutation(m)
    planted = sorted(int(i) for i in slots[:q])
    decoys = [int(i) for i in slots[q:]]
    part = g.permutation(n) % q
    member = [[planted[part[x]]] for x in range(n)]
    cap = max(1, n // (2 * q))
    for i in decoys:
        size = int(g.integers(1, cap + 1))
        for x in g.choice(n, size=size, replace=False):
            member[int(x)].append(i)
    records = tuple(tuple(sorted(s)) for s in member)
    meta = {"opt": q, "planted": planted}
    return SetCoverInstance(SetSystem(m), Dataset(records), meta)


def planted_clusters(spec: dict, seed: Optional[int] = None) -> tuple[ClusterInstance, dict]:
    """``k`` tight groups of points far apart in a two-level tree metric.

    Point ``a`` sits at radius ``r_a <= radius`` from its group hub (hubs have
    radius 0). Same-group distance is ``r_a + r_b`` and cross-group distance is
    ``separation + r_a + r_b``, which is a valid metric of diameter at most
    ``separation + 2 radius``. Opening the hubs costs at most ``n radius^q``.
    """
    g = _rng(spec, seed)
    k, m, n = int(spec.get("k", 3)), int(spec["m"]), int(spec["n"])
    q = int(spec.get("q", 1))
    sep, radius = float(spec.get("separation", 0.8)), float(spec.get("radius", 0.05))
    if sep + 2 * radius > 1:
        raise SpecError("separation + 2 radius must be at most 1")
    if m < k:
        raise SpecError("need m >= k")
    group = np.arange(m) % k
    r = g.uniform(0, radius, size=m)
    r[:k] = 0.0
    d = r[:, None] + r[None, :] + sep * (group[:, None] != group[None, :])
    np.fill_diagonal(d, 0.0)
    weights = g.dirichlet(np.ones(k) * 5)
    user_group = g.choice(k, size=n, p=weights)
    users = [int(g.choice(np.flatnonzero(group == c))) for c in user_group]
    inst = ClusterInstance(FiniteMetric(d), Dataset(tuple(users)), k, q)
    hubs = tuple(range(k))
    meta = {"hubs": list(hubs), "hub_cost": float(inst.dq[list(hubs)].min(axis=0) @ inst.point_counts())}
    return inst, meta


def planted_stream(spec: dict, seed: Optional[int] = None) -> StreamInstance:
    """A stream with one rotating heavy bucket per step that satisfies the user cap.

    Users form ``ceil(T / k)`` groups; group ``j`` sits in the heavy bucket of
    steps ``jk .. jk + k - 1`` and is spread over the light buckets otherwise.
    Group size is ``heavy_factor * 2 tau*`` and light counts stay below
    ``light_factor * tau*``.
    """
    g = _rng(spec, seed)
    k, T, A = int(spec.get("k", 2)), int(spec.get("T", 4)), int(spec.get("alphabet", 16))
    eps, beta = float(spec.get("epsilon", 1.0)), float(spec.get("beta", 0.1))
    const = float(spec.get("constant", 1000.0))
    heavy_factor = float(spec.get("heavy_factor", 1.1))
    light_factor = float(spec.get("light_factor", 0.5))
    if A < 2:
        raise SpecError("need at least two buckets")
    ts = tau_star(k, T, A, beta, eps, const)
    groups = math.ceil(T / k)
    size = int(math.ceil(heavy_factor * 2 * ts)) + 1
    n = groups * size
    group = np.repeat(np.arange(groups), size)
    rows = np.zeros((n, T), dtype=int)
    heavy = [(t // k) % A for t in range(T)]
    for t in range(T):
        light = [y for y in range(A) if y != heavy[t]]
        rows[:, t] = np.asarray(light)[g.integers(0, len(light), size=n)]
        rows[group == t // k, t] = heavy[t]
    stream = Stream(rows, tuple(str(y) for y in range(A)))
    counts = stream.counts()
    light_max = max(int(counts[t, y]) for t in range(T) for y in range(A) if y != heavy[t])
    if light_max > light_factor * ts:
        raise SpecError(f"alphabet too small: light count {light_max} exceeds {light_factor} tau*")
    meta = {"tau_star": ts, "k": k, "heavy": heavy, "epsilon": eps, "beta": beta, "constant": const}
    return StreamInstance(stream, meta)


GENERATORS = {
    "coverage": random_coverage,
    "planted_setcover": planted_setcover,
    "planted_clusters": lambda spec, seed=None: planted_clusters(spec, seed)[0],
    "hh_stream": planted_stream,
}


def generate_instance(spec: dict, seed: Optional[int] = None) -> Instance:
    """Build an instance from ``spec`` (its ``kind`` picks the generator); deterministic in (spec, seed)."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise SpecError("generator spec must be an object with a 'kind'")
    gen = GENERATORS.get(spec["kind"])
    if gen is None:
        raise SpecError(f"unknown generator kind {spec['kind']!r}; choose from {sorted(GENERATORS)}")
    try:
        return gen(spec, seed)
    except (KeyError, TypeError, ParameterError) as exc:
        raise SpecError(f"malformed {spec['kind']} spec: {exc}") from exc
