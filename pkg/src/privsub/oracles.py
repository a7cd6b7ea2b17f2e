"""Brute-force optima for small instances, shared by the harness and the tests.

Ties are broken towards the lexicographically smallest optimal set.
"""

from __future__ import annotations

import itertools
import math
from typing import Optional

import numpy as np

from privsub.clustering import ClusterInstance
from privsub.core import CapacityError, Dataset
from privsub.setcover import InstanceError, SetSystem
from privsub.submodular import DecomposableSubmodular, Matroid

TIE_TOL = 1e-9


def _argbest(values: np.ndarray, maximize: bool) -> int:
    best = values.max() if maximize else values.min()
    close = values >= best - TIE_TOL if maximize else values <= best + TIE_TOL
    return int(np.flatnonzero(close)[0])


def brute_force_submodular(
    F: DecomposableSubmodular,
    dataset: Dataset,
    k: Optional[int] = None,
    matroid: Optional[Matroid] = None,
    max_m: int = 20,
    batch: int = 1 << 14,
) -> tuple[float, tuple]:
    """Best ``F_D(S)`` over ``|S| = k`` or over the bases of ``matroid``.

    Monotonicity makes maximal sets optimal, so only size-``k`` sets (or
    bases) are scanned, in lexicographic order.
    """
    if F.m > max_m:
        raise CapacityError(f"brute force limited to m <= {max_m}, got {F.m}")
    if (k is None) == (matroid is None):
        raise ValueError("give exactly one of k or matroid")
    size = k if matroid is None else matroid.rank
    combos = itertools.combinations(range(F.m), size)
    if matroid is not None:
        combos = (c for c in combos if matroid.is_independent(c))
    best_val, best_set = -math.inf, ()
    while True:
        chunk = list(itertools.islice(combos, batch))
        if not chunk:
            break
        masks = np.zeros((len(chunk), F.m), dtype=bool)
        for r, c in enumerate(chunk):
            masks[r, list(c)] = True
        vals = F.evaluate_many(dataset, masks)
        j = _argbest(vals, maximize=True)
        if vals[j] > best_val + TIE_TOL:
            best_val, best_set = float(vals[j]), tuple(chunk[j])
    return best_val, best_set


def brute_force_setcover(
    system: SetSystem, dataset: Dataset, max_m: int = 14, max_size: Optional[int] = None
) -> tuple[int, tuple]:
    """Smallest cover size, which equals the optimal permutation cost.

    Sizes are scanned upward, so ``max_size`` bounds the search on larger
    systems; exceeding it without a cover raises :class:`CapacityError`.
    """
    if max_size is None and system.m > max_m:
        raise CapacityError(f"brute force limited to m <= {max_m}, got {system.m}")
    member = system.membership(dataset)
    if len(dataset) == 0:
        return 0, ()
    if not member.any(axis=1).all():
        raise InstanceError("some record is covered by no set")
    bits = [int.from_bytes(np.packbits(col, bitorder="little").tobytes(), "little") for col in member.T]
    full = (1 << len(dataset)) - 1
    limit = system.m if max_size is None else min(max_size, system.m)
    for r in range(1, limit + 1):
        for combo in itertools.combinations(range(system.m), r):
            acc = 0
            for i in combo:
                acc |= bits[i]
            if acc == full:
                return r, combo
    raise CapacityError(f"no cover with at most {limit} sets")


def brute_force_clustering(instance: ClusterInstance, max_combos: int = 10**6, batch: int = 4096) -> tuple[float, tuple]:
    """Minimum ``cost^q`` over all ``k``-subsets of the points."""
    m, k = instance.m, instance.k
    if math.comb(m, k) > max_combos:
        raise CapacityError(f"C({m},{k}) exceeds {max_combos}")
    dq = instance.dq
    counts = instance.point_counts()
    combos = itertools.combinations(range(m), k)
    best_val, best_set = math.inf, ()
    while True:
        chunk = list(itertools.islice(combos, batch))
        if not chunk:
            break
        idx = np.asarray(chunk)
        vals = dq[idx].min(axis=1) @ counts
        j = _argbest(vals, maximize=False)
        if vals[j] < best_val - TIE_TOL:
            best_val, best_set = float(vals[j]), tuple(chunk[j])
    return best_val, best_set
