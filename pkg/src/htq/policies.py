"""Routing and scheduling policies.

Every randomized choice draws from ``rng.random()`` only, and the order of
candidates is fixed (ascending queue index, schedule-table order,
lexicographic permutations), so the compiled simulation kernel can reproduce
these functions exactly from the same uniforms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .model import ConfigurationError

ROUTING_POLICIES = ("jsq", "po2", "random-uniform")
SCHEDULING_POLICIES = ("maxweight", "switch-maxweight")
POLICIES = ROUTING_POLICIES + SCHEDULING_POLICIES


def pick(k: int, u: float) -> int:
    """Uniform index in ``range(k)`` from one uniform draw."""
    return min(int(u * k), k - 1)


def _routed(n: int, target: int, total: int) -> np.ndarray:
    a = np.zeros(n, dtype=np.int64)
    a[target] = total
    return a


def route_jsq(q, total: int, rng) -> np.ndarray:
    q = np.asarray(q)
    if total < 0:
        raise ConfigurationError("total arrivals must be nonnegative")
    ties = np.flatnonzero(q == q.min())
    target = ties[0] if len(ties) == 1 else ties[pick(len(ties), rng.random())]
    return _routed(len(q), int(target), total)


def po2_pair(n: int, u1: float, u2: float) -> tuple[int, int]:
    i1 = pick(n, u1)
    i2 = pick(n - 1, u2)
    if i2 >= i1:
        i2 += 1
    return i1, i2


def route_po2(q, total: int, rng) -> np.ndarray:
    q = np.asarray(q)
    n = len(q)
    if n < 2:
        raise ConfigurationError("power-of-two choices needs at least two queues")
    i1, i2 = po2_pair(n, rng.random(), rng.random())
    if q[i1] < q[i2]:
        target = i1
    elif q[i2] < q[i1]:
        target = i2
    else:
        lo, hi = min(i1, i2), max(i1, i2)
        target = (lo, hi)[pick(2, rng.random())]
    return _routed(n, target, total)


def route_random(q, total: int, rng) -> np.ndarray:
    n = len(q)
    return _routed(n, pick(n, rng.random()), total)


ROUTERS = {"jsq": route_jsq, "po2": route_po2, "random-uniform": route_random}


@dataclass(frozen=True, eq=False)
class ScheduleSet:
    """Finite feasible service-rate vectors for every channel state."""

    sets: Mapping[str, np.ndarray]

    def __post_init__(self):
        if not self.sets:
            raise ConfigurationError("schedule set needs at least one channel state")
        clean = {}
        dims = set()
        for label, vecs in self.sets.items():
            arr = np.atleast_2d(np.asarray(vecs, dtype=np.int64))
            if arr.size == 0:
                raise ConfigurationError(f"empty schedule set for channel state {label!r}")
            if np.any(arr < 0):
                raise ConfigurationError(f"negative service rate in state {label!r}")
            dims.add(arr.shape[1])
            clean[label] = arr
        if len(dims) != 1:
            raise ConfigurationError("schedule vectors have inconsistent dimensions")
        object.__setattr__(self, "sets", clean)

    @property
    def n(self) -> int:
        return next(iter(self.sets.values())).shape[1]

    @property
    def labels(self) -> tuple:
        return tuple(self.sets)

    @property
    def s_max(self) -> int:
        return int(max(v.max() for v in self.sets.values()))

    def __getitem__(self, label) -> np.ndarray:
        return self.sets[label]

    def validate(self, s_max: int | None = None) -> None:
        """Zero vector present, closed under axis projections, bounded."""
        for label, arr in self.sets.items():
            rows = {tuple(r) for r in arr}
            if tuple([0] * arr.shape[1]) not in rows:
                raise ConfigurationError(f"schedule set {label!r} lacks the zero vector")
            for r in arr:
                for i, v in enumerate(r):
                    proj = [0] * arr.shape[1]
                    proj[i] = int(v)
                    if tuple(proj) not in rows:
                        raise ConfigurationError(
                            f"schedule set {label!r} is not closed under projection: "
                            f"{tuple(int(x) for x in r)} projected on axis {i}"
                        )
            if s_max is not None and arr.max() > s_max:
                raise ConfigurationError(f"schedule set {label!r} exceeds S_max={s_max}")

    @classmethod
    def from_maximal(cls, sets: Mapping[str, object]) -> "ScheduleSet":
        """Add the zero vector and every axis projection to the given vectors."""
        out = {}
        for label, vecs in sets.items():
            arr = np.atleast_2d(np.asarray(vecs, dtype=np.int64))
            rows = [tuple([0] * arr.shape[1])]
            for r in arr:
                rows.append(tuple(int(x) for x in r))
                for i, v in enumerate(r):
                    proj = [0] * arr.shape[1]
                    proj[i] = int(v)
                    rows.append(tuple(proj))
            out[label] = np.array(list(dict.fromkeys(rows)), dtype=np.int64)
        return cls(out)


def maxweight_candidates(q, schedules: np.ndarray) -> np.ndarray:
    weights = schedules @ np.asarray(q, dtype=np.int64)
    return np.flatnonzero(weights == weights.max())


def schedule_maxweight(q, t, S: ScheduleSet, rng) -> np.ndarray:
    if t not in S.sets:
        raise ConfigurationError(f"channel state {t!r} has no schedule set")
    table = S[t]
    if table.shape[0] == 0:
        raise ConfigurationError("empty schedule set")
    best = maxweight_candidates(q, table)
    idx = best[0] if len(best) == 1 else best[pick(len(best), rng.random())]
    return table[idx].copy()


@lru_cache(maxsize=None)
def permutation_table(N: int) -> np.ndarray:
    """All N x N permutation matrices, flattened row-major, lexicographic order."""
    perms = list(itertools.permutations(range(N)))
    table = np.zeros((len(perms), N * N), dtype=np.int64)
    for k, p in enumerate(perms):
        for row, col in enumerate(p):
            table[k, row * N + col] = 1
    table.setflags(write=False)
    return table


def switch_size(n: int) -> int:
    N = int(round(np.sqrt(n)))
    if N * N != n or N < 1:
        raise ConfigurationError(f"switch needs a square number of queues, got {n}")
    return N


ENUMERATION_LIMIT = 4


def schedule_switch(q, rng) -> np.ndarray:
    """Maximum-weight permutation for an N x N input-queued switch.

    Up to N = 4 all permutations are enumerated and ties are uniform. Above
    that the assignment is solved on integer weights scaled by ``K`` plus a
    random perturbation smaller than one weight unit, which picks some
    maximizer at random but not uniformly.
    """
    qm = np.asarray(q, dtype=np.int64)
    if qm.ndim == 1:
        N = switch_size(qm.size)
        qm = qm.reshape(N, N)
    elif qm.ndim != 2 or qm.shape[0] != qm.shape[1]:
        raise ConfigurationError(f"switch queues must form a square matrix, got {qm.shape}")
    N = qm.shape[0]
    if N <= ENUMERATION_LIMIT:
        table = permutation_table(N)
        best = maxweight_candidates(qm.reshape(-1), table)
        idx = best[0] if len(best) == 1 else best[pick(len(best), rng.random())]
        return table[idx].reshape(N, N).copy()
    from scipy.optimize import linear_sum_assignment

    scale = 4 * N
    noise = np.floor(np.array([[rng.random() for _ in range(N)] for _ in range(N)]) * 4).astype(np.int64)
    rows, cols = linear_sum_assignment(qm * scale + noise, maximize=True)
    out = np.zeros((N, N), dtype=np.int64)
    out[rows, cols] = 1
    return out
