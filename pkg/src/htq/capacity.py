"""Capacity-region geometry for the generalized switch.

The region is the psi-weighted Minkowski sum of the convex hulls of the
per-channel schedule sets. It is described by its facets with positive offset;
the coordinate constraints ``x_i >= 0`` are left implicit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .model import ConfigurationError
from .policies import ScheduleSet
from .stochastic import ChannelDist

MAX_DIM = 4
COPLANAR_TOL = 1e-9
ANGLE_TOL = 1e-8
BOUNDARY_TOL = 1e-9
MAX_SUM_POINTS = 2_000_000


class UnsupportedScaleError(ConfigurationError):
    pass


class NotOnBoundaryError(ConfigurationError):
    pass


class InfeasibleParametrization(ConfigurationError):
    pass


@dataclass(frozen=True, eq=False)
class Facet:
    c: np.ndarray
    b: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if abs(np.linalg.norm(c) - 1.0) > 1e-10:
            raise ConfigurationError(f"facet normal {c} is not a unit vector")
        if np.any(c < -1e-12):
            raise ConfigurationError(f"facet normal {c} has a negative component")
        if not self.b > 0:
            raise ConfigurationError(f"facet offset must be positive, got {self.b}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class BDistribution:
    """Law of the largest c-weighted service rate available in a slot."""

    values: np.ndarray
    probs: np.ndarray
    mean: float
    variance: float


@dataclass(frozen=True)
class CRPReport:
    holds: bool
    binding: tuple
    facet_index: int | None
    slacks: np.ndarray


def _state_points(S: ScheduleSet, label) -> np.ndarray:
    pts = np.unique(S[label].astype(float), axis=0)
    if pts.shape[1] >= 2 and pts.shape[0] > pts.shape[1] + 1:
        from scipy.spatial import ConvexHull, QhullError

        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    return pts


def minkowski_points(S: ScheduleSet, channels: ChannelDist) -> np.ndarray:
    """All psi-weighted sums of one hull vertex per channel state."""
    per_state = []
    for label, psi in zip(channels.states, channels.probs):
        if label not in S.sets:
            raise ConfigurationError(f"channel state {label!r} has no schedule set")
        if psi > 0:
            per_state.append(psi * _state_points(S, label))
    size = int(np.prod([len(p) for p in per_state]))
    if size > MAX_SUM_POINTS:
        raise UnsupportedScaleError(f"Minkowski sum would enumerate {size} points")
    pts = np.zeros((1, S.n))
    for p in per_state:
        pts = (pts[:, None, :] + p[None, :, :]).reshape(-1, S.n)
        pts = np.unique(np.round(pts, 12), axis=0)
    return pts


def capacity_region(S: ScheduleSet, channels: ChannelDist) -> list[Facet]:
    n = S.n
    if n > MAX_DIM:
        raise UnsupportedScaleError(f"facet enumeration supports n <= {MAX_DIM}, got n={n}")
    pts = minkowski_points(S, channels)
    if n == 1:
        b = float(pts.max())
        if b <= 0:
            raise ConfigurationError("capacity region is the single point 0")
        return [Facet(np.array([1.0]), b)]
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise ConfigurationError(f"capacity region is not full-dimensional: {exc}") from None
    normals: list[np.ndarray] = []
    for eq in hull.equations:
        c, offset = eq[:-1], eq[-1]
        if -offset <= COPLANAR_TOL:
            continue
        c = c / np.linalg.norm(c)
        if any(np.linalg.norm(c - other) < ANGLE_TOL for other in normals):
            continue
        normals.append(c)
    facets = []
    for c in normals:
        if np.any(c < -1e-7):
            raise ConfigurationError(f"computed facet normal {c} has a negative component")
        c = np.clip(c, 0.0, None)
        c = c / np.linalg.norm(c)
        c[np.abs(c) < 1e-14] = 0.0
        facets.append(Facet(c, float(np.max(pts @ c))))
    facets.sort(key=lambda f: tuple(-f.c))
    return facets


def b_distribution(c, S: ScheduleSet, channels: ChannelDist) -> BDistribution:
    c = np.asarray(c, dtype=float)
    values = np.array([float(np.max(S[t] @ c)) for t in channels.states])
    mean = float(channels.probs @ values)
    var = float(channels.probs @ (values - mean) ** 2)
    return BDistribution(values=values, probs=channels.probs.copy(), mean=mean, variance=var)


def ht_arrival_mean(r, c, epsilon: float, b: float | None = None) -> np.ndarray:
    """Arrival-rate vector ``r - epsilon * c`` for the heavy-traffic family."""
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    if b is not None and abs(float(c @ r) - b) > 1e-9:
        raise InfeasibleParametrization(f"r={r.tolist()} is not on the facet <c,x> = {b}")
    lam = r - epsilon * c
    if np.any(lam < -1e-12):
        raise InfeasibleParametrization(
            f"epsilon={epsilon} pushes the arrival rate below zero: {lam.tolist()}"
        )
    return np.clip(lam, 0.0, None)


def check_crp(r, facets: list[Facet], tol: float = BOUNDARY_TOL) -> CRPReport:
    r = np.asarray(r, dtype=float)
    if np.any(r < -tol):
        raise NotOnBoundaryError(f"r={r.tolist()} has a negative component")
    slacks = np.array([f.b - float(f.c @ r) for f in facets])
    if np.any(slacks < -tol):
        raise NotOnBoundaryError(f"r={r.tolist()} lies outside the capacity region")
    binding = tuple(int(i) for i in np.flatnonzero(np.abs(slacks) <= tol))
    if not binding:
        raise NotOnBoundaryError(f"r={r.tolist()} lies strictly inside the capacity region")
    holds = len(binding) == 1
    return CRPReport(holds=holds, binding=binding, facet_index=binding[0] if holds else None, slacks=slacks)


def enumerate_hull_facets_bruteforce(points: np.ndarray, tol: float = 1e-9) -> list[tuple[np.ndarray, float]]:
    """Facets of a 2-D point set by checking every pair of points.

    Slow independent check used by the tests.
    """
    out = []
    for p, q in itertools.combinations(points, 2):
        d = q - p
        normal = np.array([d[1], -d[0]], dtype=float)
        if np.linalg.norm(normal) < tol:
            continue
        normal /= np.linalg.norm(normal)
        for sgn in (1.0, -1.0):
            c = sgn * normal
            b = float(c @ p)
            if np.all(points @ c <= b + tol):
                if not any(np.linalg.norm(c - c2) < 1e-8 for c2, _ in out):
                    out.append((c, b))
    return out
