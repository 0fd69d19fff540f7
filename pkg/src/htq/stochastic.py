"""Bounded finite-support distributions for arrivals, services and channels."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .model import ConfigurationError

PROB_TOL = 1e-12
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class MomentSummary:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self) -> np.ndarray:
        return np.diag(self.cov)

    @property
    def total_var(self) -> float:
        """Variance of the coordinate sum, i.e. the sum of all covariances."""
        return float(self.cov.sum())


@dataclass(frozen=True, eq=False)
class FiniteJointDist:
    """A pmf over finitely many nonnegative integer vectors."""

    support: np.ndarray
    probs: np.ndarray
    bound: Optional[int] = None
    cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        support = np.asarray(self.support)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        if support.ndim != 2 or support.shape[0] == 0:
            raise ConfigurationError("support must be a non-empty list of vectors")
        if not np.all(np.equal(np.mod(support, 1), 0)):
            raise ConfigurationError("support vectors must be integer")
        support = support.astype(np.int64)
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if probs.shape[0] != support.shape[0]:
            raise ConfigurationError("support and probs differ in length")
        if np.any(probs < 0):
            raise ConfigurationError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError(f"probabilities sum to {probs.sum()!r}, not 1")
        if np.any(support < 0):
            raise ConfigurationError("support vectors must be nonnegative")
        if len({tuple(row) for row in support}) != support.shape[0]:
            raise ConfigurationError("support entries must be distinct")
        if self.bound is not None and np.any(support > self.bound):
            raise ConfigurationError(f"support exceeds the declared bound {self.bound}")
        support.setflags(write=False)
        probs.setflags(write=False)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "cdf", cdf)

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @property
    def max_value(self) -> int:
        return int(self.support.max())

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple], bound: Optional[int] = None) -> "FiniteJointDist":
        """Build from ``[(support_vector, prob), ...]``, merging repeated points."""
        merged: dict[tuple, float] = {}
        for vec, p in pairs:
            key = tuple(int(v) for v in np.atleast_1d(vec))
            merged[key] = merged.get(key, 0.0) + float(p)
        keys = sorted(merged)
        return cls(np.array(keys, dtype=np.int64), np.array([merged[k] for k in keys]), bound)

    @classmethod
    def point_mass(cls, x) -> "FiniteJointDist":
        return cls(np.atleast_2d(np.asarray(x, dtype=np.int64)), np.array([1.0]))

    def mean(self) -> np.ndarray:
        return self.probs @ self.support

    def index_from_uniform(self, u: float) -> int:
        idx = int(np.searchsorted(self.cdf, u, side="right"))
        return min(idx, len(self.probs) - 1)

    def pairs(self):
        return [(tuple(int(v) for v in row), float(p)) for row, p in zip(self.support, self.probs)]


@dataclass(frozen=True)
class ChannelDist:
    states: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(self.states) != probs.shape[0] or not self.states:
            raise ConfigurationError("channel states and probabilities differ in length")
        if len(set(self.states)) != len(self.states):
            raise ConfigurationError("channel state labels must be distinct")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise ConfigurationError("channel probabilities must be a pmf")
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "probs", probs)

    @classmethod
    def single(cls, label: str = "t0") -> "ChannelDist":
        return cls((label,), np.array([1.0]))

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


def moments(d: FiniteJointDist) -> MomentSummary:
    x = d.support.astype(float)
    mean = d.probs @ x
    second = (x * d.probs[:, None]).T @ x
    cov = second - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    return MomentSummary(mean=mean, cov=cov)


def sample(d: FiniteJointDist, rng: np.random.Generator) -> np.ndarray:
    return d.support[d.index_from_uniform(rng.random())].copy()


def make_stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(seed, *keys)``.

    Streams for different keys are independent regardless of the order in which
    they are created.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def epsilon_key(epsilon: float) -> int:
    return int(round(float(epsilon) * 1e9))


# ---------------------------------------------------------------- families

def _bernoulli(p: float) -> list[tuple[int, float]]:
    return [(0, 1.0 - p), (1, p)]


def _binomial(m: int, p: float) -> list[tuple[int, float]]:
    from math import comb

    return [(k, comb(m, k) * p**k * (1.0 - p) ** (m - k)) for k in range(m + 1)]


def _three_point(center: int, spread: float, m: float) -> list[tuple[int, float]]:
    # support {center-1, center, center+1}; variance = spread - (center - m)^2
    shift = center - m
    lo = 0.5 * (spread + shift)
    hi = 0.5 * (spread - shift)
    if lo < -PROB_TOL or hi < -PROB_TOL or spread > 1.0:
        raise ConfigurationError(
            f"three-point family cannot reach mean {m} with center {center}, spread {spread}"
        )
    return [(center - 1, max(lo, 0.0)), (center, 1.0 - spread), (center + 1, max(hi, 0.0))]


def _product(marginals: Sequence[list[tuple[int, float]]]) -> list[tuple[tuple, float]]:
    out = []
    for combo in itertools.product(*marginals):
        p = 1.0
        for _, pk in combo:
            p *= pk
        if p > 0.0:
            out.append((tuple(v for v, _ in combo), p))
    return out


def _check_prob(p: float, what: str) -> float:
    if p < -MEAN_TOL or p > 1.0 + MEAN_TOL:
        raise ConfigurationError(f"infeasible mean: {what} = {p} not in [0, 1]")
    return min(max(p, 0.0), 1.0)


def _common_shock(shock: float, target: np.ndarray) -> list[tuple[tuple, float]]:
    shock = _check_prob(float(shock), "shock probability")
    own = [_check_prob(t - shock, f"idiosyncratic probability for mean {t}") for t in target]
    out = []
    for z, pz in _bernoulli(shock):
        for combo in itertools.product(*[_bernoulli(p) for p in own]):
            p = pz
            for _, pk in combo:
                p *= pk
            if p > 0.0:
                out.append((tuple(y + z for y, _ in combo), p))
    return out


def _explicit_pmf(params: Mapping[str, Any], epsilon: Optional[float]) -> list[tuple[tuple, float]]:
    if "per_epsilon" in params:
        for entry in params["per_epsilon"]:
            if epsilon is not None and abs(float(entry["epsilon"]) - float(epsilon)) <= 1e-12:
                params = entry
                break
        else:
            raise ConfigurationError(f"no explicit pmf given for epsilon={epsilon}")
    support = [tuple(np.atleast_1d(v)) for v in params["support"]]
    if len(support) != len(params["probs"]):
        raise ConfigurationError("explicit pmf: support and probs differ in length")
    return list(zip(support, params["probs"]))


FAMILIES = ("bernoulli", "binomial", "common-shock", "three-point", "deterministic", "pmf")


def build_family(
    kind: str,
    params: Optional[Mapping[str, Any]],
    target_mean,
    epsilon: Optional[float] = None,
    bound: Optional[int] = None,
) -> FiniteJointDist:
    """Construct a distribution of the named family with the given mean vector.

    ``bernoulli``, ``binomial`` and ``three-point`` are independent across
    coordinates. ``common-shock`` adds one shared Bernoulli(``shock``) to every
    coordinate, so the off-diagonal covariance is ``shock*(1-shock)``.
    ``pmf`` takes an explicit pmf, optionally one per epsilon.
    """
    params = dict(params or {})
    target = np.atleast_1d(np.asarray(target_mean, dtype=float))
    if np.any(target < -MEAN_TOL):
        raise ConfigurationError(f"infeasible mean {target}: negative component")
    if kind == "bernoulli":
        pairs = _product([_bernoulli(_check_prob(t, "Bernoulli mean")) for t in target])
    elif kind == "binomial":
        m = int(params.get("m", 1))
        if m < 1:
            raise ConfigurationError("binomial family needs m >= 1")
        pairs = _product([_binomial(m, _check_prob(t / m, "binomial success probability")) for t in target])
    elif kind == "three-point":
        center = int(params.get("center", 1))
        spread = float(params.get("spread", 0.25))
        if center < 1 or not (0.0 < spread <= 1.0):
            raise ConfigurationError("three-point family needs center >= 1 and spread in (0, 1]")
        pairs = _product([_three_point(center, spread, t) for t in target])
    elif kind == "common-shock":
        pairs = _common_shock(params.get("shock", 0.25), target)
    elif kind == "deterministic":
        if not np.all(np.abs(target - np.round(target)) <= MEAN_TOL):
            raise ConfigurationError(
                f"infeasible mean {target.tolist()}: deterministic counts must be integers"
            )
        pairs = [(tuple(int(round(t)) for t in target), 1.0)]
    elif kind == "pmf":
        pairs = _explicit_pmf(params, epsilon)
    else:
        raise ConfigurationError(f"unknown distribution family {kind!r}; expected one of {FAMILIES}")
    dist = FiniteJointDist.from_pairs(pairs, bound=bound)
    if dist.dim != target.shape[0]:
        raise ConfigurationError(f"family {kind!r} produced dimension {dist.dim}, expected {target.shape[0]}")
    err = np.max(np.abs(dist.mean() - target))
    if err >= MEAN_TOL * max(1.0, float(np.max(np.abs(target)))):
        raise ConfigurationError(
            f"family {kind!r} has mean {dist.mean().tolist()}, target {target.tolist()}"
        )
    return dist


def build_arrival_family(kind: str, params, epsilon: Optional[float], target_mean, bound=None) -> FiniteJointDist:
    return build_family(kind, params, target_mean, epsilon=epsilon, bound=bound)
