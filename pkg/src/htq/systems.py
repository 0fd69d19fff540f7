"""Parametrized queueing systems: single server, load balancing, generalized
switch and the input-queued switch."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional

import numpy as np

from . import capacity
from .model import ConfigurationError
from .policies import ROUTING_POLICIES, ScheduleSet, permutation_table
from .stochastic import ChannelDist, FiniteJointDist, build_family, moments

KINDS = ("single", "lb", "gs", "switch")


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Everything needed to simulate one system at one epsilon.

    For ``single`` and ``lb`` the arrival law is one-dimensional (the total
    per slot, routed by ``policy``) and ``services`` is the joint law of the
    potential services. For ``gs`` and ``switch`` the arrival law is
    n-dimensional and the service vector is chosen from ``schedules`` by
    MaxWeight after the channel state is drawn.
    """

    kind: str
    policy: str
    epsilon: float
    arrivals: FiniteJointDist
    c: np.ndarray
    direction: np.ndarray
    services: Optional[FiniteJointDist] = None
    schedules: Optional[ScheduleSet] = None
    channels: Optional[ChannelDist] = None
    b: Optional[float] = None
    r: Optional[np.ndarray] = None
    q0: Optional[np.ndarray] = None
    name: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown system kind {self.kind!r}")
        c = np.asarray(self.c, dtype=float)
        if abs(np.linalg.norm(c) - 1.0) > 1e-10:
            raise ConfigurationError("projection direction must be a unit vector")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        q0 = np.zeros(self.n, dtype=np.int64) if self.q0 is None else np.asarray(self.q0, dtype=np.int64)
        if q0.shape != (self.n,) or np.any(q0 < 0):
            raise ConfigurationError(f"initial state must be {self.n} nonnegative integers")
        object.__setattr__(self, "q0", q0)
        self.validate()

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def a_max(self) -> int:
        return self.arrivals.max_value

    @property
    def s_max(self) -> int:
        if self.services is not None:
            return self.services.max_value
        return self.schedules.s_max

    def validate(self) -> None:
        routing = self.kind in ("single", "lb")
        if routing:
            if self.services is None or self.arrivals.dim != 1 or self.services.dim != self.n:
                raise ConfigurationError("routing systems need 1-D arrivals and n-D services")
            allowed = ("jsq",) if self.kind == "single" else ROUTING_POLICIES
        else:
            if self.schedules is None or self.channels is None or self.arrivals.dim != self.n:
                raise ConfigurationError("scheduling systems need n-D arrivals, schedules and channels")
            if self.schedules.n != self.n:
                raise ConfigurationError("schedule dimension does not match the system")
            allowed = ("maxweight",) if self.kind == "gs" else ("switch-maxweight",)
        if self.policy not in allowed:
            raise ConfigurationError(f"policy {self.policy!r} not valid for kind {self.kind!r}; use {allowed}")
        if self.policy == "po2" and self.n < 2:
            raise ConfigurationError("power-of-two choices needs n >= 2")

    def with_q0(self, q0) -> "SystemModel":
        return replace(self, q0=np.asarray(q0, dtype=np.int64))

    def arrival_moments(self):
        return moments(self.arrivals)

    def service_moments(self):
        return moments(self.services) if self.services is not None else None


def _warn_po2(services: FiniteJointDist) -> None:
    m = moments(services)
    identical = np.allclose(m.mean, m.mean[0]) and np.allclose(m.var, m.var[0])
    if not identical:
        warnings.warn(
            "power-of-two choices is throughput optimal only for identical servers",
            RuntimeWarning,
            stacklevel=3,
        )


def single_server(
    services: FiniteJointDist,
    arrival_family: str,
    arrival_params: Optional[Mapping] = None,
    epsilon: float = 0.1,
    **kw,
) -> SystemModel:
    """Single queue with arrival rate ``mu - epsilon``."""
    if services.dim != 1:
        raise ConfigurationError("single server needs a 1-D service law")
    mu = float(services.mean()[0])
    if not 0.0 < epsilon < mu:
        raise ConfigurationError(f"epsilon={epsilon} must lie in (0, mu={mu})")
    arrivals = build_family(arrival_family, arrival_params, [mu - epsilon], epsilon=epsilon)
    return SystemModel(
        kind="single", policy="jsq", epsilon=epsilon, arrivals=arrivals, services=services,
        c=np.ones(1), direction=np.ones(1), b=mu, **kw,
    )


def load_balancing(
    services: FiniteJointDist,
    arrival_family: str,
    arrival_params: Optional[Mapping] = None,
    epsilon: float = 0.1,
    policy: str = "jsq",
    **kw,
) -> SystemModel:
    """n queues fed by one arrival stream with total rate ``mu_sum - epsilon``."""
    n = services.dim
    mu_sum = float(services.mean().sum())
    if not 0.0 < epsilon < mu_sum:
        raise ConfigurationError(f"epsilon={epsilon} must lie in (0, mu_sum={mu_sum})")
    if policy == "po2":
        _warn_po2(services)
    arrivals = build_family(arrival_family, arrival_params, [mu_sum - epsilon], epsilon=epsilon)
    c = np.ones(n) / np.sqrt(n)
    return SystemModel(
        kind="lb", policy=policy, epsilon=epsilon, arrivals=arrivals, services=services,
        c=c, direction=np.ones(n), b=mu_sum / np.sqrt(n), **kw,
    )


def generalized_switch(
    schedules: ScheduleSet,
    channels: ChannelDist,
    r,
    arrival_family: str,
    arrival_params: Optional[Mapping] = None,
    epsilon: float = 0.1,
    **kw,
) -> SystemModel:
    """Generalized switch under MaxWeight with arrival rate ``r - epsilon c``.

    ``r`` must sit on exactly one facet of the capacity region.
    """
    if not 0.0 < epsilon < 1.0:
        raise ConfigurationError(f"epsilon={epsilon} must lie in (0, 1)")
    schedules.validate()
    facets = capacity.capacity_region(schedules, channels)
    report = capacity.check_crp(r, facets)
    if not report.holds:
        raise ConfigurationError(f"CRP fails at r={list(r)}: binding facets {report.binding}")
    facet = facets[report.facet_index]
    lam = capacity.ht_arrival_mean(r, facet.c, epsilon, facet.b)
    arrivals = build_family(arrival_family, arrival_params, lam, epsilon=epsilon)
    return SystemModel(
        kind="gs", policy="maxweight", epsilon=epsilon, arrivals=arrivals,
        schedules=schedules, channels=channels, c=facet.c, direction=facet.c,
        b=facet.b, r=np.asarray(r, dtype=float), **kw,
    )


def row_indicator(N: int, row: int = 0) -> np.ndarray:
    chi = np.zeros(N * N)
    chi[row * N:(row + 1) * N] = 1.0 / np.sqrt(N)
    return chi


def input_queued_switch(
    N: int,
    arrival_family: str,
    arrival_params: Optional[Mapping] = None,
    epsilon: float = 0.1,
    **kw,
) -> SystemModel:
    """N x N switch with input port 1 saturated.

    The row-1 facet is ``<chi, x> <= 1/sqrt(N)`` (row sum at most one), so the
    arrival rate is ``chi/sqrt(N) - epsilon chi``: each row-1 queue gets
    ``1/N - epsilon/sqrt(N)`` and the other rows get nothing.
    """
    if N < 1:
        raise ConfigurationError("switch size must be positive")
    b = 1.0 / np.sqrt(N)
    if not 0.0 < epsilon < b:
        raise ConfigurationError(f"epsilon={epsilon} must lie in (0, 1/sqrt(N)={b})")
    chi = row_indicator(N)
    r = chi * b
    lam_row = capacity.ht_arrival_mean(r, chi, epsilon, b)[:N]
    row = build_family(arrival_family, arrival_params, lam_row, epsilon=epsilon)
    support = np.zeros((row.support.shape[0], N * N), dtype=np.int64)
    support[:, :N] = row.support
    arrivals = FiniteJointDist(support, row.probs)
    schedules = ScheduleSet({"t0": permutation_table(N)})
    return SystemModel(
        kind="switch", policy="switch-maxweight", epsilon=epsilon, arrivals=arrivals,
        schedules=schedules, channels=ChannelDist.single("t0"), c=chi, direction=chi,
        b=b, r=r, meta={"N": N}, **kw,
    )
