"""Steady-state simulation of the queueing chain with batch-means intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernel as K
from .model import ConfigurationError, InvariantViolation, step
from .policies import ROUTERS, permutation_table, pick, schedule_maxweight, schedule_switch
from .stochastic import epsilon_key, make_stream
from .systems import SystemModel

CI_LEVEL = 0.95
EXPONENT_LIMIT = 700.0
THETA_GUARD = 30.0


@dataclass(frozen=True)
class SimConfig:
    measure_slots: int
    warmup_slots: Optional[int] = None
    batches: int = 20
    seed: int = 0
    theta_grid: Sequence[float] = (-1.0, 0.0, 1.0)
    replication_id: int = 0
    thin: Optional[int] = None
    chunk_slots: int = 1 << 18
    max_samples: int = 8_000_000

    def warmup_for(self, epsilon: float) -> int:
        if self.warmup_slots is not None:
            return int(self.warmup_slots)
        return int(math.ceil(50.0 / epsilon**2))

    def thin_for(self, epsilon: float) -> int:
        return int(self.thin) if self.thin is not None else max(1, int(math.ceil(1.0 / epsilon)))

    def validate(self, system: SystemModel) -> None:
        if self.batches < 10:
            raise ConfigurationError(f"batches must be >= 10, got {self.batches}")
        if self.measure_slots <= 0 or self.measure_slots % self.batches:
            raise ConfigurationError(
                f"measure_slots={self.measure_slots} must be a positive multiple of batches={self.batches}"
            )
        bound = system.epsilon * system.n * max(system.a_max, system.s_max, 1)
        for th in self.theta_grid:
            if abs(th) * bound >= THETA_GUARD:
                raise ConfigurationError(
                    f"theta={th} violates the overflow guard |theta|*eps*n*max(A_max,S_max) < {THETA_GUARD}"
                )


@dataclass(frozen=True)
class Estimate:
    mean: float
    lo: float
    hi: float
    se: float

    def covers(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def batch_ci(batch_means, level: float = CI_LEVEL) -> Estimate:
    b = np.asarray(batch_means, dtype=float)
    mean = float(b.mean())
    se = float(b.std(ddof=1) / math.sqrt(len(b)))
    half = float(stats.t.ppf(0.5 + level / 2.0, len(b) - 1)) * se
    return Estimate(mean, mean - half, mean + half, se)


@dataclass
class SimEstimates:
    kind: str
    policy: str
    epsilon: float
    slots: int
    batches: int
    scaled_parallel_mean: Estimate
    scaled_second_moment: Estimate
    perp_sq: Estimate
    unused_sum_mean: Estimate
    unused_weighted_mean: Estimate
    unused_sum_sq_mean: Estimate
    weighted_service_mean: Estimate
    weighted_arrival_mean: Estimate
    unused_identity: Estimate
    mgf: dict
    mgf_valid: dict
    residual: dict
    samples: np.ndarray = field(repr=False)
    thin: int = 1
    histogram: tuple = field(default=(), repr=False)
    final_q: np.ndarray = field(default=None, repr=False)

    @property
    def perp_sq_scaled(self) -> float:
        return self.epsilon**2 * self.perp_sq.mean


def project(q, c):
    """Split ``q`` into ``<c,q>`` and the part orthogonal to ``c``."""
    q = np.asarray(q, dtype=float)
    c = np.asarray(c, dtype=float)
    par = float(c @ q)
    return par, q - par * c


def _kernel_tables(system: SystemModel):
    n = system.n
    arr_support = np.ascontiguousarray(system.arrivals.support)
    arr_cdf = np.ascontiguousarray(system.arrivals.cdf)
    if system.kind in ("single", "lb"):
        srv_support = np.ascontiguousarray(system.services.support)
        srv_cdf = np.ascontiguousarray(system.services.cdf)
        ch_cdf = np.ones(1)
        sched = np.zeros((1, n), dtype=np.int64)
        start = np.zeros(2, dtype=np.int64)
    else:
        srv_support = np.zeros((1, n), dtype=np.int64)
        srv_cdf = np.ones(1)
        ch_cdf = system.channels.cdf
        tables = [system.schedules[t] for t in system.channels.states]
        sched = np.ascontiguousarray(np.vstack(tables).astype(np.int64))
        start = np.concatenate([[0], np.cumsum([len(t) for t in tables])]).astype(np.int64)
    return arr_support, arr_cdf, srv_support, srv_cdf, ch_cdf, sched, start


def _stream(system: SystemModel, cfg: SimConfig):
    return make_stream(cfg.seed, cfg.replication_id, epsilon_key(system.epsilon))


def _finish(system, cfg, acc, mgf_acc, left_acc, right_acc, max_expo, samples, final_q) -> SimEstimates:
    blen = cfg.measure_slots // cfg.batches
    acc = acc / blen
    mgf_b = mgf_acc / blen
    res_b = (left_acc - right_acc) / blen
    thetas = [float(t) for t in cfg.theta_grid]
    if system.kind in ("single", "lb"):
        identity = acc[:, K.S_U_SUM]
    else:
        identity = acc[:, K.S_U_C] + system.b - acc[:, K.S_S_C]
    mgf, valid, residual = {}, {}, {}
    for j, th in enumerate(thetas):
        ok = bool(max_expo[j] < EXPONENT_LIMIT) and bool(np.all(np.isfinite(mgf_b[:, j])))
        valid[th] = ok
        mgf[th] = batch_ci(mgf_b[:, j]) if ok else Estimate(math.nan, math.nan, math.nan, math.nan)
        residual[th] = batch_ci(res_b[:, j]) if ok else Estimate(math.nan, math.nan, math.nan, math.nan)
    if len(samples):
        counts, edges = np.histogram(samples, bins=min(50, max(5, int(np.sqrt(len(samples))))))
    else:
        counts, edges = np.zeros(0, dtype=np.int64), np.zeros(1)
    return SimEstimates(
        kind=system.kind,
        policy=system.policy,
        epsilon=system.epsilon,
        slots=cfg.measure_slots,
        batches=cfg.batches,
        scaled_parallel_mean=batch_ci(acc[:, K.S_SCALED]),
        scaled_second_moment=batch_ci(acc[:, K.S_SCALED_SQ]),
        perp_sq=batch_ci(acc[:, K.S_PERP_SQ]),
        unused_sum_mean=batch_ci(acc[:, K.S_U_SUM]),
        unused_weighted_mean=batch_ci(acc[:, K.S_U_C]),
        unused_sum_sq_mean=batch_ci(acc[:, K.S_U_SUM_SQ]),
        weighted_service_mean=batch_ci(acc[:, K.S_S_C]),
        weighted_arrival_mean=batch_ci(acc[:, K.S_A_C]),
        unused_identity=batch_ci(identity),
        mgf=mgf,
        mgf_valid=valid,
        residual=residual,
        samples=samples,
        thin=cfg.thin_for(system.epsilon),
        histogram=(counts, edges),
        final_q=final_q,
    )


def _buffers(system, cfg):
    m = len(cfg.theta_grid)
    B = cfg.batches
    n_samples = min(cfg.max_samples, cfg.measure_slots // cfg.thin_for(system.epsilon) + 1)
    return dict(
        acc=np.zeros((B, K.N_STATS)),
        mgf_acc=np.zeros((B, m)),
        left_acc=np.zeros((B, m)),
        right_acc=np.zeros((B, m)),
        max_expo=np.full(m, -np.inf),
        samples=np.zeros(n_samples),
        n_samples=np.zeros(1, dtype=np.int64),
        violations=np.zeros(2, dtype=np.int64),
    )


def run(system: SystemModel, cfg: SimConfig) -> SimEstimates:
    """Simulate warmup plus measurement slots and return batch-means estimates.

    Deterministic in ``(cfg.seed, cfg.replication_id, system.epsilon)``. Any
    slot breaking ``q_next * u = 0`` or ``0 <= u <= s`` raises
    InvariantViolation naming the first bad slot.
    """
    cfg.validate(system)
    warmup = cfg.warmup_for(system.epsilon)
    total = warmup + cfg.measure_slots
    rng = _stream(system, cfg)
    tables = _kernel_tables(system)
    buf = _buffers(system, cfg)
    q = system.q0.astype(np.int64).copy()
    thetas = np.asarray(cfg.theta_grid, dtype=float)
    policy = K.POLICY_CODES[system.policy]
    blen = cfg.measure_slots // cfg.batches
    thin = cfg.thin_for(system.epsilon)
    done = 0
    while done < total:
        size = min(cfg.chunk_slots, total - done)
        uni = rng.random((size, K.UNIFORMS_PER_SLOT))
        K.run_chunk(
            policy, q, uni, done, warmup, blen, thin, *tables,
            system.c, float(system.epsilon), thetas,
            buf["acc"], buf["mgf_acc"], buf["left_acc"], buf["right_acc"], buf["max_expo"],
            buf["samples"], buf["n_samples"], buf["violations"],
        )
        done += size
    if buf["violations"][0]:
        raise InvariantViolation(
            f"{buf['violations'][0]} slots broke the queue dynamics; first at slot {buf['violations'][1]}"
        )
    samples = buf["samples"][: buf["n_samples"][0]].copy()
    return _finish(system, cfg, buf["acc"], buf["mgf_acc"], buf["left_acc"], buf["right_acc"],
                   buf["max_expo"], samples, q)


class _SlotRng:
    """Hands out one slot's pre-drawn policy uniforms in order."""

    def __init__(self, values):
        self._values = iter(values)

    def random(self):
        return float(next(self._values))


def reference_slot(system: SystemModel, q: np.ndarray, uni: np.ndarray):
    """One slot through ``model.step`` and the policy functions."""
    channel = None
    if system.kind in ("single", "lb"):
        s = system.services.support[system.services.index_from_uniform(uni[1])]
        total = int(system.arrivals.support[system.arrivals.index_from_uniform(uni[0]), 0])
        a = ROUTERS[system.policy](q, total, _SlotRng(uni[2:]))
    else:
        channel = system.channels.states[min(int(np.searchsorted(system.channels.cdf, uni[1], side="right")),
                                             len(system.channels.states) - 1)]
        if system.kind == "switch":
            s = schedule_switch(q, _SlotRng(uni[2:])).reshape(-1)
        else:
            s = schedule_maxweight(q, channel, system.schedules, _SlotRng(uni[2:]))
        a = system.arrivals.support[system.arrivals.index_from_uniform(uni[0])]
    return step(q, a, s, channel_state=channel)


def run_reference(system: SystemModel, cfg: SimConfig, record: bool = False):
    """Slow pure-Python twin of ``run`` consuming the same random stream.

    Returns the estimates, and the list of SlotRecords when ``record`` is set.
    """
    cfg.validate(system)
    warmup = cfg.warmup_for(system.epsilon)
    total = warmup + cfg.measure_slots
    rng = _stream(system, cfg)
    buf = _buffers(system, cfg)
    thetas = np.asarray(cfg.theta_grid, dtype=float)
    blen = cfg.measure_slots // cfg.batches
    thin = cfg.thin_for(system.epsilon)
    c, eps = system.c, system.epsilon
    q = system.q0.astype(np.int64).copy()
    records = []
    done = 0
    while done < total:
        size = min(cfg.chunk_slots, total - done)
        uni = rng.random((size, K.UNIFORMS_PER_SLOT))
        for r in range(size):
            k = done + r
            rec = reference_slot(system, q, uni[r])
            rec.check(system.a_max, system.s_max)
            if record:
                records.append(rec)
            if k >= warmup:
                jm = k - warmup
                b = jm // blen
                x, perp = project(rec.q, c)
                usum = int(rec.u.sum())
                cu, cs, ca = float(c @ rec.u), float(c @ rec.s), float(c @ rec.a)
                row = buf["acc"][b]
                row += [eps * x, float(perp @ perp), usum, cu, cs, usum * usum, ca, (eps * x) ** 2]
                for j, th in enumerate(thetas):
                    e = th * eps * x
                    buf["max_expo"][j] = max(buf["max_expo"][j], e)
                    buf["mgf_acc"][b, j] += math.exp(e)
                    buf["left_acc"][b, j] += math.exp(e) * (1.0 - math.exp(th * eps * (ca - cs)))
                    buf["right_acc"][b, j] += 1.0 - math.exp(-th * eps * cu)
                if jm % thin == 0 and buf["n_samples"][0] < len(buf["samples"]):
                    buf["samples"][buf["n_samples"][0]] = eps * x
                    buf["n_samples"][0] += 1
            q = rec.q_next
        done += size
    samples = buf["samples"][: buf["n_samples"][0]].copy()
    est = _finish(system, cfg, buf["acc"], buf["mgf_acc"], buf["left_acc"], buf["right_acc"],
                  buf["max_expo"], samples, q)
    return (est, records) if record else est


def empirical_mgf_equation_residual(system: SystemModel, cfg: SimConfig, estimates: Optional[SimEstimates] = None) -> dict:
    """Per-theta estimate of ``E[e^{th x}(1 - e^{th <c,a-s>})] - (1 - E[e^{-th <c,u>}])``
    with ``x = eps <c,q>`` and ``th`` the grid value times epsilon."""
    est = estimates if estimates is not None else run(system, cfg)
    return est.residual
