"""Heavy-traffic predictions and the reports that compare measurements with them.

Every comparison happens on the scale of the limiting exponential: a measured
``eps <c, q>`` is divided by ``<c, direction>`` so that it estimates the mean of
the exponential variable itself (``eps * sum(q) / n`` for load balancing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

DEGENERATE_TOL = 1e-15


class InsufficientSweepError(ValueError):
    pass


@dataclass(frozen=True)
class HTPrediction:
    limit_mean: float
    direction: np.ndarray
    source: str

    @property
    def degenerate(self) -> bool:
        return self.limit_mean <= DEGENERATE_TOL

    def mgf(self, theta: float) -> float:
        return exponential_reference(self.limit_mean, theta)


def predict_single(sigma_a_sq: float, sigma_s_sq: float) -> HTPrediction:
    _nonneg(sigma_a_sq, sigma_s_sq)
    return HTPrediction((sigma_a_sq + sigma_s_sq) / 2.0, np.ones(1), "single-server")


def predict_lb(n: int, sigma_a_sq: float, cov_s) -> HTPrediction:
    cov_s = _psd(cov_s, n)
    _nonneg(sigma_a_sq)
    return HTPrediction((sigma_a_sq + float(cov_s.sum())) / (2.0 * n), np.ones(n), "load-balancing")


def predict_gs(c, cov_a, sigma_B_sq: float) -> HTPrediction:
    c = np.asarray(c, dtype=float)
    cov_a = _psd(cov_a, len(c))
    _nonneg(sigma_B_sq)
    return HTPrediction(0.5 * (float(c @ cov_a @ c) + sigma_B_sq), c, "generalized-switch")


def predict_switch(N: int, cov_a) -> HTPrediction:
    from .systems import row_indicator

    chi = row_indicator(N)
    cov_a = _psd(cov_a, N * N)
    return HTPrediction(0.5 * float(chi @ cov_a @ chi), chi, "input-queued-switch")


def _nonneg(*vals):
    for v in vals:
        if v < 0:
            raise ValueError(f"variance must be nonnegative, got {v}")


def _psd(cov, n: int) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (n, n):
        raise ValueError(f"covariance must be {n}x{n}, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance is not symmetric")
    if np.linalg.eigvalsh(cov).min() < -1e-9:
        raise ValueError("covariance is not positive semidefinite")
    return cov


def exponential_reference(mean: float, theta: float) -> float:
    """MGF ``1/(1 - theta*mean)`` of an exponential with the given mean."""
    if theta * mean >= 1.0:
        raise ValueError(f"theta*mean = {theta * mean} >= 1: the exponential MGF does not exist")
    return 1.0 / (1.0 - theta * mean)


def lattice_step(c, direction, epsilon: float) -> float:
    """Spacing of the scaled statistic when queues take integer values.

    Exact for equal positive weights, the smallest spacing otherwise.
    """
    c = np.asarray(c, dtype=float)
    return epsilon * float(c[c > 0].min()) / float(c @ np.asarray(direction, dtype=float))


def ks_samples(samples, mean: float, step: float = 0.0) -> float:
    """KS distance from an exponential, shifting samples by half a lattice step."""
    x = np.asarray(samples, dtype=float) + step / 2.0
    if mean <= DEGENERATE_TOL or len(x) == 0:
        return math.nan
    return float(stats.kstest(x, "expon", args=(0.0, mean)).statistic)


def ks_lattice(values, probs, mean: float, step: float = 0.0) -> float:
    """KS distance between a discrete law and an exponential, same shift as ks_samples."""
    if mean <= DEGENERATE_TOL:
        return math.nan
    order = np.argsort(values)
    v = np.asarray(values, dtype=float)[order] + step / 2.0
    cdf = np.cumsum(np.asarray(probs, dtype=float)[order])
    ref = stats.expon.cdf(v, scale=mean)
    before = np.concatenate([[0.0], cdf[:-1]])
    return float(max(np.max(np.abs(cdf - ref)), np.max(np.abs(before - ref))))


@dataclass
class SweepPoint:
    """What the reports need from one run or one oracle solve, on the exponential scale."""

    epsilon: float
    scaled_mean: float
    perp_sq: float
    mgf: dict
    residual: dict = field(default_factory=dict)
    ks: float = math.nan
    source: str = "sim"
    scale: float = 1.0  # <c, direction>; the MGF is of eps <c,q> = scale * exponential-scale value


def sweep_point(est, c, direction, prediction: Optional[HTPrediction] = None) -> SweepPoint:
    """Convert SimEstimates or ExactMoments into a SweepPoint."""
    scale = float(np.asarray(c, dtype=float) @ np.asarray(direction, dtype=float))
    eps = float(est.epsilon)
    step = lattice_step(c, direction, eps)
    if hasattr(est, "scaled_parallel_mean"):
        mean = est.scaled_parallel_mean.mean / scale
        perp = est.perp_sq.mean
        mgf = {th: e.mean for th, e in est.mgf.items()}
        residual = {th: e.mean for th, e in est.residual.items()}
        ks = ks_samples(est.samples / scale, prediction.limit_mean, step) if prediction else math.nan
        source = "sim"
    else:
        mean = est.scaled_mean / scale
        perp = est.perp_sq
        mgf = dict(est.mgf)
        residual = dict(est.residual)
        ks = (ks_lattice(est.scaled_values / scale, est.scaled_probs, prediction.limit_mean, step)
              if prediction else math.nan)
        source = "oracle"
    return SweepPoint(eps, mean, perp, mgf, residual, ks, source, scale)


def _by_epsilon(points: Sequence[SweepPoint]) -> list[SweepPoint]:
    if len(points) < 3:
        raise InsufficientSweepError(f"need at least 3 epsilon values, got {len(points)}")
    return sorted(points, key=lambda p: -p.epsilon)


def strictly_decreasing(values: Sequence[float]) -> bool:
    v = list(values)
    return all(np.isfinite(v)) and all(b < a for a, b in zip(v, v[1:]))


@dataclass
class SSCReport:
    epsilons: list
    scaled_perp: list
    decreasing: bool
    ratio: float
    trivial: bool

    @property
    def passed(self) -> bool:
        return self.trivial or (self.decreasing and self.ratio < 0.5)


def ssc_report(points: Sequence[SweepPoint]) -> SSCReport:
    """Table of eps^2 E||q_perp||^2 in decreasing-epsilon order.

    A system with no perpendicular component (all entries zero) is reported as
    trivially collapsed.
    """
    pts = _by_epsilon(points)
    vals = [p.epsilon**2 * p.perp_sq for p in pts]
    trivial = all(abs(v) <= DEGENERATE_TOL for v in vals)
    ratio = vals[-1] / vals[0] if vals[0] > 0 else math.nan
    return SSCReport([p.epsilon for p in pts], vals, strictly_decreasing(vals), ratio, trivial)


@dataclass
class ConvergenceRow:
    epsilon: float
    estimate: float
    predicted: float
    rel_gap: float
    ks: float
    mgf_gap: dict


@dataclass
class ConvergenceReport:
    rows: list
    degenerate: bool

    @property
    def gaps(self) -> list:
        return [r.rel_gap for r in self.rows]

    @property
    def ks(self) -> list:
        return [r.ks for r in self.rows]

    @property
    def gap_decreasing(self) -> bool:
        return strictly_decreasing(self.gaps)

    @property
    def ks_decreasing(self) -> bool:
        return strictly_decreasing(self.ks)

    @property
    def final_gap(self) -> float:
        return self.rows[-1].rel_gap


def convergence_report(points: Sequence[SweepPoint], prediction: HTPrediction) -> ConvergenceReport:
    pts = _by_epsilon(points)
    m = prediction.limit_mean
    rows = []
    for p in pts:
        if prediction.degenerate:
            rows.append(ConvergenceRow(p.epsilon, p.scaled_mean, m, math.nan, math.nan, {}))
            continue
        gaps = {}
        for th, val in p.mgf.items():
            try:
                gaps[th] = val - exponential_reference(m, th * p.scale)
            except ValueError:
                gaps[th] = math.nan
        rows.append(ConvergenceRow(p.epsilon, p.scaled_mean, m, abs(p.scaled_mean - m) / m, p.ks, gaps))
    return ConvergenceReport(rows, prediction.degenerate)


@dataclass
class ResidualReport:
    epsilons: list
    scaled: dict  # theta -> list of |residual| / eps^2

    def decreasing(self, theta: float) -> bool:
        return strictly_decreasing(self.scaled[theta])


def residual_report(points: Sequence[SweepPoint]) -> ResidualReport:
    pts = _by_epsilon(points)
    thetas = sorted({th for p in pts for th in p.residual if th != 0.0})
    scaled = {th: [abs(p.residual[th]) / p.epsilon**2 for p in pts] for th in thetas}
    return ResidualReport([p.epsilon for p in pts], scaled)


def birth_death_mean(mu: float, epsilon: float) -> float:
    """Exact ``eps E[q]`` for the Bernoulli single server with arrival rate mu - eps."""
    lam = mu - epsilon
    rho = lam * (1.0 - mu) / (mu * (1.0 - lam))
    return epsilon * rho / (1.0 - rho)
