import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from htq.analysis import (
    InsufficientSweepError,
    SweepPoint,
    birth_death_mean,
    convergence_report,
    exponential_reference,
    ks_lattice,
    ks_samples,
    lattice_step,
    predict_gs,
    predict_lb,
    predict_single,
    predict_switch,
    residual_report,
    ssc_report,
)

R2 = 2**-0.5


def test_predict_single():
    assert predict_single(0.25, 0.25).limit_mean == 0.25
    p = predict_single(0.0, 0.0)
    assert p.limit_mean == 0.0 and p.degenerate


def test_predict_lb_examples():
    assert predict_lb(2, 0.25, np.diag([0.25, 0.25])).limit_mean == pytest.approx(0.1875)
    assert predict_lb(2, 0.25, [[0.25, 0.1875], [0.1875, 0.25]]).limit_mean == pytest.approx(0.28125)
    assert predict_lb(2, 0.25, np.eye(2)).direction.tolist() == [1.0, 1.0]


@given(st.floats(0, 5), st.floats(0, 5))
def test_lb_reduces_to_single(va, vs):
    assert predict_lb(1, va, [[vs]]).limit_mean == predict_single(va, vs).limit_mean


def test_predict_gs_examples():
    v = 0.21
    assert predict_gs([R2, R2], np.diag([v, v]), 0.0).limit_mean == pytest.approx(v / 2)
    assert predict_gs([R2, R2], np.zeros((2, 2)), 0.125).limit_mean == pytest.approx(0.0625)
    assert predict_gs([1.0], [[0.3]], 0.1).limit_mean == pytest.approx(0.2)


@given(st.floats(0, 3), st.floats(0, 3))
def test_gs_one_dimensional(va, vb):
    assert predict_gs([1.0], [[va]], vb).limit_mean == pytest.approx((va + vb) / 2, abs=1e-15)


def test_predict_switch_examples():
    v = 0.25
    cov = np.zeros((4, 4))
    cov[0, 0] = cov[1, 1] = v
    assert predict_switch(2, cov).limit_mean == pytest.approx(v / 2)
    assert predict_switch(2, np.zeros((4, 4))).limit_mean == 0.0
    cov[:2, :2] = v
    assert predict_switch(2, cov).limit_mean == pytest.approx(v)


def test_prediction_input_checks():
    with pytest.raises(ValueError):
        predict_single(-1, 0)
    with pytest.raises(ValueError):
        predict_lb(2, 0.1, [[1, 2], [0, 1]])
    with pytest.raises(ValueError):
        predict_gs([R2, R2], [[1, 2], [2, 1]], 0)


def test_exponential_reference():
    assert exponential_reference(0.25, 0) == 1.0
    assert exponential_reference(0.25, 2) == 2.0
    with pytest.raises(ValueError):
        exponential_reference(0.25, 4)


@pytest.mark.parametrize("theta", [-2.0, 1.0, 1.5])
def test_exponential_reference_monte_carlo(theta):
    rng = np.random.default_rng(99)
    m = 0.25
    x = np.exp(theta * rng.exponential(m, 1_000_000))
    se = x.std(ddof=1) / math.sqrt(len(x))
    assert abs(x.mean() - exponential_reference(m, theta)) < 5 * se


def test_birth_death_means():
    assert birth_death_mean(0.5, 0.1) == pytest.approx(0.2)
    assert birth_death_mean(0.5, 0.02) == pytest.approx(0.24)


def _pts(vals, eps=(0.2, 0.1, 0.05, 0.02)):
    return [SweepPoint(e, 0.25, v / e**2, {}) for e, v in zip(eps, vals)]


def test_ssc_report():
    r = ssc_report(_pts([0.02, 0.01, 0.004, 0.001]))
    assert r.decreasing and r.passed and r.ratio == pytest.approx(0.05)
    flat = ssc_report(_pts([0.02, 0.019, 0.02, 0.021]))
    assert not flat.passed
    zero = ssc_report(_pts([0, 0, 0, 0]))
    assert zero.trivial and zero.passed
    with pytest.raises(InsufficientSweepError):
        ssc_report(_pts([1, 2]))


def test_convergence_report_single_server_exact():
    eps = [0.2, 0.1, 0.05, 0.02]
    pts = [SweepPoint(e, birth_death_mean(0.5, e), 0.0, {}) for e in eps]
    rep = convergence_report(pts, predict_single(0.25, 0.25))
    assert rep.rows[1].rel_gap == pytest.approx(0.2)
    assert rep.gap_decreasing
    assert rep.final_gap == pytest.approx(0.0392, abs=1e-3)


def test_convergence_report_degenerate():
    pts = [SweepPoint(e, 0.0, 0.0, {1.0: 1.0}) for e in (0.2, 0.1, 0.05)]
    rep = convergence_report(pts, predict_single(0, 0))
    assert rep.degenerate and all(math.isnan(g) for g in rep.gaps)


def test_mgf_gap_uses_scale():
    pts = [SweepPoint(e, 0.1, 0.0, {1.0: 1.25}, scale=2.0) for e in (0.2, 0.1, 0.05)]
    rep = convergence_report(pts, predict_single(0.1, 0.1))
    assert rep.rows[0].mgf_gap[1.0] == pytest.approx(0.0)


def test_ks_continuity_correction():
    # geometric lattice law with exponential-matching tail; the half-step shift shrinks the distance
    eps, rho = 0.02, 0.923
    k = np.arange(3000)
    probs = (1 - rho) * rho**k
    probs /= probs.sum()
    mean = eps * rho / (1 - rho)
    raw = ks_lattice(eps * k, probs, 0.25)
    shifted = ks_lattice(eps * k, probs, 0.25, step=eps)
    assert shifted < raw
    rng = np.random.default_rng(1)
    samples = eps * rng.geometric(1 - rho, 400_000) - eps
    assert ks_samples(samples, 0.25, eps) == pytest.approx(shifted, abs=0.01)
    assert mean > 0


def test_lattice_step():
    assert lattice_step([R2, R2], [1, 1], 0.1) == pytest.approx(0.05)
    assert lattice_step([1.0], [1.0], 0.02) == pytest.approx(0.02)


def test_residual_report():
    pts = [SweepPoint(e, 0, 0, {}, residual={1.0: e**3, 0.0: 0.0}) for e in (0.2, 0.1, 0.05)]
    rep = residual_report(pts)
    assert rep.decreasing(1.0)
    assert 0.0 not in rep.scaled
