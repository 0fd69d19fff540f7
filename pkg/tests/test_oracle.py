import numpy as np
import pytest

from htq.capacity import UnsupportedScaleError
from htq.oracle import build_and_solve, exact_moments, routing_mixture
from htq.stochastic import build_family
from htq.systems import single_server
from systems_fixtures import gs, lb, single


@pytest.fixture(scope="module")
def chain01():
    return build_and_solve(single(0.1), 200)


def test_single_server_anchors(chain01):
    m = exact_moments(chain01)
    assert m.mean_q[0] == pytest.approx(2.0, abs=1e-6)
    assert m.prob_empty == pytest.approx(1 / 3, abs=1e-6)
    assert m.unused_sum_mean == pytest.approx(0.1, abs=1e-8)
    assert chain01.boundary_mass < 1e-8 and not chain01.truncation_warning


def test_single_server_mgf_closed_form(chain01):
    m = exact_moments(chain01, theta_grid=(1.0, -2.0))
    lam, mu, eps = 0.4, 0.5, 0.1
    rho = lam * (1 - mu) / (mu * (1 - lam))
    for th in (1.0, -2.0):
        closed = (1 - rho) / (1 - rho * np.exp(th * eps))
        assert m.mgf[th] == pytest.approx(closed, rel=1e-10)


def test_balance_and_normalization(chain01):
    assert chain01.balance_residual < 1e-10
    assert abs(chain01.pi.sum() - 1) < 1e-12
    assert np.all(chain01.pi >= 0)
    rows = np.asarray(chain01.P.sum(axis=1)).ravel()
    assert np.max(np.abs(rows - 1)) < 1e-12


def test_zero_arrivals_point_mass():
    s = single_server(build_family("bernoulli", None, [0.5]), "pmf", {"support": [0], "probs": [1.0]}, 0.5 - 1e-13)
    ch = build_and_solve(s, 10)
    assert ch.pi[0] == pytest.approx(1.0)


def test_jsq_symmetric():
    m = exact_moments(build_and_solve(lb(0.2), 50))
    assert abs(m.mean_q[0] - m.mean_q[1]) < 1e-9
    assert m.unused_sum_mean == pytest.approx(0.2, abs=1e-8)


@pytest.mark.parametrize("policy", ["jsq", "po2", "random-uniform"])
def test_lb_identity(policy):
    eps = 0.2
    ch = build_and_solve(lb(eps, 2, policy), 60 if policy != "random-uniform" else 120)
    m = exact_moments(ch)
    assert m.unused_sum_mean == pytest.approx(eps, abs=1e-6)


def test_gs_identity():
    ch = build_and_solve(gs(0.2), 50)
    m = exact_moments(ch)
    assert m.unused_identity == pytest.approx(0.2, abs=1e-6)
    assert ch.boundary_mass < 1e-8


def test_truncation_flag():
    ch = build_and_solve(single(0.02), 30)
    assert ch.truncation_warning and ch.boundary_mass > 1e-8


def test_state_explosion():
    with pytest.raises(UnsupportedScaleError):
        build_and_solve(lb(0.1, 3), 300)


def test_routing_mixture_po2():
    mix = dict((i, p) for p, i in routing_mixture("po2", np.array([0, 9, 9])))
    assert mix == pytest.approx({0: 2 / 3, 1: 1 / 6, 2: 1 / 6})
    assert sum(p for p, _ in routing_mixture("jsq", np.array([1, 1, 3]))) == pytest.approx(1.0)


def test_mgf_stable_under_oversized_cap():
    # far states carry solver round-off that exponential weights would amplify
    s = lb(0.2)
    small = exact_moments(build_and_solve(s, 40), theta_grid=(1.0,))
    big = exact_moments(build_and_solve(s, 150), theta_grid=(1.0,))
    assert big.mgf[1.0] == pytest.approx(small.mgf[1.0], rel=1e-9)
    assert big.refine_steps > 1
