import warnings

import numpy as np
import pytest

from htq.model import ConfigurationError
from htq.stochastic import build_family
from htq.systems import SystemModel, load_balancing, row_indicator, single_server
from systems_fixtures import gs, lb, single, switch


def test_single_server_rate():
    s = single(0.1)
    assert s.arrivals.mean() == pytest.approx([0.4])
    assert s.b == 0.5


def test_single_server_epsilon_bounds():
    with pytest.raises(ConfigurationError, match="epsilon"):
        single(0.5)


def test_lb_epsilon_bound():
    with pytest.raises(ConfigurationError, match="mu_sum"):
        load_balancing(build_family("bernoulli", None, [0.5, 0.5]), "three-point", {}, 1.0)


def test_lb_direction():
    s = lb(0.1)
    assert s.c == pytest.approx([2**-0.5] * 2)
    assert s.direction.tolist() == [1.0, 1.0]
    assert s.arrivals.mean() == pytest.approx([0.9])


def test_po2_non_identical_warns():
    srv = build_family("bernoulli", None, [0.3, 0.7])
    with pytest.warns(RuntimeWarning, match="identical"):
        load_balancing(srv, "bernoulli", None, 0.1, policy="po2")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_balancing(build_family("bernoulli", None, [0.5, 0.5]), "bernoulli", None, 0.1, policy="po2")


def test_policy_kind_compatibility():
    s = single(0.1)
    with pytest.raises(ConfigurationError, match="policy"):
        SystemModel(kind="single", policy="maxweight", epsilon=0.1, arrivals=s.arrivals, services=s.services,
                    c=np.ones(1), direction=np.ones(1))


def test_gs_parametrization():
    s = gs(0.1)
    assert s.arrivals.mean() == pytest.approx([0.67929, 0.67929], abs=1e-5)
    assert s.b == pytest.approx(1.06066, abs=1e-5)


def test_switch_parametrization():
    s = switch(0.1, 2)
    assert s.n == 4
    assert s.arrivals.mean() == pytest.approx([0.5 - 0.1 / np.sqrt(2)] * 2 + [0, 0])
    assert s.c @ s.r == pytest.approx(s.b)
    assert row_indicator(3)[:3] == pytest.approx([3**-0.5] * 3)


def test_q0_validation():
    with pytest.raises(ConfigurationError):
        single(0.1).with_q0([-1])
