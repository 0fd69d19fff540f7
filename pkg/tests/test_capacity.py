import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from htq.capacity import (
    Facet,
    InfeasibleParametrization,
    NotOnBoundaryError,
    UnsupportedScaleError,
    b_distribution,
    capacity_region,
    check_crp,
    enumerate_hull_facets_bruteforce,
    ht_arrival_mean,
    minkowski_points,
)
from htq.policies import ScheduleSet
from htq.stochastic import ChannelDist

R2 = 1 / np.sqrt(2)
ONE = ScheduleSet({"t": [[0, 0], [1, 0], [0, 1]]})
TWO = ScheduleSet({"t1": [[0, 0], [2, 0], [0, 2]], "t2": [[0, 0], [1, 0], [0, 1]]})
TWO_CH = ChannelDist(("t1", "t2"), np.array([0.5, 0.5]))


def test_single_state_facet():
    facets = capacity_region(ONE, ChannelDist.single("t"))
    assert len(facets) == 1
    assert facets[0].c == pytest.approx([R2, R2], abs=1e-9)
    assert facets[0].b == pytest.approx(0.70711, abs=1e-5)


def test_two_state_facet():
    facets = capacity_region(TWO, TWO_CH)
    assert len(facets) == 1
    assert facets[0].c == pytest.approx([R2, R2], abs=1e-9)
    assert facets[0].b == pytest.approx(1.5 / np.sqrt(2), abs=1e-12)
    assert round(facets[0].b, 5) == 1.06066


def test_interval():
    facets = capacity_region(ScheduleSet({"t": [[0], [1], [2]]}), ChannelDist.single("t"))
    assert len(facets) == 1 and facets[0].c.tolist() == [1.0] and facets[0].b == 2.0


def test_b_distribution_two_state():
    bd = b_distribution([R2, R2], TWO, TWO_CH)
    assert bd.values == pytest.approx([1.41421, 0.70711], abs=1e-5)
    assert bd.mean == pytest.approx(1.06066, abs=1e-5)
    assert bd.variance == pytest.approx(0.125, abs=1e-12)


def test_b_distribution_single_state():
    assert b_distribution([R2, R2], ONE, ChannelDist.single("t")).variance == 0.0


SYSTEMS = [
    (ONE, ChannelDist.single("t")),
    (TWO, TWO_CH),
    (ScheduleSet({"t": [[0, 0], [1, 0], [0, 1], [1, 1]]}), ChannelDist.single("t")),
    (ScheduleSet({"a": [[0, 0], [3, 0], [0, 1], [2, 1], [2, 0], [0, 1]], "b": [[0, 0], [1, 0], [0, 2]]}),
     ChannelDist(("a", "b"), np.array([0.3, 0.7]))),
    (ScheduleSet({"t": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0], [0, 1, 1]]}), ChannelDist.single("t")),
]


@pytest.mark.parametrize("S, ch", SYSTEMS)
def test_mean_of_B_equals_offset(S, ch):
    facets = capacity_region(S, ch)
    pts = minkowski_points(S, ch)
    for f in facets:
        assert b_distribution(f.c, S, ch).mean == pytest.approx(f.b, abs=1e-9)
        assert np.all(pts @ f.c <= f.b + 1e-9)
        assert np.any(np.abs(pts @ f.c - f.b) <= 1e-9)


@pytest.mark.parametrize("S, ch", [s for s in SYSTEMS if s[0].n == 2])
def test_matches_bruteforce_hull(S, ch):
    pts = minkowski_points(S, ch)
    brute = [(c, b) for c, b in enumerate_hull_facets_bruteforce(pts) if b > 1e-9]
    facets = capacity_region(S, ch)
    assert len(brute) == len(facets)
    for f in facets:
        assert any(np.allclose(f.c, c, atol=1e-8) and abs(f.b - b) < 1e-9 for c, b in brute)


def test_unsupported_dimension():
    S = ScheduleSet({"t": np.vstack([np.zeros(5, dtype=int), np.eye(5, dtype=int)])})
    with pytest.raises(UnsupportedScaleError):
        capacity_region(S, ChannelDist.single("t"))


def test_ht_arrival_mean():
    c = np.array([R2, R2])
    assert ht_arrival_mean([0.75, 0.75], c, 0.1) == pytest.approx([0.67929, 0.67929], abs=1e-5)
    assert ht_arrival_mean([0.75, 0.75], c, 0.0).tolist() == [0.75, 0.75]
    with pytest.raises(InfeasibleParametrization):
        ht_arrival_mean([1.5, 0.0], c, 0.5)


def test_crp_holds_on_facet():
    facets = capacity_region(TWO, TWO_CH)
    rep = check_crp([0.75, 0.75], facets)
    assert rep.holds and rep.facet_index == 0


def test_crp_fails_at_vertex():
    facets = capacity_region(ScheduleSet({"t": [[0, 0], [1, 0], [0, 1], [1, 1]]}), ChannelDist.single("t"))
    rep = check_crp([1.0, 1.0], facets)
    assert not rep.holds and len(rep.binding) == 2


@pytest.mark.parametrize("r", [[0.5, 0.5], [1.0, 1.0]])
def test_crp_off_boundary(r):
    with pytest.raises(NotOnBoundaryError):
        check_crp(r, capacity_region(TWO, TWO_CH))


def test_facet_validation():
    with pytest.raises(ValueError):
        Facet(np.array([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        Facet(np.array([1.0, 0.0]), 0.0)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=5),
       st.floats(0.05, 0.95))
def test_random_regions_mean_of_B(vecs, psi):
    sets = ScheduleSet.from_maximal({"a": vecs, "b": [[1, 1]]})
    ch = ChannelDist(("a", "b"), np.array([psi, 1 - psi]))
    facets = capacity_region(sets, ch)
    for f in facets:
        assert np.all(f.c >= 0)
        assert b_distribution(f.c, sets, ch).mean == pytest.approx(f.b, abs=1e-9)
