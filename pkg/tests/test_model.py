import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from htq.model import ConfigurationError, InvariantViolation, SlotRecord, step


@pytest.mark.parametrize(
    "q, a, s, q_next, u",
    [
        ([3], [1], [2], [2], [0]),
        ([0], [1], [3], [0], [2]),
        ([2, 0], [0, 1], [3, 0], [0, 1], [1, 0]),
    ],
)
def test_step_examples(q, a, s, q_next, u):
    rec = step(q, a, s)
    assert rec.q_next.tolist() == q_next
    assert rec.u.tolist() == u
    rec.check()


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        step([1, 2], [1], [0, 0])


def test_negative_input_rejected():
    with pytest.raises(ConfigurationError):
        step([1], [-1], [0])


def test_check_catches_broken_record():
    bad = SlotRecord(q=np.array([1]), a=np.array([0]), s=np.array([1]), u=np.array([1]), q_next=np.array([1]))
    with pytest.raises(InvariantViolation):
        bad.check()


def test_check_enforces_bounds():
    rec = step([0], [3], [1])
    with pytest.raises(InvariantViolation):
        rec.check(a_max=2)


vec = st.lists(st.integers(0, 50), min_size=1, max_size=6)


@given(st.data())
def test_step_invariants(data):
    n = data.draw(st.integers(1, 6))
    q, a, s = (data.draw(st.lists(st.integers(0, 50), min_size=n, max_size=n)) for _ in range(3))
    rec = step(q, a, s)
    rec.check()
    assert np.all(rec.q_next * rec.u == 0)
    assert np.all((0 <= rec.u) & (rec.u <= rec.s))
    assert np.array_equal(rec.q_next, np.maximum(np.array(q) + a - np.array(s), 0))
    again = step(q, a, s)
    assert np.array_equal(again.q_next, rec.q_next) and np.array_equal(again.u, rec.u)
