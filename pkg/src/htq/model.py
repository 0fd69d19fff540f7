"""One-slot queue dynamics.

Within a slot the queues are observed, the control is solved, arrivals join and
then the potential service is applied, so a job can leave in the slot it
arrived. Queue lengths are kept as exact integers throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class ConfigurationError(ValueError):
    """Raised for malformed systems, distributions or configs."""


class InvariantViolation(RuntimeError):
    """Raised when a simulated slot breaks the queue dynamics."""


def as_int_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ConfigurationError(f"{name} must hold integers: {arr!r}")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class SlotRecord:
    q: np.ndarray
    a: np.ndarray
    s: np.ndarray
    u: np.ndarray
    q_next: np.ndarray
    channel_state: Optional[str] = None

    def check(self, a_max: Optional[int] = None, s_max: Optional[int] = None) -> None:
        """Assert every slot invariant; raises InvariantViolation."""
        if np.any(self.q < 0) or np.any(self.q_next < 0):
            raise InvariantViolation("negative queue length")
        if not np.array_equal(self.q_next, self.q + self.a - self.s + self.u):
            raise InvariantViolation("q_next != q + a - s + u")
        if np.any(self.u < 0) or np.any(self.u > self.s):
            raise InvariantViolation("unused service outside [0, s]")
        if np.any(self.q_next * self.u != 0):
            raise InvariantViolation("q_next * u != 0")
        if a_max is not None and np.any(self.a > a_max):
            raise InvariantViolation(f"arrival exceeds A_max={a_max}")
        if s_max is not None and np.any(self.s > s_max):
            raise InvariantViolation(f"service exceeds S_max={s_max}")


def step(q, a, s, channel_state: Optional[str] = None) -> SlotRecord:
    """Advance the queues by one slot.

    ``q_next = max(q + a - s, 0)`` componentwise and the unused service is
    whatever potential service found no job, ``u = q_next - q - a + s``.
    """
    q = as_int_vector(q, "q")
    a = as_int_vector(a, "a")
    s = as_int_vector(s, "s")
    if not (q.shape == a.shape == s.shape):
        raise ConfigurationError(
            f"dimension mismatch: q{q.shape}, a{a.shape}, s{s.shape}"
        )
    if np.any(q < 0) or np.any(a < 0) or np.any(s < 0):
        raise ConfigurationError("q, a and s must be nonnegative")
    q_next = np.maximum(q + a - s, 0)
    u = q_next - q - a + s
    return SlotRecord(q=q, a=a, s=s, u=u, q_next=q_next, channel_state=channel_state)
