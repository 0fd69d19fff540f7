"""Exact stationary analysis of small systems on a truncated state space.

Randomized tie-breaks enter the transition kernel as exact mixtures. Transitions
that would push a queue past ``q_cap`` are held at the cap; the resulting bias
is reported through the boundary mass.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .capacity import UnsupportedScaleError
from .policies import maxweight_candidates
from .systems import SystemModel

MAX_STATES = 10_000_000
REFINE_TOL = 1e-13
REFINE_MAX_STEPS = 200_000
BOUNDARY_THRESHOLD = 1e-8

log = logging.getLogger(__name__)


@dataclass
class TruncatedChain:
    system: SystemModel
    q_cap: int
    states: np.ndarray
    P: sp.csr_matrix = field(repr=False)
    pi: np.ndarray = field(repr=False)
    # one row per (state, outcome) pair
    t_state: np.ndarray = field(repr=False)
    t_prob: np.ndarray = field(repr=False)
    t_a: np.ndarray = field(repr=False)
    t_s: np.ndarray = field(repr=False)
    t_u: np.ndarray = field(repr=False)
    saturated_mass: float = 0.0
    boundary_mass: float = 0.0
    balance_residual: float = 0.0
    truncation_warning: bool = False


@dataclass
class ExactMoments:
    epsilon: float
    scaled_mean: float
    scaled_second_moment: float
    perp_sq: float
    unused_sum_mean: float
    unused_weighted_mean: float
    unused_sum_sq_mean: float
    weighted_service_mean: float
    unused_identity: float
    mean_q: np.ndarray
    prob_empty: float
    mgf: dict
    residual: dict
    scaled_values: np.ndarray = field(repr=False)
    scaled_probs: np.ndarray = field(repr=False)
    refine_steps: int = 0


def routing_mixture(policy: str, q: np.ndarray) -> list[tuple[float, int]]:
    """Exact law of the routing target for one observed state."""
    n = len(q)
    if policy == "jsq":
        ties = np.flatnonzero(q == q.min())
        return [(1.0 / len(ties), int(i)) for i in ties]
    if policy == "random-uniform":
        return [(1.0 / n, i) for i in range(n)]
    if policy == "po2":
        out: dict[int, float] = {}
        w = 1.0 / (n * (n - 1))
        for i1, i2 in itertools.permutations(range(n), 2):
            if q[i1] == q[i2]:
                out[i1] = out.get(i1, 0.0) + w / 2
                out[i2] = out.get(i2, 0.0) + w / 2
            else:
                t = i1 if q[i1] < q[i2] else i2
                out[t] = out.get(t, 0.0) + w
        return [(p, i) for i, p in sorted(out.items())]
    raise ValueError(f"no routing mixture for policy {policy!r}")


def schedule_mixture(system: SystemModel, q: np.ndarray) -> list[tuple[float, np.ndarray]]:
    out = []
    for label, psi in zip(system.channels.states, system.channels.probs):
        table = system.schedules[label]
        best = maxweight_candidates(q, table)
        for idx in best:
            out.append((psi / len(best), table[idx]))
    return out


def _state_outcomes(system: SystemModel, q: np.ndarray):
    """Arrays (prob, a, s) of every outcome of one slot from state q."""
    n = system.n
    arr = system.arrivals
    if system.kind in ("single", "lb"):
        srv = system.services
        probs, As, Ss = [], [], []
        for p_route, target in routing_mixture(system.policy, q):
            a = np.zeros((arr.support.shape[0], n), dtype=np.int64)
            a[:, target] = arr.support[:, 0]
            pa = p_route * arr.probs
            probs.append(np.outer(pa, srv.probs).reshape(-1))
            As.append(np.repeat(a, srv.support.shape[0], axis=0))
            Ss.append(np.tile(srv.support, (arr.support.shape[0], 1)))
    else:
        probs, As, Ss = [], [], []
        for p_sched, s in schedule_mixture(system, q):
            probs.append(p_sched * arr.probs)
            As.append(arr.support)
            Ss.append(np.tile(s, (arr.support.shape[0], 1)))
    return np.concatenate(probs), np.vstack(As), np.vstack(Ss)


def build_and_solve(system: SystemModel, q_cap: int, threshold: float = BOUNDARY_THRESHOLD) -> TruncatedChain:
    n = system.n
    size = (q_cap + 1) ** n
    if size > MAX_STATES:
        raise UnsupportedScaleError(f"{size} states exceed the oracle limit of {MAX_STATES}")
    radix = (q_cap + 1) ** np.arange(n)[::-1]
    states = np.array(list(itertools.product(range(q_cap + 1), repeat=n)), dtype=np.int64).reshape(-1, n)
    rows, cols, vals = [], [], []
    ts, tp, ta, tss, tu = [], [], [], [], []
    saturated = np.zeros(size)
    for idx, q in enumerate(states):
        p, a, s = _state_outcomes(system, q)
        keep = p > 0
        p, a, s = p[keep], a[keep], s[keep]
        nxt = np.maximum(q + a - s, 0)
        u = nxt - q - a + s
        over = np.any(nxt > q_cap, axis=1)
        saturated[idx] = p[over].sum()
        nxt = np.minimum(nxt, q_cap)
        rows.append(np.full(len(p), idx))
        cols.append(nxt @ radix)
        vals.append(p)
        ts.append(np.full(len(p), idx))
        tp.append(p)
        ta.append(a)
        tss.append(s)
        tu.append(u)
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    row_sums = np.asarray(P.sum(axis=1)).reshape(-1)
    if np.max(np.abs(row_sums - 1.0)) > 1e-12:
        raise RuntimeError(f"transition rows do not sum to one (max error {np.max(np.abs(row_sums - 1.0))})")
    pi = _stationary(P)
    residual = float(np.max(np.abs(pi @ P - pi)))
    margin = max(system.a_max, system.s_max)
    boundary = float(pi[np.any(states >= q_cap - margin, axis=1)].sum())
    return TruncatedChain(
        system=system, q_cap=q_cap, states=states, P=P, pi=pi,
        t_state=np.concatenate(ts), t_prob=np.concatenate(tp), t_a=np.vstack(ta),
        t_s=np.vstack(tss), t_u=np.vstack(tu),
        saturated_mass=float(pi @ saturated), boundary_mass=boundary,
        balance_residual=residual, truncation_warning=boundary > threshold,
    )


def _stationary(P: sp.csr_matrix) -> np.ndarray:
    N = P.shape[0]
    if N == 1:
        return np.ones(1)
    A = (P.T - sp.identity(N, format="csr")).tolil()
    A[0, :] = np.ones(N)
    rhs = np.zeros(N)
    rhs[0] = 1.0
    pi = spla.spsolve(A.tocsc(), rhs)
    # a couple of power steps clean up solver round-off
    for _ in range(3):
        pi = np.clip(pi, 0.0, None)
        pi = pi / pi.sum()
        pi = pi @ P
    return pi / pi.sum()


def _settle(chain: TruncatedChain, weights: np.ndarray) -> tuple[np.ndarray, int]:
    """Power steps until ``pi @ weights`` stops moving.

    The direct solve leaves round-off near 1e-16 on far states whose true mass is many orders
    smaller. Exponential weights can amplify that into a visible MGF error. A power step sums
    nonnegative terms, so it is accurate relative to each entry, and the drift of the chain
    carries the spurious far mass back toward the origin.
    """
    pi = chain.pi
    prev = pi @ weights
    PT = None
    for step in range(REFINE_MAX_STEPS + 1):
        if step:
            pi = PT @ pi
            pi = pi / pi.sum()
            cur = pi @ weights
            if np.max(np.abs(cur - prev) / np.abs(cur)) < REFINE_TOL:
                return pi, step
            prev = cur
        elif PT is None:
            PT = chain.P.T.tocsr()
    log.warning("MGF weights did not settle after %d power steps", REFINE_MAX_STEPS)
    return pi, REFINE_MAX_STEPS


def exact_moments(
    chain: TruncatedChain,
    c: Optional[np.ndarray] = None,
    epsilon: Optional[float] = None,
    theta_grid: Sequence[float] = (-1.0, 0.0, 1.0),
) -> ExactMoments:
    system = chain.system
    c = system.c if c is None else np.asarray(c, dtype=float)
    eps = system.epsilon if epsilon is None else float(epsilon)
    x = chain.states @ c
    thetas = [float(th) for th in theta_grid]
    weights = np.exp(np.outer(eps * x, thetas)) if thetas else np.ones((len(x), 1))
    pi, steps = _settle(chain, weights)
    perp = chain.states - np.outer(x, c)
    w = pi[chain.t_state] * chain.t_prob
    usum = chain.t_u.sum(axis=1)
    cu = chain.t_u @ c
    cs = chain.t_s @ c
    ca = chain.t_a @ c
    xt = x[chain.t_state]
    mgf, residual = {}, {}
    for th in theta_grid:
        th = float(th)
        mgf[th] = float(pi @ np.exp(th * eps * x))
        left = np.exp(th * eps * xt) * (1.0 - np.exp(th * eps * (ca - cs)))
        right = 1.0 - np.exp(-th * eps * cu)
        residual[th] = float(w @ (left - right))
    unused_weighted = float(w @ cu)
    weighted_service = float(w @ cs)
    if system.kind in ("single", "lb"):
        identity = float(w @ usum)
    else:
        identity = unused_weighted + system.b - weighted_service
    values, inverse = np.unique(np.round(eps * x, 12), return_inverse=True)
    probs = np.bincount(inverse, weights=pi)
    zero = np.all(chain.states == 0, axis=1)
    return ExactMoments(
        epsilon=eps,
        scaled_mean=float(pi @ (eps * x)),
        scaled_second_moment=float(pi @ (eps * x) ** 2),
        perp_sq=float(pi @ np.sum(perp**2, axis=1)),
        unused_sum_mean=float(w @ usum),
        unused_weighted_mean=unused_weighted,
        unused_sum_sq_mean=float(w @ usum**2),
        weighted_service_mean=weighted_service,
        unused_identity=identity,
        mean_q=pi @ chain.states,
        prob_empty=float(pi[zero].sum()),
        mgf=mgf,
        residual=residual,
        scaled_values=values,
        scaled_probs=probs,
        refine_steps=steps,
    )
