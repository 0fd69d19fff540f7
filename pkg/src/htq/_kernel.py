"""Compiled slot loop.

Consumes ``UNIFORMS_PER_SLOT`` pre-drawn uniforms per slot in a fixed layout:
0 arrivals, 1 services or channel state, 2-4 policy randomness. The pure
Python engine in ``simulate.run_reference`` follows the same layout.
"""

import numpy as np
from numba import njit

UNIFORMS_PER_SLOT = 5

# statistic columns accumulated per batch
S_SCALED = 0  # eps <c, q>
S_PERP_SQ = 1  # ||q_perp||^2
S_U_SUM = 2  # sum_i u_i
S_U_C = 3  # <c, u>
S_S_C = 4  # <c, s>
S_U_SUM_SQ = 5  # (sum_i u_i)^2
S_A_C = 6  # <c, a>
S_SCALED_SQ = 7  # (eps <c, q>)^2
N_STATS = 8

POLICY_CODES = {"jsq": 0, "po2": 1, "random-uniform": 2, "maxweight": 3, "switch-maxweight": 3}


@njit(cache=True)
def _draw(cdf, u):
    k = np.searchsorted(cdf, u, side="right")
    if k >= cdf.shape[0]:
        k = cdf.shape[0] - 1
    return k


@njit(cache=True)
def _pick(k, u):
    j = int(u * k)
    if j > k - 1:
        j = k - 1
    return j


@njit(cache=True)
def run_chunk(
    policy, q, uniforms, k0, warmup, batch_len, thin,
    arr_support, arr_cdf, srv_support, srv_cdf,
    ch_cdf, sched, sched_start,
    c, eps, thetas,
    acc, mgf_acc, left_acc, right_acc, max_expo,
    samples, n_samples, violations,
):
    n = q.shape[0]
    m = thetas.shape[0]
    a = np.zeros(n, dtype=np.int64)
    s = np.zeros(n, dtype=np.int64)
    u = np.zeros(n, dtype=np.int64)
    for r in range(uniforms.shape[0]):
        k = k0 + r
        # services or channel + schedule are decided on the observed q
        if policy == 3:
            t = _draw(ch_cdf, uniforms[r, 1])
            lo = sched_start[t]
            hi = sched_start[t + 1]
            best = -1
            count = 0
            for row in range(lo, hi):
                w = 0
                for i in range(n):
                    w += sched[row, i] * q[i]
                if w > best:
                    best = w
                    count = 1
                elif w == best:
                    count += 1
            j = _pick(count, uniforms[r, 2])
            seen = 0
            for row in range(lo, hi):
                w = 0
                for i in range(n):
                    w += sched[row, i] * q[i]
                if w == best:
                    if seen == j:
                        for i in range(n):
                            s[i] = sched[row, i]
                        break
                    seen += 1
            ka = _draw(arr_cdf, uniforms[r, 0])
            for i in range(n):
                a[i] = arr_support[ka, i]
        else:
            ks = _draw(srv_cdf, uniforms[r, 1])
            for i in range(n):
                s[i] = srv_support[ks, i]
                a[i] = 0
            total = arr_support[_draw(arr_cdf, uniforms[r, 0]), 0]
            if policy == 0:
                qmin = q[0]
                for i in range(1, n):
                    if q[i] < qmin:
                        qmin = q[i]
                count = 0
                for i in range(n):
                    if q[i] == qmin:
                        count += 1
                target = 0
                if count == 1:
                    for i in range(n):
                        if q[i] == qmin:
                            target = i
                else:
                    j = _pick(count, uniforms[r, 2])
                    seen = 0
                    for i in range(n):
                        if q[i] == qmin:
                            if seen == j:
                                target = i
                                break
                            seen += 1
            elif policy == 1:
                i1 = _pick(n, uniforms[r, 2])
                i2 = _pick(n - 1, uniforms[r, 3])
                if i2 >= i1:
                    i2 += 1
                if q[i1] < q[i2]:
                    target = i1
                elif q[i2] < q[i1]:
                    target = i2
                else:
                    lo_i = min(i1, i2)
                    hi_i = max(i1, i2)
                    target = lo_i if _pick(2, uniforms[r, 4]) == 0 else hi_i
            else:
                target = _pick(n, uniforms[r, 2])
            a[target] = total

        # dynamics
        bad = False
        for i in range(n):
            nxt = q[i] + a[i] - s[i]
            if nxt < 0:
                nxt = 0
            u[i] = nxt - q[i] - a[i] + s[i]
            if u[i] < 0 or u[i] > s[i] or nxt * u[i] != 0:
                bad = True
        if bad:
            if violations[0] == 0:
                violations[1] = k
            violations[0] += 1

        if k >= warmup:
            j_meas = k - warmup
            bidx = j_meas // batch_len
            x = 0.0
            cu = 0.0
            cs = 0.0
            ca = 0.0
            usum = 0
            for i in range(n):
                x += c[i] * q[i]
                cu += c[i] * u[i]
                cs += c[i] * s[i]
                ca += c[i] * a[i]
                usum += u[i]
            perp = 0.0
            for i in range(n):
                d = q[i] - x * c[i]
                perp += d * d
            acc[bidx, 0] += eps * x
            acc[bidx, 1] += perp
            acc[bidx, 2] += usum
            acc[bidx, 3] += cu
            acc[bidx, 4] += cs
            acc[bidx, 5] += usum * usum
            acc[bidx, 6] += ca
            acc[bidx, 7] += (eps * x) * (eps * x)
            for jt in range(m):
                th = thetas[jt] * eps
                e = th * x
                if e > max_expo[jt]:
                    max_expo[jt] = e
                ex = np.exp(e)
                mgf_acc[bidx, jt] += ex
                left_acc[bidx, jt] += ex * (1.0 - np.exp(th * (ca - cs)))
                right_acc[bidx, jt] += 1.0 - np.exp(-th * cu)
            if j_meas % thin == 0 and n_samples[0] < samples.shape[0]:
                samples[n_samples[0]] = eps * x
                n_samples[0] += 1

        for i in range(n):
            q[i] = q[i] + a[i] - s[i] + u[i]
