"""Jitted inner loops for error-path simulation.

All kernels advance the error (or the signal and the estimator) with the exact OU
transition on a uniform grid. Threshold crossings are detected on the grid and,
when ``bridge`` is set, additionally between grid points: given both endpoints
inside (-v, v), the Gaussian bridge of the step touches +v with probability
exp(-2 (v - e0)(v - e1) / b^2) and -v with exp(-2 (v + e0)(v + e1) / b^2), where
b^2 is the one-step variance. A crossing inside a step stops the path at the end
of that step.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_EXP_CUTOFF = 40.0


@numba.njit(cache=True, inline="always")
def bridge_cross_prob(e0: float, e1: float, v: float, two_over_b2: float) -> float:
    p = 0.0
    up = (v - e0) * (v - e1) * two_over_b2
    if up < _EXP_CUTOFF:
        p += math.exp(-up)
    dn = (v + e0) * (v + e1) * two_over_b2
    if dn < _EXP_CUTOFF:
        p += math.exp(-dn)
    return p


@numba.njit(cache=True)
def hit_one(e, v, a, b, dt, cap, bridge, gen):
    """Single error path from e until |e| >= v; returns (wait, end, integral, truncated)."""
    if abs(e) >= v:
        return 0.0, e, 0.0, False
    two_over_b2 = 2.0 / (b * b)
    acc = 0.0
    prev = e * e
    for i in range(cap):
        e1 = e * a + b * gen.standard_normal()
        cur = e1 * e1
        acc += 0.5 * dt * (prev + cur)
        if abs(e1) >= v:
            return (i + 1) * dt, e1, acc, False
        if bridge:
            p = bridge_cross_prob(e, e1, v, two_over_b2)
            if p > 0.0 and gen.random() < p:
                return (i + 1) * dt, e1, acc, False
        e = e1
        prev = cur
    return cap * dt, e, acc, True


@numba.njit(cache=True)
def hit_batch(starts, v, a, b, dt, cap, bridge, gen):
    n = starts.size
    wait = np.empty(n)
    end = np.empty(n)
    integ = np.empty(n)
    trunc = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        w, e, s, t = hit_one(starts[i], v, a, b, dt, cap, bridge, gen)
        wait[i] = w
        end[i] = e
        integ[i] = s
        trunc[i] = t
    return wait, end, integ, trunc


@numba.njit(cache=True)
def frames_from_zero(delays, v, theta, sigma, dt, cap, bridge, gen):
    """Error paths started at 0: free evolution over D, then wait for |e| >= v.

    Returns (tau, end_error, integral over [0, tau], truncated).
    """
    n = delays.size
    a = math.exp(-theta * dt)
    b = sigma * math.sqrt(-math.expm1(-2.0 * theta * dt) / (2.0 * theta))
    tau = np.empty(n)
    end = np.empty(n)
    integ = np.empty(n)
    trunc = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        d = delays[i]
        n_full = int(math.floor(d / dt))
        tail = d - n_full * dt
        e = 0.0
        prev = 0.0
        acc = 0.0
        for _ in range(n_full):
            e = e * a + b * gen.standard_normal()
            cur = e * e
            acc += 0.5 * dt * (prev + cur)
            prev = cur
        if tail > 0.0:
            at = math.exp(-theta * tail)
            bt = sigma * math.sqrt(-math.expm1(-2.0 * theta * tail) / (2.0 * theta))
            e = e * at + bt * gen.standard_normal()
            cur = e * e
            acc += 0.5 * tail * (prev + cur)
        w, e_end, s, t = hit_one(e, v, a, b, dt, cap, bridge, gen)
        tau[i] = d + w
        end[i] = e_end
        integ[i] = acc + s
        trunc[i] = t
    return tau, end, integ, trunc


@numba.njit(cache=True)
def threshold_scan(starts, delays, thresholds, a, b, dt, cap, gen):
    """Evaluate many constant thresholds on shared error paths.

    ``thresholds`` must be sorted ascending. One uniform per step couples the
    bridge crossings of all thresholds, so each threshold sees exactly the law of
    the single-threshold bridge simulation. Returns per-threshold sums of
    O^2, L, O^4, L^2, O^2 L and the number of truncated paths.
    """
    m = thresholds.size
    so = np.zeros(m)
    sl = np.zeros(m)
    so2 = np.zeros(m)
    sl2 = np.zeros(m)
    sol = np.zeros(m)
    n_trunc = 0
    two_over_b2 = 2.0 / (b * b)
    for i in range(starts.size):
        e = starts[i]
        d = delays[i]
        j = 0
        while j < m and thresholds[j] <= abs(e):
            o = e * e
            so[j] += o
            sl[j] += d
            so2[j] += o * o
            sl2[j] += d * d
            sol[j] += o * d
            j += 1
        step = 0
        while j < m and step < cap:
            e1 = e * a + b * gen.standard_normal()
            u = gen.random()
            step += 1
            ae1 = abs(e1)
            while j < m:
                vj = thresholds[j]
                if ae1 >= vj or u < bridge_cross_prob(e, e1, vj, two_over_b2):
                    o = e1 * e1
                    ell = d + step * dt
                    so[j] += o
                    sl[j] += ell
                    so2[j] += o * o
                    sl2[j] += ell * ell
                    sol[j] += o * ell
                    j += 1
                else:
                    break
            e = e1
        if j < m:
            n_trunc += 1
    return so, sl, so2, sl2, sol, n_trunc


@numba.njit(cache=True)
def evolve_fixed(x, xh, mu, z, a, b, dt, n_full, a_tail, b_tail, tail):
    """Evolve signal and estimator for n_full grid steps plus a partial step.

    ``z`` supplies at least n_full (+1 when tail > 0) normals. Returns the new
    signal, estimate and the trapezoid integral of (x - xh)^2.
    """
    err = x - xh
    prev = err * err
    acc = 0.0
    for i in range(n_full):
        x = mu + (x - mu) * a + b * z[i]
        xh = mu + (xh - mu) * a
        err = x - xh
        cur = err * err
        acc += 0.5 * dt * (prev + cur)
        prev = cur
    if tail > 0.0:
        x = mu + (x - mu) * a_tail + b_tail * z[n_full]
        xh = mu + (xh - mu) * a_tail
        err = x - xh
        cur = err * err
        acc += 0.5 * tail * (prev + cur)
    return x, xh, acc


@numba.njit(cache=True)
def evolve_threshold(x, xh, mu, v, z, u, a, b, dt, bridge):
    """Evolve until |x - xh| >= v or the supplied noise runs out.

    Returns (x, xh, integral, steps_used, stopped).
    """
    e = x - xh
    if abs(e) >= v:
        return x, xh, 0.0, 0, True
    two_over_b2 = 2.0 / (b * b)
    prev = e * e
    acc = 0.0
    for i in range(z.size):
        x = mu + (x - mu) * a + b * z[i]
        xh = mu + (xh - mu) * a
        e1 = x - xh
        cur = e1 * e1
        acc += 0.5 * dt * (prev + cur)
        if abs(e1) >= v:
            return x, xh, acc, i + 1, True
        if bridge and u[i] < bridge_cross_prob(e, e1, v, two_over_b2):
            return x, xh, acc, i + 1, True
        e = e1
        prev = cur
    return x, xh, acc, z.size, False
