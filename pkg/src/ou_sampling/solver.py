"""Offline optimum: alpha bounds, alpha* and lambda*, the minimum MSE and bound constants."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .ou import OuParams
from .special import r1
from .stopping import (
    DEFAULT_DELAY_NODES,
    DelayModel,
    FrameStats,
    decay_moment,
    expected_frame_stats,
    guard_eta,
    mse_delay,
    threshold_v,
)

DEFAULT_C = 1.0
DEFAULT_TOL = 1e-8
DEFAULT_FRAME_TOL = 1e-6
_MAX_BISECT = 200


class SolverError(ArithmeticError):
    """The root finder could not bracket or converge."""


class InfeasibleConstraint(SolverError):
    """No admissible threshold reaches the required mean frame length."""


@dataclass(frozen=True)
class AlphaBounds:
    alpha_lb: float
    alpha_ub: float
    w_hat: float
    c: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha_lb < self.alpha_ub):
            raise ValueError(f"need 0 < alpha_lb < alpha_ub, got {self.alpha_lb}, {self.alpha_ub}")
        if not self.c > 0:
            raise ValueError("c must be > 0")

    def clip(self, alpha: float) -> float:
        return min(max(alpha, self.alpha_lb), self.alpha_ub)


def alpha_bounds(delay: DelayModel, f_max: float, c: float, params: OuParams) -> AlphaBounds:
    """Interval [alpha_lb, sigma^2] known to contain alpha*."""
    if not (c > 0 and math.isfinite(c)):
        raise ValueError(f"c must be finite and > 0, got {c}")
    if not f_max > 0:
        raise ValueError(f"f_max must be > 0, got {f_max}")
    w_hat = c if math.isinf(f_max) else 1.0 / f_max + c
    th, s2 = params.theta, params.sigma**2
    lb = s2 * -math.expm1(-2.0 * th * w_hat) / (2.0 * th * (delay.d_ub + w_hat))
    return AlphaBounds(alpha_lb=lb, alpha_ub=s2, w_hat=w_hat, c=c)


@dataclass(frozen=True)
class SolveResult:
    alpha_star: float
    lambda_star: float
    mmse: float
    v_star: float
    residual: float
    constrained: bool
    beta_star: float
    o_star: float
    l_star: float
    frame_residual: float = 0.0
    iterations: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def mmse_from_alpha(
    alpha_star: float, delay: DelayModel, params: OuParams, n_delay_nodes: int = DEFAULT_DELAY_NODES
) -> float:
    """Minimum MSE implied by alpha*: sigma^2/(2 theta) - alpha* E[e^{-2 theta D}]/(2 theta)."""
    if not (0.0 <= alpha_star <= params.sigma**2 * (1 + 1e-12)):
        raise ValueError(f"alpha_star must lie in [0, sigma^2], got {alpha_star}")
    return params.stationary_variance - alpha_star * decay_moment(delay, params, n_delay_nodes) / (
        2.0 * params.theta
    )


def g_lambda(
    alpha: float, lam: float, delay: DelayModel, params: OuParams, n_delay_nodes: int = DEFAULT_DELAY_NODES
) -> tuple[float, FrameStats]:
    """g_lambda(alpha) = o(alpha - lambda) - alpha l(alpha - lambda)."""
    st = expected_frame_stats(alpha - lam, delay, params, n_delay_nodes)
    return st.o - alpha * st.l, st


def _bisect_decreasing(fn, lo: float, hi: float, rel_tol: float):
    """Bisection for a decreasing fn with fn(lo) >= 0 >= fn(hi). Returns (root, iterations)."""
    it = 0
    while hi - lo > rel_tol * 0.5 * (hi + lo) and it < _MAX_BISECT:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return 0.5 * (lo + hi), it


def _finish(alpha, lam, delay, params, n_nodes, constrained, iterations, frame_target=None) -> SolveResult:
    beta = alpha - lam
    g, st = g_lambda(alpha, lam, delay, params, n_nodes)
    frame_res = 0.0 if frame_target is None else abs(st.l - frame_target) / frame_target
    return SolveResult(
        alpha_star=alpha,
        lambda_star=lam,
        mmse=mmse_from_alpha(alpha, delay, params, n_nodes),
        v_star=st.v,
        residual=abs(g),
        constrained=constrained,
        beta_star=beta,
        o_star=st.o,
        l_star=st.l,
        frame_residual=frame_res,
        iterations=iterations,
    )


def solve_alpha_star(
    delay: DelayModel,
    params: OuParams,
    tol: float = DEFAULT_TOL,
    c: float = DEFAULT_C,
    n_delay_nodes: int = DEFAULT_DELAY_NODES,
    bracket: tuple[float, float] | None = None,
) -> SolveResult:
    """Root of g_0(alpha) = o(alpha) - alpha l(alpha) by bisection."""
    if bracket is None:
        return _solve_alpha_star_cached(delay, params, tol, c, n_delay_nodes)
    return _solve_alpha_star(delay, params, tol, c, n_delay_nodes, bracket)


@functools.lru_cache(maxsize=64)
def _solve_alpha_star_cached(delay, params, tol, c, n_delay_nodes) -> SolveResult:
    return _solve_alpha_star(delay, params, tol, c, n_delay_nodes, None)


def _solve_alpha_star(delay, params, tol, c, n_delay_nodes, bracket) -> SolveResult:
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    s2 = params.sigma**2
    if delay.mean() == 0.0:
        # zero delay: every threshold v > 0 gives o/l = v^2 / R1(v) < sigma^2, so alpha* = sigma^2
        return _finish(s2, 0.0, delay, params, n_delay_nodes, False, 0)
    bounds = alpha_bounds(delay, math.inf, c, params)
    lo, hi = bracket if bracket is not None else (bounds.alpha_lb, bounds.alpha_ub)
    if not (0 < lo < hi <= s2):
        raise ValueError(f"invalid bracket [{lo}, {hi}]")
    g_lo = g_lambda(lo, 0.0, delay, params, n_delay_nodes)[0]
    g_hi = g_lambda(hi, 0.0, delay, params, n_delay_nodes)[0]
    if g_lo < 0.0 or g_hi > 0.0:
        raise SolverError(
            f"g_0 does not change sign on [{lo:.6g}, {hi:.6g}]: g(lo) = {g_lo:.6g}, g(hi) = {g_hi:.6g}"
        )
    root, it = _bisect_decreasing(lambda a: g_lambda(a, 0.0, delay, params, n_delay_nodes)[0], lo, hi, tol)
    res = _finish(root, 0.0, delay, params, n_delay_nodes, False, it)
    if res.residual > tol * abs(res.alpha_star * res.l_star):
        raise SolverError(f"residual {res.residual:.3g} above tolerance at alpha = {root:.10g}")
    return res


def _multiplier_of_beta(beta, delay, params, n_nodes):
    """lambda(beta) = o(beta)/l(beta) - beta; g_lambda(lambda + beta) has the sign of lambda(beta) - lambda."""
    st = expected_frame_stats(beta, delay, params, n_nodes)
    return st.o / st.l - beta


def _golden_max(fn, lo: float, hi: float, rel_tol: float = 1e-6, max_iter: int = 200) -> float:
    """Maximiser of a unimodal fn on [lo, hi] by golden-section search."""
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1, x2 = b - inv * (b - a), a + inv * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(max_iter):
        if b - a <= rel_tol * max(abs(a), abs(b), 1e-300):
            break
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv * (b - a)
            f2 = fn(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv * (b - a)
            f1 = fn(x1)
    return 0.5 * (a + b)


def _inner_alpha(lam, branch, delay, params, n_nodes, tol):
    """Root alpha of g_lambda with alpha - lambda inside the beta interval ``branch``.

    ``branch`` = (beta_a, beta_b, rising) where lambda(beta) increases from beta_a to
    beta_b when ``rising``. Returns None when lambda lies outside the branch range.
    """
    beta_a, beta_b, rising = branch
    lam_a = _multiplier_of_beta(beta_a, delay, params, n_nodes)
    lam_b = _multiplier_of_beta(beta_b, delay, params, n_nodes)
    if not min(lam_a, lam_b) <= lam <= max(lam_a, lam_b):
        return None
    # orient g_lambda so that it decreases in alpha along the branch
    lo, hi = lam + beta_a, lam + beta_b
    if rising:
        fn = lambda a: -g_lambda(a, lam, delay, params, n_nodes)[0]
    else:
        fn = lambda a: g_lambda(a, lam, delay, params, n_nodes)[0]
    root, _ = _bisect_decreasing(fn, lo, hi, tol)
    return root


def solve_constrained(
    delay: DelayModel,
    params: OuParams,
    f_max: float,
    tol: float = DEFAULT_FRAME_TOL,
    c: float = DEFAULT_C,
    n_delay_nodes: int = DEFAULT_DELAY_NODES,
    eta: float | None = None,
) -> SolveResult:
    """(alpha*, lambda*) under the mean frame-length constraint E[L] >= 1/f_max.

    Outer bisection on lambda with target l(alpha(lambda) - lambda) = 1/f_max, the inner
    problem being the root of g_lambda(alpha) = 0. For lambda > 0, g_lambda is not monotone:
    lambda(beta) = o(beta)/l(beta) - beta rises from 0 (beta -> 0) to a peak and falls back
    to 0 at the unconstrained alpha*. Each lambda below the peak therefore has two roots and
    the inner solve is restricted to the branch on which l can meet the target.
    """
    eta = guard_eta(params) if eta is None else eta
    return _solve_constrained_cached(delay, params, float(f_max), tol, c, n_delay_nodes, eta)


@functools.lru_cache(maxsize=64)
def _solve_constrained_cached(delay, params, f_max, tol, c, n_nodes, eta) -> SolveResult:
    if not f_max > 0:
        raise ValueError("f_max must be > 0")
    unc = solve_alpha_star(delay, params, DEFAULT_TOL, c, n_nodes)
    if math.isinf(f_max):
        return unc
    target = 1.0 / f_max
    if unc.l_star >= target * (1 - tol):
        return unc
    l_guard = expected_frame_stats(eta, delay, params, n_nodes).l
    if l_guard < target:
        raise InfeasibleConstraint(
            f"even the guarded threshold v({eta:.3g}) only reaches E[L] = {l_guard:.6g} < {target:.6g}"
        )
    lam_of = lambda b: _multiplier_of_beta(b, delay, params, n_nodes)
    log_peak = _golden_max(lambda t: lam_of(math.exp(t)), math.log(eta), math.log(unc.alpha_star))
    beta_peak = math.exp(log_peak)
    l_peak = expected_frame_stats(beta_peak, delay, params, n_nodes).l
    if target <= l_peak:
        branch = (beta_peak, unc.alpha_star, False)
    else:
        branch = (eta, beta_peak, True)
    inner_tol = min(1e-11, tol * 1e-4)
    lam_lo = max(0.0, min(lam_of(branch[0]), lam_of(branch[1])))
    lam_hi = lam_of(beta_peak)

    def frame_gap(lam):
        a = _inner_alpha(lam, branch, delay, params, n_nodes, inner_tol)
        if a is None:
            raise SolverError(f"multiplier {lam:.6g} outside the admissible branch")
        return a, expected_frame_stats(a - lam, delay, params, n_nodes).l - target

    # frame length falls as lambda rises on the small-beta branch and rises on the other
    rising = branch[2]
    lo, hi = lam_lo, lam_hi
    best = None
    it = 0
    while it < _MAX_BISECT:
        mid = 0.5 * (lo + hi)
        a, gap = frame_gap(mid)
        it += 1
        if abs(gap) <= tol * target:
            best = (a, mid)
            break
        if (gap > 0.0) == rising:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(hi, 1.0):
            break
    if best is None:
        raise SolverError("constrained bisection did not reach the frame-length target")
    alpha, lam = best
    return _finish(alpha, lam, delay, params, n_nodes, True, it, frame_target=target)


def solve_by_frame_length(
    delay: DelayModel,
    params: OuParams,
    f_max: float,
    tol: float = 1e-10,
    n_delay_nodes: int = DEFAULT_DELAY_NODES,
) -> SolveResult:
    """Direct construction: the beta with l(beta) = 1/f_max, then alpha = o/l, lambda = alpha - beta.

    Used to cross-check solve_constrained.
    """
    target = 1.0 / f_max
    s2 = params.sigma**2
    hi = s2
    lo = 0.5 * s2
    while expected_frame_stats(lo, delay, params, n_delay_nodes).l < target:
        hi = lo
        lo *= 0.5
        if lo < 1e-12:
            raise InfeasibleConstraint("no beta reaches the frame-length target")
    # l is decreasing in beta; bisect on target - l(beta), which is increasing
    beta, it = _bisect_decreasing(
        lambda b: expected_frame_stats(b, delay, params, n_delay_nodes).l - target, lo, hi, tol
    )
    st = expected_frame_stats(beta, delay, params, n_delay_nodes)
    alpha = st.o / st.l
    return _finish(alpha, alpha - beta, delay, params, n_delay_nodes, True, it, frame_target=target)


@dataclass(frozen=True)
class MomentBounds:
    """Per-frame moment bounds for threshold policies with thresholds up to v_ref."""

    o2: float
    o4: float
    l1: float
    l2: float
    v_ref: float


def moment_bounds(delay: DelayModel, params: OuParams, v_ref: float) -> MomentBounds:
    s, th = params.sigma, params.theta
    q = v_ref**2 / s**2
    growth = q * math.exp(2.0 * th * q)
    l1 = delay.d_ub + growth
    l2 = delay.m_ub + 2.0 * delay.d_ub * growth + 2.0 * v_ref**3 / s**3 * math.sqrt(math.pi / th) * math.exp(
        3.0 * th * q
    )
    return MomentBounds(
        o2=params.stationary_variance,
        o4=3.0 * s**4 / (4.0 * th**2),
        l1=l1,
        l2=l2,
        v_ref=v_ref,
    )


def alpha_error_constant(delay: DelayModel, params: OuParams, bounds: AlphaBounds) -> float:
    """Constant C of the mean-square alpha error bound C / (k D_lb^2)."""
    mb = moment_bounds(delay, params, threshold_v(bounds.alpha_lb, params))
    return mb.o4 + bounds.alpha_ub**2 * mb.l2


def frame_length_lipschitz(params: OuParams, bounds: AlphaBounds, n_grid: int = 2000) -> float:
    """max |d/dalpha R1(v(alpha))| over [alpha_lb, alpha_ub] by central differences."""
    grid = np.geomspace(bounds.alpha_lb, bounds.alpha_ub, n_grid)
    r = np.array([r1(threshold_v(a, params), params) for a in grid])
    return float(np.max(np.abs(np.gradient(r, grid))))


def zero_wait_mse(delay: DelayModel, params: OuParams, n_delay_nodes: int = DEFAULT_DELAY_NODES) -> float:
    """Time-average MSE of sampling right after every delivery."""
    return renewal_mse(mse_delay(delay, params, n_delay_nodes), delay.expect(lambda d: d, n_delay_nodes), delay, params, n_delay_nodes)


def renewal_mse(
    mean_o_sq: float, mean_frame: float, delay: DelayModel, params: OuParams, n_delay_nodes: int = DEFAULT_DELAY_NODES
) -> float:
    """Stationary time-average MSE from E[O_L^2] and E[L]."""
    return params.stationary_variance - decay_moment(delay, params, n_delay_nodes) / (2.0 * params.theta) * (
        mean_o_sq / mean_frame
    )
