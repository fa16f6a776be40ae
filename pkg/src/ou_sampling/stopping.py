"""Threshold map v(beta), hitting-time simulation and per-frame expectations o, l."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special as sp
from scipy.interpolate import CubicSpline

from . import _kernels
from .ou import OuParams, error_variance
from .special import DEFAULT_SERIES, SeriesConfig, g_fn, g_inv, r1

DEFAULT_DT = 1e-3
DEFAULT_CAP = 10**7
DEFAULT_DELAY_NODES = 512
GUARD_ETA_FRACTION = 1e-4

_DELAY_KINDS = ("lognormal", "exponential", "deterministic", "empirical")


class QuadratureError(ArithmeticError):
    """Quadrature for the conditional frame length failed to converge."""


class TruncatedHitting(RuntimeError):
    """A hitting simulation exhausted its step cap."""


@dataclass(frozen=True)
class DelayModel:
    """Channel delay law together with the bounds known to the transmitter.

    Build instances with the classmethods. Bounds left as None default to the
    exact moments of the law.
    """

    kind: str
    mu_d: float | None = None
    sigma_d: float | None = None
    rate: float | None = None
    value: float | None = None
    samples: tuple[float, ...] | None = None
    d_lb: float | None = None
    d_ub: float | None = None
    m_ub: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _DELAY_KINDS:
            raise ValueError(f"unknown delay kind {self.kind!r}; expected one of {_DELAY_KINDS}")
        if self.kind == "lognormal":
            if self.mu_d is None or self.sigma_d is None:
                raise ValueError("lognormal delay needs mu_d and sigma_d")
            if not (math.isfinite(self.mu_d) and math.isfinite(self.sigma_d) and self.sigma_d >= 0):
                raise ValueError("lognormal delay needs finite mu_d and sigma_d >= 0")
        elif self.kind == "exponential":
            if self.rate is None or not (self.rate > 0 and math.isfinite(self.rate)):
                raise ValueError("exponential delay needs a finite rate > 0")
        elif self.kind == "deterministic":
            if self.value is None or not (self.value >= 0 and math.isfinite(self.value)):
                raise ValueError("deterministic delay needs a finite value >= 0")
        else:
            if not self.samples:
                raise ValueError("empirical delay needs a non-empty sample list")
            arr = np.asarray(self.samples, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("empirical delay samples must be finite and >= 0")
            object.__setattr__(self, "samples", tuple(float(s) for s in arr))
        mean, second = self.mean(), self.second_moment()
        if self.d_lb is None:
            object.__setattr__(self, "d_lb", mean)
        if self.d_ub is None:
            object.__setattr__(self, "d_ub", mean)
        if self.m_ub is None:
            object.__setattr__(self, "m_ub", second)
        rtol = 1e-12
        # a zero delay is admitted only as a degenerate deterministic test case
        degenerate = self.kind == "deterministic" and self.value == 0.0
        if not degenerate and not self.d_lb > 0:
            raise ValueError(f"d_lb must be > 0, got {self.d_lb}")
        if self.d_lb > mean * (1 + rtol) or mean > self.d_ub * (1 + rtol):
            raise ValueError(f"need d_lb <= E[D] = {mean:.6g} <= d_ub, got [{self.d_lb}, {self.d_ub}]")
        if not math.isfinite(self.d_ub):
            raise ValueError("d_ub must be finite")
        if second > self.m_ub * (1 + rtol):
            raise ValueError(f"need E[D^2] = {second:.6g} <= m_ub = {self.m_ub}")

    @classmethod
    def lognormal(cls, mu_d: float, sigma_d: float, **bounds) -> "DelayModel":
        return cls("lognormal", mu_d=float(mu_d), sigma_d=float(sigma_d), **bounds)

    @classmethod
    def exponential(cls, rate: float, **bounds) -> "DelayModel":
        return cls("exponential", rate=float(rate), **bounds)

    @classmethod
    def deterministic(cls, value: float, **bounds) -> "DelayModel":
        return cls("deterministic", value=float(value), **bounds)

    @classmethod
    def empirical(cls, samples, **bounds) -> "DelayModel":
        return cls("empirical", samples=tuple(float(s) for s in samples), **bounds)

    def mean(self) -> float:
        if self.kind == "lognormal":
            return math.exp(self.mu_d + 0.5 * self.sigma_d**2)
        if self.kind == "exponential":
            return 1.0 / self.rate
        if self.kind == "deterministic":
            return self.value
        return float(np.mean(self.samples))

    def second_moment(self) -> float:
        if self.kind == "lognormal":
            return math.exp(2.0 * self.mu_d + 2.0 * self.sigma_d**2)
        if self.kind == "exponential":
            return 2.0 / self.rate**2
        if self.kind == "deterministic":
            return self.value**2
        return float(np.mean(np.square(self.samples)))

    def sample(self, gen: np.random.Generator, size=None):
        if self.kind == "lognormal":
            return gen.lognormal(self.mu_d, self.sigma_d, size)
        if self.kind == "exponential":
            return gen.exponential(1.0 / self.rate, size)
        if self.kind == "deterministic":
            return self.value if size is None else np.full(size, self.value)
        return gen.choice(np.asarray(self.samples), size)

    def nodes(self, n: int = DEFAULT_DELAY_NODES) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights for expectations over the delay law."""
        key = (self, int(n))
        hit = _NODE_CACHE.get(key)
        if hit is not None:
            return hit
        if self.kind == "deterministic":
            d, w = np.array([self.value]), np.array([1.0])
        elif self.kind == "empirical":
            d = np.asarray(self.samples, dtype=float)
            w = np.full(d.size, 1.0 / d.size)
        else:
            if n < 1:
                raise ValueError("need at least one delay node")
            x, wx = np.polynomial.legendre.leggauss(int(n))
            u = 0.5 * (x + 1.0)
            w = 0.5 * wx
            if self.kind == "lognormal":
                d = np.exp(self.mu_d + self.sigma_d * sp.ndtri(u))
            else:
                d = -np.log1p(-u) / self.rate
        d.setflags(write=False)
        w.setflags(write=False)
        _NODE_CACHE[key] = (d, w)
        return d, w

    def expect(self, fn, n: int = DEFAULT_DELAY_NODES) -> float:
        d, w = self.nodes(n)
        return float(np.dot(w, fn(d)))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("mu_d", "sigma_d", "rate", "value"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        if self.samples is not None:
            out["samples"] = list(self.samples)
        out.update(d_lb=self.d_lb, d_ub=self.d_ub, m_ub=self.m_ub)
        return out


_NODE_CACHE: dict = {}

REFERENCE_DELAY = DelayModel.lognormal(1.0, 1.0)


def decay_moment(delay: DelayModel, params: OuParams, n_delay_nodes: int = DEFAULT_DELAY_NODES) -> float:
    """E[exp(-2 theta D)]."""
    return delay.expect(lambda d: np.exp(-2.0 * params.theta * d), n_delay_nodes)


def mse_delay(delay: DelayModel, params: OuParams, n_delay_nodes: int = DEFAULT_DELAY_NODES) -> float:
    """Mean squared error right at reception, sigma^2/(2 theta) E[1 - exp(-2 theta D)]."""
    return delay.expect(lambda d: error_variance(d, params), n_delay_nodes)


def guard_eta(params: OuParams) -> float:
    return GUARD_ETA_FRACTION * params.sigma**2


def threshold_v(beta: float, params: OuParams) -> float:
    """Optimal stopping threshold (sigma/sqrt(theta)) G^-1(sigma^2/beta)."""
    beta = float(beta)
    s2 = params.sigma**2
    if not (beta > 0.0) or beta > s2 * (1 + 1e-15):
        raise ValueError(f"threshold_v needs 0 < beta <= sigma^2 = {s2}, got {beta}")
    y = max(s2 / beta, 1.0)
    return params.sigma / math.sqrt(params.theta) * g_inv(y)


def beta_of_threshold(v: float, params: OuParams) -> float:
    """Inverse of threshold_v."""
    if v < 0:
        raise ValueError("threshold must be >= 0")
    return params.sigma**2 / g_fn(v * math.sqrt(params.theta) / params.sigma)


def guarded_threshold(beta: float, params: OuParams, eta: float) -> float:
    """Threshold for max(beta, eta), capped at sigma^2 from above."""
    return threshold_v(min(max(beta, eta), params.sigma**2), params)


@dataclass(frozen=True)
class HittingResult:
    wait: float
    end_error: float
    integrated_sq_error: float
    truncated: bool


class HittingBatch(NamedTuple):
    wait: np.ndarray
    end_error: np.ndarray
    integrated_sq_error: np.ndarray
    truncated: np.ndarray


def _check_grid(v: float, dt: float, cap: int) -> None:
    if not (v >= 0 and math.isfinite(v)):
        raise ValueError(f"threshold must be finite and >= 0, got {v}")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be > 0, got {dt}")
    if int(cap) != cap or cap < 1:
        raise ValueError(f"cap must be a positive integer, got {cap}")


def simulate_hitting(
    start_error: float,
    v: float,
    params: OuParams,
    dt: float = DEFAULT_DT,
    cap: int = DEFAULT_CAP,
    rng: np.random.Generator | None = None,
    bridge: bool = True,
) -> HittingResult:
    """Run the zero-mean error OU from start_error until |error| >= v."""
    _check_grid(v, dt, cap)
    if not math.isfinite(start_error):
        raise ValueError("start_error must be finite")
    gen = rng if rng is not None else np.random.default_rng()
    a, b = params.step_coefficients(dt)
    w, e, s, t = _kernels.hit_one(float(start_error), float(v), a, b, float(dt), int(cap), bool(bridge), gen)
    return HittingResult(float(w), float(e), float(s), bool(t))


def simulate_hitting_batch(
    starts,
    v: float,
    params: OuParams,
    dt: float = DEFAULT_DT,
    cap: int = DEFAULT_CAP,
    rng: np.random.Generator | None = None,
    bridge: bool = True,
) -> HittingBatch:
    """Vectorised simulate_hitting over an array of starting errors."""
    _check_grid(v, dt, cap)
    starts = np.ascontiguousarray(starts, dtype=float)
    if not np.all(np.isfinite(starts)):
        raise ValueError("start errors must be finite")
    gen = rng if rng is not None else np.random.default_rng()
    a, b = params.step_coefficients(dt)
    out = _kernels.hit_batch(starts, float(v), a, b, float(dt), int(cap), bool(bridge), gen)
    return HittingBatch(*out)


def simulate_frames_from_zero(
    delays,
    v: float,
    params: OuParams,
    dt: float = DEFAULT_DT,
    cap: int = DEFAULT_CAP,
    rng: np.random.Generator | None = None,
    bridge: bool = True,
) -> HittingBatch:
    """Frames whose fresh error starts at 0: evolve through D, then wait for the threshold.

    ``wait`` holds the full frame length tau = D + W and the integral covers [0, tau].
    """
    _check_grid(v, dt, cap)
    delays = np.ascontiguousarray(delays, dtype=float)
    gen = rng if rng is not None else np.random.default_rng()
    out = _kernels.frames_from_zero(
        delays, float(v), params.theta, params.sigma, float(dt), int(cap), bool(bridge), gen
    )
    return HittingBatch(*out)


class FrameStats(NamedTuple):
    o: float
    l: float
    v: float


_QUAD_ORDERS = (64, 128, 256, 512)
_U_MAX = 12.0


def _gl(n: int) -> tuple[np.ndarray, np.ndarray]:
    hit = _GL_CACHE.get(n)
    if hit is None:
        hit = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = hit
    return hit


_GL_CACHE: dict = {}


def _mean_residual_wait(v: float, s: np.ndarray, params: OuParams, order: int, series: SeriesConfig):
    """E[(R1(v) - R1(|O|))^+] for O ~ N(0, s^2), per entry of s, by Gauss-Legendre in u = x/s."""
    x, wx = _gl(order)
    with np.errstate(divide="ignore"):
        c = np.where(s > 0, v / np.where(s > 0, s, 1.0), np.inf)
    upper = np.minimum(c, _U_MAX)
    half = 0.5 * upper
    u = half[:, None] * (x[None, :] + 1.0)
    rv = r1(v, params, series)
    # clip guards rounding at the upper end where s*u should equal v
    ru = r1(np.minimum(s[:, None] * u, v), params, series)
    f = (rv - ru) * (2.0 / math.sqrt(2.0 * math.pi)) * np.exp(-0.5 * u * u)
    return half * (f @ wx)


def conditional_frame_stats(
    v: float,
    d: np.ndarray,
    params: OuParams,
    series: SeriesConfig = DEFAULT_SERIES,
    quad_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditional (o, l) given delay values d for a constant threshold v."""
    d = np.asarray(d, dtype=float)
    s2 = error_variance(d, params)
    s2 = np.asarray(s2, dtype=float).reshape(d.shape)
    if v == 0.0:
        return s2.copy(), d.copy()
    s = np.sqrt(s2)
    with np.errstate(divide="ignore"):
        c = np.where(s > 0, v / np.where(s > 0, s, 1.0), np.inf)
    inside = sp.erf(c / math.sqrt(2.0))
    finite_c = np.where(np.isfinite(c), c, 0.0)
    pdf = np.exp(-0.5 * finite_c * finite_c) / math.sqrt(2.0 * math.pi)
    tail = 2.0 * s2 * (finite_c * pdf + sp.ndtr(-c))
    o_cond = v * v * inside + tail

    prev = None
    for order in _QUAD_ORDERS:
        cur = _mean_residual_wait(v, s, params, order, series)
        if prev is not None:
            scale = max(float(np.max(np.abs(cur))), 1e-300)
            if float(np.max(np.abs(cur - prev))) <= quad_tol * scale:
                return o_cond, d + cur
        prev = cur
    raise QuadratureError(f"residual-wait quadrature did not converge for v = {v}")


def expected_frame_stats(
    beta: float,
    delay: DelayModel,
    params: OuParams,
    n_delay_nodes: int = DEFAULT_DELAY_NODES,
    series: SeriesConfig = DEFAULT_SERIES,
    quad_tol: float = 1e-8,
) -> FrameStats:
    """Semi-analytic o(beta) = E[O^2 at the next sample] and l(beta) = E[frame length]."""
    v = threshold_v(beta, params)
    return frame_stats_for_threshold(v, delay, params, n_delay_nodes, series, quad_tol)


def frame_stats_for_threshold(
    v: float,
    delay: DelayModel,
    params: OuParams,
    n_delay_nodes: int = DEFAULT_DELAY_NODES,
    series: SeriesConfig = DEFAULT_SERIES,
    quad_tol: float = 1e-8,
) -> FrameStats:
    d, w = delay.nodes(n_delay_nodes)
    o_cond, l_cond = conditional_frame_stats(v, d, params, series, quad_tol)
    return FrameStats(float(np.dot(w, o_cond)), float(np.dot(w, l_cond)), float(v))


class MonteCarloFrameStats(NamedTuple):
    o: float
    l: float
    o_se: float
    l_se: float
    n_truncated: int


def simulate_frame_stats(
    beta: float,
    delay: DelayModel,
    params: OuParams,
    n_frames: int,
    rng: np.random.Generator,
    dt: float = DEFAULT_DT,
    cap: int = DEFAULT_CAP,
    bridge: bool = True,
) -> MonteCarloFrameStats:
    """Brute-force frame simulation: draw D and O_D exactly, then simulate the wait."""
    v = threshold_v(beta, params)
    d = delay.sample(rng, n_frames)
    d = np.broadcast_to(np.asarray(d, dtype=float), (n_frames,))
    od = np.sqrt(error_variance(d, params)) * rng.standard_normal(n_frames)
    hb = simulate_hitting_batch(od, v, params, dt, cap, rng, bridge)
    o = hb.end_error**2
    ell = d + hb.wait
    n = float(n_frames)
    return MonteCarloFrameStats(
        float(o.mean()),
        float(ell.mean()),
        float(o.std(ddof=1) / math.sqrt(n)),
        float(ell.std(ddof=1) / math.sqrt(n)),
        int(hb.truncated.sum()),
    )


class ThresholdScan(NamedTuple):
    thresholds: np.ndarray
    o: np.ndarray
    l: np.ndarray
    o_se: np.ndarray
    l_se: np.ndarray
    ratio_se: np.ndarray
    n_truncated: int


def scan_thresholds(
    thresholds,
    delay: DelayModel,
    params: OuParams,
    n_frames: int,
    rng: np.random.Generator,
    dt: float = DEFAULT_DT,
    cap: int = DEFAULT_CAP,
) -> ThresholdScan:
    """Monte-Carlo (o, l) for many thresholds on one shared set of frames.

    Every threshold stops the same simulated error paths, so differences between
    thresholds carry no independent noise and the argmax of o/l is stable.
    """
    v = np.asarray(thresholds, dtype=float)
    if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("thresholds must be a non-empty 1-d array of finite values >= 0")
    _check_grid(float(v.max()), dt, cap)
    order = np.argsort(v)
    d = np.broadcast_to(np.asarray(delay.sample(rng, n_frames), dtype=float), (n_frames,))
    od = np.sqrt(error_variance(d, params)) * rng.standard_normal(n_frames)
    a, b = params.step_coefficients(dt)
    so, sl, so2, sl2, sol, n_trunc = _kernels.threshold_scan(
        np.ascontiguousarray(od), np.ascontiguousarray(d), np.ascontiguousarray(v[order]), a, b, float(dt), int(cap), rng
    )
    n = float(n_frames)
    o, ell = so / n, sl / n
    var_o = np.maximum(so2 / n - o * o, 0.0)
    var_l = np.maximum(sl2 / n - ell * ell, 0.0)
    cov = sol / n - o * ell
    r = o / ell
    # delta method for the ratio of means
    var_r = np.maximum(var_o - 2 * r * cov + r * r * var_l, 0.0) / (ell * ell)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    pick = lambda x: x[inv]
    return ThresholdScan(
        v, pick(o), pick(ell), pick(np.sqrt(var_o / n)), pick(np.sqrt(var_l / n)), pick(np.sqrt(var_r / n)), int(n_trunc)
    )


class FrameStatsTable:
    """Spline interpolation of o(beta), l(beta) on a log-spaced beta grid."""

    def __init__(
        self,
        delay: DelayModel,
        params: OuParams,
        beta_min: float,
        beta_max: float | None = None,
        n_grid: int = 80,
        n_delay_nodes: int = DEFAULT_DELAY_NODES,
    ) -> None:
        beta_max = params.sigma**2 if beta_max is None else beta_max
        if not 0 < beta_min < beta_max <= params.sigma**2:
            raise ValueError("need 0 < beta_min < beta_max <= sigma^2")
        self.beta_min, self.beta_max = beta_min, beta_max
        grid = np.geomspace(beta_min, beta_max, n_grid)
        grid[-1] = beta_max
        stats = [expected_frame_stats(b, delay, params, n_delay_nodes) for b in grid]
        lg = np.log(grid)
        self._o = CubicSpline(lg, [s.o for s in stats])
        self._l = CubicSpline(lg, [s.l for s in stats])

    def __call__(self, beta):
        b = np.clip(np.asarray(beta, dtype=float), self.beta_min, self.beta_max)
        lb = np.log(b)
        return self._o(lb), self._l(lb)
