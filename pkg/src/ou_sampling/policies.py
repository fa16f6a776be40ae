"""Sampling policies and the online stochastic-approximation learner."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .ou import OuParams
from .solver import DEFAULT_C, AlphaBounds, alpha_bounds
from .stopping import DelayModel, guard_eta, guarded_threshold, threshold_v


@dataclass(frozen=True)
class ZeroWait:
    name = "zero_wait"


@dataclass(frozen=True)
class ConstWait:
    wait: float
    name = "const_wait"

    def __post_init__(self) -> None:
        if not (self.wait >= 0 and math.isfinite(self.wait)):
            raise ValueError(f"constant wait must be finite and >= 0, got {self.wait}")


@dataclass(frozen=True)
class FreqConservative:
    """Wait until the k-th sample would respect the average rate f_max."""

    f_max: float
    name = "freq_conservative"

    def __post_init__(self) -> None:
        if not (self.f_max > 0 and math.isfinite(self.f_max)):
            raise ValueError(f"f_max must be finite and > 0, got {self.f_max}")


@dataclass(frozen=True)
class AoiBaseline:
    """Signal-agnostic water-filling on the delay: W = (beta_aoi - D)^+."""

    beta_aoi: float
    name = "aoi_baseline"

    def __post_init__(self) -> None:
        if not (self.beta_aoi >= 0 and math.isfinite(self.beta_aoi)):
            raise ValueError(f"beta_aoi must be finite and >= 0, got {self.beta_aoi}")


@dataclass(frozen=True)
class Oracle:
    """Known-statistics threshold policy with threshold v(beta)."""

    beta: float
    name = "oracle"

    def __post_init__(self) -> None:
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"oracle beta must be > 0, got {self.beta}")


def default_online_guard(params: OuParams, bounds: AlphaBounds) -> float:
    """Lower clamp on alpha_k - lambda_k used by the learner unless one is given.

    The mean wait grows like exp(theta v^2 / sigma^2), so a tiny clamp turns every clamped
    frame into an excursion thousands of frames long, after which the alpha innovation
    pins alpha_k at alpha_lb and the clamp binds again. Clamping at alpha_lb, the learner's
    own projection floor, keeps clamped frames of moderate length; it cannot bind without
    a frequency constraint because alpha_k >= alpha_lb and lambda_k = 0 there.
    """
    return max(guard_eta(params), bounds.alpha_lb)


@dataclass(frozen=True)
class OnlineConfig:
    v_param: float
    f_max: float
    d_lb: float
    alpha_bounds: AlphaBounds
    guard_eta: float
    alpha_init: float

    def __post_init__(self) -> None:
        if not (self.v_param > 0 and math.isfinite(self.v_param)):
            raise ValueError(f"V must be finite and > 0, got {self.v_param}")
        if not self.f_max > 0:
            raise ValueError(f"f_max must be > 0, got {self.f_max}")
        if not (self.d_lb > 0 and math.isfinite(self.d_lb)):
            raise ValueError(f"d_lb must be finite and > 0, got {self.d_lb}")
        if not self.guard_eta > 0:
            raise ValueError(f"guard_eta must be > 0, got {self.guard_eta}")
        b = self.alpha_bounds
        if not (b.alpha_lb <= self.alpha_init <= b.alpha_ub):
            raise ValueError(f"alpha_init {self.alpha_init} outside [{b.alpha_lb}, {b.alpha_ub}]")

    @classmethod
    def build(
        cls,
        delay: DelayModel,
        params: OuParams,
        v_param: float = 500.0,
        f_max: float = math.inf,
        c: float = DEFAULT_C,
        eta: float | None = None,
        alpha_init: float | None = None,
    ) -> "OnlineConfig":
        bounds = alpha_bounds(delay, f_max, c, params)
        if eta is None:
            eta = default_online_guard(params, bounds)
        return cls(
            v_param=float(v_param),
            f_max=float(f_max),
            d_lb=float(delay.d_lb),
            alpha_bounds=bounds,
            guard_eta=float(eta),
            alpha_init=bounds.alpha_lb if alpha_init is None else float(alpha_init),
        )


@dataclass(frozen=True)
class Online:
    config: OnlineConfig
    name = "online"


PolicyKind = Union[ZeroWait, ConstWait, FreqConservative, AoiBaseline, Oracle, Online]


@dataclass(frozen=True)
class OnlineState:
    k: int
    alpha_k: float
    u_k: float
    lambda_k: float
    eta_k: float


def step_size(k: int, d_lb: float) -> float:
    return 1.0 / (2.0 * d_lb) if k == 1 else 1.0 / ((k + 2) * d_lb)


def initial_state(cfg: OnlineConfig) -> OnlineState:
    return OnlineState(k=1, alpha_k=cfg.alpha_init, u_k=0.0, lambda_k=0.0, eta_k=step_size(1, cfg.d_lb))


def online_update(state: OnlineState, o_lk_sq: float, l_k: float, cfg: OnlineConfig) -> OnlineState:
    """One Robbins-Monro step on alpha and one virtual-queue step on U."""
    b = cfg.alpha_bounds
    alpha = state.alpha_k + state.eta_k * (o_lk_sq - state.alpha_k * l_k)
    alpha = min(max(alpha, b.alpha_lb), b.alpha_ub)
    if math.isinf(cfg.f_max):
        u = 0.0
    else:
        u = max(state.u_k + 1.0 / cfg.f_max - l_k, 0.0)
    k = state.k + 1
    return OnlineState(k=k, alpha_k=alpha, u_k=u, lambda_k=u / cfg.v_param, eta_k=step_size(k, cfg.d_lb))


def online_beta(state: OnlineState, cfg: OnlineConfig, params: OuParams) -> float:
    """The guarded threshold argument max(alpha_k - lambda_k, eta), capped at sigma^2."""
    return min(max(state.alpha_k - state.lambda_k, cfg.guard_eta), params.sigma**2)


@dataclass(frozen=True)
class FrameContext:
    k: int
    d_k: float
    error_at_reception: float
    elapsed: float  # sum of the lengths of frames 1..k-1


@dataclass(frozen=True)
class WaitDecision:
    """Either a fixed wait or a threshold on |error|; exactly one is set."""

    wait: float | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        if (self.wait is None) == (self.threshold is None):
            raise ValueError("set exactly one of wait and threshold")


def decide_wait(
    policy: PolicyKind,
    ctx: FrameContext,
    params: OuParams,
    state: OnlineState | None = None,
    threshold_cache: dict | None = None,
) -> WaitDecision:
    if isinstance(policy, ZeroWait):
        return WaitDecision(wait=0.0)
    if isinstance(policy, ConstWait):
        return WaitDecision(wait=policy.wait)
    if isinstance(policy, FreqConservative):
        return WaitDecision(wait=max(ctx.k / policy.f_max - ctx.elapsed - ctx.d_k, 0.0))
    if isinstance(policy, AoiBaseline):
        return WaitDecision(wait=max(policy.beta_aoi - ctx.d_k, 0.0))
    if isinstance(policy, Oracle):
        if threshold_cache is not None and "oracle" in threshold_cache:
            return WaitDecision(threshold=threshold_cache["oracle"])
        v = threshold_v(policy.beta, params)
        if threshold_cache is not None:
            threshold_cache["oracle"] = v
        return WaitDecision(threshold=v)
    if isinstance(policy, Online):
        if state is None:
            raise ValueError("online policy needs its learner state")
        cfg = policy.config
        return WaitDecision(threshold=guarded_threshold(state.alpha_k - state.lambda_k, params, cfg.guard_eta))
    raise TypeError(f"unknown policy {policy!r}")


def policy_to_dict(policy: PolicyKind) -> dict:
    if isinstance(policy, ZeroWait):
        return {"kind": "zero_wait"}
    if isinstance(policy, ConstWait):
        return {"kind": "const_wait", "wait": policy.wait}
    if isinstance(policy, FreqConservative):
        return {"kind": "freq_conservative", "f_max": policy.f_max}
    if isinstance(policy, AoiBaseline):
        return {"kind": "aoi_baseline", "beta_aoi": policy.beta_aoi}
    if isinstance(policy, Oracle):
        return {"kind": "oracle", "beta": policy.beta}
    if isinstance(policy, Online):
        c = policy.config
        return {
            "kind": "online",
            "v_param": c.v_param,
            "f_max": c.f_max,
            "d_lb": c.d_lb,
            "alpha_lb": c.alpha_bounds.alpha_lb,
            "alpha_ub": c.alpha_bounds.alpha_ub,
            "c": c.alpha_bounds.c,
            "guard_eta": c.guard_eta,
            "alpha_init": c.alpha_init,
        }
    raise TypeError(f"unknown policy {policy!r}")


def oracle_for(solution, params: OuParams) -> Oracle:
    """Oracle policy at the solver's beta* = alpha* - lambda*."""
    return Oracle(beta=min(solution.beta_star, params.sigma**2))


# ---------------------------------------------------------------------------
# AoI baseline tuning


def average_aoi(beta_aoi: float, delays: np.ndarray) -> float:
    """Time-average age under W_k = (beta_aoi - D_k)^+ for the delay sequence given.

    Between receptions k and k+1 the age rises linearly from D_k to L_k + D_{k+1}.
    """
    d = np.asarray(delays, dtype=float)
    if d.size < 2:
        raise ValueError("need at least two delays")
    ell = np.maximum(d[:-1], beta_aoi)
    top = ell + d[1:]
    area = 0.5 * (top * top - d[:-1] ** 2)
    span = np.sum(top - d[:-1])
    return float(area.sum() / span)


@dataclass(frozen=True)
class AoiSearchConfig:
    n_frames: int = 100_000
    seed: int = 20240601
    rel_tol: float = 1e-4
    max_iter: int = 200
    upper_factor: float = 5.0


@dataclass(frozen=True)
class AoiTuning:
    beta_aoi: float
    average_aoi: float
    zero_wait_aoi: float
    iterations: int


class SearchNotConverged(RuntimeError):
    pass


def tune_aoi_baseline(delay: DelayModel, search: AoiSearchConfig = AoiSearchConfig()) -> AoiTuning:
    """Golden-section search of beta_aoi in [0, upper_factor * d_ub] on common random delays."""
    gen = np.random.default_rng(search.seed)
    delays = np.asarray(delay.sample(gen, search.n_frames + 1), dtype=float)
    f = lambda b: average_aoi(b, delays)
    lo, hi = 0.0, search.upper_factor * delay.d_ub
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - inv * (hi - lo), lo + inv * (hi - lo)
    f1, f2 = f(x1), f(x2)
    it = 0
    while hi - lo > search.rel_tol * max(delay.d_ub, 1e-12):
        if it >= search.max_iter:
            raise SearchNotConverged(f"golden-section search stalled at [{lo}, {hi}]")
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv * (hi - lo)
            f2 = f(x2)
        it += 1
    best = 0.5 * (lo + hi)
    f_best, f_zero = f(best), f(0.0)
    if f_zero <= f_best:
        best, f_best = 0.0, f_zero
    return AoiTuning(beta_aoi=best, average_aoi=f_best, zero_wait_aoi=f_zero, iterations=it)
