"""Reduced-scale oracle and identity checks behind the `validate` command."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ou import REFERENCE_PARAMS
from .policies import Online, OnlineConfig, Oracle, ZeroWait
from .sim import frame_moments, run_episode
from .solver import alpha_bounds, moment_bounds, renewal_mse, solve_alpha_star, zero_wait_mse
from .special import g_fn, g_inv, r1
from .stopping import (
    REFERENCE_DELAY,
    expected_frame_stats,
    simulate_frame_stats,
    simulate_frames_from_zero,
    simulate_hitting_batch,
    threshold_v,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: deviation {self.measured:.4g} (tolerance {self.tolerance:.4g}) {self.detail}".rstrip()


def _check(name: str, measured: float, tolerance: float, detail: str = "") -> CheckResult:
    ok = bool(np.isfinite(measured) and measured <= tolerance)
    return CheckResult(name, ok, float(measured), float(tolerance), detail)


def check_g_roundtrip() -> CheckResult:
    ys = (1 + 1e-6, 1.5, 3.0, 10.0, 100.0, 1e4)
    dev = max(abs(g_fn(g_inv(y)) - y) / y for y in ys)
    return _check("g-roundtrip", dev, 1e-10, "max relative |G(G^-1(y)) - y| / y")


def check_r1_vs_mc(r1_fn: Callable = r1, seed: int = 11, n_paths: int = 20_000) -> CheckResult:
    p = REFERENCE_PARAMS
    gen = np.random.default_rng(seed)
    worst = 0.0
    for v in (0.5, 1.0):
        hb = simulate_hitting_batch(np.zeros(n_paths), v, p, dt=1e-3, rng=gen)
        worst = max(worst, abs(hb.wait.mean() / r1_fn(v, p) - 1.0))
    return _check("r1-vs-MC", worst, 0.02, f"relative error of R1 against {n_paths} simulated hitting times")


def check_hitting_identity(r1_fn: Callable = r1, seed: int = 12, n_paths: int = 10_000) -> CheckResult:
    p = REFERENCE_PARAMS
    gen = np.random.default_rng(seed)
    x, v = 0.6, 1.5
    hb = simulate_hitting_batch(np.full(n_paths, x), v, p, dt=1e-3, rng=gen)
    se = hb.wait.std(ddof=1) / math.sqrt(n_paths)
    z = abs(hb.wait.mean() - (r1_fn(v, p) - r1_fn(x, p))) / se
    return _check("hitting-identity", z, 3.0, "standard errors between R1(v) - R1(x) and simulation")


def check_frame_stats(seed: int = 13, n_frames: int = 20_000) -> CheckResult:
    p, d = REFERENCE_PARAMS, REFERENCE_DELAY
    gen = np.random.default_rng(seed)
    worst = 0.0
    for beta in (0.3, 0.6):
        an = expected_frame_stats(beta, d, p)
        mc = simulate_frame_stats(beta, d, p, n_frames, gen, dt=1e-3)
        worst = max(worst, abs(an.o - mc.o) / mc.o_se, abs(an.l - mc.l) / mc.l_se)
    return _check("frame-stats-vs-MC", worst, 3.0, "standard errors between semi-analytic and simulated (o, l)")


def check_stopping_identity(seed: int = 14, n_frames: int = 10_000) -> CheckResult:
    p, d = REFERENCE_PARAMS, REFERENCE_DELAY
    gen = np.random.default_rng(seed)
    delays = d.sample(gen, n_frames)
    hb = simulate_frames_from_zero(delays, threshold_v(0.5, p), p, dt=1e-3, rng=gen)
    diff = hb.integrated_sq_error - (p.stationary_variance * hb.wait - hb.end_error**2 / (2 * p.theta))
    z = abs(diff.mean()) / (diff.std(ddof=1) / math.sqrt(n_frames))
    return _check("stopping-identity", z, 3.0, "standard errors of E[int O^2 - (sigma^2 tau - O_tau^2)/(2 theta)]")


def check_renewal_identity(seed: int = 15, n_frames: int = 20_000) -> CheckResult:
    p, d = REFERENCE_PARAMS, REFERENCE_DELAY
    sol = solve_alpha_star(d, p)
    ep = run_episode(Oracle(sol.beta_star), d, p, n_frames, seed=seed)
    f = ep.frames
    traj = f.e.sum() / f.l.sum()
    rr = renewal_mse(float((f.o**2).mean()), float(f.l.mean()), d, p)
    zw = run_episode(ZeroWait(), d, p, n_frames, seed=seed).frames
    closed = zero_wait_mse(d, p)
    dev = max(abs(traj / rr - 1.0), abs(zw.e.sum() / zw.l.sum() / closed - 1.0))
    return _check("renewal-identity", dev, 0.02, "relative gap of trajectory MSE vs renewal-reward formula")


def check_moment_bounds(seed: int = 16, n_frames: int = 5_000) -> CheckResult:
    """Frame-length bounds on an online episode; error-moment bounds on a zero-wait episode.

    The error-moment bounds only hold when the wait does not depend on the error path;
    under threshold stopping E[O^2] is at least about v^2, which exceeds sigma^2/(2 theta)
    at the optimal threshold of the reference setup.
    """
    p, d = REFERENCE_PARAMS, REFERENCE_DELAY
    b = alpha_bounds(d, math.inf, 1.0, p)
    mb = moment_bounds(d, p, threshold_v(b.alpha_lb, p))
    on = frame_moments(run_episode(Online(OnlineConfig.build(d, p)), d, p, n_frames, seed=seed).frames)
    zw = frame_moments(run_episode(ZeroWait(), d, p, n_frames, seed=seed).frames)
    ratio = max(on.l1 / mb.l1, on.l2 / mb.l2, zw.o2 / mb.o2, zw.o4 / mb.o4, zw.l1 / mb.l1, zw.l2 / mb.l2)
    return CheckResult(
        "moment-bounds", bool(ratio < 1.0), ratio, 1.0, "largest empirical moment / bound ratio"
    )


def check_determinism(seed: int = 17) -> CheckResult:
    p, d = REFERENCE_PARAMS, REFERENCE_DELAY
    pol = Online(OnlineConfig.build(d, p))
    a = run_episode(pol, d, p, 300, seed=seed).frames
    b = run_episode(pol, d, p, 300, seed=seed).frames
    same = all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("s", "d", "w", "o", "e"))
    return CheckResult("determinism", same, 0.0 if same else 1.0, 0.0, "bitwise equality of repeated episodes")


def run_validation(r1_fn: Callable = r1) -> list[CheckResult]:
    """Run every check; failures are collected, never short-circuited."""
    checks = [
        check_g_roundtrip,
        lambda: check_r1_vs_mc(r1_fn),
        lambda: check_hitting_identity(r1_fn),
        check_frame_stats,
        check_stopping_identity,
        check_renewal_identity,
        check_moment_bounds,
        check_determinism,
    ]
    names = [
        "g-roundtrip",
        "r1-vs-MC",
        "hitting-identity",
        "frame-stats-vs-MC",
        "stopping-identity",
        "renewal-identity",
        "moment-bounds",
        "determinism",
    ]
    out = []
    for name, fn in zip(names, checks):
        try:
            out.append(fn())
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(name, False, math.nan, math.nan, f"raised {type(exc).__name__}: {exc}"))
    return out
