"""Threshold function G, its inverse, the mean exit-time series R1 and normal helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
from scipy import special as sp

from .ou import OuParams

# e^{x^2} overflows a double just above x = 26.64; keep a margin.
G_SATURATION_X = 26.5
_TAYLOR_X = 1e-4


class SeriesNotConverged(ArithmeticError):
    """The R1 series did not reach the requested tolerance within max_terms."""


class SaturationError(OverflowError):
    """Argument is too large for G to be represented in double precision."""


@dataclass(frozen=True)
class SeriesConfig:
    rel_tol: float = 1e-12
    max_terms: int = 500

    def __post_init__(self) -> None:
        if not (0.0 < self.rel_tol < 1.0):
            raise ValueError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if int(self.max_terms) != self.max_terms or self.max_terms < 10:
            raise ValueError(f"max_terms must be an integer >= 10, got {self.max_terms}")


DEFAULT_SERIES = SeriesConfig()


@numba.njit(cache=True)
def _g_core(x: float) -> float:
    if x < _TAYLOR_X:
        x2 = x * x
        return 1.0 + x2 * (2.0 / 3.0 + x2 * (4.0 / 15.0))
    return math.exp(x * x) * (0.5 * math.sqrt(math.pi)) * math.erf(x) / x


@numba.njit(cache=True)
def _g_prime(x: float, g: float) -> float:
    if x < _TAYLOR_X:
        return x * (4.0 / 3.0 + x * x * (16.0 / 15.0))
    return 2.0 * x * g + (1.0 - g) / x


@numba.njit(cache=True)
def _g_inv_core(y: float) -> float:
    """Safeguarded Newton iteration for G(x) = y, y >= 1."""
    if y <= 1.0:
        return 0.0
    lo = 0.0
    hi = 1.0
    while _g_core(hi) < y:
        lo = hi
        hi *= 2.0
        if hi > G_SATURATION_X:
            hi = G_SATURATION_X
            break
    # starting point from the small- or large-argument asymptotics
    if y < 2.0:
        x = math.sqrt(1.5 * (y - 1.0))
    else:
        x = math.sqrt(math.log(y))
    if x <= lo or x >= hi:
        x = 0.5 * (lo + hi)
    for _ in range(200):
        g = _g_core(x)
        f = g - y
        if abs(f) <= 1e-14 * y:
            return x
        if f > 0.0:
            hi = x
        else:
            lo = x
        d = _g_prime(x, g)
        step_ok = False
        if d > 0.0:
            xn = x - f / d
            if lo < xn < hi:
                step_ok = True
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 4e-16 * max(xn, 1e-300):
            return xn
        x = xn
    return x


def g_fn(x: float) -> float:
    """G(x) = e^{x^2} (sqrt(pi)/2) erf(x) / x with G(0) = 1."""
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise ValueError(f"g_fn needs a finite x >= 0, got {x}")
    if x > G_SATURATION_X:
        raise SaturationError(f"G({x}) overflows double precision")
    return float(_g_core(x))


def g_inv(y: float) -> float:
    """Inverse of G on [1, inf), accurate to 1e-10 relative in G."""
    y = float(y)
    if math.isnan(y) or y < 1.0:
        raise ValueError(f"g_inv needs y >= 1, got {y}")
    if y > _g_core(G_SATURATION_X):
        raise SaturationError(f"G^-1({y}) exceeds the representable range")
    return float(_g_inv_core(y))


def r1(v, params: OuParams, cfg: SeriesConfig = DEFAULT_SERIES):
    """Mean first time a zero-started OU error reaches +-v.

    Evaluates (v^2/sigma^2) * sum_n 2^n z^n / ((n+1)(2n+1)!!) with z = theta v^2 / sigma^2
    through the term recurrence. Accepts scalars or arrays.
    """
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise ValueError("r1 needs finite thresholds v >= 0")
    s2 = params.sigma * params.sigma
    z = params.theta * arr * arr / s2
    term = np.ones_like(arr)
    total = np.ones_like(arr)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(cfg.max_terms):
            term = term * (2.0 * z * (n + 1) / ((n + 2) * (2 * n + 3)))
            total = total + term
            if np.all(term <= cfg.rel_tol * total) or not np.all(np.isfinite(total)):
                break
        else:
            raise SeriesNotConverged(
                f"R1 series needs more than {cfg.max_terms} terms (max z = {float(np.max(z)):.4g})"
            )
    out = arr * arr / s2 * total
    if not np.all(np.isfinite(out)):
        raise SaturationError(f"R1 overflows double precision (max z = {float(np.max(z)):.4g})")
    if out.ndim == 0:
        return float(out)
    return out


@numba.njit(cache=True)
def r1_scalar(v: float, theta: float, sigma: float, rel_tol: float, max_terms: int) -> float:
    """Jitted scalar R1; returns NaN when the series fails to converge."""
    s2 = sigma * sigma
    z = theta * v * v / s2
    term = 1.0
    total = 1.0
    for n in range(max_terms):
        term *= 2.0 * z * (n + 1) / ((n + 2) * (2 * n + 3))
        total += term
        if term <= rel_tol * total:
            return v * v / s2 * total
    return math.nan


class NormalValues(NamedTuple):
    cdf: float
    pdf: float
    erf: float


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(u):
    return sp.ndtr(u)


def normal_pdf(u):
    u = np.asarray(u, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return float(out) if out.ndim == 0 else out


def erf(u):
    return sp.erf(u)


def normal_helpers(u: float) -> NormalValues:
    u = float(u)
    if math.isnan(u):
        raise ValueError("normal_helpers needs a non-NaN argument")
    return NormalValues(float(normal_cdf(u)), float(normal_pdf(u)), float(erf(u)))
