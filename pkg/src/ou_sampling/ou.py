"""Ornstein-Uhlenbeck signal, MMSE estimator and error bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class OuParams:
    """Law of dX = theta (mu - X) dt + sigma dW."""

    theta: float
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        for name in ("theta", "mu", "sigma"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValueError(f"{name} must be a finite number, got {v!r}")
        if self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.theta)

    def step_coefficients(self, dt: float) -> tuple[float, float]:
        """Return (decay, noise_std) of the exact transition over dt."""
        a = math.exp(-self.theta * dt)
        b = self.sigma * math.sqrt(-math.expm1(-2.0 * self.theta * dt) / (2.0 * self.theta))
        return a, b


REFERENCE_PARAMS = OuParams(theta=0.2, mu=3.0, sigma=1.0)


def exact_step(x, dt: float, params: OuParams, z):
    """Advance the signal by dt using the exact Gaussian transition."""
    _check_finite("x", x)
    _check_finite("z", z)
    if not math.isfinite(dt) or dt < 0:
        raise ValueError(f"dt must be finite and >= 0, got {dt}")
    a, b = params.step_coefficients(dt)
    return params.mu + (x - params.mu) * a + b * z


def estimator_predict(x_sample, elapsed, params: OuParams):
    """Conditional mean of the signal `elapsed` time units after observing x_sample."""
    elapsed = np.asarray(elapsed, dtype=float)
    if np.any(np.isnan(elapsed)) or np.any(elapsed < 0):
        raise ValueError("elapsed must be >= 0")
    decay = np.exp(-params.theta * elapsed)
    out = x_sample * decay + params.mu * (1.0 - decay)
    return float(out) if np.ndim(out) == 0 else out


def error_variance(elapsed, params: OuParams):
    """Variance of X_t - X_hat_t when the freshest sample is `elapsed` old."""
    elapsed = np.asarray(elapsed, dtype=float)
    if np.any(np.isnan(elapsed)) or np.any(elapsed < 0):
        raise ValueError("elapsed must be >= 0")
    out = params.stationary_variance * -np.expm1(-2.0 * params.theta * elapsed)
    return float(out) if out.ndim == 0 else out


@dataclass
class PathSegment:
    t0: float
    dt: float
    signal: np.ndarray
    estimate: np.ndarray
    error: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        self.signal = np.asarray(self.signal, dtype=float)
        self.estimate = np.asarray(self.estimate, dtype=float)
        if self.signal.shape != self.estimate.shape or self.signal.ndim != 1:
            raise ValueError("signal and estimate must be 1-d arrays of equal length")
        diff = self.signal - self.estimate
        if self.error is None:
            self.error = diff
        else:
            self.error = np.asarray(self.error, dtype=float)
            if self.error.shape != diff.shape or not np.array_equal(self.error, diff):
                raise ValueError("error must equal signal - estimate elementwise")

    def __len__(self) -> int:
        return self.signal.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))


def integrate_squared_error(seg: PathSegment) -> float:
    """Trapezoid rule for the integral of error^2 over the segment."""
    if len(seg) < 2:
        raise ValueError("need at least two grid points to integrate")
    e2 = seg.error * seg.error
    return float(seg.dt * (0.5 * (e2[0] + e2[-1]) + e2[1:-1].sum()))


def simulate_segment(
    x0: float,
    x_sample: float,
    sample_age: float,
    n_steps: int,
    dt: float,
    params: OuParams,
    rng: np.random.Generator,
    t0: float = 0.0,
) -> PathSegment:
    """Simulate signal and estimator on a grid of n_steps + 1 points.

    The estimator predicts from x_sample, which was taken `sample_age` before t0.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    a, b = params.step_coefficients(dt)
    z = rng.standard_normal(n_steps)
    x = np.empty(n_steps + 1)
    x[0] = x0
    for i in range(n_steps):
        x[i + 1] = params.mu + (x[i] - params.mu) * a + b * z[i]
    ages = sample_age + dt * np.arange(n_steps + 1)
    est = estimator_predict(x_sample, ages, params)
    return PathSegment(t0=t0, dt=dt, signal=x, estimate=est)
