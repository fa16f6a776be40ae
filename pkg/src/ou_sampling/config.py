"""Experiment configuration: YAML loading, validation and policy resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .ou import OuParams
from .policies import (
    AoiBaseline,
    AoiSearchConfig,
    ConstWait,
    FreqConservative,
    Online,
    OnlineConfig,
    Oracle,
    PolicyKind,
    ZeroWait,
    default_online_guard,
    tune_aoi_baseline,
)
from .solver import DEFAULT_C, SolveResult, alpha_bounds
from .stopping import DelayModel, guard_eta


class ConfigError(ValueError):
    """The configuration is malformed or violates a model invariant."""


_TOP_KEYS = {
    "ou",
    "delay",
    "policy",
    "policies",
    "k_frames",
    "dt",
    "n_runs",
    "base_seed",
    "f_max",
    "v_param",
    "c",
    "guard_eta",
    "output",
    "decimate",
    "workers",
}
_OU_KEYS = {"theta", "mu", "sigma"}
_DELAY_KEYS = {"kind", "mu_d", "sigma_d", "rate", "value", "samples", "d_lb", "d_ub", "m_ub"}
_POLICY_KEYS = {
    "zero_wait": set(),
    "const_wait": {"wait"},
    "freq_conservative": {"f_max"},
    "aoi_baseline": {"beta_aoi"},
    "oracle": {"beta"},
    "online": {"alpha_init"},
}

DEFAULTS: dict[str, Any] = {
    "ou": {"theta": 0.2, "mu": 3.0, "sigma": 1.0},
    "delay": {"kind": "lognormal", "mu_d": 1.0, "sigma_d": 1.0},
    "policy": {"kind": "online"},
    "k_frames": 10_000,
    "dt": 1e-2,
    "n_runs": 100,
    "base_seed": 2024,
    "f_max": math.inf,
    "v_param": 500.0,
    "c": DEFAULT_C,
    "guard_eta": None,
    "output": None,
    "decimate": "log",
    "workers": 1,
}


def _parse_f_max(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        raise ConfigError(f"f_max must be a number or 'inf', got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"f_max must be a number or 'inf', got {value!r}")
    if not value > 0:
        raise ConfigError(f"f_max must be > 0, got {value}")
    return float(value)


def _number(name: str, value, positive: bool = False, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{name} must be > 0, got {value!r}")
    return int(value) if integer else float(value)


def _check_keys(where: str, given: dict, allowed: set) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = sorted(set(given) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, extra))}")


def _policy_spec(spec, where: str) -> dict:
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where} needs a 'kind'")
    kind = spec["kind"]
    if kind not in _POLICY_KEYS:
        raise ConfigError(f"{where}: unknown policy kind {kind!r}; expected one of {sorted(_POLICY_KEYS)}")
    _check_keys(where, spec, {"kind"} | _POLICY_KEYS[kind])
    return dict(spec)


@dataclass
class ExperimentConfig:
    ou: OuParams
    delay: DelayModel
    policy: dict
    policies: list[dict] = field(default_factory=list)
    k_frames: int = 10_000
    dt: float = 1e-2
    n_runs: int = 100
    base_seed: int = 2024
    f_max: float = math.inf
    v_param: float = 500.0
    c: float = DEFAULT_C
    guard_eta: float | None = None
    output: str | None = None
    decimate: str = "log"
    workers: int = 1

    @property
    def eta(self) -> float:
        """Floor of the solver's beta search."""
        return guard_eta(self.ou) if self.guard_eta is None else self.guard_eta

    @property
    def online_eta(self) -> float:
        """Clamp on alpha_k - lambda_k used by the online learner."""
        if self.guard_eta is not None:
            return self.guard_eta
        return default_online_guard(self.ou, alpha_bounds(self.delay, self.f_max, self.c, self.ou))

    def to_dict(self) -> dict:
        return {
            "ou": {"theta": self.ou.theta, "mu": self.ou.mu, "sigma": self.ou.sigma},
            "delay": self.delay.to_dict(),
            "policy": dict(self.policy),
            "policies": [dict(p) for p in self.policies],
            "k_frames": self.k_frames,
            "dt": self.dt,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "f_max": "inf" if math.isinf(self.f_max) else self.f_max,
            "v_param": self.v_param,
            "c": self.c,
            "guard_eta": self.online_eta,
            "output": self.output,
            "decimate": self.decimate,
            "workers": self.workers,
        }


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    raw = {} if raw is None else raw
    _check_keys("config", raw, _TOP_KEYS)
    merged = {**DEFAULTS, **raw}
    ou_raw = {**DEFAULTS["ou"], **(raw.get("ou") or {})}
    _check_keys("ou", ou_raw, _OU_KEYS)
    try:
        ou = OuParams(**{k: _number(f"ou.{k}", v) for k, v in ou_raw.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    delay_raw = raw.get("delay", DEFAULTS["delay"])
    _check_keys("delay", delay_raw, _DELAY_KEYS)
    try:
        delay = DelayModel(**delay_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"delay: {exc}") from exc
    policy = _policy_spec(merged["policy"], "policy")
    policies_raw = merged.get("policies") or []
    if not isinstance(policies_raw, list):
        raise ConfigError("policies must be a list")
    policies = [_policy_spec(p, f"policies[{i}]") for i, p in enumerate(policies_raw)]
    g = merged["guard_eta"]
    cfg = ExperimentConfig(
        ou=ou,
        delay=delay,
        policy=policy,
        policies=policies,
        k_frames=_number("k_frames", merged["k_frames"], positive=True, integer=True),
        dt=_number("dt", merged["dt"], positive=True),
        n_runs=_number("n_runs", merged["n_runs"], positive=True, integer=True),
        base_seed=_number("base_seed", merged["base_seed"], integer=True),
        f_max=_parse_f_max(merged["f_max"]),
        v_param=_number("v_param", merged["v_param"], positive=True),
        c=_number("c", merged["c"], positive=True),
        guard_eta=None if g is None else _number("guard_eta", g, positive=True),
        output=None if merged["output"] is None else str(merged["output"]),
        decimate=str(merged["decimate"]),
        workers=_number("workers", merged["workers"], positive=True, integer=True),
    )
    if cfg.base_seed < 0:
        raise ConfigError("base_seed must be >= 0")
    parse_decimation(cfg.decimate, 1)
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(raw)


def parse_decimation(spec: str, k_frames: int) -> list[int]:
    """Frame indices (1-based) to report: 'log' (sqrt(2) spacing), or every n-th frame."""
    spec = str(spec).strip().lower()
    if spec == "log":
        idx = {1, k_frames}
        j = 0
        while True:
            k = int(round(2.0 ** (j / 2.0)))
            if k > k_frames:
                break
            idx.add(k)
            j += 1
        return sorted(idx)
    try:
        n = int(spec)
    except ValueError as exc:
        raise ConfigError(f"decimate must be 'log' or a positive integer, got {spec!r}") from exc
    if n < 1:
        raise ConfigError(f"decimate must be >= 1, got {n}")
    idx = list(range(n, k_frames + 1, n))
    if not idx or idx[-1] != k_frames:
        idx.append(k_frames)
    return idx


def resolve_policy(spec: dict, cfg: ExperimentConfig, solution: SolveResult | None) -> PolicyKind:
    """Turn a policy mapping into a policy object; 'auto' parameters come from the solver or tuning."""
    kind = spec["kind"]
    try:
        if kind == "zero_wait":
            return ZeroWait()
        if kind == "const_wait":
            return ConstWait(_number("const_wait.wait", spec.get("wait", 0.0)))
        if kind == "freq_conservative":
            f = _parse_f_max(spec.get("f_max", cfg.f_max))
            if math.isinf(f):
                raise ConfigError("freq_conservative needs a finite f_max")
            return FreqConservative(f)
        if kind == "aoi_baseline":
            beta = spec.get("beta_aoi", "auto")
            if beta == "auto":
                beta = tune_aoi_baseline(cfg.delay, AoiSearchConfig(seed=cfg.base_seed)).beta_aoi
            return AoiBaseline(_number("aoi_baseline.beta_aoi", beta))
        if kind == "oracle":
            beta = spec.get("beta", "auto")
            if beta == "auto":
                if solution is None:
                    raise ConfigError("oracle with beta 'auto' needs a solver result")
                beta = solution.beta_star
            return Oracle(_number("oracle.beta", beta, positive=True))
        init = spec.get("alpha_init")
        return Online(
            OnlineConfig.build(
                cfg.delay,
                cfg.ou,
                v_param=cfg.v_param,
                f_max=cfg.f_max,
                c=cfg.c,
                eta=cfg.online_eta,
                alpha_init=None if init is None else _number("online.alpha_init", init),
            )
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"policy {kind}: {exc}") from exc


def policy_label(spec: dict) -> str:
    return spec["kind"]
