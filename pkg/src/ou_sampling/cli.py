"""Command-line entry point: solve, simulate, compare, validate."""

from __future__ import annotations

import argparse
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config, parse_decimation, resolve_policy
from .policies import Online
from .sim import EnsembleSpec, SimulationError, run_ensemble
from .solver import SolveResult, SolverError, solve_constrained
from .stopping import QuadratureError, TruncatedHitting, expected_frame_stats
from .special import SaturationError, SeriesNotConverged
from .validate import run_validation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VALIDATION = 4

CSV_COLUMNS = ("k", "s_k", "time_avg_mse", "regret", "avg_frame_len", "alpha_k", "u_k", "threshold_k")
_NUMERIC_ERRORS = (SolverError, QuadratureError, SeriesNotConverged, SaturationError, SimulationError, TruncatedHitting)


def fmt(x) -> str:
    """Shortest round-trip decimal; NaN spelled NaN."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def metadata_block(cfg: ExperimentConfig) -> str:
    dumped = yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
    lines = [f"artifact version {__version__}", "resolved config:"]
    lines += dumped.rstrip("\n").split("\n")
    return "".join(f"# {ln}\n" for ln in lines)


def _solve(cfg: ExperimentConfig) -> SolveResult:
    return solve_constrained(cfg.delay, cfg.ou, cfg.f_max, c=cfg.c, eta=cfg.eta)


def solve_report(cfg: ExperimentConfig, n_curve: int = 25) -> str:
    sol = _solve(cfg)
    lines = [f"{k}={fmt(v)}" for k, v in sol.as_dict().items()]
    lines.append(f"f_max={fmt(cfg.f_max)}")
    lines.append(f"frame_length_target={fmt(1.0 / cfg.f_max)}")
    lo = max(cfg.eta, 1e-3 * cfg.ou.sigma**2)
    grid = np.geomspace(lo, cfg.ou.sigma**2, n_curve)
    grid[-1] = cfg.ou.sigma**2
    for i, beta in enumerate(grid):
        st = expected_frame_stats(beta, cfg.delay, cfg.ou)
        lines.append(f"curve.{i}={fmt(beta)},{fmt(st.v)},{fmt(st.o)},{fmt(st.l)}")
    lines.append("curve.columns=beta,v,o,l")
    return "".join(ln + "\n" for ln in lines)


def _metric_rows(res, idx, prefix=()):
    pr = res.per_run
    s_next = np.cumsum(pr["l"], axis=1).mean(axis=0)
    cols = {
        "s_k": s_next,
        "time_avg_mse": res.mean.time_avg_mse,
        "regret": res.mean.regret,
        "avg_frame_len": res.mean.avg_frame_len,
        "alpha_k": pr["alpha"].mean(axis=0),
        "u_k": pr["u_trace"].mean(axis=0),
        "threshold_k": pr["threshold"].mean(axis=0),
    }
    rows = []
    for k in idx:
        i = k - 1
        rows.append(list(prefix) + [fmt(k)] + [fmt(cols[c][i]) for c in CSV_COLUMNS[1:]])
    last = len(s_next) - 1
    rows.append(list(prefix) + ["summary"] + [fmt(cols[c][last]) for c in CSV_COLUMNS[1:]])
    return rows


def _simulate_policy(cfg: ExperimentConfig, spec: dict, sol: SolveResult):
    policy = resolve_policy(spec, cfg, sol)
    es = EnsembleSpec(
        policy=policy,
        delay=cfg.delay,
        params=cfg.ou,
        n_frames=cfg.k_frames,
        n_runs=cfg.n_runs,
        base_seed=cfg.base_seed,
        dt=cfg.dt,
        mmse_ref=sol.mmse,
        alpha_ref=sol.alpha_star if isinstance(policy, Online) else None,
    )
    return run_ensemble(es, workers=cfg.workers)


def simulate_csv(cfg: ExperimentConfig) -> str:
    sol = _solve(cfg)
    res = _simulate_policy(cfg, cfg.policy, sol)
    idx = parse_decimation(cfg.decimate, cfg.k_frames)
    buf = io.StringIO()
    buf.write(metadata_block(cfg))
    buf.write(f"# mmse_ref {fmt(sol.mmse)}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in _metric_rows(res, idx):
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def compare_csv(cfg: ExperimentConfig) -> str:
    if not cfg.policies:
        raise ConfigError("compare needs a non-empty 'policies' list")
    sol = _solve(cfg)
    idx = parse_decimation(cfg.decimate, cfg.k_frames)
    buf = io.StringIO()
    buf.write(metadata_block(cfg))
    buf.write(f"# mmse_ref {fmt(sol.mmse)}\n")
    buf.write(",".join(("policy",) + CSV_COLUMNS) + "\n")
    for spec in cfg.policies:
        res = _simulate_policy(cfg, spec, sol)
        for row in _metric_rows(res, idx, prefix=(spec["kind"],)):
            buf.write(",".join(row) + "\n")
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def _error(kind: str, exc: Exception) -> None:
    sys.stderr.write(f"error={kind}\nmessage={str(exc).replace(chr(10), ' ')}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ou-sampling", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "offline optimum for the configured delay law"),
        ("simulate", "ensemble simulation of the configured policy"),
        ("compare", "common-random-number comparison of several policies"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment file (defaults reproduce the reference setup)")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--out", help="output path")
        if name != "solve":
            p.add_argument("--runs", type=int, help="number of runs")
            p.add_argument("--frames", type=int, help="frames per run")
            p.add_argument("--decimate", help="'log' or a positive integer")
    sub.add_parser("validate", help="reduced-scale oracle and identity checks")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    upd = {}
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        upd["base_seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        if args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        upd["n_runs"] = args.runs
    if getattr(args, "frames", None) is not None:
        if args.frames < 1:
            raise ConfigError("--frames must be >= 1")
        upd["k_frames"] = args.frames
    if getattr(args, "decimate", None) is not None:
        parse_decimation(args.decimate, 1)
        upd["decimate"] = args.decimate
    return replace(cfg, **upd) if upd else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        results = run_validation()
        for r in results:
            sys.stdout.write(r.line() + "\n")
        failed = [r.name for r in results if not r.passed]
        sys.stdout.write(f"summary: {len(results) - len(failed)}/{len(results)} checks passed\n")
        return EXIT_VALIDATION if failed else EXIT_OK
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = args.out or cfg.output
        if args.command == "solve":
            _emit(solve_report(cfg), out)
        elif args.command == "simulate":
            _emit(simulate_csv(cfg), out)
        else:
            _emit(compare_csv(cfg), out)
    except ConfigError as exc:
        _error("config", exc)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        _error(type(exc).__name__, exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
