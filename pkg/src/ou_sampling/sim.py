"""Frame-structured episode simulation, metrics and ensembles.

Random numbers are counter based: run r of an ensemble owns a Philox key derived from
SeedSequence(base_seed, spawn_key=(r,)), and frame k draws from the block counter
(0, 0, 0, k), so every frame has its own reproducible sub-stream of 2^192 blocks
(frame 0 supplies the initial signal). Offsetting a linear-congruential generator such
as PCG64 by multiples of 2^64 would leave consecutive frames with shared low state bits
and visibly correlated output, which the counter layout avoids.
Within a frame the order of draws is fixed: the delay, the normals of the delay phase,
then the waiting-phase noise. Because the fresh estimation error starts at zero at
every sampling instant, two policies run with the same seed see identical delays and
identical error paths in every frame; they differ only through their waiting rules.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .ou import OuParams
from .policies import (
    FrameContext,
    Online,
    OnlineState,
    PolicyKind,
    decide_wait,
    initial_state,
    online_beta,
    online_update,
)
from .stopping import DEFAULT_CAP, DelayModel, FrameStatsTable, TruncatedHitting, decay_moment

DEFAULT_EPISODE_DT = 1e-2
_FIRST_CHUNK = 512
_MAX_CHUNK = 1 << 16


class SimulationError(RuntimeError):
    """An episode aborted; the message names the run and frame."""


@dataclass(frozen=True)
class FrameOutcome:
    k: int
    s_k: float
    d_k: float
    r_k: float
    w_k: float
    l_k: float
    o_lk: float
    e_k: float


@dataclass
class Frames:
    """Struct-of-arrays record of an episode; row i is frame k = i + 1."""

    s: np.ndarray
    d: np.ndarray
    w: np.ndarray
    o: np.ndarray
    e: np.ndarray
    r: np.ndarray = field(init=False)
    l: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        n = self.s.size
        for name in ("d", "w", "o", "e"):
            if getattr(self, name).size != n:
                raise ValueError("frame arrays must have equal length")
        self.r = self.s + self.d
        self.l = self.d + self.w

    def __len__(self) -> int:
        return self.s.size

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    def outcome(self, i: int) -> FrameOutcome:
        return FrameOutcome(
            k=i + 1,
            s_k=float(self.s[i]),
            d_k=float(self.d[i]),
            r_k=float(self.r[i]),
            w_k=float(self.w[i]),
            l_k=float(self.l[i]),
            o_lk=float(self.o[i]),
            e_k=float(self.e[i]),
        )

    def __iter__(self):
        return (self.outcome(i) for i in range(len(self)))

    @classmethod
    def from_outcomes(cls, outcomes) -> "Frames":
        outcomes = list(outcomes)
        arr = lambda name: np.array([getattr(f, name) for f in outcomes], dtype=float)
        return cls(s=arr("s_k"), d=arr("d_k"), w=arr("w_k"), o=arr("o_lk"), e=arr("e_k"))


@dataclass
class PolicyTrace:
    """Per-frame decision trace; alpha, u, lam are NaN for non-learning policies."""

    threshold: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    beta: np.ndarray


@dataclass
class Episode:
    frames: Frames
    trace: PolicyTrace
    seed: int
    run_index: int
    final_state: OnlineState | None = None


class FrameStreams:
    """Per-frame Philox sub-streams of one run."""

    def __init__(self, seed: int, run_index: int = 0) -> None:
        if seed < 0 or run_index < 0:
            raise ValueError("seed and run index must be >= 0")
        key = np.random.SeedSequence(int(seed), spawn_key=(int(run_index),)).generate_state(2, np.uint64)
        self.bitgen = np.random.Philox(key=key)
        self.generator = np.random.Generator(self.bitgen)
        self._state = self.bitgen.state

    def select(self, k: int) -> np.random.Generator:
        st = self._state
        st["state"]["counter"] = np.array([0, 0, 0, k], dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        self.bitgen.state = st
        return self.generator


def run_episode(
    policy: PolicyKind,
    delay: DelayModel,
    params: OuParams,
    n_frames: int,
    dt: float = DEFAULT_EPISODE_DT,
    seed: int = 0,
    run_index: int = 0,
    cap: int = DEFAULT_CAP,
    bridge: bool = True,
) -> Episode:
    """Simulate K frames of sample -> delay -> wait on one continuous signal path."""
    if int(n_frames) != n_frames or n_frames < 1:
        raise ValueError(f"n_frames must be a positive integer, got {n_frames}")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be > 0, got {dt}")
    K = int(n_frames)
    th, mu = params.theta, params.mu
    a, b = params.step_coefficients(dt)

    streams = FrameStreams(seed, run_index)
    gen = streams.select(0)
    x = mu + math.sqrt(params.stationary_variance) * gen.standard_normal()
    xh = x  # the episode starts with a perfect estimate

    s_arr = np.empty(K)
    d_arr = np.empty(K)
    w_arr = np.empty(K)
    o_arr = np.empty(K)
    e_arr = np.empty(K)
    thr = np.full(K, np.nan)
    alpha_tr = np.full(K, np.nan)
    u_tr = np.full(K, np.nan)
    lam_tr = np.full(K, np.nan)
    beta_tr = np.full(K, np.nan)

    online = isinstance(policy, Online)
    state = initial_state(policy.config) if online else None
    cache: dict = {}
    t = 0.0
    elapsed = 0.0
    for i in range(K):
        k = i + 1
        streams.select(k)
        d = float(delay.sample(gen))
        if not (d >= 0 and math.isfinite(d)):
            raise SimulationError(f"run {run_index} frame {k}: invalid delay {d}")
        n_full = int(d // dt)
        tail = d - n_full * dt
        z = gen.standard_normal(n_full + (tail > 0.0))
        a_t, b_t = params.step_coefficients(tail)
        x_sample = x
        x, xh, e_delay = _kernels.evolve_fixed(x, xh, mu, z, a, b, dt, n_full, a_t, b_t, tail)
        xh = mu + (x_sample - mu) * math.exp(-th * d)
        ctx = FrameContext(k=k, d_k=d, error_at_reception=x - xh, elapsed=elapsed)
        decision = decide_wait(policy, ctx, params, state, cache)
        if decision.wait is not None:
            w = decision.wait
            nw = int(w // dt)
            tw = w - nw * dt
            zw = gen.standard_normal(nw + (tw > 0.0))
            a_w, b_w = params.step_coefficients(tw)
            x, xh, e_wait = _kernels.evolve_fixed(x, xh, mu, zw, a, b, dt, nw, a_w, b_w, tw)
        else:
            v = decision.threshold
            thr[i] = v
            steps = 0
            e_wait = 0.0
            m = _FIRST_CHUNK
            while abs(x - xh) < v:
                zc = gen.standard_normal(m)
                uc = gen.random(m)
                x, xh, acc, used, stopped = _kernels.evolve_threshold(x, xh, mu, v, zc, uc, a, b, dt, bridge)
                steps += used
                e_wait += acc
                if stopped:
                    break
                if steps >= cap:
                    raise TruncatedHitting(
                        f"run {run_index} (seed {seed}) frame {k}: threshold {v:.6g} not reached "
                        f"within {cap} steps"
                    )
                m = min(2 * m, _MAX_CHUNK, cap - steps)
            w = steps * dt
        if not (math.isfinite(x) and math.isfinite(xh)):
            raise SimulationError(f"run {run_index} (seed {seed}) frame {k}: non-finite state")
        s_arr[i] = t
        d_arr[i] = d
        w_arr[i] = w
        o_arr[i] = x - xh
        e_arr[i] = e_delay + e_wait
        ell = d + w
        t += ell
        elapsed += ell
        if online:
            cfg = policy.config
            alpha_tr[i] = state.alpha_k
            u_tr[i] = state.u_k
            lam_tr[i] = state.lambda_k
            beta_tr[i] = online_beta(state, cfg, params)
            state = online_update(state, o_arr[i] ** 2, ell, cfg)
            lo, hi = cfg.alpha_bounds.alpha_lb, cfg.alpha_bounds.alpha_ub
            if not (lo <= state.alpha_k <= hi and state.u_k >= 0.0):
                raise SimulationError(f"run {run_index} frame {k}: learner state left its domain")
        elif decision.threshold is not None:
            beta_tr[i] = getattr(policy, "beta", np.nan)
    frames = Frames(s=s_arr, d=d_arr, w=w_arr, o=o_arr, e=e_arr)
    trace = PolicyTrace(threshold=thr, alpha=alpha_tr, u=u_tr, lam=lam_tr, beta=beta_tr)
    return Episode(frames=frames, trace=trace, seed=int(seed), run_index=int(run_index), final_state=state)


@dataclass
class EpisodeMetrics:
    time_avg_mse: np.ndarray
    regret: np.ndarray
    avg_frame_len: np.ndarray
    alpha_err_sq: np.ndarray
    u_trace: np.ndarray


def compute_metrics(
    frames: Frames,
    mmse_ref: float | None = None,
    alpha_ref: float | None = None,
    trace: PolicyTrace | None = None,
) -> EpisodeMetrics:
    n = len(frames)
    if trace is not None and not all(
        getattr(trace, f).size == n for f in ("threshold", "alpha", "u", "lam", "beta")
    ):
        raise ValueError("trace length does not match the frame record")
    cum_e = np.cumsum(frames.e)
    s_next = np.cumsum(frames.l)
    with np.errstate(invalid="ignore", divide="ignore"):
        tam = cum_e / s_next
    regret = cum_e - mmse_ref * s_next if mmse_ref is not None else np.full(n, np.nan)
    avg_len = s_next / np.arange(1, n + 1)
    if trace is not None and alpha_ref is not None:
        aerr = (trace.alpha - alpha_ref) ** 2
    else:
        aerr = np.full(n, np.nan)
    u = trace.u.copy() if trace is not None else np.full(n, np.nan)
    return EpisodeMetrics(time_avg_mse=tam, regret=regret, avg_frame_len=avg_len, alpha_err_sq=aerr, u_trace=u)


def expected_regret(
    betas: np.ndarray, alpha_ref: float, table: FrameStatsTable, delay: DelayModel, params: OuParams
) -> np.ndarray:
    """Cumulative expected regret given the threshold arguments used in each frame.

    Per frame the expected excess error is E[e^{-2 theta D}]/(2 theta) * (alpha* l(beta) - o(beta)).
    """
    o, ell = table(betas)
    inc = decay_moment(delay, params) / (2.0 * params.theta) * (alpha_ref * ell - o)
    return np.cumsum(inc)


@dataclass
class MomentSummary:
    o2: float
    o4: float
    l1: float
    l2: float


def frame_moments(frames: Frames) -> MomentSummary:
    o2 = frames.o**2
    return MomentSummary(
        o2=float(o2.mean()), o4=float((o2 * o2).mean()), l1=float(frames.l.mean()), l2=float((frames.l**2).mean())
    )


@dataclass(frozen=True)
class EnsembleSpec:
    policy: PolicyKind
    delay: DelayModel
    params: OuParams
    n_frames: int
    n_runs: int
    base_seed: int = 0
    dt: float = DEFAULT_EPISODE_DT
    mmse_ref: float | None = None
    alpha_ref: float | None = None
    cap: int = DEFAULT_CAP
    bridge: bool = True


@dataclass
class RunSummary:
    run_index: int
    final_time_avg_mse: float
    final_regret: float
    final_avg_frame_len: float
    moments: MomentSummary


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    mean: EpisodeMetrics
    runs: list[RunSummary]
    per_run: dict[str, np.ndarray]

    @property
    def n_runs(self) -> int:
        return len(self.runs)


_PER_RUN_FIELDS = ("time_avg_mse", "regret", "avg_frame_len", "alpha_err_sq", "u_trace")
_TRACE_FIELDS = ("threshold", "alpha", "lam", "beta")


def _one_run(spec: EnsembleSpec, r: int):
    try:
        ep = run_episode(
            spec.policy, spec.delay, spec.params, spec.n_frames, spec.dt, spec.base_seed, r, spec.cap, spec.bridge
        )
    except Exception as exc:
        raise SimulationError(f"ensemble run {r} (base_seed {spec.base_seed}) failed: {exc}") from exc
    m = compute_metrics(ep.frames, spec.mmse_ref, spec.alpha_ref, ep.trace)
    summary = RunSummary(
        run_index=r,
        final_time_avg_mse=float(m.time_avg_mse[-1]),
        final_regret=float(m.regret[-1]),
        final_avg_frame_len=float(m.avg_frame_len[-1]),
        moments=frame_moments(ep.frames),
    )
    arrays = {f: getattr(m, f) for f in _PER_RUN_FIELDS}
    arrays.update({f: getattr(ep.trace, f) for f in _TRACE_FIELDS})
    arrays["l"] = ep.frames.l
    arrays["o_sq"] = ep.frames.o ** 2
    return summary, arrays


def run_ensemble(spec: EnsembleSpec, workers: int | None = 1) -> EnsembleResult:
    """Independent runs 0..n_runs-1, averaged frame by frame in run order."""
    if spec.n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    workers = (os.cpu_count() or 1) if workers is None else int(workers)
    if workers > 1 and spec.n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_run, [spec] * spec.n_runs, range(spec.n_runs)))
    else:
        results = [_one_run(spec, r) for r in range(spec.n_runs)]
    runs = [s for s, _ in results]
    per_run = {f: np.stack([arr[f] for _, arr in results]) for f in results[0][1]}
    mean = EpisodeMetrics(**{f: per_run[f].mean(axis=0) for f in _PER_RUN_FIELDS})
    return EnsembleResult(spec=spec, mean=mean, runs=runs, per_run=per_run)
