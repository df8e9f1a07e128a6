"""The rate-coupled spiking solver and the classic event-driven variant.

A sparse-recovery problem min 0.5*||s - A a||^2 + lam*C~(a), a >= 0, maps
onto a network of N integrate-and-fire neurons: neuron i receives the
drive b_i = <A_i, s>, inhibits its peers through the Gram couplings
W_ij = <A_i, A_j>, and reports its coefficient as a spike rate.  The
average injected current follows

    du/dt = b - u - W a_hat - (u - u(0))/t,

where a_hat is the decoded rate vector and the last term removes the
transient bias of averaging from t = 0 (the anchor correction).  Each
step the target activation a* = T_lam(u) (or a gradient step on the
penalty) is translated into an input current through the inverse of the
neuron's gain curve, the population advances one dt, and new spikes
update the rate estimate.

The classic variant restricts to perfect integrators with l1 and needs
no clock: spike times are solved for exactly and the network jumps from
event to event.

Free-sign problems are handled by column splitting: duplicate the
dictionary with flipped signs, solve the nonnegative problem of size 2N,
and subtract the two halves.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from ._kernels import pack_model_params
from .core import SensingProblem, SolveTrace, gram_cache, objective
from .gain import GainTable, gain_knots
from .neurons import MODEL_TAGS, Model, from_preset
from .penalties import Penalty, threshold

__all__ = [
    "EngineConfig",
    "EngineDivergedError",
    "estimate_rates",
    "spike_log_from_trace",
    "solve",
    "solve_classic",
    "split_problem",
    "merge_split_solution",
]

ESTIMATORS = ("cumulative", "window", "ema")
INJECTION_MODES = ("explicit_threshold", "implicit_grad")
COUPLINGS = ("rate_coupled", "event_driven")

#: consecutive samples with a relative objective change below this stop a run
PLATEAU_RTOL = 1e-8
PLATEAU_SAMPLES = 5
#: a plateau only counts while the decode tracks its target T_lam(u); this
#: keeps the quiet warm-up (rates still zero, u already charged) from
#: terminating a run before the first spike
FIXED_POINT_RTOL = 5e-3


class EngineDivergedError(RuntimeError):
    """Simulation blew up; .trace holds the samples up to the last stable one."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the spiking solver.

    dt             integration step for the current dynamics and the neurons
    t_max          simulation horizon (time units / ms)
    rate_estimator cumulative | window | ema
    t0             start of the counting window (cumulative estimator)
    window         width of the sliding window (window estimator)
    tau_ema        decay constant of the exponential estimator
    anchor_correction  subtract the (u - u(0))/t averaging-bias term
    injection_mode explicit_threshold (invert u through T_lam) or
                   implicit_grad (gradient step on the penalty at a_hat)
    kappa          coefficient->rate scale; "auto" aims the largest expected
                   coefficient at 80% of the top tabulated rate
    coupling       rate_coupled (clock-driven, any model) or event_driven
                   (exact spike times, perfect integrators with l1 only)
    sample_every   sampling period of the trace (default t_max/200)
    ring_capacity  per-neuron spike-ring slots for the window estimator
                   (0 = sized automatically)
    seed           recorded in the trace; the engine itself is deterministic
    """

    dt: float = 1e-3
    t_max: float = 60.0
    rate_estimator: str = "cumulative"
    t0: float = 0.0
    window: float = 10.0
    tau_ema: float = 10.0
    anchor_correction: bool = True
    injection_mode: str = "explicit_threshold"
    kappa: float | str = 1.0
    coupling: str = "rate_coupled"
    sample_every: float | None = None
    ring_capacity: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if self.dt >= 1.0:
            raise ValueError("dt must be < 1: the average current decays on "
                             "a unit time constant and explicit Euler needs "
                             "to resolve it")
        if not (self.t_max > self.dt):
            raise ValueError("t_max must exceed dt")
        if self.rate_estimator not in ESTIMATORS:
            raise ValueError(f"unknown rate_estimator {self.rate_estimator!r}")
        if self.injection_mode not in INJECTION_MODES:
            raise ValueError(f"unknown injection_mode {self.injection_mode!r}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}")
        if self.t0 < 0 or not math.isfinite(self.t0):
            raise ValueError("t0 must be >= 0 and finite")
        if not (self.window > 0 and math.isfinite(self.window)):
            raise ValueError("window must be positive and finite")
        if not (self.tau_ema > 0 and math.isfinite(self.tau_ema)):
            raise ValueError("tau_ema must be positive and finite")
        if isinstance(self.kappa, str):
            if self.kappa != "auto":
                raise ValueError("kappa must be a positive number or 'auto'")
        elif not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise ValueError("kappa must be a positive number or 'auto'")
        if self.sample_every is not None and not (self.sample_every > 0):
            raise ValueError("sample_every must be positive")
        if self.ring_capacity < 0:
            raise ValueError("ring_capacity must be >= 0")


# ---------------------------------------------------------- rate estimators


def estimate_rates(spike_log, t, estimator="cumulative", t0=0.0,
                   width=10.0, tau_ema=10.0):
    """Per-neuron firing-rate estimate at time t from recorded spike times.

    spike_log is a sequence of per-neuron arrays of spike times.

    cumulative: spikes in (t0, t] divided by t - t0.
    window:     spikes in (t - width, t] divided by min(t, width) -- the
                denominator grows with t until the window fills.
    ema:        sum of exp(-(t - t_k)/tau) over past spikes, normalized by
                tau*(1 - exp(-t/tau)) so a constant-rate train estimates
                its rate without bias.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if estimator == "cumulative" and not t > t0:
        raise ValueError("need t > t0 to estimate a cumulative rate")
    if estimator != "cumulative" and not t > 0:
        raise ValueError("need t > 0 to estimate a rate")
    if width <= 0 or tau_ema <= 0:
        raise ValueError("window and tau_ema must be positive")
    out = np.zeros(len(spike_log), dtype=np.float64)
    for i, times in enumerate(spike_log):
        ts = np.asarray(times, dtype=np.float64)
        if estimator == "cumulative":
            out[i] = np.count_nonzero((ts > t0) & (ts <= t)) / (t - t0)
        elif estimator == "window":
            n = np.count_nonzero((ts > t - width) & (ts <= t))
            out[i] = n / min(t, width)
        else:
            kept = ts[ts <= t]
            s = float(np.sum(np.exp(-(t - kept) / tau_ema)))
            out[i] = s / (tau_ema * -math.expm1(-t / tau_ema))
    return out


def spike_log_from_trace(trace, n=None):
    """Split a trace's flat spike record into per-neuron time arrays."""
    si = trace.meta.get("spike_neurons")
    st = trace.meta.get("spike_times")
    if si is None or st is None:
        raise ValueError("trace carries no spike record")
    if n is None:
        n = trace.coeffs.shape[1]
    return [st[si == i] for i in range(n)]


# ------------------------------------------------------------ gain packing


def _pack_gain(model, gain_table):
    """Translate (model, optional table) into the kernel's gain arguments.

    Returns (mode, gp, r_knots, i_knots, max_rate).
    """
    dummy = np.zeros(1)
    p = model.params
    if gain_table is None:
        if model.kind == "pif":
            gp = np.array([p.c, p.v_th - p.v_reset, 0.0, 0.0])
            return 0, gp, dummy, dummy, math.inf
        if model.kind == "lif":
            gp = np.array([p.c, p.g_l, p.v_th - p.v_reset, p.t_ref])
            max_rate = 1.0 / p.t_ref if p.t_ref > 0 else math.inf
            return 1, gp, dummy, dummy, max_rate
        raise ValueError(
            f"{model.kind} has no closed-form gain; tabulate one with "
            "gain.tabulate_gain/cached_gain and pass it as gain_table")
    if not isinstance(gain_table, GainTable):
        raise TypeError("gain_table must be a GainTable")
    if gain_table.model_id != model.kind:
        raise ValueError(
            f"gain table was measured for {gain_table.model_id!r}, "
            f"not {model.kind!r}")
    r_knots, i_knots = gain_knots(gain_table)
    return 2, np.zeros(4), np.ascontiguousarray(r_knots), \
        np.ascontiguousarray(i_knots), float(r_knots[-1])


def _resolve_kappa(cfg, gram, gain_mode, max_rate):
    if cfg.kappa != "auto":
        return float(cfg.kappa)
    if gain_mode != 2:
        return 1.0
    scale = float(np.max(np.abs(gram.b) / gram.diag))
    if not scale > 0:
        return 1.0
    return 0.8 * max_rate / scale


def _estimator_args(cfg):
    if cfg.rate_estimator == "cumulative":
        return 0, float(cfg.t0), 0.0
    if cfg.rate_estimator == "window":
        return 1, 0.0, float(cfg.window)
    return 2, 0.0, float(cfg.tau_ema)


def _ring_capacity(cfg, kappa, gram, max_rate):
    if cfg.rate_estimator != "window":
        return 1
    if cfg.ring_capacity > 0:
        return int(cfg.ring_capacity)
    if math.isfinite(max_rate):
        peak = max_rate
    else:
        peak = 1.25 * kappa * max(float(np.max(np.abs(gram.b) / gram.diag)), 1.0)
    cap = int(math.ceil(cfg.window * peak)) + 8
    hard = int(math.ceil(cfg.window / cfg.dt)) + 8  # one spike per step at most
    return max(64, min(cap * 2, hard))


# ------------------------------------------------------------- main solver


def solve(problem, model="lif-nondim", gain_table=None, config=None):
    """Run the rate-coupled spiking network on a nonnegative problem.

    model may be a preset name or a neurons.Model; biophysical models need
    a matching GainTable.  Returns a SolveTrace whose coefficients are the
    decoded rates a_hat; trace.meta["thresholded"] carries the companion
    T_lam(u) snapshots, and meta["spike_times"]/["spike_neurons"] the raw
    spike record.
    """
    cfg = config if config is not None else EngineConfig()
    if isinstance(model, str):
        model = from_preset(model)
    if cfg.coupling == "event_driven":
        if model.kind != "pif":
            raise ValueError("event-driven coupling is exact only for the "
                             "perfect integrator; use rate_coupled")
        return solve_classic(problem, config=cfg)
    if problem.sign_mode != "nonneg":
        raise ValueError("the spiking network is nonnegative; convert with "
                         "split_problem() first")

    gram = gram_cache(problem.A, problem.s)
    unit_diag = bool(np.allclose(gram.diag, 1.0, rtol=1e-6, atol=1e-6))
    if not unit_diag:
        warnings.warn("dictionary columns are not unit-norm; thresholds and "
                      "rates are calibrated for unit columns "
                      "(see core.normalize_columns)", stacklevel=2)

    gain_mode, gp, r_knots, i_knots, max_rate = _pack_gain(model, gain_table)
    kappa = _resolve_kappa(cfg, gram, gain_mode, max_rate)
    est_tag, est_t0, est_p = _estimator_args(cfg)
    inj_tag = 0 if cfg.injection_mode == "explicit_threshold" else 1
    pen = problem.penalty
    n = gram.b.shape[0]
    tag = MODEL_TAGS[model.kind]
    mp = pack_model_params(model.kind, model.params)

    # state: the average current starts at the drive (zero initial rates)
    u = gram.b.copy()
    v0, th0, c00, c01, w0, h0, n0 = _kernels._init_state(tag, mp)
    v = np.full(n, v0)
    th = np.full(n, th0)
    cur = np.zeros((n, 2))
    cur[:, 0] = c00
    cur[:, 1] = c01
    wg = np.full(n, w0)
    hg = np.full(n, h0)
    ng = np.full(n, n0)
    lock = np.full(n, -math.inf)
    counts = np.zeros(n, dtype=np.int64)
    ring_cap = _ring_capacity(cfg, kappa, gram, max_rate)
    ring_t = np.zeros((n, ring_cap))
    ring_head = np.zeros(n, dtype=np.int64)
    ring_tail = np.zeros(n, dtype=np.int64)
    ema_s = np.zeros(n)
    a_hat = np.zeros(n)
    astar = np.zeros(n)
    idx_buf = np.zeros(n, dtype=np.int64)
    wa_buf = np.zeros(n)
    warn_io = np.zeros(2, dtype=np.int64)
    umax_io = np.zeros(1)
    t_io = np.zeros(1)

    total_steps = int(round(cfg.t_max / cfg.dt))
    sample_every = cfg.sample_every if cfg.sample_every is not None \
        else cfg.t_max / 200.0
    steps_per_chunk = max(1, int(round(sample_every / cfg.dt)))
    spike_cap = n * steps_per_chunk
    spike_i = np.zeros(spike_cap, dtype=np.int64)
    spike_t = np.zeros(spike_cap)

    times = [0.0]
    objectives = [objective(problem, np.zeros(n))]
    coeffs = [np.zeros(n)]
    thresholded = [threshold(pen, problem.lam, u)]
    spike_counts = [0]
    wall = [0.0]
    all_si, all_st = [], []
    t_start = time.perf_counter()
    plateau_run = 0
    terminated = "t_max"
    done = 0
    while done < total_steps:
        n_steps = min(steps_per_chunk, total_steps - done)
        nsp, status = _kernels.engine_chunk(
            n_steps, cfg.dt, t_io, u, gram.b, gram.W, problem.lam,
            pen.tag, pen.param, est_tag, est_t0, est_p, kappa,
            int(cfg.anchor_correction), inj_tag,
            gain_mode, gp, r_knots, i_knots, tag, mp,
            v, th, cur, wg, hg, ng, lock,
            counts, ring_t, ring_head, ring_tail, ema_s,
            spike_i, spike_t, warn_io, umax_io,
            a_hat, astar, idx_buf, wa_buf)
        if nsp:
            all_si.append(spike_i[:nsp].copy())
            all_st.append(spike_t[:nsp].copy())
        done += n_steps
        if status != 0:
            trace = _finish_trace(
                problem, model, cfg, times, objectives, coeffs, thresholded,
                spike_counts, wall, all_si, all_st, kappa, warn_io, umax_io,
                u, "diverged", unit_diag)
            raise EngineDivergedError(
                f"average current diverged at t = {t_io[0]:.6g}; the trace "
                f"up to the last stable sample is attached", trace)
        times.append(t_io[0])
        objectives.append(objective(problem, a_hat))
        coeffs.append(a_hat.copy())
        thresholded.append(astar.copy())
        spike_counts.append(spike_counts[-1] + int(nsp))
        wall.append(time.perf_counter() - t_start)
        prev, curr = objectives[-2], objectives[-1]
        at_fixed_point = np.max(np.abs(a_hat - astar)) <= \
            FIXED_POINT_RTOL * max(1.0, float(np.max(np.abs(a_hat))))
        if at_fixed_point and np.isfinite(prev) and np.isfinite(curr) and \
                abs(curr - prev) <= PLATEAU_RTOL * max(1.0, abs(prev)):
            plateau_run += 1
            if plateau_run >= PLATEAU_SAMPLES:
                terminated = "plateau"
                break
        else:
            plateau_run = 0

    return _finish_trace(problem, model, cfg, times, objectives, coeffs,
                         thresholded, spike_counts, wall, all_si, all_st,
                         kappa, warn_io, umax_io, u, terminated, unit_diag)


def _finish_trace(problem, model, cfg, times, objectives, coeffs, thresholded,
                  spike_counts, wall, all_si, all_st, kappa, warn_io, umax_io,
                  u, terminated, unit_diag):
    si = np.concatenate(all_si) if all_si else np.zeros(0, dtype=np.int64)
    st = np.concatenate(all_st) if all_st else np.zeros(0)
    meta = {
        "config": asdict(cfg),
        "model": model.kind,
        "kappa": float(kappa),
        "thresholded": np.asarray(thresholded),
        "spike_times": st,
        "spike_neurons": si,
        "warn_gain_saturation": int(warn_io[0]),
        "warn_ring_overflow": int(warn_io[1]),
        "u_final": u.copy(),
        "u_max_abs": float(umax_io[0]),
        "terminated": terminated,
        "unit_diag": unit_diag,
        "lam": float(problem.lam),
        "penalty": problem.penalty.kind,
    }
    return SolveTrace(
        times=np.asarray(times), objectives=np.asarray(objectives),
        coeffs=np.asarray(coeffs), solver_id=f"slca-{model.kind}",
        aux=np.asarray(spike_counts, dtype=np.int64),
        wall_times=np.asarray(wall), meta=meta)


# ----------------------------------------------------------- classic (PIF)


def solve_classic(problem, config=None):
    """Event-driven perfect-integrator network for l1 problems.

    Spike times are found exactly (bisection on the closed-form membrane
    trajectory), the inhibition jumps are applied instantaneously, and the
    decoded coefficients are the cumulative rates n_i(t)/t.
    """
    cfg = config if config is not None else EngineConfig()
    if problem.sign_mode != "nonneg":
        raise ValueError("the spiking network is nonnegative; convert with "
                         "split_problem() first")
    if problem.penalty.kind != "l1":
        raise ValueError("the event-driven network realizes the l1 penalty "
                         "only; use the rate-coupled engine for others")

    gram = gram_cache(problem.A, problem.s)
    unit_diag = bool(np.allclose(gram.diag, 1.0, rtol=1e-6, atol=1e-6))
    if not unit_diag:
        warnings.warn("dictionary columns are not unit-norm; thresholds and "
                      "rates are calibrated for unit columns "
                      "(see core.normalize_columns)", stacklevel=2)
    n = gram.b.shape[0]
    v = np.zeros(n)
    mu = gram.b.copy()
    counts = np.zeros(n, dtype=np.int64)
    t_io = np.zeros(1)
    mumax_io = np.zeros(1)
    cap = 65536
    spike_i = np.zeros(cap, dtype=np.int64)
    spike_t = np.zeros(cap)

    sample_every = cfg.sample_every if cfg.sample_every is not None \
        else cfg.t_max / 200.0
    sample_times = np.arange(1, int(math.ceil(cfg.t_max / sample_every)) + 1) \
        * sample_every
    sample_times = sample_times[sample_times <= cfg.t_max]
    if sample_times.size == 0 or sample_times[-1] < cfg.t_max:
        sample_times = np.append(sample_times, cfg.t_max)

    times = [0.0]
    objectives = [objective(problem, np.zeros(n))]
    coeffs = [np.zeros(n)]
    thresholded = [threshold(problem.penalty, problem.lam, mu)]
    spike_counts = [0]
    wall = [0.0]
    all_si, all_st = [], []
    t_start = time.perf_counter()
    plateau_run = 0
    terminated = "t_max"
    event_budget = 20_000_000
    for t_s in sample_times:
        while True:
            nsp, status = _kernels.classic_chunk(
                float(t_s), t_io, v, mu, gram.b, gram.W, problem.lam, 1.0,
                counts, spike_i, spike_t, mumax_io)
            if nsp:
                all_si.append(spike_i[:nsp].copy())
                all_st.append(spike_t[:nsp].copy())
            if int(counts.sum()) > event_budget:
                raise EngineDivergedError(
                    f"event budget exceeded before t = {t_s:.6g}: the "
                    "network is spiking without settling")
            if status == 0:
                break
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(v))):
            raise EngineDivergedError(
                f"membrane state diverged before t = {t_s:.6g}")
        a = counts / t_io[0]
        times.append(t_io[0])
        objectives.append(objective(problem, a))
        coeffs.append(a)
        thresholded.append(threshold(problem.penalty, problem.lam, mu))
        spike_counts.append(int(counts.sum()))
        wall.append(time.perf_counter() - t_start)
        prev, curr = objectives[-2], objectives[-1]
        at_fixed_point = np.max(np.abs(a - thresholded[-1])) <= \
            FIXED_POINT_RTOL * max(1.0, float(np.max(np.abs(a))))
        if at_fixed_point and abs(curr - prev) <= PLATEAU_RTOL * max(1.0, abs(prev)):
            plateau_run += 1
            if plateau_run >= PLATEAU_SAMPLES:
                terminated = "plateau"
                break
        else:
            plateau_run = 0

    si = np.concatenate(all_si) if all_si else np.zeros(0, dtype=np.int64)
    st = np.concatenate(all_st) if all_st else np.zeros(0)
    meta = {
        "config": asdict(cfg),
        "model": "pif",
        "kappa": 1.0,
        "thresholded": np.asarray(thresholded),
        "spike_times": st,
        "spike_neurons": si,
        "mu_final": mu.copy(),
        "mu_max_abs": float(mumax_io[0]),
        "terminated": terminated,
        "unit_diag": unit_diag,
        "lam": float(problem.lam),
        "penalty": problem.penalty.kind,
    }
    return SolveTrace(
        times=np.asarray(times), objectives=np.asarray(objectives),
        coeffs=np.asarray(coeffs), solver_id="slca-classic",
        aux=np.asarray(spike_counts, dtype=np.int64),
        wall_times=np.asarray(wall), meta=meta)


# -------------------------------------------------------------- splitting


def split_problem(problem, penalty=None):
    """Nonnegative double-width version of a free-sign problem.

    The dictionary becomes [A, -A]; a solution z >= 0 of the split problem
    merges back as a = z[:N] - z[N:].  The penalty carries over unchanged
    unless an explicit replacement is given (a log barrier keeps every
    neuron weakly active, which can help the spiking dynamics explore).
    """
    if problem.sign_mode != "free":
        raise ValueError("problem is already nonnegative")
    pen = problem.penalty if penalty is None else penalty
    if not isinstance(pen, Penalty):
        raise TypeError("penalty must be a Penalty")
    a2 = np.hstack([problem.A, -problem.A])
    return SensingProblem(A=a2, s=problem.s, lam=problem.lam,
                          penalty=pen, sign_mode="nonneg")


def merge_split_solution(z):
    """Collapse a split nonnegative solution back to signed coefficients."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] % 2:
        raise ValueError("expected a 1-d vector of even length")
    if np.any(z < 0):
        raise ValueError("split solutions must be nonnegative")
    half = z.shape[0] // 2
    return z[:half] - z[half:]
