"""Batch front-end.

Commands: gen (synthesize instance directories), solve (run solvers on an
instance and write trace/coefficient CSVs plus a summary JSON), compare
(merge traces and draw an objective-vs-time SVG), gain (tabulate a neuron
gain curve), validate-penalty (print the convergence-rule report).

Exit codes: 0 success, 1 usage/input error, 2 numerical failure.  Outputs
contain no wall-clock timestamps, so re-running a command reproduces every
file byte for byte; timing goes to stderr.  A config file (INI format,
sections [solve]/[engine]/[prox]/[ode]) can preset solve options; explicit
command-line flags win over config values.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .baselines import LcaOdeConfig, ProxSolverConfig, fista, ista, lca_ode
from .core import (SensingProblem, SolveTrace, feasible, lambda_max, nmse,
                   objective, read_trace_csv, write_matrix_bin,
                   write_matrix_csv, write_summary_json, write_trace_csv,
                   write_vector_csv)
from .engine import (EngineConfig, EngineDivergedError, merge_split_solution,
                     solve, solve_classic, split_problem)
from .gain import (GainSaturationError, cached_gain, default_grid,
                   save_gain_csv, tabulate_gain)
from .generators import (cs_image_problem, gaussian_problem, load_instance,
                         phantom, ricker_dictionary, save_instance,
                         sinusoid_regression, GroundTruth)
from .neurons import from_preset
from .penalties import Penalty, validate_rules

PROX_SOLVERS = ("ista", "fista")
ENGINE_SOLVERS = {
    "slca-pif": "pif-nondim",
    "slca-lif": "lif-nondim",
    "slca-gif": "gif",
    "slca-ml": "ml",
    "slca-wb": "wb",
}
SOLVERS = PROX_SOLVERS + ("lca-ode", "slca-classic") + tuple(ENGINE_SOLVERS)

_PENALTY_PARAM = {"l1": None, "elastic_net": "rho", "log_barrier": "gamma",
                  "exp": "gamma", "log": "theta", "atan": "eta"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


# ------------------------------------------------------------------- helpers


def _log(msg):
    sys.stderr.write(msg + "\n")


def _penalty_from_args(kind, args):
    name = _PENALTY_PARAM.get(kind, "missing")
    if name == "missing":
        raise ValueError(f"unknown penalty kind {kind!r}")
    if name is None:
        return Penalty(kind)
    value = getattr(args, name, None)
    if value is None:
        raise ValueError(f"penalty {kind!r} needs --{name}")
    return Penalty(kind, value)


def _merge_config(args, ini, section, keys):
    """flag > config-file key > default; returns {key: resolved value}."""
    out = {}
    sect = ini[section] if ini is not None and ini.has_section(section) else {}
    for key, cast, default in keys:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            out[key] = flag
        elif key in sect:
            raw = sect[key]
            out[key] = raw if cast is str else cast(raw)
        else:
            out[key] = default
    return out


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# ----------------------------------------------------------------- SVG plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_ticks_log(lo, hi):
    first = math.floor(math.log10(lo))
    last = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(first, last + 1)]


def _svg_ticks_linear(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def write_objective_svg(series, path, title="objective vs time"):
    """Hand-written SVG line chart: one polyline per (label, times, values)
    series, x linear, y log10 (non-positive values clamped to the smallest
    positive point of the plot)."""
    if not series:
        raise ValueError("nothing to plot")
    width, height = 640, 420
    ml, mr, mt, mb = 70, 20, 36, 46
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys_all = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    pos = ys_all[ys_all > 0]
    floor = float(pos.min()) if pos.size else 1e-12
    ys_all = np.maximum(ys_all, floor)
    x_lo, x_hi = float(xs_all.min()), float(xs_all.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_lo, y_hi = float(ys_all.min()), float(ys_all.max())
    if y_hi == y_lo:
        y_hi = y_lo * 10.0
    lx = lambda x: ml + (x - x_lo) / (x_hi - x_lo) * pw
    ly = lambda y: mt + (math.log10(y_hi) - math.log10(max(y, floor))) / \
        (math.log10(y_hi) - math.log10(y_lo)) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="20" text-anchor="middle" '
           f'font-family="sans-serif" font-size="14">{title}</text>']
    for t in _svg_ticks_log(y_lo, y_hi):
        if not (y_lo <= t <= y_hi):
            continue
        y = ly(t)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" '
                   f'y2="{y:.1f}" stroke="#dddddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">1e{int(round(math.log10(t)))}</text>')
    for t in _svg_ticks_linear(x_lo, x_hi):
        x = lx(t)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" '
                   f'y2="{mt + ph}" stroke="#eeeeee"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{t:g}</text>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
               'fill="none" stroke="#333333"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" '
               'text-anchor="middle" font-family="sans-serif" '
               'font-size="12">time</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">objective</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{lx(float(x)):.2f},{ly(max(float(y), floor)):.2f}"
                       for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="1.5"/>')
        yleg = mt + 14 + 16 * i
        out.append(f'<rect x="{ml + pw - 150}" y="{yleg - 9}" width="10" '
                   f'height="10" fill="{color}"/>')
        out.append(f'<text x="{ml + pw - 135}" y="{yleg}" '
                   f'font-family="sans-serif" font-size="11">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# --------------------------------------------------------------------- gen


def _cmd_gen(args):
    out = args.out
    if args.kind == "gaussian":
        prob, truth = gaussian_problem(args.m, args.n, args.k,
                                       noise_sigma=args.sigma, lam=args.lam,
                                       seed=args.seed, nonneg=not args.free)
        save_instance(out, prob, truth)
    elif args.kind == "ricker":
        rng = np.random.default_rng(args.seed)
        ts = np.linspace(0.0, args.t_max, args.samples)
        freqs = np.linspace(args.f_min, args.f_max, args.freqs)
        centers = np.linspace(0.0, args.t_max, args.centers)
        A = ricker_dictionary(ts, freqs, centers)
        a_true = np.zeros(A.shape[1])
        support = rng.choice(A.shape[1], size=args.k, replace=False)
        a_true[support] = rng.uniform(0.5, 1.5, args.k)
        s = A @ a_true + args.sigma * rng.standard_normal(A.shape[0])
        lam = args.lam if args.lam is not None else 0.05 * lambda_max(A, s)
        prob = SensingProblem(A=A, s=s, lam=lam, penalty=Penalty("l1"))
        save_instance(out, prob, GroundTruth(a_true=a_true,
                                             noise_sigma=args.sigma,
                                             seed=args.seed))
    elif args.kind == "sinusoid":
        prob, test = sinusoid_regression(n_features=args.features,
                                         n_train=args.train,
                                         n_test=args.test,
                                         n_active=args.active,
                                         noise_sigma=args.sigma,
                                         seed=args.seed, lam=args.lam)
        # coefficients live in normalized-column coordinates, so there is
        # no meaningful truth vector; the held-out block is what matters
        save_instance(out, prob)
        write_matrix_bin(test.A, os.path.join(out, "A_test.bin"))
        write_vector_csv(test.s, os.path.join(out, "s_test.csv"))
    elif args.kind == "cs-image":
        prob, truth = cs_image_problem(phantom(args.n), args.ratio,
                                       wavelet=args.wavelet,
                                       levels=args.levels, lam=args.lam,
                                       seed=args.seed)
        save_instance(out, prob, truth)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown generator {args.kind!r}")
    _log(f"wrote instance to {out}")
    return 0


# -------------------------------------------------------------------- solve

_ENGINE_KEYS = (
    ("t-max", float, 60.0),
    ("dt", float, 1e-3),
    ("estimator", str, "cumulative"),
    ("window", float, 10.0),
    ("tau-ema", float, 10.0),
    ("kappa", str, "1.0"),
    ("injection", str, "explicit_threshold"),
    ("sample-every", float, None),
    ("seed", int, 0),
)
_PROX_KEYS = (
    ("max-iters", int, 1000),
    ("tol", float, 1e-10),
    ("step", str, "auto_lipschitz"),
    ("restart", _bool, False),
)
_ODE_KEYS = (
    ("tau", float, 1.0),
    ("ode-dt", float, None),
    ("ode-t-max", float, 50.0),
)


def _engine_config(engine):
    return EngineConfig(dt=engine["dt"], t_max=engine["t-max"],
                        rate_estimator=engine["estimator"],
                        window=engine["window"], tau_ema=engine["tau-ema"],
                        kappa=engine["kappa"],
                        injection_mode=engine["injection"],
                        sample_every=engine["sample-every"],
                        seed=engine["seed"])


def _merge_trace(trace, problem):
    """Re-express a split-dictionary run on the original signed problem:
    coefficients merged per sample, objectives recomputed so the curve is
    comparable with solvers that ran on the signed problem directly."""
    merged = np.array([merge_split_solution(row) for row in trace.coeffs])
    objectives = np.array([objective(problem, row) for row in merged])
    meta = dict(trace.meta)
    meta["split"] = True
    return SolveTrace(times=trace.times, objectives=objectives,
                      coeffs=merged, solver_id=trace.solver_id,
                      aux=trace.aux, meta=meta)


def _run_one(name, problem, engine, prox, ode):
    """Run one named solver on the instance and return its SolveTrace."""
    if name in PROX_SOLVERS:
        cfg = ProxSolverConfig(max_iters=prox["max-iters"], tol=prox["tol"],
                               step=prox["step"], restart=prox["restart"])
        return (ista if name == "ista" else fista)(problem, cfg)
    if name == "lca-ode":
        cfg = LcaOdeConfig(tau=ode["tau"], dt=ode["ode-dt"],
                           t_max=ode["ode-t-max"])
        return lca_ode(problem, cfg)
    if name == "slca-classic":
        if problem.sign_mode == "free":
            tr = solve_classic(split_problem(problem),
                               _engine_config(engine))
            return _merge_trace(tr, problem)
        return solve_classic(problem, _engine_config(engine))
    if name in ENGINE_SOLVERS:
        cfg = _engine_config(engine)
        model = from_preset(ENGINE_SOLVERS[name])
        table = None
        if model.kind not in ("pif", "lif"):
            table = cached_gain(model)
        if problem.sign_mode == "free":
            # signed problems run on the antiparallel split dictionary and
            # the decode merges back per sample
            tr = solve(split_problem(problem), model=model,
                       gain_table=table, config=cfg)
            return _merge_trace(tr, problem)
        return solve(problem, model=model, gain_table=table, config=cfg)
    raise ValueError(f"unknown solver {name!r}; expected one of "
                     f"{sorted(SOLVERS)}")


def _cmd_solve(args):
    ini = None
    if args.config:
        ini = configparser.ConfigParser()
        if not ini.read(args.config):
            raise OSError(f"cannot read config file {args.config}")
    solve_sect = (ini["solve"] if ini is not None and ini.has_section("solve")
                  else {})
    instance = args.instance or solve_sect.get("instance")
    out = args.out or solve_sect.get("out")
    solvers = args.solver or [t.strip() for t in
                              solve_sect.get("solvers", "").split(",")
                              if t.strip()]
    if not instance:
        raise ValueError("no instance given (flag --instance or config key)")
    if not out:
        raise ValueError("no output directory (flag --out or config key)")
    if not solvers:
        raise ValueError("at least one --solver is required")
    for name in solvers:
        if name not in SOLVERS:
            raise ValueError(f"unknown solver {name!r}; expected one of "
                             f"{sorted(SOLVERS)}")
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    for f in formats:
        if f not in ("csv", "json", "svg"):
            raise ValueError(f"unknown format {f!r}")
    engine = _merge_config(args, ini, "engine", _ENGINE_KEYS)
    prox = _merge_config(args, ini, "prox", _PROX_KEYS)
    ode = _merge_config(args, ini, "ode", _ODE_KEYS)
    if engine["kappa"] != "auto":
        engine["kappa"] = float(engine["kappa"])
    if prox["step"] != "auto_lipschitz":
        prox["step"] = float(prox["step"])

    problem, truth = load_instance(instance)
    if args.lam is not None:
        problem = dataclasses.replace(problem, lam=args.lam)
    if args.penalty is not None:
        problem = dataclasses.replace(
            problem, penalty=_penalty_from_args(args.penalty, args))
    os.makedirs(out, exist_ok=True)

    summary = {
        "command": "solve",
        "instance": instance,
        "lam": float(problem.lam),
        "penalty": problem.penalty.to_dict(),
        "sign_mode": problem.sign_mode,
        "config": {"engine": engine, "prox": prox, "ode": ode,
                   "formats": formats},
        "solvers": {},
    }
    series = []
    a_true = truth.a_true if truth is not None else None
    for name in solvers:
        t0 = time.perf_counter()
        trace = _run_one(name, problem, engine, prox, ode)
        elapsed = time.perf_counter() - t0
        _log(f"{name}: {len(trace.times)} samples in {elapsed:.2f} s")
        final = trace.final_coeffs
        entry = {
            "solver_id": trace.solver_id,
            "objective_final": float(objective(problem, final)),
            "samples": int(len(trace.times)),
            "feasible": bool(feasible(problem, final)),
            "final_coeffs_l0": int(np.count_nonzero(np.abs(final) > 1e-9)),
        }
        if a_true is not None and np.any(a_true):
            entry["nmse_vs_truth_db"] = float(nmse(a_true, final))
        summary["solvers"][name] = entry
        if "csv" in formats:
            write_trace_csv(trace, os.path.join(out, f"{name}-trace.csv"),
                            truth=a_true if (a_true is not None
                                             and np.any(a_true)) else None)
            write_matrix_csv(trace.coeffs,
                             os.path.join(out, f"{name}-coeffs.csv"))
        series.append((name, trace.times, trace.objectives))
    if "json" in formats:
        write_summary_json(os.path.join(out, "summary.json"), summary)
    if "svg" in formats:
        write_objective_svg(series, os.path.join(out, "objectives.svg"))
    return 0


# ------------------------------------------------------------------ compare


def _cmd_compare(args):
    os.makedirs(args.out, exist_ok=True)
    series = []
    rows = ["label,time,objective"]
    for path in args.traces:
        label = os.path.basename(path)
        if label.endswith("-trace.csv"):
            label = label[:-len("-trace.csv")]
        elif label.endswith(".csv"):
            label = label[:-4]
        times, objectives, _, _ = read_trace_csv(path)
        series.append((label, times, objectives))
        for t, f in zip(times, objectives):
            rows.append(f"{label},{float(t)!r},{float(f)!r}")
    merged = os.path.join(args.out, "compare.csv")
    with open(merged, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    write_objective_svg(series, os.path.join(args.out, "compare.svg"))
    _log(f"wrote {merged} and compare.svg")
    return 0


# --------------------------------------------------------------------- gain


def _cmd_gain(args):
    model = from_preset(args.model)
    if args.use_cache:
        table = cached_gain(model)
    else:
        grid = default_grid(model.kind, n_points=args.points,
                            i_max=args.i_max)
        table = tabulate_gain(model, i_grid=grid, sim_time=args.sim_time,
                              discard_time=args.discard_time, dt=args.dt)
    save_gain_csv(table, args.out)
    _log(f"wrote gain table ({table.currents.size} points, max rate "
         f"{table.max_rate:g}) to {args.out}")
    return 0


# --------------------------------------------------------- validate-penalty


def _cmd_validate_penalty(args):
    pen = _penalty_from_args(args.kind, args)
    report = validate_rules(pen, args.lam)
    pname = _PENALTY_PARAM[pen.kind]
    label = pen.kind if pname is None else f"{pen.kind} ({pname} = {pen.param:g})"
    print(f"penalty: {label}")
    print(report)
    # a FAIL verdict is still a successful validation run
    return 0


# --------------------------------------------------------------------- main


def _build_parser():
    p = _Parser(prog="slca", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance directory")
    gsub = g.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    gg = gsub.add_parser("gaussian")
    gg.add_argument("--m", type=int, required=True)
    gg.add_argument("--n", type=int, required=True)
    gg.add_argument("--k", type=int, required=True)
    gg.add_argument("--sigma", type=float, default=0.01)
    gg.add_argument("--lam", type=float, default=None)
    gg.add_argument("--seed", type=int, default=0)
    gg.add_argument("--free", action="store_true",
                    help="signed coefficients (default non-negative)")
    gr = gsub.add_parser("ricker")
    gr.add_argument("--samples", type=int, required=True)
    gr.add_argument("--freqs", type=int, required=True)
    gr.add_argument("--centers", type=int, required=True)
    gr.add_argument("--t-max", type=float, default=2.5)
    gr.add_argument("--f-min", type=float, default=10.0)
    gr.add_argument("--f-max", type=float, default=40.0)
    gr.add_argument("--k", type=int, default=3)
    gr.add_argument("--sigma", type=float, default=0.01)
    gr.add_argument("--lam", type=float, default=None)
    gr.add_argument("--seed", type=int, default=0)
    gs = gsub.add_parser("sinusoid")
    gs.add_argument("--features", type=int, default=100)
    gs.add_argument("--train", type=int, default=40)
    gs.add_argument("--test", type=int, default=40)
    gs.add_argument("--active", type=int, default=10)
    gs.add_argument("--sigma", type=float, default=0.1)
    gs.add_argument("--lam", type=float, default=None)
    gs.add_argument("--seed", type=int, default=0)
    gc = gsub.add_parser("cs-image")
    gc.add_argument("--n", type=int, default=32)
    gc.add_argument("--ratio", type=float, default=0.4)
    gc.add_argument("--wavelet", choices=("haar", "db4"), default="db4")
    gc.add_argument("--levels", type=int, default=3)
    gc.add_argument("--lam", type=float, default=None)
    gc.add_argument("--seed", type=int, default=0)
    for sp in (gg, gr, gs, gc):
        sp.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="run solvers on an instance")
    s.add_argument("--instance")
    s.add_argument("--out")
    s.add_argument("--solver", action="append",
                   help=f"one of {sorted(SOLVERS)}; repeatable")
    s.add_argument("--config", help="INI config file")
    s.add_argument("--formats", default="csv,json",
                   help="comma list from csv,json,svg")
    s.add_argument("--lam", type=float, default=None,
                   help="override the instance lambda")
    s.add_argument("--penalty", choices=sorted(_PENALTY_PARAM),
                   default=None, help="override the instance penalty")
    for flag in ("rho", "gamma", "theta", "eta"):
        s.add_argument(f"--{flag}", type=float, default=None)
    s.add_argument("--t-max", type=float, default=None)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--estimator",
                   choices=("cumulative", "window", "ema"), default=None)
    s.add_argument("--window", type=float, default=None)
    s.add_argument("--tau-ema", type=float, default=None)
    s.add_argument("--kappa", default=None)
    s.add_argument("--injection",
                   choices=("explicit_threshold", "implicit_grad"),
                   default=None)
    s.add_argument("--sample-every", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--max-iters", type=int, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--step", default=None)
    s.add_argument("--restart", action="store_const", const=True,
                   default=None)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--ode-dt", type=float, default=None)
    s.add_argument("--ode-t-max", type=float, default=None)
    s.set_defaults(func=_cmd_solve)

    c = sub.add_parser("compare", help="merge traces and plot them")
    c.add_argument("traces", nargs="+")
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_compare)

    ga = sub.add_parser("gain", help="tabulate a neuron gain curve")
    ga.add_argument("--model", required=True,
                    help="preset name, e.g. lif-nondim or gif")
    ga.add_argument("--out", required=True)
    ga.add_argument("--points", type=int, default=256)
    ga.add_argument("--i-max", type=float, default=None)
    ga.add_argument("--sim-time", type=float, default=None)
    ga.add_argument("--discard-time", type=float, default=None)
    ga.add_argument("--dt", type=float, default=None)
    ga.add_argument("--use-cache", action="store_true",
                    help="reuse/populate the on-disk cache "
                         "(SLCA_CACHE_DIR) with default timing")
    ga.set_defaults(func=_cmd_gain)

    v = sub.add_parser("validate-penalty",
                       help="check the convergence rules for a penalty")
    v.add_argument("kind", choices=sorted(_PENALTY_PARAM))
    v.add_argument("--lam", "--lambda", dest="lam", type=float, required=True)
    for flag in ("rho", "gamma", "theta", "eta"):
        v.add_argument(f"--{flag}", type=float, default=None)
    v.set_defaults(func=_cmd_validate_penalty)
    return p


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except (EngineDivergedError, GainSaturationError, FloatingPointError,
            RuntimeError) as e:
        sys.stderr.write(f"slca: numerical failure: {e}\n")
        return 2
    except (ValueError, OSError, KeyError, TypeError) as e:
        sys.stderr.write(f"slca: error: {e}\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
