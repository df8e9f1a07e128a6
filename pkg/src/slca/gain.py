"""Firing-rate gain curves g(I) and their inverses.

The rate-coupled solver needs to inject, at every step, the current that
makes a neuron fire at a prescribed rate.  For the perfect integrator and
the leaky integrator that inverse exists in closed form; for the richer
conductance models the gain curve is tabulated once by brute-force
simulation on a current grid, cleaned up with an isotonic fit, and
inverted by piecewise-linear interpolation on its strictly increasing
part.

Tables can be persisted to CSV (with a JSON header line carrying the
provenance fields) and are reloaded bit-exactly, so a cached table gives
the same trajectories as a fresh one.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import isotonic_regression

from . import _kernels
from ._kernels import pack_model_params
from .neurons import MODEL_TAGS, LifParams, Model, PifParams

__all__ = [
    "GainSaturationError",
    "GainTable",
    "lif_gain",
    "lif_gain_inverse",
    "pif_gain",
    "pif_gain_inverse",
    "tabulate_gain",
    "gain_knots",
    "table_gain",
    "invert_gain",
    "save_gain_csv",
    "load_gain_csv",
    "cached_gain",
    "default_grid",
]


class GainSaturationError(ValueError):
    """Requested rate is at or beyond what the neuron can produce."""


# Tabulation defaults: biophysical models run in ms, the nondimensional
# integrators in unit time.  2000 time units of counting after a settling
# period keeps the counting resolution at 1e-3 rates.
_BIOPHYSICAL = ("gif", "ml", "wb")
_DEFAULT_TIMING = {
    True: dict(sim_time=2200.0, discard_time=200.0, dt=0.01),
    False: dict(sim_time=22.0, discard_time=2.0, dt=1e-3),
}
# Upper end of the default current grid, picked to stay inside each
# model's firing regime (Morris--Lecar enters depolarization block a
# little above 200 uA/cm^2).
_DEFAULT_I_MAX = {"pif": 3.0, "lif": 3.0, "gif": 4.0, "ml": 200.0, "wb": 3.0}
_DEFAULT_GRID_POINTS = 256


@dataclass(frozen=True)
class GainTable:
    """Monotone rate-vs-current table for one neuron model.

    currents are strictly increasing, rates are non-negative and
    non-decreasing (isotonic by construction).  The timing fields record
    how the table was produced so a cached copy can be trusted.
    """

    currents: np.ndarray
    rates: np.ndarray
    model_id: str
    dt: float
    sim_time: float
    discard_time: float
    rate_unit: str = "1/time-unit"

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.currents, dtype=np.float64))
        r = np.ascontiguousarray(np.asarray(self.rates, dtype=np.float64))
        if c.ndim != 1 or r.ndim != 1 or c.shape != r.shape or c.size < 2:
            raise ValueError("currents and rates must be equal-length 1-d arrays (>= 2 points)")
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(r)):
            raise ValueError("gain table entries must be finite")
        if np.any(np.diff(c) <= 0):
            raise ValueError("currents must be strictly increasing")
        if np.any(r < 0):
            raise ValueError("rates must be non-negative")
        if np.any(np.diff(r) < 0):
            raise ValueError("rates must be non-decreasing")
        if not (self.dt > 0 and self.sim_time > self.discard_time >= 0):
            raise ValueError("need dt > 0 and sim_time > discard_time >= 0")
        object.__setattr__(self, "currents", c)
        object.__setattr__(self, "rates", r)

    @property
    def max_rate(self) -> float:
        return float(self.rates[-1])


# ------------------------------------------------------------ closed forms


def pif_gain(params: PifParams, current):
    """Perfect-integrator rate: I / (c * (v_th - v_reset)) for I > 0, else 0."""
    i = np.asarray(current, dtype=np.float64)
    gap = params.c * (params.v_th - params.v_reset)
    out = np.where(i > 0.0, i / gap, 0.0)
    return float(out) if np.isscalar(current) else out


def pif_gain_inverse(params: PifParams, rate):
    """Current that makes a perfect integrator fire at `rate`."""
    a = np.asarray(rate, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("rate must be non-negative")
    out = a * (params.c * (params.v_th - params.v_reset))
    return float(out) if np.isscalar(rate) else out


def lif_gain(params: LifParams, current):
    """Leaky-integrator rate for a constant current.

    g(I) = 1 / (t_ref - (c/g_l) * log(1 - g_l*v_th/I)) above rheobase
    (I > g_l*v_th, with voltages measured from the reset), 0 at or below.
    """
    p = params
    i = np.asarray(current, dtype=np.float64)
    rheo = p.g_l * (p.v_th - p.v_reset)  # leak reversal sits at v_reset
    with np.errstate(divide="ignore", invalid="ignore"):
        isi = p.t_ref - (p.c / p.g_l) * np.log1p(-rheo / i)
        out = np.where(i > rheo, 1.0 / isi, 0.0)
    return float(out) if np.isscalar(current) else out


def lif_gain_inverse(params: LifParams, rate):
    """Current that makes a leaky integrator fire at `rate`.

    Inverts the closed-form gain; raises GainSaturationError for rates the
    refractory period forbids (rate >= 1/t_ref), and maps 0 to 0.
    """
    p = params
    a = np.asarray(rate, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("rate must be non-negative")
    if p.t_ref > 0 and np.any(a >= 1.0 / p.t_ref):
        raise GainSaturationError(
            f"rate {float(np.max(a)):g} is unreachable: the refractory period "
            f"caps the LIF at {1.0 / p.t_ref:g}"
        )
    with np.errstate(divide="ignore", over="ignore"):
        denom = -np.expm1(p.g_l * (p.t_ref - 1.0 / np.maximum(a, 1e-300)) / p.c)
        i = p.g_l * (p.v_th - p.v_reset) / denom
    out = np.where(a > 0.0, i, 0.0)
    return float(out) if np.isscalar(rate) else out


# -------------------------------------------------------------- tabulation


def default_grid(kind: str, n_points: int = _DEFAULT_GRID_POINTS,
                 i_max: float | None = None) -> np.ndarray:
    """Default current grid for tabulating a model's gain curve."""
    if kind not in _DEFAULT_I_MAX:
        raise ValueError(f"unknown model kind {kind!r}")
    top = _DEFAULT_I_MAX[kind] if i_max is None else float(i_max)
    if not (top > 0 and n_points >= 2):
        raise ValueError("need i_max > 0 and n_points >= 2")
    return np.linspace(0.0, top, n_points)


def tabulate_gain(model: Model, i_grid=None, sim_time: float | None = None,
                  discard_time: float | None = None,
                  dt: float | None = None) -> GainTable:
    """Measure a model's firing rate on a current grid.

    Each grid current is held constant for sim_time; spikes after
    discard_time are counted and divided by the counting window.  The raw
    rates are made non-decreasing with an isotonic fit (simulation noise
    near threshold can produce one-count inversions).
    """
    timing = _DEFAULT_TIMING[model.kind in _BIOPHYSICAL]
    sim_time = timing["sim_time"] if sim_time is None else float(sim_time)
    discard_time = timing["discard_time"] if discard_time is None else float(discard_time)
    dt = timing["dt"] if dt is None else float(dt)
    if not (dt > 0 and sim_time > discard_time >= 0):
        raise ValueError("need dt > 0 and sim_time > discard_time >= 0")
    grid = default_grid(model.kind) if i_grid is None else \
        np.ascontiguousarray(np.asarray(i_grid, dtype=np.float64))
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("i_grid must be a strictly increasing 1-d array (>= 2 points)")

    counts, err = _kernels.tabulate_counts(
        MODEL_TAGS[model.kind], pack_model_params(model.kind, model.params),
        grid, dt, sim_time, discard_time)
    if err >= 0:
        raise RuntimeError(
            f"{model.kind} integration diverged while tabulating the gain "
            f"at grid point {err} (I = {grid[err]:g})"
        )
    raw = counts.astype(np.float64) / (sim_time - discard_time)
    rates = isotonic_regression(raw).x
    rates = np.maximum(rates, 0.0)  # isotonic fit preserves sign, but be safe
    unit = "1/ms" if model.kind in _BIOPHYSICAL else "1/time-unit"
    return GainTable(currents=grid, rates=rates, model_id=model.kind,
                     dt=dt, sim_time=sim_time, discard_time=discard_time,
                     rate_unit=unit)


# ---------------------------------------------------------------- inverse


def gain_knots(table: GainTable) -> tuple[np.ndarray, np.ndarray]:
    """Strictly increasing (rate, current) knots for inverting a table.

    A flat zero-rate prefix collapses to a single rheobase knot (the last
    silent current), so small positive rates interpolate between rheobase
    and the first firing grid point instead of jumping to it.  Later
    plateaus keep their first current, which is the smallest current that
    achieves the plateau rate.
    """
    r, c = table.rates, table.currents
    if table.max_rate <= 0.0:
        raise ValueError("gain table never fires; cannot invert")
    r_knots = [0.0]
    zero = np.nonzero(r == 0.0)[0]
    i_knots = [c[zero[-1]] if zero.size else c[0]]
    for k in range(r.size):
        if r[k] > r_knots[-1]:
            r_knots.append(r[k])
            i_knots.append(c[k])
    return np.asarray(r_knots), np.asarray(i_knots)


def table_gain(table: GainTable, current):
    """Rate read off a table by linear interpolation (clamped at the ends)."""
    i = np.asarray(current, dtype=np.float64)
    out = np.interp(i, table.currents, table.rates)
    return float(out) if np.isscalar(current) else out


def invert_gain(table: GainTable, rate):
    """Current that produces `rate` according to the table.

    rate 0 maps to current 0 (no drive at all, not rheobase).  Rates above
    the largest tabulated rate raise GainSaturationError; the solver
    clamps and counts instead of raising, see the engine.
    """
    a = np.asarray(rate, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("rate must be non-negative")
    r_knots, i_knots = gain_knots(table)
    if np.any(a > r_knots[-1]):
        raise GainSaturationError(
            f"rate {float(np.max(a)):g} exceeds the largest tabulated rate "
            f"{r_knots[-1]:g} for model {table.model_id!r}"
        )
    out = np.where(a > 0.0, np.interp(a, r_knots, i_knots), 0.0)
    return float(out) if np.isscalar(rate) else out


# ------------------------------------------------------------- persistence


def save_gain_csv(table: GainTable, path) -> None:
    """Write a table as CSV with a JSON header line; floats use repr so a
    reload is bit-exact."""
    meta = {
        "model_id": table.model_id,
        "dt": table.dt,
        "sim_time": table.sim_time,
        "discard_time": table.discard_time,
        "rate_unit": table.rate_unit,
    }
    lines = ["# " + json.dumps(meta), "current,rate"]
    for c, r in zip(table.currents, table.rates):
        lines.append(f"{float(c)!r},{float(r)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_gain_csv(path) -> GainTable:
    """Read a table written by save_gain_csv."""
    text = Path(path).read_text().strip().splitlines()
    if len(text) < 3 or not text[0].startswith("# "):
        raise ValueError(f"{path}: not a gain table (missing JSON header line)")
    meta = json.loads(text[0][2:])
    if text[1].strip() != "current,rate":
        raise ValueError(f"{path}: expected a current,rate column header")
    rows = [ln.split(",") for ln in text[2:] if ln.strip()]
    currents = np.array([float(r[0]) for r in rows])
    rates = np.array([float(r[1]) for r in rows])
    return GainTable(currents=currents, rates=rates, **meta)


def _cache_dir() -> Path:
    env = os.environ.get("SLCA_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "slca"


def cached_gain(model: Model, i_grid=None, sim_time: float | None = None,
                discard_time: float | None = None, dt: float | None = None,
                cache_dir=None) -> GainTable:
    """tabulate_gain with a transparent on-disk CSV cache.

    The cache key hashes the model kind, every model parameter, the grid,
    and the timing, so any change re-tabulates.  Set SLCA_CACHE_DIR to
    relocate the cache (useful in tests and batch jobs).
    """
    base = Path(cache_dir) if cache_dir is not None else _cache_dir()
    timing = _DEFAULT_TIMING[model.kind in _BIOPHYSICAL]
    sim_time = timing["sim_time"] if sim_time is None else float(sim_time)
    discard_time = timing["discard_time"] if discard_time is None else float(discard_time)
    dt = timing["dt"] if dt is None else float(dt)
    grid = default_grid(model.kind) if i_grid is None else \
        np.ascontiguousarray(np.asarray(i_grid, dtype=np.float64))

    params = {f.name: getattr(model.params, f.name) for f in fields(model.params)}
    key = json.dumps(
        {"kind": model.kind, "params": {k: repr(v) for k, v in sorted(params.items())},
         "grid": [repr(float(g)) for g in grid],
         "dt": repr(dt), "sim_time": repr(sim_time), "discard_time": repr(discard_time)},
        sort_keys=True)
    digest = hashlib.sha1(key.encode()).hexdigest()[:16]
    path = base / f"gain-{model.kind}-{digest}.csv"
    if path.exists():
        return load_gain_csv(path)
    table = tabulate_gain(model, grid, sim_time, discard_time, dt)
    base.mkdir(parents=True, exist_ok=True)
    save_gain_csv(table, path)
    return table
