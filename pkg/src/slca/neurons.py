"""Point-neuron models used by the spiking solvers.

Five current-based models: a perfect integrate-and-fire (the classic
spiking-LCA unit), a leaky integrate-and-fire, a generalized IF with a moving
threshold and optional internal currents, Morris-Lecar, and Wang-Buzsaki.
All are advanced one fixed step at a time by :func:`step`; the integration
scheme is chosen per model (closed-form updates for PIF/LIF, explicit Euler
for GIF, classic fixed-step RK4 for ML/WB).

Spike semantics differ by family:

* PIF/LIF/GIF are threshold-and-reset models.  LIF additionally holds the
  potential at rest for ``t_ref`` after a spike (clamped at whole-step
  granularity), GIF floors its moving threshold at ``theta_reset``.
* ML/WB are conductance-like models with genuine action potentials: a
  "spike" is an upward crossing of ``v_th`` with a 1 ms lockout so one AP is
  never counted twice.  Nothing is reset or clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

__all__ = [
    "KINDS",
    "TAG_PIF",
    "TAG_LIF",
    "TAG_GIF",
    "TAG_ML",
    "TAG_WB",
    "MODEL_TAGS",
    "PifParams",
    "LifParams",
    "GifParams",
    "MlParams",
    "WbParams",
    "NeuronState",
    "Model",
    "DivergedError",
    "PRESETS",
    "make_model",
    "from_preset",
    "step",
    "simulate",
]

KINDS = ("pif", "lif", "gif", "ml", "wb")
TAG_PIF, TAG_LIF, TAG_GIF, TAG_ML, TAG_WB = range(5)
MODEL_TAGS = dict(zip(KINDS, range(5)))

# lockout after an upward v_th crossing for the models without reset (ms)
AP_LOCKOUT = 1.0


class DivergedError(RuntimeError):
    """A neuron state became non-finite during integration."""


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class PifParams:
    """Perfect integrator: c dv/dt = I, fire when v reaches v_th."""

    c: float = 1.0
    v_th: float = 1.0
    v_reset: float = 0.0

    def __post_init__(self):
        _require(self.c > 0, "c must be > 0")
        _require(self.v_reset < self.v_th, "v_reset must be < v_th")


@dataclass(frozen=True)
class LifParams:
    """Leaky integrator with leak reversal at v_reset.

    Defaults are non-dimensional (rheobase = g_l*(v_th - v_reset) = 1) with a
    short absolute refractory period.
    """

    c: float = 1.0
    g_l: float = 1.0
    v_th: float = 1.0
    v_reset: float = 0.0
    t_ref: float = 0.002

    def __post_init__(self):
        _require(self.c > 0, "c must be > 0")
        _require(self.g_l > 0, "g_l must be > 0")
        _require(self.v_reset < self.v_th, "v_reset must be < v_th")
        _require(self.t_ref >= 0, "t_ref must be >= 0")


@dataclass(frozen=True)
class GifParams:
    """Generalized IF: leaky membrane, moving threshold theta, and
    n_currents decaying internal currents (disabled by default).

    Units: uF/cm^2, mS/cm^2, mV, ms.
    """

    c: float = 1.0
    g_l: float = 0.05
    v_l: float = -70.0
    v_reset: float = -70.0
    theta_inf: float = -50.0
    theta_reset: float = -60.0
    a: float = 0.0
    b: float = 0.01
    n_currents: int = 0
    k: tuple = (0.2, 0.02)
    r: tuple = (20.0, 20.0)
    amp: tuple = (0.0, 0.0)

    def __post_init__(self):
        _require(self.c > 0, "c must be > 0")
        _require(self.g_l > 0, "g_l must be > 0")
        _require(self.b >= 0, "b must be >= 0")
        _require(self.v_reset < self.theta_inf, "v_reset must be < theta_inf")
        _require(self.n_currents >= 0, "n_currents must be >= 0")
        for name in ("k", "r", "amp"):
            _require(
                len(getattr(self, name)) >= self.n_currents,
                f"{name} must list at least n_currents values",
            )


@dataclass(frozen=True)
class MlParams:
    """Morris-Lecar (Ca/K/leak) with instantaneous calcium activation.

    Units: uF/cm^2, mS/cm^2, mV, ms.
    """

    c: float = 20.0
    g_ca: float = 4.4
    v_ca: float = 130.0
    g_k: float = 8.0
    v_k: float = -84.0
    g_l: float = 2.0
    v_l: float = -60.0
    v1: float = -1.2
    v2: float = 18.0
    v3: float = 2.0
    v4: float = 30.0
    phi: float = 0.04
    v_th: float = 0.0

    def __post_init__(self):
        _require(self.c > 0, "c must be > 0")
        _require(min(self.g_ca, self.g_k, self.g_l) > 0, "conductances must be > 0")
        _require(self.v2 > 0 and self.v4 > 0, "V2 and V4 must be > 0")
        _require(self.phi > 0, "phi must be > 0")


@dataclass(frozen=True)
class WbParams:
    """Wang-Buzsaki hippocampal interneuron (Na/K/leak, fast m).

    Units: uF/cm^2, mS/cm^2, mV, ms.
    """

    c: float = 1.0
    g_na: float = 35.0
    v_na: float = 55.0
    g_k: float = 9.0
    v_k: float = -90.0
    g_l: float = 0.1
    v_l: float = -65.0
    phi: float = 5.0
    v_th: float = 20.0

    def __post_init__(self):
        _require(self.c > 0, "c must be > 0")
        _require(min(self.g_na, self.g_k, self.g_l) > 0, "conductances must be > 0")
        _require(self.phi > 0, "phi must be > 0")


_PARAM_TYPES = {
    "pif": PifParams,
    "lif": LifParams,
    "gif": GifParams,
    "ml": MlParams,
    "wb": WbParams,
}


@dataclass(frozen=True)
class NeuronState:
    """Full state of one neuron at time t.

    Unused fields stay at their defaults (e.g. ``w`` is only meaningful for
    ML).  ``refractory_until`` doubles as the AP-lockout deadline for ML/WB.
    """

    v: float
    t: float = 0.0
    theta: float = 0.0
    currents: tuple = ()
    w: float = 0.0
    h: float = 0.0
    n: float = 0.0
    refractory_until: float = -math.inf


@dataclass(frozen=True)
class Model:
    kind: str
    params: object
    state0: NeuronState


# ------------------------------------------------------------------ gating

def _ml_minf(p, v):
    return 0.5 * (1.0 + math.tanh((v - p.v1) / p.v2))


def _ml_winf(p, v):
    return 0.5 * (1.0 + math.tanh((v - p.v3) / p.v4))


def _ml_wrate(p, v):
    # 1/tau_w: phi * cosh((v - V3) / (2 V4))
    return p.phi * math.cosh((v - p.v3) / (2.0 * p.v4))


def _wb_alpha_m(v):
    x = -0.1 * (v + 35.0)
    if x == 0.0:
        return 1.0
    return x / math.expm1(x)


def _wb_beta_m(v):
    return 4.0 * math.exp(-(v + 60.0) / 18.0)


def _wb_alpha_h(v):
    return 0.07 * math.exp(-(v + 58.0) / 20.0)


def _wb_beta_h(v):
    return 1.0 / (math.exp(-0.1 * (v + 28.0)) + 1.0)


def _wb_alpha_n(v):
    x = -0.1 * (v + 34.0)
    if x == 0.0:
        return 0.1
    return 0.1 * x / math.expm1(x)


def _wb_beta_n(v):
    return 0.125 * math.exp(-(v + 44.0) / 80.0)


# ------------------------------------------------------------- construction

def make_model(kind, params=None):
    """Build a model of the given kind with its state initialized at rest.

    Resting v is v_reset (PIF/LIF/GIF) or the leak reversal (ML/WB); gating
    variables start at their steady-state values for that voltage, GIF's
    threshold starts at theta_inf and its internal currents at zero.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown neuron kind {kind!r}; expected one of {KINDS}")
    cls = _PARAM_TYPES[kind]
    if params is None:
        params = cls()
    elif not isinstance(params, cls):
        raise ValueError(f"params for kind {kind!r} must be {cls.__name__}")

    if kind == "pif":
        state0 = NeuronState(v=params.v_reset)
    elif kind == "lif":
        state0 = NeuronState(v=params.v_reset)
    elif kind == "gif":
        state0 = NeuronState(
            v=params.v_reset,
            theta=params.theta_inf,
            currents=(0.0,) * params.n_currents,
        )
    elif kind == "ml":
        state0 = NeuronState(v=params.v_l, w=_ml_winf(params, params.v_l))
    else:  # wb
        v = params.v_l
        ah, bh = _wb_alpha_h(v), _wb_beta_h(v)
        an, bn = _wb_alpha_n(v), _wb_beta_n(v)
        state0 = NeuronState(v=v, h=ah / (ah + bh), n=an / (an + bn))
    return Model(kind=kind, params=params, state0=state0)


PRESETS = {
    "pif-nondim": ("pif", PifParams()),
    "lif-nondim": ("lif", LifParams()),
    "gif": ("gif", GifParams()),
    "ml": ("ml", MlParams()),
    "wb": ("wb", WbParams()),
}


def from_preset(name, **overrides):
    """Named parameter set, optionally with individual fields overridden."""
    try:
        kind, params = PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; expected one of {sorted(PRESETS)}"
        ) from None
    if overrides:
        params = replace(params, **overrides)
    return make_model(kind, params)


# ----------------------------------------------------------------- stepping

def _check_finite(kind, *values):
    for x in values:
        if not math.isfinite(x):
            raise DivergedError(f"{kind} neuron state diverged (non-finite value)")


def _step_pif(p, state, i_input, dt):
    v = state.v + (i_input / p.c) * dt
    t = state.t + dt
    if v >= p.v_th:
        return NeuronState(v=p.v_reset, t=t), True
    return NeuronState(v=v, t=t), False


def _step_lif(p, state, i_input, dt):
    t1 = state.t + dt
    # whole-step clamp; the half-step slack keeps t_ref = k*dt robust to
    # floating-point drift in the running time
    if state.t < state.refractory_until - 0.5 * dt:
        return NeuronState(
            v=p.v_reset, t=t1, refractory_until=state.refractory_until
        ), False
    tau = p.c / p.g_l
    v_inf = p.v_reset + i_input / p.g_l
    v = v_inf + (state.v - v_inf) * math.exp(-dt / tau)
    if v > p.v_th:
        return NeuronState(v=p.v_reset, t=t1, refractory_until=t1 + p.t_ref), True
    return NeuronState(v=v, t=t1, refractory_until=state.refractory_until), False


def _step_gif(p, state, i_input, dt):
    t1 = state.t + dt
    cur = state.currents
    total = i_input + sum(cur)
    v = state.v + dt * (-p.g_l * (state.v - p.v_l) + total) / p.c
    theta = state.theta + dt * (
        p.a * (state.v - p.v_l) - p.b * (state.theta - p.theta_inf)
    )
    cur = tuple(I - dt * kj * I for kj, I in zip(p.k, cur))
    if v > theta:
        cur = tuple(rj * I + aj for rj, aj, I in zip(p.r, p.amp, cur))
        return NeuronState(
            v=p.v_reset, t=t1, theta=max(p.theta_reset, theta), currents=cur
        ), True
    return NeuronState(v=v, t=t1, theta=theta, currents=cur), False


def _ml_deriv(p, v, w, i_input):
    dv = (
        -p.g_ca * _ml_minf(p, v) * (v - p.v_ca)
        - p.g_k * w * (v - p.v_k)
        - p.g_l * (v - p.v_l)
        + i_input
    ) / p.c
    dw = _ml_wrate(p, v) * (_ml_winf(p, v) - w)
    return dv, dw


def _step_ml(p, state, i_input, dt):
    v, w = state.v, state.w
    k1v, k1w = _ml_deriv(p, v, w, i_input)
    k2v, k2w = _ml_deriv(p, v + 0.5 * dt * k1v, w + 0.5 * dt * k1w, i_input)
    k3v, k3w = _ml_deriv(p, v + 0.5 * dt * k2v, w + 0.5 * dt * k2w, i_input)
    k4v, k4w = _ml_deriv(p, v + dt * k3v, w + dt * k3w, i_input)
    v1 = v + dt * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
    w1 = w + dt * (k1w + 2.0 * k2w + 2.0 * k3w + k4w) / 6.0
    t1 = state.t + dt
    lock = state.refractory_until
    spiked = v < p.v_th <= v1 and t1 >= lock
    if spiked:
        lock = t1 + AP_LOCKOUT
    return NeuronState(v=v1, t=t1, w=w1, refractory_until=lock), spiked


def _wb_deriv(p, v, h, n, i_input):
    m = _wb_alpha_m(v)
    m = m / (m + _wb_beta_m(v))
    i_na = p.g_na * m * m * m * h * (v - p.v_na)
    i_k = p.g_k * n**4 * (v - p.v_k)
    i_l = p.g_l * (v - p.v_l)
    dv = (-(i_na + i_k + i_l) + i_input) / p.c
    dh = p.phi * (_wb_alpha_h(v) * (1.0 - h) - _wb_beta_h(v) * h)
    dn = p.phi * (_wb_alpha_n(v) * (1.0 - n) - _wb_beta_n(v) * n)
    return dv, dh, dn


def _step_wb(p, state, i_input, dt):
    v, h, n = state.v, state.h, state.n
    k1 = _wb_deriv(p, v, h, n, i_input)
    k2 = _wb_deriv(p, v + 0.5 * dt * k1[0], h + 0.5 * dt * k1[1], n + 0.5 * dt * k1[2], i_input)
    k3 = _wb_deriv(p, v + 0.5 * dt * k2[0], h + 0.5 * dt * k2[1], n + 0.5 * dt * k2[2], i_input)
    k4 = _wb_deriv(p, v + dt * k3[0], h + dt * k3[1], n + dt * k3[2], i_input)
    v1 = v + dt * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]) / 6.0
    h1 = h + dt * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]) / 6.0
    n1 = n + dt * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]) / 6.0
    t1 = state.t + dt
    lock = state.refractory_until
    spiked = v < p.v_th <= v1 and t1 >= lock
    if spiked:
        lock = t1 + AP_LOCKOUT
    return NeuronState(v=v1, t=t1, h=h1, n=n1, refractory_until=lock), spiked


_STEPPERS = {
    "pif": _step_pif,
    "lif": _step_lif,
    "gif": _step_gif,
    "ml": _step_ml,
    "wb": _step_wb,
}


def step(model, state, i_input, dt):
    """Advance one neuron by dt under constant input current.

    Returns (new_state, spiked).  Raises DivergedError if the state stops
    being finite.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    _check_finite(model.kind, state.v, state.theta, state.w, state.h, state.n,
                  *state.currents)
    new_state, spiked = _STEPPERS[model.kind](model.params, state, i_input, dt)
    _check_finite(model.kind, new_state.v, new_state.theta, new_state.w,
                  new_state.h, new_state.n, *new_state.currents)
    return new_state, spiked


def simulate(model, i_input, dt, t_max, state=None):
    """Run a single neuron at constant current; return (state, spike_times).

    Convenience wrapper for tests and calibration plots; the solver engine
    uses its own vectorized stepping.
    """
    if state is None:
        state = model.state0
    n_steps = int(round(t_max / dt))
    spikes = []
    for _ in range(n_steps):
        state, spiked = step(model, state, i_input, dt)
        if spiked:
            spikes.append(state.t)
    return state, spikes
