"""Classical solvers used as oracles: ISTA, FISTA, and the analog LCA ODE.

These provide the reference solutions the spiking solvers are checked
against.  They share the SolveTrace output format, with iteration index
(proximal solvers) or simulation time (ODE) on the time axis.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import SolveTrace, objective
from .engine import EngineDivergedError
from .penalties import prox, threshold

__all__ = [
    "ProxSolverConfig",
    "LcaOdeConfig",
    "lipschitz",
    "ista",
    "fista",
    "lca_ode",
]


@dataclass(frozen=True)
class ProxSolverConfig:
    """Proximal-gradient solver knobs.

    step is "auto_lipschitz" (1/L with L from power iteration) or a fixed
    positive step size.  tol is a relative objective-change stopping
    criterion; 0 runs out max_iters.  restart enables function-value
    restart of the FISTA momentum (ignored by ISTA).
    """

    max_iters: int = 1000
    tol: float = 1e-10
    step: float | str = "auto_lipschitz"
    restart: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol >= 0:
            raise ValueError("tol must be >= 0")
        if isinstance(self.step, str):
            if self.step != "auto_lipschitz":
                raise ValueError("step must be 'auto_lipschitz' or a "
                                 "positive number")
        elif not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError("step must be 'auto_lipschitz' or a "
                             "positive number")


@dataclass(frozen=True)
class LcaOdeConfig:
    """Analog LCA integration knobs; dt defaults to tau/20."""

    tau: float = 1.0
    dt: float | None = None
    t_max: float = 50.0

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")
        dt = self.resolved_dt
        if not (dt > 0 and dt < self.tau):
            raise ValueError("dt must satisfy 0 < dt < tau")
        if not self.t_max > dt:
            raise ValueError("t_max must exceed dt")

    @property
    def resolved_dt(self) -> float:
        return self.tau / 20.0 if self.dt is None else float(self.dt)


def lipschitz(A, tol=1e-8, max_iters=10000):
    """Upper bound on the Lipschitz constant of the LASSO gradient.

    Power iteration estimates the top eigenvalue of A^T A to `tol`
    relative change, then a 1.01 safety factor is applied so 1/L step
    sizes remain strictly inside the stable range.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("A must be 2-d")
    if not np.any(A):
        raise ValueError("A must be nonzero")
    n = A.shape[1]
    # deterministic, generic start: constant plus a small ramp
    x = np.ones(n) + 1e-3 * np.arange(n)
    x /= np.linalg.norm(x)
    lam_prev = 0.0
    for _ in range(max_iters):
        y = A.T @ (A @ x)
        lam = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            # x sits in the null space; the ramp start makes this mean
            # rank deficiency in a direction we can escape by reseeding
            x = np.ones(n) / math.sqrt(n)
            lam_prev = 0.0
            continue
        x = y / norm
        if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-300):
            return 1.01 * lam
        lam_prev = lam
    raise RuntimeError(f"power iteration did not converge in {max_iters} "
                       "iterations")


def _prox_trace(problem, cfg, accelerated):
    if problem.penalty.kind not in ("l1", "elastic_net"):
        raise ValueError(
            f"{problem.penalty.kind} has no proximal map here; ISTA/FISTA "
            "support l1 and elastic_net")
    cfg = cfg if cfg is not None else ProxSolverConfig()
    A, s, lam = problem.A, problem.s, problem.lam
    if cfg.step == "auto_lipschitz":
        big_l = lipschitz(A)
        step = 1.0 / big_l
    else:
        big_l = None
        step = float(cfg.step)
    n = A.shape[1]
    x = np.zeros(n)
    y = x
    t_mom = 1.0
    times = [0.0]
    objectives = [objective(problem, x)]
    coeffs = [x.copy()]
    wall = [0.0]
    t_start = time.perf_counter()
    converged = False
    restarts = 0
    for k in range(1, cfg.max_iters + 1):
        grad = A.T @ (A @ y - s)
        x_new = prox(problem.penalty, step * lam, y - step * grad,
                     problem.sign_mode)
        if accelerated:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y = x_new + ((t_mom - 1.0) / t_next) * (x_new - x)
            t_mom = t_next
        else:
            y = x_new
        f = objective(problem, x_new)
        if accelerated and cfg.restart and f > objectives[-1]:
            # function-value restart: drop momentum, retry from x
            y = x
            t_mom = 1.0
            restarts += 1
            continue
        x = x_new
        times.append(float(k))
        objectives.append(f)
        coeffs.append(x.copy())
        wall.append(time.perf_counter() - t_start)
        if abs(objectives[-1] - objectives[-2]) <= \
                cfg.tol * max(1.0, abs(objectives[-2])):
            converged = True
            break
    meta = {
        "config": {"max_iters": cfg.max_iters, "tol": cfg.tol,
                   "step": cfg.step, "restart": cfg.restart},
        "step": step,
        "lipschitz": big_l,
        "converged": converged,
        "iterations": int(times[-1]),
        "restarts": restarts,
    }
    return SolveTrace(times=np.asarray(times),
                      objectives=np.asarray(objectives),
                      coeffs=np.asarray(coeffs),
                      solver_id="fista" if accelerated else "ista",
                      wall_times=np.asarray(wall), meta=meta)


def ista(problem, config=None):
    """Proximal gradient descent; trace indexed by iteration."""
    return _prox_trace(problem, config, accelerated=False)


def fista(problem, config=None):
    """Accelerated proximal gradient with the standard momentum sequence
    t_{k+1} = (1 + sqrt(1 + 4 t_k^2))/2; optional function-value restart."""
    return _prox_trace(problem, config, accelerated=True)


def lca_ode(problem, config=None):
    """The analog locally-competitive network, integrated with RK4.

    tau * du/dt = b - u - (A^T A - I) a,   a = T_lam(u)

    (two-sided threshold in free mode).  u starts at b, matching the
    spiking engine's convention.  Samples every step.
    """
    cfg = config if config is not None else LcaOdeConfig()
    A, s, lam = problem.A, problem.s, problem.lam
    pen = problem.penalty
    sign_mode = problem.sign_mode
    if sign_mode == "free" and pen.kind not in ("l1", "elastic_net"):
        raise ValueError(f"two-sided threshold undefined for {pen.kind}")
    b = A.T @ s
    w2 = A.T @ A - np.eye(A.shape[1])
    dt = cfg.resolved_dt
    inv_tau = 1.0 / cfg.tau

    class _NonFinite(Exception):
        pass

    def act(u):
        if not np.all(np.isfinite(u)):
            raise _NonFinite
        return threshold(pen, lam, u, sign_mode)

    def deriv(u):
        return inv_tau * (b - u - w2 @ act(u))

    u = b.copy()
    n_steps = int(round(cfg.t_max / dt))
    times = [0.0]
    a = act(u)
    objectives = [objective(problem, a)]
    coeffs = [a]
    wall = [0.0]
    t_start = time.perf_counter()
    t = 0.0
    for _ in range(n_steps):
        try:
            k1 = deriv(u)
            k2 = deriv(u + 0.5 * dt * k1)
            k3 = deriv(u + 0.5 * dt * k2)
            k4 = deriv(u + dt * k3)
            u = u + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        except _NonFinite:
            u = np.full_like(u, np.nan)
        t += dt
        if not np.all(np.isfinite(u)):
            trace = _ode_trace(problem, cfg, times, objectives, coeffs, wall,
                               u, terminated="diverged")
            raise EngineDivergedError(
                f"LCA ODE diverged at t = {t:.6g}; trace up to the last "
                "stable sample attached", trace)
        a = act(u)
        times.append(t)
        objectives.append(objective(problem, a))
        coeffs.append(a)
        wall.append(time.perf_counter() - t_start)
    return _ode_trace(problem, cfg, times, objectives, coeffs, wall, u,
                      terminated="t_max")


def _ode_trace(problem, cfg, times, objectives, coeffs, wall, u, terminated):
    meta = {
        "config": {"tau": cfg.tau, "dt": cfg.resolved_dt, "t_max": cfg.t_max},
        "u_final": u.copy(),
        "terminated": terminated,
        "lam": float(problem.lam),
        "penalty": problem.penalty.kind,
    }
    return SolveTrace(times=np.asarray(times),
                      objectives=np.asarray(objectives),
                      coeffs=np.asarray(coeffs), solver_id="lca-ode",
                      wall_times=np.asarray(wall), meta=meta)
