"""Penalty families, their derivatives, and the threshold maps they induce.

A penalty C~ acts componentwise on non-negative coefficients. Every solver in
this package only ever needs three things from it: the value C~(a), the slope
C~'(a), and the activation (threshold) map T_lam obtained by inverting
u = a + lam*C~'(a) for a >= 0. For l1 and elastic_net the threshold doubles as
the proximal operator used by the classical baselines.
"""

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("l1", "elastic_net", "log_barrier", "exp", "log", "atan")

# integer tags shared with the compiled kernels
TAG_L1, TAG_EN, TAG_BARRIER, TAG_EXP, TAG_LOG, TAG_ATAN = range(6)
_TAGS = dict(zip(KINDS, range(6)))

_PARAM_NAME = {
    "l1": None,
    "elastic_net": "rho",
    "log_barrier": "gamma",
    "exp": "gamma",
    "log": "theta",
    "atan": "eta",
}

#: residual tolerance for implicitly defined thresholds (exp/log/atan)
ROOT_TOL = 1e-12


@dataclass(frozen=True)
class Penalty:
    """A penalty family plus its single shape parameter.

    kind  : one of KINDS
    param : rho for elastic_net, gamma for log_barrier/exp, theta for log,
            eta for atan; unused for l1
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        p = float(self.param)
        if self.kind == "elastic_net" and not (0.0 < p <= 1.0):
            raise ValueError("elastic_net rho must lie in (0, 1]")
        if self.kind in ("log_barrier", "exp", "atan") and not p > 0.0:
            raise ValueError(f"{self.kind} parameter must be positive")
        if self.kind == "log" and not p >= 1.0:
            raise ValueError("log penalty theta must be >= 1")
        if not math.isfinite(p):
            raise ValueError("penalty parameter must be finite")

    @property
    def tag(self):
        return _TAGS[self.kind]

    def to_dict(self):
        d = {"kind": self.kind}
        name = _PARAM_NAME[self.kind]
        if name is not None:
            d[name] = float(self.param)
        return d

    @staticmethod
    def from_dict(d):
        kind = d["kind"]
        name = _PARAM_NAME.get(kind)
        param = float(d[name]) if name is not None else 0.0
        return Penalty(kind, param)


def l1():
    return Penalty("l1")


def elastic_net(rho):
    return Penalty("elastic_net", rho)


def log_barrier(gamma):
    return Penalty("log_barrier", gamma)


def exponential(gamma):
    return Penalty("exp", gamma)


def logarithmic(theta):
    return Penalty("log", theta)


def arctangent(eta):
    return Penalty("atan", eta)


def _need_lam(p, lam):
    if lam is None:
        raise ValueError("log_barrier penalty needs the problem's lambda")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return float(lam)


def penalty_value(p, a, lam=None):
    """C~(a), componentwise; a must be >= 0 (> 0 for log_barrier)."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("penalty domain is a >= 0")
    k, q = p.kind, p.param
    if k == "l1":
        out = a.copy()
    elif k == "elastic_net":
        out = q * a + 0.5 * (1.0 - q) * a * a
    elif k == "log_barrier":
        lam = _need_lam(p, lam)
        if np.any(a <= 0):
            raise ValueError("log_barrier requires a > 0")
        out = a - np.log(a) / (q * lam)
    elif k == "exp":
        out = 1.0 - np.exp(-q * a)
    elif k == "log":
        out = np.log(a + q)
    else:  # atan
        out = np.arctan(a / q)
    return float(out) if out.ndim == 0 else out


def penalty_grad(p, a, lam=None):
    """dC~/da, componentwise; same domain rules as penalty_value."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("penalty domain is a >= 0")
    if p.kind == "log_barrier" and np.any(a <= 0):
        raise ValueError("log_barrier requires a > 0")
    out = _grad_unchecked(p, a, lam)
    return float(out) if np.ndim(out) == 0 else out


def _grad_unchecked(p, a, lam=None):
    # internal: no domain check, so the rule-3 finite difference may poke
    # slightly below 0 for the kinds that remain smooth there
    k, q = p.kind, p.param
    if k == "l1":
        return np.ones_like(a, dtype=np.float64) if np.ndim(a) else 1.0
    if k == "elastic_net":
        return q + (1.0 - q) * a
    if k == "log_barrier":
        lam = _need_lam(p, lam)
        return 1.0 - 1.0 / (q * lam * a)
    if k == "exp":
        return q * np.exp(-q * a)
    if k == "log":
        return 1.0 / (a + q)
    return q / (q * q + a * a)  # atan


def _implicit_threshold_scalar(p, lam, u):
    # smallest-a>=0 solution of a + lam*C~'(a) = u, by bisection; the
    # threshold relation is monotone under rule 3, so the bracket [0, u]
    # always contains exactly one root once u clears the dead zone
    g0 = _grad_unchecked(p, 0.0, lam)
    if u <= lam * g0:
        return 0.0
    lo, hi = 0.0, u
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        r = mid + lam * _grad_unchecked(p, mid, lam) - u
        if abs(r) <= ROOT_TOL:
            return mid
        if r < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, u):
            break
    return 0.5 * (lo + hi)


def threshold(p, lam, u, sign_mode="nonneg"):
    """Activation map T_lam(u) induced by the penalty.

    l1/elastic_net support the two-sided ("free") variant; the other kinds are
    defined on non-negative activations only.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite input to threshold")
    k, q = p.kind, p.param
    if sign_mode == "free":
        if k not in ("l1", "elastic_net"):
            raise ValueError(f"two-sided threshold undefined for {k}; "
                             "use variable splitting instead")
        mag = threshold(p, lam, np.abs(u), "nonneg")
        out = np.sign(u) * mag
        return float(out) if np.ndim(out) == 0 else out
    if sign_mode != "nonneg":
        raise ValueError(f"unknown sign_mode {sign_mode!r}")

    if k == "l1":
        out = np.maximum(u - lam, 0.0)
    elif k == "elastic_net":
        out = np.where(u <= lam * q, 0.0, (u - lam * q) / (lam * (1.0 - q) + 1.0))
    elif k == "log_barrier":
        # positive root of gamma*a^2 + gamma*(lam-u)*a - 1 = 0
        d = u - lam
        out = (q * d + np.sqrt(q * q * d * d + 4.0 * q)) / (2.0 * q)
    else:
        out = np.vectorize(lambda x: _implicit_threshold_scalar(p, lam, x))(u)
    out = np.asarray(out, dtype=np.float64)
    return float(out) if out.ndim == 0 else out


def prox(p, step_lambda, v, sign_mode="nonneg"):
    """Proximal map of step_lambda * C~ at v (l1 and elastic_net only)."""
    sl = float(step_lambda)
    v = np.asarray(v, dtype=np.float64)
    if p.kind == "l1":
        if sign_mode == "free":
            return np.sign(v) * np.maximum(np.abs(v) - sl, 0.0)
        return np.maximum(v - sl, 0.0)
    if p.kind == "elastic_net":
        rho = p.param
        scale = 1.0 + sl * (1.0 - rho)
        if sign_mode == "free":
            return np.sign(v) * np.maximum(np.abs(v) - sl * rho, 0.0) / scale
        return np.maximum(v - sl * rho, 0.0) / scale
    raise ValueError(f"no proximal operator for penalty kind {p.kind!r}")


@dataclass
class RuleReport:
    """Outcome of the three convergence-rule checks for a penalty."""

    rule1_ok: bool
    rule2_ok: bool
    rule3_ok: bool
    witness: float | None
    lambda_tested: float

    @property
    def passed(self):
        return self.rule1_ok and self.rule2_ok and self.rule3_ok

    def __str__(self):
        lines = [
            f"rule 1 (C~ >= 0 on grid):        {'PASS' if self.rule1_ok else 'FAIL'}",
            f"rule 2 (C~' > 0 on grid):        {'PASS' if self.rule2_ok else 'FAIL'}",
            f"rule 3 (C~'' > -1/lambda):       {'PASS' if self.rule3_ok else 'FAIL'}",
            f"lambda tested: {self.lambda_tested:g}",
        ]
        if self.witness is not None:
            lines.append(f"witness grid point: {self.witness:.6g}")
        return "\n".join(lines)


def validate_rules(p, lam, grid=None):
    """Check the three sufficient convergence rules on a positive grid.

    rule 1: C~ >= 0;  rule 2: C~' > 0;  rule 3: C~''(x) > -1/lambda, with the
    second derivative taken by central differences of the analytic slope
    (step h = 1e-5 * max(1, x), halved below x/2 where the domain demands it).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if grid is None:
        grid = np.geomspace(1e-6, 1e3, 512)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(grid <= 0):
        raise ValueError("grid points must be positive")

    vals = penalty_value(p, grid, lam)
    slopes = penalty_grad(p, grid, lam)
    h = 1e-5 * np.maximum(1.0, grid)
    if p.kind == "log_barrier":
        h = np.minimum(h, 0.5 * grid)
    curv = (_grad_unchecked(p, grid + h, lam)
            - _grad_unchecked(p, grid - h, lam)) / (2.0 * h)

    bad1 = vals < 0
    bad2 = slopes <= 0
    if p.kind == "exp":
        # gamma*e^(-gamma*x) underflows to exactly 0 past x ~ 745/gamma but is
        # mathematically positive; don't let float underflow fail rule 2
        bad2 &= slopes != 0.0
    bad3 = curv <= -1.0 / lam
    witness = None
    for bad in (bad1, bad2, bad3):
        if bad.any():
            witness = float(grid[int(np.argmax(bad))])
            break
    return RuleReport(
        rule1_ok=not bad1.any(),
        rule2_ok=not bad2.any(),
        rule3_ok=not bad3.any(),
        witness=witness,
        lambda_tested=float(lam),
    )
