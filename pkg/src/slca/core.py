"""Problem instances, precomputed couplings, metrics, and trace plumbing.

Matrices are plain C-contiguous float64 ndarrays throughout; `as_matrix`
enforces that at the API boundary. All dB metrics return the IEEE infinities
as documented sentinels instead of raising, so convergence traces remain
plottable.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .penalties import Penalty, penalty_value

MAGIC = b"SLCA"


def as_matrix(x, name="matrix"):
    """Validate and return x as a 2-D C-contiguous float64 array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_vector(x, name="vector"):
    a = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SensingProblem:
    """One sparse-recovery instance: minimize 0.5*||s - A a||^2 + lam*C~(a).

    sign_mode "nonneg" constrains a >= 0 (the native mode of the spiking
    solvers); "free" allows signed coefficients.
    """

    A: np.ndarray
    s: np.ndarray
    lam: float
    penalty: Penalty = field(default_factory=lambda: Penalty("l1"))
    sign_mode: str = "nonneg"

    def __post_init__(self):
        object.__setattr__(self, "A", as_matrix(self.A, "A"))
        object.__setattr__(self, "s", as_vector(self.s, "s"))
        if self.s.shape[0] != self.A.shape[0]:
            raise ValueError(
                f"s has length {self.s.shape[0]}, expected A.rows = {self.A.shape[0]}"
            )
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be finite and positive")
        if self.sign_mode not in ("nonneg", "free"):
            raise ValueError(f"unknown sign_mode {self.sign_mode!r}")

    @property
    def shape(self):
        return self.A.shape


@dataclass(frozen=True)
class GramCache:
    """Zero-diagonal Gram couplings W = A^T A - diag, drive b = A^T s,
    and the column squared norms that were removed from the diagonal."""

    W: np.ndarray
    b: np.ndarray
    diag: np.ndarray


def gram_cache(A, s):
    A = as_matrix(A, "A")
    s = as_vector(s, "s")
    if s.shape[0] != A.shape[0]:
        raise ValueError("dimension mismatch between A and s")
    W = A.T @ A
    # BLAS does not promise W == W.T to the last bit; mirror the upper
    # triangle so the symmetry contract holds exactly.
    iu = np.triu_indices(W.shape[0], k=1)
    W[(iu[1], iu[0])] = W[iu]
    diag = np.ascontiguousarray(np.diag(W).copy())
    np.fill_diagonal(W, 0.0)
    b = A.T @ s
    return GramCache(W=np.ascontiguousarray(W), b=np.ascontiguousarray(b), diag=diag)


def objective(problem, a):
    """0.5*||s - A a||^2 + lam * sum C~(a_i).

    The penalty acts on |a_i| in free mode (l1/elastic_net); for the
    log_barrier kind nonpositive coordinates give +inf rather than an error,
    so early samples of a barrier run stay plottable.
    """
    a = as_vector(a, "a")
    if a.shape[0] != problem.A.shape[1]:
        raise ValueError(
            f"a has length {a.shape[0]}, expected A.cols = {problem.A.shape[1]}"
        )
    r = problem.s - problem.A @ a
    fit = 0.5 * float(r @ r)
    p = problem.penalty
    if p.kind == "log_barrier":
        if np.any(a <= 0):
            return np.inf
        pen = float(np.sum(penalty_value(p, a, problem.lam)))
    else:
        arg = np.abs(a) if problem.sign_mode == "free" else a
        if np.any(arg < 0):
            raise ValueError("negative coefficients in nonneg mode; "
                             "use feasible() to test first")
        pen = float(np.sum(penalty_value(p, arg, problem.lam)))
    return fit + problem.lam * pen


def feasible(problem, a, tol=0.0):
    """True when a satisfies the problem's sign constraint."""
    a = as_vector(a, "a")
    if problem.sign_mode == "nonneg":
        return bool(np.all(a >= -tol))
    return True


def normalize_columns(A):
    """Return (A with unit l2 columns, original column norms)."""
    A = as_matrix(A, "A")
    scales = np.linalg.norm(A, axis=0)
    if np.any(scales == 0):
        raise ValueError("cannot normalize a zero column")
    return np.ascontiguousarray(A / scales), scales


def lambda_max(A, s):
    """||A^T s||_inf — the smallest lambda with an all-zero l1 solution."""
    A = as_matrix(A, "A")
    s = as_vector(s, "s")
    return float(np.max(np.abs(A.T @ s)))


# --------------------------------------------------------------------- metrics


def nmse(ref, est):
    """10*log10(||est - ref||^2 / ||ref||^2) in dB; -inf when est == ref."""
    ref = as_vector(ref, "ref")
    est = as_vector(est, "est")
    if ref.shape != est.shape:
        raise ValueError("ref and est must have equal lengths")
    denom = float(ref @ ref)
    if denom == 0.0:
        raise ValueError("nmse undefined for a zero reference")
    diff = est - ref
    num = float(diff @ diff)
    if num == 0.0:
        return -np.inf
    return 10.0 * np.log10(num / denom)


def snr(ref, est):
    """10*log10(||ref||^2 / ||ref - est||^2) in dB; +inf when est == ref."""
    return -nmse(ref, est)


def psnr(ref, est, peak):
    """10*log10(peak^2 * n / ||ref - est||^2) in dB over flattened images."""
    ref = np.asarray(ref, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    if ref.shape != est.shape:
        raise ValueError("image shapes differ")
    err = float(np.sum((ref - est) ** 2))
    if err == 0.0:
        return np.inf
    return 10.0 * np.log10(peak * peak * ref.size / err)


def r2(y, y_hat):
    """Coefficient of determination 1 - SS_res/SS_tot."""
    y = as_vector(y, "y")
    y_hat = as_vector(y_hat, "y_hat")
    if y.shape != y_hat.shape:
        raise ValueError("length mismatch")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - y_hat) ** 2))
    if ss_tot == 0.0:
        return -np.inf if ss_res > 0 else 1.0
    return 1.0 - ss_res / ss_tot


# ----------------------------------------------------------------- solve trace


@dataclass
class SolveTrace:
    """Common sampled output of every solver.

    times      sample times (simulation time or iteration index), increasing
    objectives objective value at each sample
    coeffs     (n_samples, N) coefficient snapshots
    aux        optional per-sample integer payload (total spike counts)
    """

    times: np.ndarray
    objectives: np.ndarray
    coeffs: np.ndarray
    solver_id: str
    aux: np.ndarray | None = None
    wall_times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.objectives = np.asarray(self.objectives, dtype=np.float64)
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.times.shape[0]:
            raise ValueError("coeffs must be (n_samples, N)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    @property
    def final_coeffs(self):
        return self.coeffs[-1]

    @property
    def final_objective(self):
        return float(self.objectives[-1])


def write_trace_csv(trace, path, truth=None):
    """Write (time, objective[, nmse_vs_truth], spikes_total) rows."""
    with_truth = truth is not None
    lines = []
    header = ["time", "objective"]
    if with_truth:
        header.append("nmse_vs_truth")
    header.append("spikes_total")
    lines.append(",".join(header))
    aux = trace.aux if trace.aux is not None else np.zeros(len(trace.times), dtype=np.int64)
    for k in range(len(trace.times)):
        row = [repr(float(trace.times[k])), repr(float(trace.objectives[k]))]
        if with_truth:
            row.append(repr(float(nmse(truth, trace.coeffs[k]))))
        row.append(str(int(aux[k])))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_coeffs_csv(trace, path):
    """Side file with the coefficient snapshots, one sample per row."""
    write_matrix_csv(trace.coeffs, path)


def read_trace_csv(path):
    """Read back a trace CSV into (times, objectives, nmse_or_None, spikes)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: np.array([float(r[i]) for r in rows]) for i, name in enumerate(header)}
    return (
        cols["time"],
        cols["objective"],
        cols.get("nmse_vs_truth"),
        cols["spikes_total"].astype(np.int64),
    )


def write_summary_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


# ------------------------------------------------------------ matrix file I/O


def write_matrix_csv(A, path):
    """Header 'rows,cols', then one comma-separated line per matrix row.

    Values are serialized with repr() so the reload is bit-exact.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]},{A.shape[1]}\n")
        for row in A:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path):
    with open(path) as fh:
        first = fh.readline().strip()
        try:
            rows, cols = (int(tok) for tok in first.split(","))
        except Exception as e:
            raise ValueError(f"{path}: bad matrix header {first!r}") from e
        data = np.empty((rows, cols), dtype=np.float64)
        for i in range(rows):
            line = fh.readline()
            vals = line.strip().split(",")
            if len(vals) != cols:
                raise ValueError(f"{path}: row {i} has {len(vals)} values, expected {cols}")
            data[i] = [float(v) for v in vals]
    return data


def write_vector_csv(v, path):
    write_matrix_csv(np.asarray(v, dtype=np.float64).reshape(-1, 1), path)


def read_vector_csv(path):
    return read_matrix_csv(path).reshape(-1)


def write_matrix_bin(A, path):
    A = np.ascontiguousarray(np.atleast_2d(np.asarray(A, dtype=np.float64)))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", A.shape[0], A.shape[1]))
        fh.write(A.tobytes())


def read_matrix_bin(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
        if data.size != rows * cols:
            raise ValueError(f"{path}: truncated payload")
    return data.reshape(rows, cols).copy()
