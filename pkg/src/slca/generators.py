"""Synthetic problem generators.

Gaussian compressed sensing, Ricker-wavelet seismic dictionaries,
wavelet-sparse image recovery (with a small separable orthonormal DWT),
and a superimposed-sinusoid regression task.  Every generator is a pure
function of its parameters and seed; instances can be serialized to a
directory and reloaded bit-exactly.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (SensingProblem, lambda_max, normalize_columns,
                   read_matrix_bin, read_vector_csv, write_matrix_bin,
                   write_vector_csv)
from .penalties import Penalty

__all__ = [
    "GroundTruth",
    "RegressionTestSet",
    "gaussian_problem",
    "ricker",
    "ricker_dictionary",
    "dwt2",
    "idwt2",
    "phantom",
    "cs_image_problem",
    "cs_image_reconstruct",
    "sinusoid_regression",
    "save_instance",
    "load_instance",
]


@dataclass(frozen=True)
class GroundTruth:
    """What the generator buried in the instance: the true coefficients,
    the noise level, the seed, and any generator-specific extras
    (e.g. column scales for normalized dictionaries)."""

    a_true: np.ndarray
    noise_sigma: float
    seed: int
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------- Gaussian CS


def gaussian_problem(m, n, k, noise_sigma=0.01, lam=None, seed=0,
                     nonneg=True, normalize_cols=True):
    """Random K-sparse instance with a Gaussian dictionary.

    Draw order (one generator, so runs are reproducible): A entries,
    support indices, nonzero magnitudes, measurement noise.  Magnitudes
    are |N(0,1)| when nonneg else N(0,1).  lam defaults to
    0.1 * ||A^T s||_inf.
    """
    if m < 1 or n < 1 or k < 0:
        raise ValueError("sizes must satisfy m >= 1, n >= 1, k >= 0")
    if k > n:
        raise ValueError(f"k = {k} exceeds n = {n}")
    if m > n:
        raise ValueError(f"m = {m} exceeds n = {n}; the instance must be "
                         "underdetermined")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    if normalize_cols:
        A, _ = normalize_columns(A)
    support = rng.choice(n, size=k, replace=False)
    mags = rng.standard_normal(k)
    if nonneg:
        mags = np.abs(mags)
    noise = rng.standard_normal(m)
    a_true = np.zeros(n)
    a_true[support] = mags
    s = A @ a_true + noise_sigma * noise
    if lam is None:
        lam = 0.1 * lambda_max(A, s)
    prob = SensingProblem(A=A, s=s, lam=lam, penalty=Penalty("l1"),
                          sign_mode="nonneg" if nonneg else "free")
    truth = GroundTruth(a_true=a_true, noise_sigma=float(noise_sigma),
                        seed=int(seed))
    return prob, truth


# ----------------------------------------------------------- Ricker wavelets


def ricker(t, f, t0=0.0):
    """Ricker (Mexican-hat) wavelet amplitude at time t.

    [1 - 2 pi^2 f^2 (t - t0)^2] * exp(-pi^2 f^2 (t - t0)^2) with dominant
    frequency f and center time t0.
    """
    if not f > 0:
        raise ValueError("frequency must be positive")
    t = np.asarray(t, dtype=np.float64)
    arg = (np.pi * f * (t - t0)) ** 2
    return (1.0 - 2.0 * arg) * np.exp(-arg)


def ricker_dictionary(sample_times, freqs, centers):
    """Matrix of Ricker wavelets sampled at sample_times.

    Column order is centers-major: column index = ci * len(freqs) + fi,
    i.e. all frequencies for the first center, then all frequencies for
    the second, and so on.  Duplicate (f, t0) pairs are allowed but emit
    a warning, since they produce identical columns.
    """
    sample_times = np.asarray(sample_times, dtype=np.float64).reshape(-1)
    freqs = np.asarray(freqs, dtype=np.float64).reshape(-1)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1)
    if sample_times.size == 0 or freqs.size == 0 or centers.size == 0:
        raise ValueError("sample_times, freqs, and centers must be non-empty")
    if (np.unique(freqs).size < freqs.size
            or np.unique(centers).size < centers.size):
        warnings.warn("duplicate frequencies or centers produce identical "
                      "dictionary columns", stacklevel=2)
    cols = np.empty((sample_times.size, centers.size * freqs.size))
    for ci, c in enumerate(centers):
        for fi, f in enumerate(freqs):
            cols[:, ci * freqs.size + fi] = ricker(sample_times, f, c)
    return cols


# ------------------------------------------------- separable orthonormal DWT

_SQRT2 = math.sqrt(2.0)
_SQRT3 = math.sqrt(3.0)

# orthonormal analysis low-pass filters; the high-pass mate is the
# alternating-sign reversal (quadrature mirror)
_FILTERS = {
    "haar": np.array([1.0, 1.0]) / _SQRT2,
    "db4": np.array([1.0 + _SQRT3, 3.0 + _SQRT3,
                     3.0 - _SQRT3, 1.0 - _SQRT3]) / (4.0 * _SQRT2),
}


def _step_matrix(n, wavelet):
    """One periodic analysis step as an n x n orthonormal matrix: the top
    n/2 rows average (low-pass), the bottom n/2 rows detail (high-pass)."""
    h = _FILTERS[wavelet]
    L = h.size
    g = ((-1.0) ** np.arange(L)) * h[::-1]
    S = np.zeros((n, n))
    half = n // 2
    for i in range(half):
        for k in range(L):
            j = (2 * i + k) % n
            S[i, j] += h[k]
            S[half + i, j] += g[k]
    return S


def _check_dwt_args(image, levels, wavelet):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError("image must be square")
    if wavelet not in _FILTERS:
        raise ValueError(f"unknown wavelet {wavelet!r}; expected one of "
                         f"{sorted(_FILTERS)}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    n = image.shape[0]
    if n % (1 << levels):
        raise ValueError(f"size {n} is not divisible by 2^{levels}")
    if n >> (levels - 1) < _FILTERS[wavelet].size:
        raise ValueError(f"{levels} levels of {wavelet} need size >= "
                         f"{_FILTERS[wavelet].size << (levels - 1)}")
    return image, n


def dwt2(image, levels=1, wavelet="haar"):
    """Separable periodic orthonormal wavelet analysis.

    Output layout is the usual recursive one: at each level the
    approximation occupies the top-left quadrant and is transformed
    again; the other three quadrants hold the detail coefficients.
    """
    out, n = _check_dwt_args(image, levels, wavelet)
    out = out.copy()
    size = n
    for _ in range(levels):
        S = _step_matrix(size, wavelet)
        out[:size, :size] = S @ out[:size, :size] @ S.T
        size //= 2
    return out


def idwt2(coeffs, levels=1, wavelet="haar"):
    """Exact inverse of dwt2 (the transform is orthonormal)."""
    out, n = _check_dwt_args(coeffs, levels, wavelet)
    out = out.copy()
    for lvl in range(levels - 1, -1, -1):
        size = n >> lvl
        S = _step_matrix(size, wavelet)
        out[:size, :size] = S.T @ out[:size, :size] @ S
    return out


# ------------------------------------------------------------ image recovery

# (value, cx, cy, semi_x, semi_y, angle_deg) on the [-1, 1]^2 square
_PHANTOM_ELLIPSES = (
    (1.0, 0.0, 0.0, 0.78, 0.92, 0.0),
    (-0.6, 0.0, 0.02, 0.66, 0.82, 0.0),
    (0.4, 0.26, 0.18, 0.14, 0.32, -28.0),
    (0.4, -0.26, 0.18, 0.14, 0.32, 28.0),
    (0.3, 0.0, -0.38, 0.22, 0.14, 0.0),
    (0.25, 0.0, 0.48, 0.09, 0.09, 0.0),
    (0.2, 0.0, -0.08, 0.05, 0.05, 0.0),
)


def phantom(n):
    """Synthetic head-like ellipse phantom, values clipped to [0, 1]."""
    if n < 8:
        raise ValueError("phantom needs n >= 8")
    coords = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    x, y = np.meshgrid(coords, coords)
    img = np.zeros((n, n))
    for value, cx, cy, sa, sb, ang in _PHANTOM_ELLIPSES:
        th = math.radians(ang)
        xr = (x - cx) * math.cos(th) + (y - cy) * math.sin(th)
        yr = -(x - cx) * math.sin(th) + (y - cy) * math.cos(th)
        img += value * ((xr / sa) ** 2 + (yr / sb) ** 2 <= 1.0)
    return np.clip(img, 0.0, 1.0)


def cs_image_problem(image, undersample_ratio, wavelet="db4", levels=3,
                     lam=None, seed=0, max_pixels=4096):
    """Compressed-sensing recovery of a wavelet-sparse image.

    Measures s = Phi @ vec(image) with a Gaussian M x n^2 matrix
    (M = round(ratio * n^2)) and poses the recovery over wavelet
    coefficients: A = Phi @ Psi with Psi the orthonormal synthesis
    operator.  Columns of A are normalized exactly; the recorded scales
    (truth.extra["scales"]) map solver coefficients back to wavelet
    coefficients, and a_true is stored in the normalized coordinates so
    s = A @ a_true holds as written.
    """
    image = np.asarray(image, dtype=np.float64)
    _check_dwt_args(image, levels, wavelet)
    n = image.shape[0]
    if n * n > max_pixels:
        raise ValueError(f"{n}x{n} image exceeds the {max_pixels}-pixel cap")
    if not 0.0 < undersample_ratio <= 1.0:
        raise ValueError("undersample_ratio must be in (0, 1]")
    big_n = n * n
    m = max(1, int(round(undersample_ratio * big_n)))
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((m, big_n)) / math.sqrt(m)
    # row r of Phi @ Psi is the analysis transform of row r of Phi
    # (Psi = W^T with W orthonormal), so M small transforms build A
    A = np.empty((m, big_n))
    for r in range(m):
        A[r] = dwt2(phi[r].reshape(n, n), levels, wavelet).reshape(-1)
    A, scales = normalize_columns(A)
    a_wav = dwt2(image, levels, wavelet).reshape(-1)
    a_true = scales * a_wav
    s = phi @ image.reshape(-1)
    if lam is None:
        lam = 0.01 * lambda_max(A, s)
    prob = SensingProblem(A=A, s=s, lam=lam, penalty=Penalty("l1"),
                          sign_mode="free")
    truth = GroundTruth(a_true=a_true, noise_sigma=0.0, seed=int(seed),
                        extra={"scales": scales, "n": n, "levels": levels,
                               "wavelet": wavelet,
                               "ratio": float(undersample_ratio)})
    return prob, truth


def cs_image_reconstruct(coeffs, truth):
    """Map solved coefficients back to an image: undo the column scaling,
    then run the wavelet synthesis."""
    extra = truth.extra
    scales = np.asarray(extra["scales"], dtype=np.float64)
    n = int(extra["n"])
    a_wav = np.asarray(coeffs, dtype=np.float64) / scales
    return idwt2(a_wav.reshape(n, n), int(extra["levels"]), extra["wavelet"])


# ------------------------------------------------------- sinusoid regression


@dataclass(frozen=True)
class RegressionTestSet:
    """Held-out points for the sinusoid task: normalized features (train
    scaling applied), noisy targets, times, noiseless targets, and the
    true amplitudes of the active low frequencies."""

    A: np.ndarray
    s: np.ndarray
    times: np.ndarray
    clean: np.ndarray
    amps: np.ndarray


def sinusoid_regression(n_features=100, n_train=40, n_test=40, n_active=10,
                        noise_sigma=0.1, seed=0, lam=None):
    """Superimposed-sinusoid recovery task.

    Feature j is sin(2 pi (j+1) t) sampled at uniform random times in
    [0, 1); the target uses only the n_active lowest frequencies, with
    positive amplitudes uniform in [0.5, 1.5], plus Gaussian noise.
    Draw order: times, amplitudes, noise.  Train columns are normalized
    and the same scales are applied to the test block.
    """
    if n_active > n_features:
        raise ValueError("n_active must not exceed n_features")
    if n_train < 1 or n_test < 1 or n_features < 1 or n_active < 1:
        raise ValueError("sizes must be >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    n_tot = n_train + n_test
    times = rng.random(n_tot)
    amps = rng.uniform(0.5, 1.5, n_active)
    noise = rng.standard_normal(n_tot)
    features = np.sin(2.0 * np.pi * np.arange(1, n_features + 1)
                      * times[:, None])
    clean = features[:, :n_active] @ amps
    targets = clean + noise_sigma * noise
    train_a, scales = normalize_columns(features[:n_train])
    test_a = features[n_train:] / scales
    if lam is None:
        lam = 0.1 * lambda_max(train_a, targets[:n_train])
    prob = SensingProblem(A=train_a, s=targets[:n_train], lam=lam,
                          penalty=Penalty("l1"), sign_mode="nonneg")
    test = RegressionTestSet(A=test_a, s=targets[n_train:],
                             times=times[n_train:], clean=clean[n_train:],
                             amps=amps)
    return prob, test


# --------------------------------------------------------- instance dir I/O


def save_instance(dirpath, problem, truth=None):
    """Serialize an instance as a directory: A.bin, s.csv, truth.csv
    (when ground truth is known), meta.json."""
    os.makedirs(dirpath, exist_ok=True)
    write_matrix_bin(problem.A, os.path.join(dirpath, "A.bin"))
    write_vector_csv(problem.s, os.path.join(dirpath, "s.csv"))
    meta = {
        "lam": float(problem.lam),
        "sign_mode": problem.sign_mode,
        "penalty": problem.penalty.to_dict(),
    }
    if truth is not None:
        write_vector_csv(truth.a_true, os.path.join(dirpath, "truth.csv"))
        extra = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                 for k, v in truth.extra.items()}
        meta["truth"] = {"noise_sigma": truth.noise_sigma,
                         "seed": truth.seed, "extra": extra}
    with open(os.path.join(dirpath, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_instance(dirpath):
    """Inverse of save_instance; returns (problem, truth-or-None).
    Array-valued extras come back as lists (JSON roundtrip)."""
    with open(os.path.join(dirpath, "meta.json")) as fh:
        meta = json.load(fh)
    A = read_matrix_bin(os.path.join(dirpath, "A.bin"))
    s = read_vector_csv(os.path.join(dirpath, "s.csv"))
    prob = SensingProblem(A=A, s=s, lam=meta["lam"],
                          penalty=Penalty.from_dict(meta["penalty"]),
                          sign_mode=meta["sign_mode"])
    truth = None
    truth_path = os.path.join(dirpath, "truth.csv")
    if os.path.exists(truth_path):
        t = meta.get("truth", {})
        truth = GroundTruth(a_true=read_vector_csv(truth_path),
                            noise_sigma=float(t.get("noise_sigma", 0.0)),
                            seed=int(t.get("seed", 0)),
                            extra=t.get("extra", {}))
    return prob, truth
