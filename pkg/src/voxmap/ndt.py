"""Per-voxel Gaussian bookkeeping for the NDT integrators.

Each NDT voxel carries a sample count, a mean and a lower-triangular
square-root factor S of the population covariance (cov = S @ S.T).  The
factor is maintained with numerically stable Givens-based rank-one
updates, so the covariance stays positive semi-definite by construction.
"""
from __future__ import annotations

import math

import numpy as np

from .keys import VoxelKey, voxel_min_corner
from .store import VoxelMap
from .subvoxel import unpack_mean

# Below this many samples the voxel Gaussian is unreliable and miss
# updates fall back to the plain occupancy delta.
MIN_SAMPLES_FOR_GAUSSIAN = 3


def sqrt_to_matrix(flat6) -> np.ndarray:
    """(s11, s21, s22, s31, s32, s33) -> 3x3 lower-triangular matrix."""
    s = np.asarray(flat6, dtype=np.float64)
    L = np.zeros((3, 3))
    L[0, 0] = s[0]
    L[1, 0], L[1, 1] = s[1], s[2]
    L[2, 0], L[2, 1], L[2, 2] = s[3], s[4], s[5]
    return L


def matrix_to_sqrt(L) -> np.ndarray:
    return np.array([L[0, 0], L[1, 0], L[1, 1], L[2, 0], L[2, 1], L[2, 2]])


def cholupdate3(L: np.ndarray, x) -> np.ndarray:
    """Return the Cholesky-like factor of L @ L.T + x @ x.T (Givens form)."""
    L = np.array(L, dtype=np.float64)
    x = np.array(x, dtype=np.float64)
    for k in range(3):
        r = math.hypot(L[k, k], x[k])
        if r == 0.0:
            continue
        c = L[k, k] / r
        s = x[k] / r
        L[k, k] = r
        for i in range(k + 1, 3):
            lik = L[i, k]
            L[i, k] = c * lik + s * x[i]
            x[i] = c * x[i] - s * lik
    return L


def update_gaussian(n: int, mu: np.ndarray, S: np.ndarray, sample):
    """Fold one sample into (count, mean, sqrt-covariance).

    Covariance uses the population divisor n; with fewer than two samples
    the factor is zero.
    """
    x = np.asarray(sample, dtype=np.float64)
    if n == 0:
        return 1, x.copy(), np.zeros((3, 3))
    n_new = n + 1
    d = x - mu
    mu_new = mu + d / n_new
    # Factor of the deviation sum M2 = n * cov; Welford's rank-one term.
    L_m2 = S * math.sqrt(n)
    L_m2 = cholupdate3(L_m2, d * math.sqrt(n / n_new))
    return n_new, mu_new, L_m2 / math.sqrt(n_new)


def gaussian_miss_weight(mu, cov, origin, end, t0: float, t1: float,
                         sensor_noise: float):
    """Likelihood scale for a miss through a voxel with a fitted Gaussian.

    Finds the point x* on the ray chord [t0, t1] (normalized parameters)
    closest to the Gaussian in the Mahalanobis sense, with the covariance
    regularized by sensor_noise**2 * I, and returns
    (exp(-0.5 * mahalanobis^2(x*)), t*).
    """
    origin = np.asarray(origin, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    v = end - origin
    A = np.asarray(cov, dtype=np.float64) + (sensor_noise ** 2) * np.eye(3)
    Ainv = np.linalg.inv(A)
    denom = v @ Ainv @ v
    if denom <= 0.0:
        t_star = t0
    else:
        t_star = (v @ Ainv @ (mu - origin)) / denom
        t_star = min(max(t_star, t0), t1)
    d = origin + t_star * v - mu
    m2 = d @ Ainv @ d
    return math.exp(-0.5 * m2), t_star


def update_intensity(n: int, mean: float, m2: float, value: float):
    """Single-pass 1D moment accumulation (count, mean, sum of squared devs)."""
    if value < 0:
        raise ValueError("intensity must be non-negative")
    n_new = n + 1
    d = value - mean
    mean_new = mean + d / n_new
    m2_new = m2 + d * (value - mean_new)
    return n_new, mean_new, m2_new


def intensity_stats(n: int, mean: float, m2: float):
    """(mean, population variance) or None when no samples."""
    if n == 0:
        return None
    return mean, m2 / n


def permeability(hits: int, misses: int) -> float | None:
    """Fraction of interrogating rays returned from the voxel; None if none."""
    total = hits + misses
    if total == 0:
        return None
    return hits / total


# -- map-level queries ---------------------------------------------------

def voxel_gaussian(vmap: VoxelMap, key: VoxelKey):
    """(count, world-space mean, covariance) for one voxel, or None."""
    n = vmap.voxel_values("mean_count", key)
    if n is None or n == 0:
        return None
    cfg = vmap.cfg
    offset = unpack_mean(int(vmap.voxel_values("mean", key)))
    mu = voxel_min_corner(key, cfg) + offset * cfg.voxel_size
    S = sqrt_to_matrix(vmap.voxel_values("cov_sqrt", key))
    return int(n), mu, S @ S.T


def voxel_permeability(vmap: VoxelMap, key: VoxelKey) -> float | None:
    h = vmap.voxel_values("hit_count", key)
    m = vmap.voxel_values("miss_count", key)
    if h is None or m is None:
        return None
    return permeability(int(h), int(m))


def voxel_intensity_stats(vmap: VoxelMap, key: VoxelKey):
    n = vmap.voxel_values("mean_count", key)
    vals = vmap.voxel_values("intensity", key)
    if n is None or vals is None:
        return None
    return intensity_stats(int(n), float(vals[0]), float(vals[1]))


def reset_voxel(vmap: VoxelMap, key: VoxelKey) -> None:
    """Clear sample-derived state, keeping occupancy (transient-object reset)."""
    for name, zero in (
        ("mean", 0),
        ("mean_count", 0),
        ("cov_sqrt", np.zeros(6, dtype=np.float32)),
        ("hit_count", 0),
        ("miss_count", 0),
        ("intensity", np.zeros(2, dtype=np.float32)),
    ):
        if name in vmap.layer_names:
            vmap.set_voxel_values(name, key, zero)
