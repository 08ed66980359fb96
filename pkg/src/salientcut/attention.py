"""Stochastic saliency and the eye-focusing density map (EFDM).

Each pixel's saliency is tracked over time by an independent scalar
random-walk Kalman filter. The EFDM gives, per pixel, the probability
that the pixel holds the frame-wide maximum when every pixel's saliency
is drawn from its Gaussian. It is estimated by Monte-Carlo on a coarse
block grid with a counter-based generator, so every draw depends only on
(seed, draw, block) and never on how the work is partitioned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._parallel import run_tiles
from .imageio import resize_bilinear

# 1e-4 makes the mean trail a moving object by ~10 frames (gain 0.095);
# 1e-3 gives a steady-state gain of 0.27
DEFAULT_Q_VAR = 1e-3
DEFAULT_R_VAR = 1e-2
DEFAULT_SAMPLES = 256
DECIMATION = 4
DRAW_CHUNK = 64
# Box-Muller with u1 >= 2**-53 never yields |z| above this, so a cell whose
# mean + Z_BOUND * sd is below another's mean - Z_BOUND * sd can never win
Z_BOUND = float(np.sqrt(-2.0 * np.log(2.0 ** -53))) * (1.0 + 1e-12)


class DegenerateSaliencyError(ValueError):
    """All pixels have equal mean and zero variance: the argmax is undefined."""


@dataclass
class StochasticSaliencyMap:
    mean: np.ndarray
    variance: np.ndarray
    frame_index: int = 0


@dataclass
class Efdm:
    density: np.ndarray  # nonnegative, sums to 1
    block_density: np.ndarray | None = None  # win frequencies on the coarse grid


def kalman_update_saliency(prev: StochasticSaliencyMap | None, obs,
                           q_var: float = DEFAULT_Q_VAR,
                           r_var: float = DEFAULT_R_VAR) -> StochasticSaliencyMap:
    """One predict/correct step of the per-pixel random-walk filter.

    ``obs`` is a :class:`~salientcut.saliency.SaliencyMap` or a plain grid.
    Without ``prev`` the state starts at the observation with variance
    ``r_var``.
    """
    if not (q_var > 0 and r_var > 0):
        raise ValueError("q_var and r_var must be positive")
    values = np.asarray(getattr(obs, "values", obs), np.float64)
    index = getattr(obs, "frame_index", 0)
    if prev is None:
        return StochasticSaliencyMap(values.copy(), np.full(values.shape, float(r_var)), index)
    if prev.mean.shape != values.shape:
        raise ValueError(f"size mismatch: state {prev.mean.shape} vs observation {values.shape}")
    p_pred = prev.variance + q_var
    gain = p_pred / (p_pred + r_var)
    mean = prev.mean + gain * (values - prev.mean)
    var = (1.0 - gain) * p_pred
    return StochasticSaliencyMap(mean, var, index)


def riccati_fixed_point(q_var: float, r_var: float) -> float:
    """Steady-state posterior variance of the random-walk filter."""
    # v = r (v + q) / (v + q + r)  <=>  v^2 + q v - q r = 0
    return 0.5 * (-q_var + np.sqrt(q_var * q_var + 4.0 * q_var * r_var))


# ---------------------------------------------------------------------------
# counter-based normal generator

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def counter_normals(seed: int, counters: np.ndarray) -> np.ndarray:
    """Standard normals, one per uint64 counter, keyed by ``seed`` (Box-Muller)."""
    key = _seed_key(seed)
    c2 = counters.astype(np.uint64) * np.uint64(2)
    with np.errstate(over="ignore"):
        a = _mix64(key ^ _mix64(c2 + _GOLDEN))
        b = _mix64(key ^ _mix64(c2 + np.uint64(1) + _GOLDEN))
    scale = 2.0 ** -53
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * scale  # (0, 1]
    u2 = (b >> np.uint64(11)).astype(np.float64) * scale  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _block_reduce(a: np.ndarray, f: int, how: str) -> np.ndarray:
    h, w = a.shape
    bh, bw = -(-h // f), -(-w // f)
    pad = np.pad(a, ((0, bh * f - h), (0, bw * f - w)), mode="constant",
                 constant_values=np.nan)
    blocks = pad.reshape(bh, f, bw, f)
    return np.nanmean(blocks, axis=(1, 3)) if how == "mean" else np.nanmax(blocks, axis=(1, 3))


@njit(cache=True)
def _mix64_scalar(x):
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True, nogil=True)
def _count_wins(key, mu, sd, cells, n_total, d0, d1):
    """Argmax wins per cell over draws d0..d1-1. ``cells`` must be sorted by
    descending mean.

    A cell whose largest possible draw cannot beat the current best is
    skipped without generating its normal, which leaves every outcome
    unchanged; ties go to the lower pixel index as in the plain loop.
    """
    golden = np.uint64(0x9E3779B97F4A7C15)
    scale = 2.0 ** -53
    upper = mu + sd * Z_BOUND
    wins = np.zeros(cells.size, np.int64)
    for d in range(d0, d1):
        best = -1
        best_val = -np.inf
        base = np.uint64(d) * np.uint64(n_total)
        for c in range(cells.size):
            if upper[c] < best_val:
                continue
            ctr = (base + np.uint64(cells[c])) * np.uint64(2)
            a = _mix64_scalar(key ^ _mix64_scalar(ctr + golden))
            b = _mix64_scalar(key ^ _mix64_scalar(ctr + np.uint64(1) + golden))
            u1 = (np.float64(a >> np.uint64(11)) + 1.0) * scale
            u2 = np.float64(b >> np.uint64(11)) * scale
            z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
            v = mu[c] + sd[c] * z
            if v > best_val or (v == best_val and cells[c] < cells[best]):
                best_val = v
                best = c
        wins[best] += 1
    return wins


def _seed_key(seed: int) -> np.uint64:
    return _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], np.uint64) + _GOLDEN)[0]


def argmax_frequencies(mean: np.ndarray, variance: np.ndarray, samples: int,
                       seed: int) -> np.ndarray:
    """Fraction of joint Gaussian draws in which each cell is the maximum.

    Draw ``d`` of cell ``i`` uses the normal for counter ``d * n + i``;
    ties go to the lowest cell index.
    """
    mu = np.asarray(mean, np.float64).ravel()
    sd = np.sqrt(np.asarray(variance, np.float64).ravel())
    n = mu.size
    # only differences matter; anchoring at the top mean keeps a constant shift exact
    mu = mu - mu.max()
    floor = np.max(mu - Z_BOUND * sd)
    cells = np.flatnonzero(mu + Z_BOUND * sd >= floor)
    # stable sort keeps equal means in index order
    cells = cells[np.argsort(-mu[cells], kind="stable")]
    key, mu_c, sd_c, idx = _seed_key(seed), mu[cells], sd[cells], cells.astype(np.int64)
    # integer win counts summed over fixed draw chunks: exact for any worker count
    parts = run_tiles(lambda d0, d1: _count_wins(key, mu_c, sd_c, idx, n, d0, d1),
                      samples, tile=DRAW_CHUNK)
    wins = np.sum(parts, axis=0)
    freq = np.zeros(n)
    freq[cells] = wins / samples
    return freq.reshape(np.shape(mean))


def argmax_frequencies_reference(mean, variance, samples, seed):
    """Unpruned vectorised version of :func:`argmax_frequencies` (for checks)."""
    mu = np.asarray(mean, np.float64).ravel()
    sd = np.sqrt(np.asarray(variance, np.float64).ravel())
    n = mu.size
    mu = mu - mu.max()
    draws = np.arange(samples, dtype=np.uint64)[:, None]
    with np.errstate(over="ignore"):
        counters = draws * np.uint64(n) + np.arange(n, dtype=np.uint64)[None, :]
        z = counter_normals(seed, counters)
    best = np.argmax(mu[None, :] + sd[None, :] * z, axis=1)
    return (np.bincount(best, minlength=n) / samples).reshape(np.shape(mean))


def compute_efdm(ssm: StochasticSaliencyMap, samples: int = DEFAULT_SAMPLES,
                 seed: int = 0, decimation: int = DECIMATION) -> Efdm:
    """Monte-Carlo EFDM on a ``decimation``-times coarser grid, resampled to full size.

    Blocks take the mean of their pixel means and the max of their pixel
    variances. Raises :class:`DegenerateSaliencyError` when every block
    has the same mean and zero variance.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    mean = np.asarray(ssm.mean, np.float64)
    var = np.asarray(ssm.variance, np.float64)
    if mean.shape != var.shape:
        raise ValueError("mean and variance sizes differ")
    if decimation > 1:
        mean = _block_reduce(mean, decimation, "mean")
        var = _block_reduce(var, decimation, "max")
    if np.all(var <= 0) and np.all(mean == mean.flat[0]):
        raise DegenerateSaliencyError("constant saliency with zero variance")
    freq = argmax_frequencies(mean, np.maximum(var, 0.0), samples, seed)
    dens = resize_bilinear(freq, ssm.mean.shape) if decimation > 1 else freq.copy()
    dens = np.maximum(dens, 0.0)
    return Efdm(dens / dens.sum(), freq)


def uniform_efdm(shape) -> Efdm:
    return Efdm(np.full(shape, 1.0 / (shape[0] * shape[1])))
