"""Object priors p(A_x = 1): from the attention density alone, or fused with
the previous segmentation by a scalar Kalman-style recursion.

The attention-only prior is a 2-D mixture fitted to the EFDM (pixel
positions weighted by attention mass), scaled to a fixed peak, with a
frame-edge band forced to background. Later frames blend a smoothed copy
of the previous mask ``f`` with that prior ``q``; the blend weights and the
carried variance follow the recursion in :func:`fusion_weights`.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .appearance import fit_weighted_gmm
from .imageio import LabelField, convolve_separable, gaussian_kernel_1d

EPS_P = 1e-6
# Spatial mixtures are fitted on at most this many pooled points.
MAX_SPATIAL_POINTS = 8192
CONVENTIONS = ("paper", "standard")


@dataclass
class UpdateParams:
    sigma1: float = 0.03
    sigma2: float = 0.035
    smoothing_radius: int = 8
    edge_band: int = 8
    prior_scale_max: float = 0.95
    kalman_convention: str = "paper"
    # std of the attention footprint as a fraction of min(H, W); its square is
    # the ridge added to every spatial covariance
    focus_spread: float = 0.06

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("sigma1 and sigma2 must be > 0")
        if self.edge_band < 0 or self.smoothing_radius < 0:
            raise ValueError("edge_band and smoothing_radius must be >= 0")
        if not 0 < self.prior_scale_max < 1:
            raise ValueError("prior_scale_max must lie in (0, 1)")
        if not self.focus_spread > 0:
            raise ValueError("focus_spread must be > 0")
        if self.kalman_convention not in CONVENTIONS:
            raise ValueError(f"kalman_convention must be one of {CONVENTIONS}")


@dataclass
class PriorState:
    prior: np.ndarray
    xi_variance: float = 0.0
    frame_index: int = 0


def clamp_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, EPS_P, 1.0 - EPS_P)


def _pool_stride(h: int, w: int, limit: int = MAX_SPATIAL_POINTS) -> int:
    s = 1
    while -(-h // s) * -(-w // s) > limit:
        s += 1
    return s


def _pooled_points(density: np.ndarray):
    """Mass-weighted centroids of s-by-s blocks as (x, y) points with their mass."""
    h, w = density.shape
    s = _pool_stride(h, w)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if s == 1:
        return np.column_stack([xs.ravel(), ys.ravel()]), density.ravel()
    bh, bw = -(-h // s), -(-w // s)
    pad = ((0, bh * s - h), (0, bw * s - w))

    def blocks(a):
        return np.pad(a, pad).reshape(bh, s, bw, s).sum(axis=(1, 3)).ravel()

    mass = blocks(density)
    mx, my = blocks(density * xs), blocks(density * ys)
    keep = mass > 0
    pts = np.column_stack([mx[keep] / mass[keep], my[keep] / mass[keep]])
    return pts, mass[keep]


def edge_band_mask(shape, band: int) -> np.ndarray:
    h, w = shape
    m = np.zeros((h, w), bool)
    if band > 0:
        m[:band, :] = m[-band:, :] = True
        m[:, :band] = m[:, -band:] = True
    return m


def saliency_prior(efdm, components: int = 3, params: UpdateParams | None = None,
                   seed: int = 0) -> np.ndarray:
    """Attention-only prior q(A_x = 1) from an EFDM (or a plain density grid)."""
    p = params or UpdateParams()
    if components < 1:
        raise ValueError("components must be >= 1")
    density = np.asarray(getattr(efdm, "density", efdm), np.float64)
    if density.ndim != 2:
        raise ValueError("EFDM must be a single-channel grid")
    if np.any(density < 0) or not np.all(np.isfinite(density)):
        raise ValueError("EFDM must be finite and >= 0")
    pts, mass = _pooled_points(density)
    n_pos = int(np.count_nonzero(mass))
    if n_pos == 0:
        raise ValueError("EFDM carries no mass")
    h, w = density.shape
    reg = (p.focus_spread * min(h, w)) ** 2
    gmm = fit_weighted_gmm(pts, mass, min(components, n_pos), seed, reg=reg,
                           scale_ridge=False)

    ys, xs = np.mgrid[0:h, 0:w]
    grid = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    logd = gmm.log_density(grid).reshape(h, w)
    q = p.prior_scale_max * np.exp(logd - logd.max())
    q[edge_band_mask((h, w), p.edge_band)] = EPS_P
    return clamp_prob(q)


def mask_to_gray(mask, radius: int) -> np.ndarray:
    """Smoothed mask f: Gaussian with std radius/2 truncated at +-radius, edge clamp."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    a = mask.mask if isinstance(mask, LabelField) else np.asarray(mask)
    a = a.astype(np.float64)
    if radius == 0:
        return a
    k = gaussian_kernel_1d(radius / 2.0, int(radius))
    return np.clip(convolve_separable(a, k, k), 0.0, 1.0)


def fusion_weights(xi_variance: float, sigma1: float, sigma2: float,
                   convention: str = "paper") -> tuple[float, float, float]:
    """(weight on f, weight on q, next variance) for one update step.

    ``paper``: w_f = s1^2 / S, w_q = (s2^2 + v) / S, v' = s1^2 (s2^2 + v) / S
    with S = s1^2 + s2^2 + v. ``standard`` swaps the roles of s1 and s2,
    which is the textbook corrector with f as the prediction.
    """
    if xi_variance < 0 or not np.isfinite(xi_variance):
        raise ValueError("xi_variance must be finite and >= 0")
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    a, b = sigma1 * sigma1, sigma2 * sigma2
    if convention == "standard":
        a, b = b, a
    s = a + b + xi_variance
    w_f = a / s
    # 1 - w_f keeps the pair summing to exactly 1 in floating point
    return w_f, 1.0 - w_f, a * (b + xi_variance) / s


def xi_fixed_point(sigma1: float, sigma2: float) -> float:
    """Positive root of v^2 + s2^2 v - s1^2 s2^2 = 0, the recursion's limit."""
    a, b = sigma1 * sigma1, sigma2 * sigma2
    return 0.5 * (-b + np.sqrt(b * b + 4.0 * a * b))


def update_prior(prev_state: PriorState, prev_mask, q: np.ndarray,
                 params: UpdateParams | None = None) -> PriorState:
    p = params or UpdateParams()
    q = np.asarray(q, np.float64)
    f = mask_to_gray(prev_mask, p.smoothing_radius)
    if f.shape != q.shape or prev_state.prior.shape != q.shape:
        raise ValueError(f"size mismatch: mask {f.shape}, q {q.shape}, "
                         f"state {prev_state.prior.shape}")
    w_f, w_q, v = fusion_weights(prev_state.xi_variance, p.sigma1, p.sigma2,
                                 p.kalman_convention)
    prior = clamp_prob(w_f * f + w_q * q)
    return PriorState(prior, v, prev_state.frame_index + 1)


def manual_prior(seeds, shape) -> np.ndarray:
    """0.5 everywhere, 1 - eps at object seeds, eps at background seeds.

    ``seeds`` holds (x, y, label) triples with x the column and y the row.
    """
    h, w = shape
    out = np.full((h, w), 0.5)
    for x, y, label in seeds:
        x, y = int(x), int(y)
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"seed ({x}, {y}) outside {w}x{h} frame")
        if label not in (0, 1):
            raise ValueError(f"seed label must be 0 or 1, got {label}")
        out[y, x] = 1.0 - EPS_P if label == 1 else EPS_P
    return out


def load_seeds(path) -> list[tuple[int, int, int]]:
    """Read ``x y label`` lines; blank lines and ``#`` comments are skipped."""
    seeds = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) != 3:
                raise ValueError
            x, y, label = (int(v) for v in parts)
        except ValueError:
            raise ValueError(f"{path}:{n}: expected 'x y label', got {line!r}") from None
        if label not in (0, 1):
            raise ValueError(f"{path}:{n}: label must be 0 or 1")
        seeds.append((x, y, label))
    return seeds
