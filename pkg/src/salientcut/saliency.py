"""Bottom-up frame saliency from intensity, colour opponency, orientation and motion.

Each feature channel is expanded into a Gaussian pyramid, centre-surround
differences are taken between a fine centre level and a coarser surround
level, and every difference map is passed through the peak-promoting
normalization before being summed into one conspicuity map per feature
class. The class maps are normalized again and averaged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imageio import (build_pyramid, convolve_separable, max_pyramid_levels,
                      rescale01, resize_bilinear)

CLASSES = ("intensity", "color", "orientation", "motion")
ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)
MIN_INTENSITY = 0.1


@dataclass
class SaliencyParams:
    centers: tuple[int, ...] = (2, 3, 4)
    deltas: tuple[int, ...] = (3, 4)
    local_max_radius: int = 7
    class_weights: dict = field(default_factory=lambda: {c: 1.0 for c in CLASSES})
    gabor_size: int = 9
    gabor_sigma: float = 2.0
    gabor_wavelength: float = 5.0


@dataclass
class SaliencyMap:
    values: np.ndarray
    frame_index: int = 0
    raw: np.ndarray | None = None  # class-weighted average before the final rescale


def _gabor_terms(theta_deg: float, size: int, sigma: float, wavelength: float):
    """Odd Gabor kernel as a sum of separable (row, col) factor pairs."""
    r = size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    th = np.deg2rad(theta_deg)
    kx = 2.0 * np.pi / wavelength * np.cos(th)  # along columns
    ky = 2.0 * np.pi / wavelength * np.sin(th)  # along rows
    # sin(kx x + ky y) = sin(kx x) cos(ky y) + cos(kx x) sin(ky y)
    terms = [(g * np.sin(kx * t), g * np.cos(ky * t)),
             (g * np.cos(kx * t), g * np.sin(ky * t))]
    return [(fx, fy) for fx, fy in terms if np.any(np.abs(fx) > 1e-12) and np.any(np.abs(fy) > 1e-12)]


def gabor_kernel(theta_deg: float, size: int = 9, sigma: float = 2.0,
                 wavelength: float = 5.0) -> np.ndarray:
    """Dense form of the odd Gabor filter (rows = y, cols = x)."""
    return sum(np.outer(fy, fx) for fx, fy in _gabor_terms(theta_deg, size, sigma, wavelength))


def oriented_response(intensity: np.ndarray, theta_deg: float,
                      params: SaliencyParams | None = None) -> np.ndarray:
    p = params or SaliencyParams()
    out = np.zeros_like(intensity)
    for fx, fy in _gabor_terms(theta_deg, p.gabor_size, p.gabor_sigma, p.gabor_wavelength):
        out += convolve_separable(intensity, fx, fy)
    return np.abs(out)


def extract_channels(frame: np.ndarray, prev_frame: np.ndarray | None = None,
                     params: SaliencyParams | None = None) -> dict[str, list[np.ndarray]]:
    """Feature channels grouped by class.

    Colour opponents are computed on intensity-normalized rgb and set to
    zero where intensity is below 0.1. Motion is the absolute intensity
    change from ``prev_frame`` (zeros without one).
    """
    frame = np.asarray(frame, np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("frame must be RGB (H, W, 3)")
    r, g, b = frame[..., 0], frame[..., 1], frame[..., 2]
    intensity = (r + g + b) / 3.0
    bright = intensity >= MIN_INTENSITY
    safe = np.where(bright, intensity, 1.0)
    rg = np.where(bright, (r - g) / safe, 0.0)
    by = np.where(bright, (b - 0.5 * (r + g)) / safe, 0.0)
    orient = [oriented_response(intensity, th, params) for th in ORIENTATIONS]
    if prev_frame is None:
        motion = np.zeros_like(intensity)
    else:
        prev = np.asarray(prev_frame, np.float64)
        if prev.shape != frame.shape:
            raise ValueError(f"frame size {frame.shape} differs from previous {prev.shape}")
        motion = np.abs(intensity - prev.mean(axis=2))
    return {"intensity": [intensity], "color": [rg, by],
            "orientation": orient, "motion": [motion]}


def center_surround(pyramid: list[np.ndarray], centers, deltas) -> list[tuple[int, int, np.ndarray]]:
    """``|up(level c+d) - level c|`` for every centre c and delta d, at level c size."""
    need = max(centers) + max(deltas)
    if need >= len(pyramid):
        raise ValueError(f"pyramid has {len(pyramid)} levels, need {need + 1}")
    out = []
    for c in centers:
        for d in deltas:
            surround = resize_bilinear(pyramid[c + d], pyramid[c].shape)
            out.append((c, d, np.abs(surround - pyramid[c])))
    return out


def normalize_map(m: np.ndarray, radius: int = 7) -> np.ndarray:
    """Rescale to [0, 1] and weight by (1 - mean of the other local maxima)^2.

    Local maxima are pixels equal to the maximum of their (2r+1)^2
    window whose window is not flat; a connected plateau counts once. The
    maximum holding the global peak is left out of the mean.
    """
    m = rescale01(np.asarray(m, np.float64))
    if not m.any():
        return m
    size = 2 * radius + 1
    mx = ndimage.maximum_filter(m, size=size, mode="nearest")
    mn = ndimage.minimum_filter(m, size=size, mode="nearest")
    peaks = (m == mx) & (mx > mn)
    labels, count = ndimage.label(peaks, structure=np.ones((3, 3), bool))
    if count <= 1:
        return m
    # one value per plateau: the first pixel of each label in raster order
    flat = labels.ravel()
    _, first = np.unique(flat, return_index=True)
    first = first[flat[first] > 0]
    values = m.ravel()[first]
    top_label = flat[int(np.argmax(m))]
    others = values[flat[first] != top_label]
    mbar = others.mean() if others.size else 0.0
    return m * (1.0 - mbar) ** 2


def _scale_pairs(shape, params: SaliencyParams):
    depth = max_pyramid_levels(shape)
    pairs = [(c, d) for c in params.centers for d in params.deltas if c + d < depth]
    if not pairs and depth >= 2:
        pairs = [(0, depth - 1)]
    return pairs


def compute_saliency(frame: np.ndarray, prev_frame: np.ndarray | None = None,
                     params: SaliencyParams | None = None,
                     frame_index: int = 0) -> SaliencyMap:
    p = params or SaliencyParams()
    frame = np.asarray(frame, np.float64)
    h, w = frame.shape[:2]
    channels = extract_channels(frame, prev_frame, p)
    pairs = _scale_pairs((h, w), p)
    if not pairs:
        return SaliencyMap(np.zeros((h, w)), frame_index)
    levels = max(c + d for c, d in pairs) + 1
    out_level = min(c for c, _ in pairs)

    total = None
    weight_sum = 0.0
    for cls in CLASSES:
        wt = float(p.class_weights.get(cls, 0.0))
        if wt <= 0:
            continue
        acc = None
        for ch in channels[cls]:
            pyr = build_pyramid(ch, levels)
            target = pyr[out_level].shape
            for c, d in pairs:
                (_, _, fm), = center_surround(pyr, [c], [d])
                fm = resize_bilinear(normalize_map(fm, p.local_max_radius), target)
                acc = fm if acc is None else acc + fm
        cmap = wt * normalize_map(acc, p.local_max_radius)
        total = cmap if total is None else total + cmap
        weight_sum += wt
    if total is None:
        return SaliencyMap(np.zeros((h, w)), frame_index)
    raw = resize_bilinear(total / weight_sum, (h, w))
    sal = rescale01(raw)
    return SaliencyMap(np.clip(sal, 0.0, 1.0), frame_index, raw)
