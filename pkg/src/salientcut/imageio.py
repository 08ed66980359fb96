"""Raster I/O, convolution, Gaussian pyramids and extrema reduction.

Images are plain ``float64`` numpy arrays: ``(H, W)`` for single-channel
grids and ``(H, W, 3)`` for RGB. Values are kept in double precision
everywhere and only quantized to 8 bits at the PNG boundary.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from PIL import Image

from ._parallel import run_tiles

FRAME_PATTERN = "frame_{:06d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.png$")

# Side length of the square blocks reduced at each step of parallel_extrema.
EXTREMA_BLOCK = 16

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


class UnsupportedImageError(ValueError):
    pass


@dataclass
class LabelField:
    """Binary segmentation of one frame (True = object)."""

    mask: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


# ---------------------------------------------------------------------------
# PNG boundary

def load_frame(path) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG into [0, 1] doubles.

    Gray images come back as ``(H, W)``, RGB as ``(H, W, 3)``. Palette
    images are expanded to RGB; anything else (16-bit, alpha, bilevel)
    is rejected.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as im:
        if im.format != "PNG":
            raise UnsupportedImageError(f"{path}: not a PNG ({im.format})")
        if im.mode == "P":
            im = im.convert("RGB")
        if im.mode not in ("L", "RGB"):
            raise UnsupportedImageError(
                f"{path}: unsupported mode {im.mode!r}; expected 8-bit L or RGB")
        data = np.asarray(im, dtype=np.uint8)
    return data.astype(np.float64) / 255.0


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_mask(mask: LabelField, path) -> None:
    m = mask.mask if isinstance(mask, LabelField) else np.asarray(mask, bool)
    if m.size == 0:
        raise ValueError("mask must have positive dimensions")
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8)).save(path)


def save_gray(values: np.ndarray, path) -> None:
    """Write a [0, 1] single-channel grid as an 8-bit gray PNG."""
    Image.fromarray(_to_u8(np.asarray(values).reshape(np.shape(values)[:2]))).save(path)


def save_rgb(values: np.ndarray, path) -> None:
    values = np.asarray(values)
    if values.ndim != 3 or values.shape[2] != 3:
        raise ValueError("RGB image must be (H, W, 3)")
    Image.fromarray(_to_u8(values)).save(path)


def load_mask(path) -> LabelField:
    img = load_frame(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return LabelField(img >= 0.5)


def frame_paths(directory) -> list[Path]:
    """Sorted ``frame_NNNNNN.png`` files of a directory, checked contiguous."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    found = {}
    for name in os.listdir(directory):
        m = _FRAME_RE.match(name)
        if m:
            found[int(m.group(1))] = directory / name
    if not found:
        return []
    idx = sorted(found)
    if idx != list(range(idx[0], idx[0] + len(idx))):
        raise ValueError(f"{directory}: frame indices are not contiguous")
    return [found[i] for i in idx]


# ---------------------------------------------------------------------------
# Filtering

def _check_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ValueError("kernel must be 2-D")
    n, m = kernel.shape
    if n % 2 == 0 or m % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {n}x{m}")
    if not np.all(np.isfinite(kernel)):
        raise ValueError("kernel weights must be finite")
    return kernel


def convolve(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate a single-channel image with an odd-sized kernel.

    ``out[y, x] = sum_ij K[i, j] * P[y + i - n//2, x + j - m//2]`` with
    edge-clamped borders. Row tiles run on the worker pool; each output
    pixel accumulates its taps in the same order regardless of tiling.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("convolve expects a single-channel image")
    kernel = _check_kernel(kernel)
    n, m = kernel.shape
    ry, rx = n // 2, m // 2
    h, w = image.shape
    padded = np.pad(image, ((ry, ry), (rx, rx)), mode="edge")
    out = np.empty_like(image)
    taps = [(i, j, kernel[i, j]) for i in range(n) for j in range(m)
            if kernel[i, j] != 0.0]

    def tile(r0, r1):
        acc = np.zeros((r1 - r0, w))
        for i, j, k in taps:
            acc += k * padded[r0 + i:r1 + i, j:j + w]
        out[r0:r1] = acc

    run_tiles(tile, h)
    return out


def convolve_separable(image: np.ndarray, row_kernel: np.ndarray,
                       col_kernel: np.ndarray | None = None) -> np.ndarray:
    """Apply ``row_kernel`` along x then ``col_kernel`` along y (edge clamp)."""
    row_kernel = np.asarray(row_kernel, dtype=np.float64).ravel()
    col_kernel = row_kernel if col_kernel is None else np.asarray(col_kernel, np.float64).ravel()
    if row_kernel.size % 2 == 0 or col_kernel.size % 2 == 0:
        raise ValueError("kernel sides must be odd")
    # same tap order and edge clamp as convolve(); scipy does the two 1-D passes
    image = np.asarray(image, dtype=np.float64)
    tmp = ndimage.correlate1d(image, row_kernel, axis=1, mode="nearest")
    return ndimage.correlate1d(tmp, col_kernel, axis=0, mode="nearest")


def gaussian_kernel_1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


# ---------------------------------------------------------------------------
# Pyramids and resampling

def _halve_axis(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis]
    if n < 2:
        return a
    m = n // 2
    even = np.take(a, np.arange(0, 2 * m, 2), axis=axis)
    odd = np.take(a, np.arange(1, 2 * m, 2), axis=axis)
    return 0.5 * (even + odd)


def decimate2(image: np.ndarray) -> np.ndarray:
    """2x down-sampling by pair averaging (sizes floor-halved, minimum 1)."""
    return _halve_axis(_halve_axis(image, 0), 1)


def max_pyramid_levels(shape: tuple[int, ...]) -> int:
    return int(np.floor(np.log2(min(shape[0], shape[1])))) + 1


def build_pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    """Gaussian pyramid: 5x5 binomial smoothing followed by 2x decimation.

    Decimation averages sample pairs rather than dropping odd samples so
    the pyramid commutes with flips and 90-degree rotations.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("build_pyramid expects a single-channel image")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    limit = max_pyramid_levels(image.shape)
    if levels > limit:
        raise ValueError(f"{levels} levels requested but a {image.shape[1]}x"
                         f"{image.shape[0]} image supports at most {limit}")
    pyr = [image]
    for _ in range(levels - 1):
        smooth = convolve_separable(pyr[-1], BINOMIAL_5)
        pyr.append(decimate2(smooth))
    return pyr


def _linear_weights(n_src: int, n_dst: int):
    # half-pixel-centre mapping, clamped at the borders
    pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    frac = pos - i0
    return i0, i1, frac


def resize_bilinear(image: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Separable bilinear resampling of a 2-D grid to ``shape`` (H, W)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = shape
    if image.shape == (h, w):
        return image.copy()
    y0, y1, fy = _linear_weights(image.shape[0], h)
    x0, x1, fx = _linear_weights(image.shape[1], w)
    rows = image[y0] * (1.0 - fy)[:, None] + image[y1] * fy[:, None]
    return rows[:, x0] * (1.0 - fx)[None, :] + rows[:, x1] * fx[None, :]


# ---------------------------------------------------------------------------
# Extrema

def _block_reduce(a: np.ndarray, block: int, fn) -> np.ndarray:
    h, w = a.shape
    bh, bw = -(-h // block), -(-w // block)
    padded = np.pad(a, ((0, bh * block - h), (0, bw * block - w)), mode="edge")
    out = np.empty((bh, bw))

    def tile(r0, r1):
        chunk = padded[r0 * block:r1 * block]
        out[r0:r1] = fn(chunk.reshape(r1 - r0, block, bw, block), axis=(1, 3))

    run_tiles(tile, bh, tile=8)
    return out


def parallel_extrema(image: np.ndarray, block: int = EXTREMA_BLOCK) -> tuple[float, float]:
    """Global (min, max) by repeated block-wise reduction down to one pixel."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError("parallel_extrema expects a nonempty single-channel image")
    lo = hi = image
    while lo.size > 1:
        lo = _block_reduce(lo, block, np.min)
        hi = _block_reduce(hi, block, np.max)
    return float(lo[0, 0]), float(hi[0, 0])


def rescale01(image: np.ndarray) -> np.ndarray:
    """Affine rescale to [0, 1]; constant input maps to zeros."""
    lo, hi = parallel_extrema(image)
    if hi <= lo:
        return np.zeros_like(image, dtype=np.float64)
    return (image - lo) / (hi - lo)
