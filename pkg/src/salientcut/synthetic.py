"""Synthetic clips with ground truth: a bright disk moving over a textured
background next to a static textured sign, with optional occlusion.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import (FRAME_PATTERN, LabelField, convolve_separable,
                      gaussian_kernel_1d, save_mask, save_rgb)


@dataclass
class ClipSpec:
    width: int = 352
    height: int = 288
    frames: int = 60
    radius: float = 26.0
    speed: float = 6.0  # pixels per frame along x
    noise: float = 0.02
    sign_contrast: float = 0.15
    rim_blend: float = 0.0  # background fraction mixed into the disk at its rim
    disk_contrast: float = 0.35  # 1 = saturated disk colour, 0 = background level
    occlusion_start: int | None = None
    occlusion_length: int = 5
    seed: int = 0


@dataclass
class Clip:
    frames: list[np.ndarray]
    truth: list[LabelField]
    seeds: list[tuple[int, int, int]]
    centers: list[tuple[float, float]]


DISK_COLOR = np.array([0.95, 0.75, 0.15])
BACKGROUND_LEVELS = np.array([0.26, 0.32, 0.30])


def _background(spec: ClipSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    k = gaussian_kernel_1d(6.0, 18)
    base = np.empty((h, w, 3))
    for c, level in enumerate(BACKGROUND_LEVELS):
        smooth = convolve_separable(rng.standard_normal((h, w)), k, k)
        smooth /= smooth.std() + 1e-12
        base[..., c] = level + 0.05 * smooth
    return base + 0.03 * rng.standard_normal((h, w, 1))


def _sign(spec: ClipSpec):
    """Static striped rectangle in the upper right: (slice_y, slice_x, rgb patch)."""
    h, w = spec.height, spec.width
    sh, sw = h // 6, w // 7
    y0, x0 = h // 10, w - w // 10 - sw
    xs = np.arange(sw)
    stripes = ((xs // 4) % 2).astype(np.float64)
    # stripes straddle the background's own colour, so only their contrast stands out
    patch = np.empty((sh, sw, 3))
    patch[...] = BACKGROUND_LEVELS[None, None, :] + spec.sign_contrast * (stripes - 0.5)[None, :, None]
    return slice(y0, y0 + sh), slice(x0, x0 + sw), patch


def disk_center(spec: ClipSpec, t: int) -> tuple[float, float]:
    """Back-and-forth horizontal sweep with a gentle vertical wave."""
    margin = spec.radius + 20
    span = spec.width - 2 * margin
    pos = (spec.width * 0.3 - margin + spec.speed * t) % (2 * span)
    x = margin + (pos if pos <= span else 2 * span - pos)
    y = spec.height * 0.6 + 0.12 * spec.height * np.sin(2 * np.pi * t / 40.0)
    return float(x), float(y)


def make_clip(spec: ClipSpec | None = None) -> Clip:
    spec = spec or ClipSpec()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    bg = _background(spec, rng)
    sy, sx, patch = _sign(spec)
    bg[sy, sx] = patch
    ys, xs = np.mgrid[0:h, 0:w]
    color = BACKGROUND_LEVELS + spec.disk_contrast * (DISK_COLOR - BACKGROUND_LEVELS)
    frames, truth, centers = [], [], []
    occ = range(0) if spec.occlusion_start is None else range(
        spec.occlusion_start, spec.occlusion_start + spec.occlusion_length)
    for t in range(spec.frames):
        cx, cy = disk_center(spec, t)
        disk = (xs - cx) ** 2 + (ys - cy) ** 2 <= spec.radius ** 2
        if t in occ:
            disk[:] = False
        img = bg.copy()
        # shading: pure colour at the centre, blending toward the background at the rim
        mix = spec.rim_blend * (((xs - cx) ** 2 + (ys - cy) ** 2) / spec.radius ** 2) ** 2
        img[disk] = (1.0 - mix[disk, None]) * color + mix[disk, None] * bg[disk]
        img += spec.noise * rng.standard_normal((h, w, 3))
        # quantize like an 8-bit PNG so files and in-memory clips agree
        frames.append(np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0)
        truth.append(LabelField(disk, t))
        centers.append((cx, cy))
    return Clip(frames, truth, _seeds(spec), centers)


def _seeds(spec: ClipSpec) -> list[tuple[int, int, int]]:
    cx, cy = disk_center(spec, 0)
    r = spec.radius
    seeds = []
    step = max(2, int(r // 4))
    for dy in range(-int(0.6 * r), int(0.6 * r) + 1, step):
        for dx in range(-int(0.6 * r), int(0.6 * r) + 1, step):
            if dx * dx + dy * dy <= (0.6 * r) ** 2:
                seeds.append((int(round(cx + dx)), int(round(cy + dy)), 1))
    for y in range(4, spec.height, 24):
        for x in range(4, spec.width, 24):
            if (x - cx) ** 2 + (y - cy) ** 2 > (r + 12) ** 2:
                seeds.append((x, y, 0))
    return seeds


def write_clip(clip: Clip, out_dir) -> Path:
    """Write ``frames/``, ``truth/`` and ``seeds.txt`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    for t, (f, m) in enumerate(zip(clip.frames, clip.truth)):
        save_rgb(f, out / "frames" / FRAME_PATTERN.format(t))
        save_mask(m, out / "truth" / FRAME_PATTERN.format(t))
    lines = [f"{x} {y} {lab}" for x, y, lab in clip.seeds]
    (out / "seeds.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out
