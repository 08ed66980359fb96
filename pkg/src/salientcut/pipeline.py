"""Frame-sequential segmentation driver for the three prior strategies.

``update``      attention prior fused with the previous mask (the full method)
``non_update``  attention prior only, every frame independent
``manual``      seed labels on frame 0, then the smoothed previous mask only
"""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .appearance import build_models, fit_weighted_gmm, nll_maps
from .attention import (DegenerateSaliencyError, compute_efdm,
                        kalman_update_saliency, uniform_efdm)
from .config import SegConfig
from .imageio import LabelField
from .mrf import build_energy, minimize
from .prior import (PriorState, clamp_prob, manual_prior, mask_to_gray,
                    saliency_prior, update_prior)
from .saliency import compute_saliency

STRATEGIES = ("manual", "non_update", "update")
STAGES = ("VA", "priors", "t-link", "graphcuts", "misc")


def normalize_strategy(name: str) -> str:
    s = name.replace("-", "_")
    if s not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {name!r}")
    return s


def frame_seed(seed: int, t: int) -> int:
    """Independent per-frame seed derived from the run seed and frame index."""
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, t]).generate_state(1)[0])


@dataclass
class FrameResult:
    mask: LabelField
    prior: np.ndarray
    saliency: np.ndarray | None = None
    efdm: np.ndarray | None = None
    timings: dict = field(default_factory=dict)


class Segmenter:
    """Feed frames in order with :meth:`step`; keeps the temporal state."""

    def __init__(self, cfg: SegConfig | None = None, strategy: str = "update",
                 seeds=None, keep_maps: bool = False):
        self.cfg = cfg or SegConfig()
        self.strategy = normalize_strategy(strategy)
        if self.strategy == "manual" and not seeds:
            raise ValueError("the manual strategy needs seed labels")
        self.seeds = list(seeds or [])
        self.keep_maps = keep_maps
        self.t = 0
        self._prev_frame = None
        self._ssm = None
        self._state: PriorState | None = None
        self._prev_mask: LabelField | None = None
        self.last_energy = None  # EnergyModel of the most recent frame

    @contextmanager
    def _timed(self, timings, stage):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            timings[stage] = timings.get(stage, 0.0) + (time.perf_counter() - t0) * 1e3

    def _attention(self, frame, seed):
        cfg = self.cfg
        sal = compute_saliency(frame, self._prev_frame, frame_index=self.t)
        self._ssm = kalman_update_saliency(self._ssm, sal, cfg.q_var, cfg.r_var)
        try:
            efdm = compute_efdm(self._ssm, cfg.efdm_samples, seed)
        except DegenerateSaliencyError:
            efdm = uniform_efdm(sal.values.shape)
        return sal, efdm

    def _prior(self, efdm, shape, seed):
        cfg = self.cfg
        if self.strategy == "manual":
            if self._prev_mask is None:
                return manual_prior(self.seeds, shape)
            return clamp_prob(mask_to_gray(self._prev_mask, cfg.smoothing_radius))
        q = saliency_prior(efdm, cfg.components, cfg.update_params(), seed)
        if self.strategy == "non_update" or self._state is None:
            self._state = PriorState(q, 0.0, self.t)
        else:
            self._state = update_prior(self._state, self._prev_mask, q, cfg.update_params())
        return self._state.prior

    def _models(self, frame, prior, seed):
        cfg = self.cfg
        if self.strategy == "manual" and self._prev_mask is None:
            # colour samples come from the labelled pixels themselves
            x = frame.reshape(-1, frame.shape[2])
            flat = prior.ravel()
            obj_w = (flat > 0.5).astype(np.float64)
            bkg_w = (flat < 0.5).astype(np.float64)
            if obj_w.any() and bkg_w.any():
                obj = fit_weighted_gmm(x, obj_w, min(cfg.M, int(obj_w.sum())), seed,
                                       max_samples=cfg.em_samples)
                bkg = fit_weighted_gmm(x, bkg_w, min(cfg.M, int(bkg_w.sum())), seed,
                                       max_samples=cfg.em_samples)
                return obj, bkg
        return build_models(frame, prior, cfg.M, seed, cfg.em_samples)

    def step(self, frame: np.ndarray) -> FrameResult:
        frame = np.asarray(frame, np.float64)
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise ValueError("frames must be RGB (H, W, 3)")
        if self._prev_frame is not None and self._prev_frame.shape != frame.shape:
            raise ValueError("frame size changed mid-sequence")
        timings: dict[str, float] = {s: 0.0 for s in STAGES}
        t_start = time.perf_counter()
        seed = frame_seed(self.cfg.seed, self.t)
        sal = efdm = None
        if self.strategy != "manual":
            with self._timed(timings, "VA"):
                sal, efdm = self._attention(frame, seed)
        with self._timed(timings, "priors"):
            prior = self._prior(efdm, frame.shape[:2], seed)
        with self._timed(timings, "t-link"):
            obj, bkg = self._models(frame, prior, seed)
            lik = nll_maps(frame, obj, bkg)
        with self._timed(timings, "graphcuts"):
            em = build_energy(frame, prior, lik, self.cfg)
            mask = minimize(em, self.t)
        self.last_energy = em
        total = (time.perf_counter() - t_start) * 1e3
        timings["misc"] = max(0.0, total - sum(timings[s] for s in STAGES[:-1]))
        timings["total"] = total

        self._prev_frame = frame
        self._prev_mask = mask
        self.t += 1
        keep = self.keep_maps
        return FrameResult(mask, prior,
                           sal.values if keep and sal is not None else None,
                           efdm.density if keep and efdm is not None else None,
                           timings)


def run_strategy(frames, strategy: str, cfg: SegConfig | None = None,
                 seeds=None) -> list[LabelField]:
    """Segment a frame sequence; returns one mask per frame."""
    frames = list(frames)
    if not frames:
        raise ValueError("empty frame sequence")
    seg = Segmenter(cfg, strategy, seeds)
    return [seg.step(f).mask for f in frames]


__all__ = ["STRATEGIES", "STAGES", "FrameResult", "Segmenter",
           "frame_seed", "normalize_strategy", "run_strategy"]
