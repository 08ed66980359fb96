"""Binary MRF energy over the pixel grid and its min-cut graph.

Label 1 is object, label 0 background. In the flow graph the source side
carries label 1: a pixel left on the source side cuts its sink arc and
pays ``unary1``; one on the sink side cuts its source arc and pays
``unary0``. Neighbouring pixels with different labels cut the pairwise
arc between them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import LabelField
from .maxflow import FlowGraph, labels_from_cut, max_flow

_OFFSETS = {
    4: ((0, 1), (1, 0)),
    8: ((0, 1), (1, 0), (1, 1), (1, -1)),
}


@dataclass
class EnergyModel:
    """Unary costs per pixel plus one nonnegative weight per neighbour pair.

    ``edge_u``/``edge_v`` index pixels in row-major order; each unordered
    pair appears once and its weight applies in both directions.
    """

    width: int
    height: int
    unary0: np.ndarray
    unary1: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_w: np.ndarray
    neighborhood: int = 8

    def __post_init__(self):
        shape = (self.height, self.width)
        self.unary0 = np.asarray(self.unary0, np.float64).reshape(shape)
        self.unary1 = np.asarray(self.unary1, np.float64).reshape(shape)
        self.edge_u = np.asarray(self.edge_u, np.int64)
        self.edge_v = np.asarray(self.edge_v, np.int64)
        self.edge_w = np.asarray(self.edge_w, np.float64)
        if np.any(self.edge_w < 0):
            raise ValueError("pairwise weights must be >= 0 (submodularity)")
        for name in ("unary0", "unary1", "edge_w"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")


def grid_edges(height: int, width: int, neighborhood: int = 8):
    """Neighbour pairs of a grid: (u, v, euclidean distance), each pair once."""
    if neighborhood not in _OFFSETS:
        raise ValueError(f"neighborhood must be one of {{4, 8}}, got {neighborhood}")
    idx = np.arange(height * width).reshape(height, width)
    us, vs, ds = [], [], []
    for dy, dx in _OFFSETS[neighborhood]:
        x0, x1 = max(0, -dx), width - max(0, dx)
        u = idx[0:height - dy, x0:x1]
        v = idx[dy:height, x0 + dx:x1 + dx]
        us.append(u.ravel())
        vs.append(v.ravel())
        ds.append(np.full(u.size, np.hypot(dy, dx)))
    return np.concatenate(us), np.concatenate(vs), np.concatenate(ds)


def pairwise_weights(intensity: np.ndarray, edge_u, edge_v, dist,
                     lam: float, sigma_c: float, kappa: float) -> np.ndarray:
    """Contrast-sensitive boundary cost plus Potts constant."""
    flat = np.asarray(intensity, np.float64).ravel()
    diff = flat[edge_u] - flat[edge_v]
    return lam * np.exp(-diff * diff / (2.0 * sigma_c * sigma_c)) / dist + kappa


def build_energy(frame: np.ndarray, prior: np.ndarray, lik, cfg) -> EnergyModel:
    """Assemble unary (colour NLL + prior NLL) and pairwise terms.

    ``lik`` is a :class:`~salientcut.appearance.LikelihoodMaps`; ``prior``
    holds p(object) per pixel and must already be clamped away from 0 and 1.
    """
    frame = np.asarray(frame, np.float64)
    h, w = prior.shape
    if frame.shape[:2] != (h, w) or lik.obj_nll.shape != (h, w):
        raise ValueError("frame, prior and likelihood sizes differ")
    unary1 = lik.obj_nll - np.log(prior)
    unary0 = lik.bkg_nll - np.log1p(-prior)
    intensity = frame.mean(axis=2) if frame.ndim == 3 else frame
    eu, ev, dist = grid_edges(h, w, cfg.neighborhood)
    ew = pairwise_weights(intensity, eu, ev, dist, cfg.lam, cfg.sigma_c, cfg.kappa)
    return EnergyModel(w, h, unary0, unary1, eu, ev, ew, cfg.neighborhood)


def energy_of(labels, em: EnergyModel) -> float:
    a = labels.mask if isinstance(labels, LabelField) else np.asarray(labels, bool)
    if a.shape != (em.height, em.width):
        raise ValueError("label field and energy model sizes differ")
    unary = np.where(a, em.unary1, em.unary0).sum()
    flat = a.ravel()
    cut = flat[em.edge_u] != flat[em.edge_v]
    return float(unary + em.edge_w[cut].sum())


def energy_to_graph(em: EnergyModel) -> FlowGraph:
    """Flow graph whose min cut is the energy minimum minus sum(min unary)."""
    u0 = em.unary0.ravel()
    u1 = em.unary1.ravel()
    m = np.minimum(u0, u1)
    return FlowGraph.from_arrays(em.width * em.height, em.edge_u, em.edge_v,
                                 em.edge_w, em.edge_w, u0 - m, u1 - m)


def minimize(em: EnergyModel, frame_index: int = 0) -> LabelField:
    """MAP labelling of ``em`` via min-cut."""
    cut = max_flow(energy_to_graph(em))
    return labels_from_cut(cut, em.width, em.height, frame_index)
