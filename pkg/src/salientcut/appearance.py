"""Weighted Gaussian mixtures for object/background colour likelihoods.

Every pixel contributes to both models: to the object mixture with weight
p(object) and to the background mixture with weight 1 - p(object).
The EM core is dimension-agnostic and is reused for the spatial mixture
fitted to the attention density in :mod:`salientcut.prior`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._parallel import run_tasks, run_tiles

DENSITY_FLOOR = 1e-12
MAX_SAMPLES = 20_000
MIN_COMPONENT_WEIGHT = 1e-8


class GmmFitError(ValueError):
    pass


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covs: np.ndarray  # (K, D, D)
    log_likelihood: list[float] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, np.float64))
        prec, logdet = _precisions(self)
        return _log_density(x, np.log(self.weights), self.means, prec, logdet)


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1)
    top = np.where(np.isfinite(top), top, 0.0)
    return top + np.log(np.exp(a - top[:, None]).sum(axis=1))


# Projection used to order colour samples; any fixed generic direction works.
_SORT_DIRECTION = np.array([1.0, 0.7548776662466927, 0.5698402909980532,
                            0.4301597090019468, 0.3247179572447460])


def _canonical(x: np.ndarray, w: np.ndarray):
    """Unique positive-weight samples in a fixed order, weights summed and normalized.

    The order depends only on the sample values, so later random draws do
    not depend on the order in which samples were supplied.
    """
    keep = w > 0
    x, w = x[keep], w[keep]
    d = x.shape[1]
    direction = _SORT_DIRECTION[:d] if d <= _SORT_DIRECTION.size else np.linspace(1.0, 0.1, d)
    key = x @ direction
    order = np.argsort(key)
    xs, ks = x[order], key[order]
    start = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    group = np.repeat(np.arange(start.size), np.diff(np.r_[start, ks.size]))
    if not np.array_equal(xs, xs[start][group]):
        # projection collision between distinct samples: exact ordering
        keys = tuple(x[:, i] for i in range(d - 1, -1, -1))
        order = np.lexsort(keys)
        xs = x[order]
        start = np.flatnonzero(np.r_[True, np.any(xs[1:] != xs[:-1], axis=1)])
    ws = np.add.reduceat(w[order], start)
    return xs[start], ws / ws.sum()


@njit(cache=True, nogil=True)
def _em_step(x, w, log_weights, means, prec, logdet, reg, scale_ridge):
    """One fused EM pass.

    Returns sum_n w_n log p(x_n) under the current parameters together
    with the re-estimated (mass, means, covs). Second moments are taken
    about the current means, which keeps the shifted sums well conditioned.
    The ridge added to each covariance is ``reg / mass`` when
    ``scale_ridge`` is set and ``reg`` otherwise.
    """
    n, d = x.shape
    k = means.shape[0]
    c = d * np.log(2.0 * np.pi)
    logp = np.empty(k)
    diff = np.empty((k, d))
    nk = np.zeros(k)
    s1 = np.zeros((k, d))
    s2 = np.zeros((k, d, d))
    total = 0.0
    for i in range(n):
        top = -np.inf
        for j in range(k):
            maha = 0.0
            for a in range(d):
                diff[j, a] = x[i, a] - means[j, a]
            for a in range(d):
                z = 0.0
                for b in range(a + 1):
                    z += prec[j, a, b] * diff[j, b]
                maha += z * z
            logp[j] = log_weights[j] - 0.5 * (c + logdet[j] + maha)
            if logp[j] > top:
                top = logp[j]
        s = 0.0
        for j in range(k):
            logp[j] = np.exp(logp[j] - top)
            s += logp[j]
        total += w[i] * (top + np.log(s))
        for j in range(k):
            r = w[i] * logp[j] / s
            nk[j] += r
            for a in range(d):
                s1[j, a] += r * diff[j, a]
                for b in range(a + 1):
                    s2[j, a, b] += r * diff[j, a] * diff[j, b]
    new_means = np.empty((k, d))
    covs = np.empty((k, d, d))
    for j in range(k):
        if nk[j] <= 0.0:
            new_means[j] = means[j]
            covs[j] = 0.0
            for a in range(d):
                covs[j, a, a] = reg
            continue
        for a in range(d):
            new_means[j, a] = means[j, a] + s1[j, a] / nk[j]
        ridge = reg / nk[j] if scale_ridge else reg
        for a in range(d):
            for b in range(a + 1):
                v = s2[j, a, b] / nk[j] - (s1[j, a] / nk[j]) * (s1[j, b] / nk[j])
                covs[j, a, b] = v
                covs[j, b, a] = v
            covs[j, a, a] += ridge
    return total, nk, new_means, covs


@njit(cache=True, nogil=True)
def _mstep(x, r, reg, scale_ridge):
    n, d = x.shape
    k = r.shape[1]
    nk = np.zeros(k)
    means = np.zeros((k, d))
    covs = np.zeros((k, d, d))
    for i in range(n):
        for j in range(k):
            nk[j] += r[i, j]
            for a in range(d):
                means[j, a] += r[i, j] * x[i, a]
    for j in range(k):
        for a in range(d):
            means[j, a] /= nk[j]
    for i in range(n):
        for j in range(k):
            for a in range(d):
                da = x[i, a] - means[j, a]
                for b in range(a + 1):
                    covs[j, a, b] += r[i, j] * da * (x[i, b] - means[j, b])
    for j in range(k):
        ridge = reg / nk[j] if scale_ridge else reg
        for a in range(d):
            for b in range(a + 1):
                v = covs[j, a, b] / nk[j]
                covs[j, a, b] = v
                covs[j, b, a] = v
            covs[j, a, a] += ridge
    return nk, means, covs


@njit(cache=True, nogil=True)
def _log_density(x, log_weights, means, prec, logdet):
    n, d = x.shape
    k = means.shape[0]
    c = d * np.log(2.0 * np.pi)
    logp = np.empty(k)
    out = np.empty(n)
    for i in range(n):
        top = -np.inf
        for j in range(k):
            maha = 0.0
            for a in range(d):
                z = 0.0
                for b in range(a + 1):
                    z += prec[j, a, b] * (x[i, b] - means[j, b])
                maha += z * z
            logp[j] = log_weights[j] - 0.5 * (c + logdet[j] + maha)
            if logp[j] > top:
                top = logp[j]
        s = 0.0
        for j in range(k):
            s += np.exp(logp[j] - top)
        out[i] = top + np.log(s)
    return out


def _precisions(model: GmmModel):
    k, d = model.means.shape
    prec = np.empty((k, d, d))
    logdet = np.empty(k)
    for j in range(k):
        chol = np.linalg.cholesky(model.covs[j])
        prec[j] = np.tril(np.linalg.inv(chol))
        logdet[j] = 2.0 * np.log(np.diag(chol)).sum()
    return prec, logdet


def systematic_resample(x: np.ndarray, w: np.ndarray, n_out: int):
    """Deterministic systematic resampling collapsed to (unique samples, mass)."""
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    pos = (np.arange(n_out) + 0.5) / n_out
    idx = np.searchsorted(cdf, pos, side="right")
    uniq, counts = np.unique(idx, return_counts=True)
    return x[uniq], counts / n_out


def kmeanspp_seed(x: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Weighted k-means++ seeding over the canonical sample order."""
    cdf = np.cumsum(w)
    first = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(x) - 1)
    centers = [x[first]]
    d2 = ((x - x[first]) ** 2).sum(axis=1)
    for _ in range(1, k):
        score = w * d2
        total = score.sum()
        if total <= 0:
            # every sample coincides with a centre: fall back to mass draws
            score, total = w, w.sum()
        c = np.cumsum(score)
        pick = min(int(np.searchsorted(c, rng.random() * total, side="right")), len(x) - 1)
        centers.append(x[pick])
        d2 = np.minimum(d2, ((x - x[pick]) ** 2).sum(axis=1))
    return np.array(centers)


@njit(cache=True, nogil=True)
def _assign(x, centers, labels):
    n, d = x.shape
    changed = False
    for i in range(n):
        best, best_d = 0, np.inf
        for j in range(centers.shape[0]):
            dist = 0.0
            for a in range(d):
                t = x[i, a] - centers[j, a]
                dist += t * t
            if dist < best_d:
                best_d, best = dist, j
        if labels[i] != best:
            labels[i] = best
            changed = True
    return changed


@njit(cache=True, nogil=True)
def _recenter(x, w, labels, centers):
    k, d = centers.shape
    mass = np.zeros(k)
    acc = np.zeros((k, d))
    for i in range(x.shape[0]):
        j = labels[i]
        mass[j] += w[i]
        for a in range(d):
            acc[j, a] += w[i] * x[i, a]
    for j in range(k):
        if mass[j] > 0:
            for a in range(d):
                centers[j, a] = acc[j, a] / mass[j]


def weighted_kmeans(x, w, centers, max_iter: int = 20):
    """Lloyd iterations on weighted samples; returns (centers, labels)."""
    centers = np.array(centers, np.float64)
    labels = np.full(x.shape[0], -1, np.int64)
    for _ in range(max_iter):
        if not _assign(x, centers, labels):
            break
        _recenter(x, w, labels, centers)
    return centers, labels


def fit_weighted_gmm(pixels, weights, M: int, seed: int, *, reg: float = 1e-6,
                     max_iter: int = 100, tol: float = 1e-6,
                     max_samples: int = MAX_SAMPLES,
                     scale_ridge: bool = True) -> GmmModel:
    """Fit an M-component full-covariance mixture by weighted EM.

    Means are initialised by weighted k-means with k-means++ seeding drawn
    from ``seed``. EM stops when the objective improves by less than
    ``tol`` (relative) or after ``max_iter`` iterations. A component whose
    weight falls below 1e-8 is dropped and the fit is repeated with one
    component fewer. When more than ``max_samples`` samples carry weight,
    a systematic resample of that size is fitted.

    With ``scale_ridge`` (the default) the covariance ridge is
    ``reg / N_k`` for a component of normalized mass ``N_k``. That is the
    exact maximizer under a ``-reg/2 * sum_k tr(inv(S_k))`` penalty, so the
    recorded objective (weighted mean log-likelihood plus that penalty)
    never decreases, and every covariance eigenvalue is at least ``reg``.
    Without it a constant ``reg * I`` is added and the plain weighted
    log-likelihood is recorded.
    """
    x = np.asarray(pixels, np.float64)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, np.float64).ravel()
    if w.size != x.shape[0]:
        raise ValueError("pixels and weights lengths differ")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and >= 0")
    if not w.sum() > 0:
        raise GmmFitError("all sample weights are zero")
    if M < 1:
        raise ValueError("M must be >= 1")
    n_pos = int(np.count_nonzero(w))
    if M > n_pos:
        raise GmmFitError(f"M={M} exceeds the {n_pos} samples with positive weight")

    x, w = _canonical(x, w)
    if x.shape[0] > max_samples:
        x, w = systematic_resample(x, w, max_samples)
    # duplicates were merged; never ask for more components than distinct samples
    M = min(M, x.shape[0])

    rng = np.random.default_rng(seed)
    centers = kmeanspp_seed(x, w, M, rng)
    centers, labels = weighted_kmeans(x, w, centers)
    r = np.zeros((x.shape[0], M))
    r[np.arange(x.shape[0]), labels] = w
    if np.any(r.sum(axis=0) < MIN_COMPONENT_WEIGHT) and M > 1:
        return fit_weighted_gmm(x, w, M - 1, seed, reg=reg, max_iter=max_iter,
                                tol=tol, max_samples=max_samples,
                                scale_ridge=scale_ridge)
    nk, means, covs = _mstep(x, r, reg, scale_ridge)
    model = GmmModel(nk / nk.sum(), means, covs)

    history: list[float] = []
    for _ in range(max_iter):
        prec, logdet = _precisions(model)
        ll, nk, means, covs = _em_step(x, w, np.log(model.weights), model.means,
                                       prec, logdet, reg, scale_ridge)
        if scale_ridge:
            ll -= 0.5 * reg * float(np.sum(prec * prec))  # tr(inv(S)) = |inv(L)|_F^2
        history.append(ll)
        if len(history) > 1 and ll - history[-2] < tol * abs(history[-2]):
            break
        if np.any(nk < MIN_COMPONENT_WEIGHT) and M > 1:
            return fit_weighted_gmm(x, w, M - 1, seed, reg=reg, max_iter=max_iter,
                                    tol=tol, max_samples=max_samples,
                                    scale_ridge=scale_ridge)
        model = GmmModel(nk / nk.sum(), means, covs)
    model.log_likelihood = history
    return model


@dataclass
class LikelihoodMaps:
    obj_nll: np.ndarray
    bkg_nll: np.ndarray


def nll_map(frame: np.ndarray, model: GmmModel) -> np.ndarray:
    """Per-pixel -log p(colour) with the density floored at 1e-12."""
    frame = np.asarray(frame, np.float64)
    h, w = frame.shape[:2]
    flat = frame.reshape(h * w, -1)
    out = np.empty(h * w)
    cap = -np.log(DENSITY_FLOOR)

    def tile(r0, r1):
        sl = slice(r0 * w, r1 * w)
        out[sl] = np.minimum(-model.log_density(flat[sl]), cap)

    run_tiles(tile, h)
    return out.reshape(h, w)


def nll_maps(frame: np.ndarray, obj: GmmModel, bkg: GmmModel) -> LikelihoodMaps:
    return LikelihoodMaps(nll_map(frame, obj), nll_map(frame, bkg))


def build_models(frame: np.ndarray, prior: np.ndarray, M: int = 3, seed: int = 0,
                 max_samples: int = MAX_SAMPLES):
    """Fit (object, background) colour mixtures weighted by the prior."""
    frame = np.asarray(frame, np.float64)
    if frame.shape[:2] != prior.shape:
        raise ValueError("frame and prior sizes differ")
    x = frame.reshape(-1, frame.shape[2] if frame.ndim == 3 else 1)
    p = np.asarray(prior, np.float64).ravel()
    obj, bkg = run_tasks(lambda: fit_weighted_gmm(x, p, M, seed, max_samples=max_samples),
                         lambda: fit_weighted_gmm(x, 1.0 - p, M, seed, max_samples=max_samples))
    return obj, bkg
