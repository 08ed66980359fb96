"""Independent reference implementations used only by the tests.

Everything here is deliberately naive: plain loops or exhaustive
enumeration, no shared code with the package under test.
"""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def edmonds_karp(n_total: int, arcs, s: int, t: int) -> float:
    """Max-flow by BFS augmenting paths on a dense residual matrix.

    ``arcs`` is an iterable of (u, v, cap); parallel arcs are summed.
    """
    cap = np.zeros((n_total, n_total))
    for u, v, c in arcs:
        cap[u, v] += c
    flow = 0.0
    while True:
        parent = [-1] * n_total
        parent[s] = s
        q = deque([s])
        while q and parent[t] == -1:
            u = q.popleft()
            for v in np.flatnonzero(cap[u] > 1e-12):
                if parent[v] == -1:
                    parent[v] = u
                    q.append(v)
        if parent[t] == -1:
            return flow
        bottleneck = np.inf
        v = t
        while v != s:
            bottleneck = min(bottleneck, cap[parent[v], v])
            v = parent[v]
        v = t
        while v != s:
            u = parent[v]
            cap[u, v] -= bottleneck
            cap[v, u] += bottleneck
            v = u
        flow += bottleneck


def brute_min_cut(n_total: int, arcs, s: int, t: int) -> float:
    """Minimum over all s/t partitions of the forward-crossing capacity."""
    others = [v for v in range(n_total) if v not in (s, t)]
    best = np.inf
    for bits in itertools.product((False, True), repeat=len(others)):
        src = {s} | {v for v, b in zip(others, bits) if b}
        total = sum(c for u, v, c in arcs if u in src and v not in src)
        best = min(best, total)
    return best


def brute_energy_table(unary0, unary1, edges) -> np.ndarray:
    """Energy of every labeling; entry k has pixel i labelled (k >> i) & 1."""
    u0 = np.asarray(unary0, float).ravel()
    u1 = np.asarray(unary1, float).ravel()
    n = u0.size
    edges = list(edges)
    eu = np.array([e[0] for e in edges], int)
    ev = np.array([e[1] for e in edges], int)
    ew = np.array([e[2] for e in edges], float)
    labels = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    unary = np.where(labels, u1[None, :], u0[None, :]).sum(axis=1)
    pair = ((labels[:, eu] != labels[:, ev]) * ew[None, :]).sum(axis=1)
    return unary + pair


def brute_energy_min(unary0, unary1, edges) -> float:
    """Exhaustive minimum of sum unary + sum w [a_u != a_v] over all labelings."""
    return float(brute_energy_table(unary0, unary1, edges).min())


def labeling_index(labels) -> int:
    a = np.asarray(labels, bool).ravel()
    return int(sum(1 << i for i in np.flatnonzero(a)))


def energy_sum(labels, unary0, unary1, edges) -> float:
    """Direct loop evaluation of a labelling's energy."""
    a = np.asarray(labels, bool).ravel()
    u0 = np.asarray(unary0, float).ravel()
    u1 = np.asarray(unary1, float).ravel()
    total = 0.0
    for i in range(a.size):
        total += u1[i] if a[i] else u0[i]
    for u, v, w in edges:
        if a[u] != a[v]:
            total += w
    return total


def grid_pairs(h: int, w: int, nbhd: int):
    """(u, v, dist) for every neighbour pair, built by scanning pixels."""
    out = []
    steps = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if nbhd == 8 else [])
    for y in range(h):
        for x in range(w):
            for dy, dx in steps:
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w:
                    out.append((y * w + x, yy * w + xx, float(np.hypot(dy, dx))))
    return out


def convolve_loops(image, kernel):
    """F(y, x) = sum_ij K(i, j) P(y + i - n//2, x + j - m//2), clamped borders."""
    image = np.asarray(image, float)
    kernel = np.asarray(kernel, float)
    h, w = image.shape
    n, m = kernel.shape
    out = np.zeros_like(image)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(n):
                for j in range(m):
                    yy = min(max(y + i - n // 2, 0), h - 1)
                    xx = min(max(x + j - m // 2, 0), w - 1)
                    acc += kernel[i, j] * image[yy, xx]
            out[y, x] = acc
    return out


def bilinear_loops(image, shape):
    """Half-pixel-centred bilinear resampling with clamped borders."""
    image = np.asarray(image, float)
    h, w = image.shape
    H, W = shape
    out = np.empty((H, W))
    for Y in range(H):
        sy = min(max((Y + 0.5) * h / H - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for X in range(W):
            sx = min(max((X + 0.5) * w / W - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = (1 - fx) * image[y0, x0] + fx * image[y0, x1]
            bot = (1 - fx) * image[y1, x0] + fx * image[y1, x1]
            out[Y, X] = (1 - fy) * top + fy * bot
    return out


def riccati_iterate(q: float, r: float, tol: float = 1e-15, max_iter: int = 1_000_000) -> float:
    """Iterate the random-walk posterior-variance map to convergence."""
    v = r
    for _ in range(max_iter):
        p = v + q
        nxt = p * r / (p + r)
        if abs(nxt - v) <= tol:
            return nxt
        v = nxt
    return v


def xi_iterate(sigma1: float, sigma2: float, steps: int, v0: float = 0.0) -> float:
    a, b = sigma1 ** 2, sigma2 ** 2
    v = v0
    for _ in range(steps):
        v = a * (b + v) / (a + b + v)
    return v


def weighted_kde(density, bandwidth_sq: float):
    """sum_j w_j N(x; x_j, h^2 I) evaluated on the pixel grid (2-D, direct sums)."""
    h, w = density.shape
    ys, xs = np.mgrid[0:h, 0:w]
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float)
    wts = density.ravel() / density.sum()
    keep = wts > 0
    pts_k, w_k = pts[keep], wts[keep]
    out = np.empty(h * w)
    for i in range(h * w):
        d2 = ((pts_k - pts[i]) ** 2).sum(axis=1)
        out[i] = (w_k * np.exp(-0.5 * d2 / bandwidth_sq)).sum()
    return (out / (2 * np.pi * bandwidth_sq)).reshape(h, w)
