"""s-t max-flow / min-cut for sparse graphs (Boykov-Kolmogorov).

Non-terminal vertices are numbered ``0..n-1``; the source is vertex ``n``
and the sink ``n + 1``. Arcs between non-terminals are stored in CSR order
with an explicit reverse partner, terminal capacities as two per-vertex
arrays. The solver is a serial dual-search-tree augmenting path method
with orphan adoption; iteration order is fixed, so identical graphs always
yield identical cuts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .imageio import LabelField

# Residual capacities at or below this are treated as saturated.
EPS = 1e-12

_NONE = -1
_TERMINAL = -2
_ORPHAN = -3
_INF_D = 1 << 60


class FlowGraph:
    """Capacitated directed graph with a source and a sink.

    Build incrementally with :meth:`add_edge` / :meth:`add_tedge`, or in
    bulk with :meth:`from_arrays`. Call :meth:`finalize` (done implicitly by
    :func:`max_flow`) to freeze the adjacency into contiguous CSR arrays.
    """

    def __init__(self, n: int):
        if n < 0:
            raise ValueError("vertex count must be >= 0")
        self.n = int(n)
        self.source_cap = np.zeros(self.n)
        self.sink_cap = np.zeros(self.n)
        self.direct_flow = 0.0  # capacity of s->t arcs
        self._tails: list[np.ndarray] = []
        self._heads: list[np.ndarray] = []
        self._caps: list[np.ndarray] = []
        self._rcaps: list[np.ndarray] = []
        self._frozen = False

    @property
    def source(self) -> int:
        return self.n

    @property
    def sink(self) -> int:
        return self.n + 1

    @classmethod
    def from_arrays(cls, n, tails, heads, caps, rev_caps, source_cap, sink_cap):
        g = cls(n)
        g.source_cap = np.asarray(source_cap, dtype=np.float64).copy()
        g.sink_cap = np.asarray(sink_cap, dtype=np.float64).copy()
        g._add_pairs(tails, heads, caps, rev_caps)
        return g

    def _add_pairs(self, tails, heads, caps, rev_caps):
        if self._frozen:
            raise RuntimeError("graph is frozen")
        tails = np.asarray(tails, dtype=np.int64).ravel()
        heads = np.asarray(heads, dtype=np.int64).ravel()
        caps = np.broadcast_to(np.asarray(caps, dtype=np.float64), tails.shape).ravel()
        rev_caps = np.broadcast_to(np.asarray(rev_caps, dtype=np.float64), tails.shape).ravel()
        if np.any(tails == heads):
            raise ValueError("self-loops are not allowed")
        if tails.size and (min(tails.min(), heads.min()) < 0
                           or max(tails.max(), heads.max()) >= self.n):
            raise ValueError("arc endpoint out of range")
        if np.any(caps < 0) or np.any(rev_caps < 0) or not (
                np.all(np.isfinite(caps)) and np.all(np.isfinite(rev_caps))):
            raise ValueError("capacities must be finite and >= 0")
        self._tails.append(tails)
        self._heads.append(heads)
        self._caps.append(caps.copy())
        self._rcaps.append(rev_caps.copy())

    def add_tedge(self, v: int, cap_source: float, cap_sink: float) -> None:
        if self._frozen:
            raise RuntimeError("graph is frozen")
        self.source_cap[v] += cap_source
        self.sink_cap[v] += cap_sink

    def add_edge(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> None:
        """Add arc u->v (and v->u with ``rev_cap``); u, v may be terminals."""
        s, t = self.source, self.sink
        if u == v:
            raise ValueError("self-loops are not allowed")
        if cap < 0 or rev_cap < 0:
            raise ValueError("capacities must be >= 0")
        for a, b, c in ((u, v, cap), (v, u, rev_cap)):
            if c == 0:
                continue
            if a == t or b == s:
                continue  # never crosses an s-t cut forward
            if a == s and b == t:
                self.direct_flow += c
            elif a == s:
                self.add_tedge(b, c, 0.0)
            elif b == t:
                self.add_tedge(a, 0.0, c)
        if u < self.n and v < self.n:
            self._add_pairs([u], [v], [cap], [rev_cap])

    def finalize(self) -> "FlowGraph":
        if self._frozen:
            return self
        if self._tails:
            tails = np.concatenate(self._tails)
            heads = np.concatenate(self._heads)
            caps = np.concatenate(self._caps)
            rcaps = np.concatenate(self._rcaps)
        else:
            tails = heads = np.zeros(0, np.int64)
            caps = rcaps = np.zeros(0)
        (self.first, self.arc_tail, self.arc_head, self.arc_cap, self.arc_rev,
         self.pair_arc) = _build_csr(tails.astype(np.int64), heads.astype(np.int64),
                                     caps.astype(np.float64), rcaps.astype(np.float64),
                                     self.n)
        self._tails = self._heads = self._caps = self._rcaps = []
        self._frozen = True
        return self

    @property
    def n_arcs(self) -> int:
        self.finalize()
        return int(self.arc_head.size)

    def to_dimacs(self) -> str:
        """DIMACS max-flow text (1-based ids; source n+1, sink n+2)."""
        self.finalize()
        s, t = self.n + 1, self.n + 2
        lines = []
        for v in range(self.n):
            if self.source_cap[v] > 0:
                lines.append(f"a {s} {v + 1} {self.source_cap[v]:.17g}")
            if self.sink_cap[v] > 0:
                lines.append(f"a {v + 1} {t} {self.sink_cap[v]:.17g}")
        if self.direct_flow > 0:
            lines.append(f"a {s} {t} {self.direct_flow:.17g}")
        for a in range(self.arc_head.size):
            if self.arc_cap[a] > 0:
                lines.append(f"a {self.arc_tail[a] + 1} {self.arc_head[a] + 1} "
                             f"{self.arc_cap[a]:.17g}")
        header = [f"p max {self.n + 2} {len(lines)}", f"n {s} s", f"n {t} t"]
        return "\n".join(header + lines) + "\n"


@njit(cache=True)
def _build_csr(tails, heads, caps, rcaps, n):
    """Arcs grouped by tail (stable counting sort), each linked to its partner.

    Pair k contributes arc u->v (cap) and v->u (rev cap); ``pair_arc[k]``
    is the CSR index of the forward one.
    """
    m = tails.size
    first = np.zeros(n + 1, np.int64)
    for k in range(m):
        first[tails[k] + 1] += 1
        first[heads[k] + 1] += 1
    for v in range(n):
        first[v + 1] += first[v]
    fill = first[:-1].copy()
    arc_tail = np.empty(2 * m, np.int64)
    arc_head = np.empty(2 * m, np.int64)
    arc_cap = np.empty(2 * m)
    arc_rev = np.empty(2 * m, np.int64)
    pair_arc = np.empty(m, np.int64)
    # placement in input order: forward arc 2k precedes reverse arc 2k+1
    for k in range(m):
        u, v = tails[k], heads[k]
        a = fill[u]
        fill[u] += 1
        b = fill[v]
        fill[v] += 1
        arc_tail[a], arc_head[a], arc_cap[a] = u, v, caps[k]
        arc_tail[b], arc_head[b], arc_cap[b] = v, u, rcaps[k]
        arc_rev[a], arc_rev[b] = b, a
        pair_arc[k] = a
    return first, arc_tail, arc_head, arc_cap, arc_rev, pair_arc


@dataclass
class CutResult:
    flow_value: float
    side_of: np.ndarray  # bool per vertex incl. s (index n) and t (n+1); True = source side
    arc_flow: np.ndarray  # net flow on each CSR arc (antisymmetric over partners)
    source_flow: np.ndarray  # flow s->v per vertex
    sink_flow: np.ndarray  # flow v->t per vertex


@njit(cache=True)
def _bk_solve(first, arc_head, arc_tail, arc_rev, rcap, tr, eps):
    n = tr.size
    parent = np.full(n, _NONE, np.int64)
    is_sink = np.zeros(n, np.bool_)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)
    in_q = np.zeros(n, np.bool_)
    qcap = n + 1
    queue = np.empty(qcap, np.int64)
    qh = 0
    qt = 0
    orphans = np.empty(n + 1, np.int64)
    flow = 0.0
    time = 0

    for i in range(n):
        if tr[i] > eps:
            parent[i] = _TERMINAL
            dist[i] = 1
            queue[qt] = i
            qt = (qt + 1) % qcap
            in_q[i] = True
        elif tr[i] < -eps:
            parent[i] = _TERMINAL
            is_sink[i] = True
            dist[i] = 1
            queue[qt] = i
            qt = (qt + 1) % qcap
            in_q[i] = True

    current = -1
    while True:
        # pick an active node
        i = -1
        if current != -1 and parent[current] != _NONE:
            i = current
        else:
            while qh != qt:
                k = queue[qh]
                qh = (qh + 1) % qcap
                in_q[k] = False
                if parent[k] != _NONE:
                    i = k
                    break
        current = -1
        if i == -1:
            break

        # growth
        middle = -1
        if not is_sink[i]:
            for a in range(first[i], first[i + 1]):
                if rcap[a] > eps:
                    j = arc_head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = False
                        parent[j] = arc_rev[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_q[j]:
                            queue[qt] = j
                            qt = (qt + 1) % qcap
                            in_q[j] = True
                    elif is_sink[j]:
                        middle = a
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = arc_rev[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for a in range(first[i], first[i + 1]):
                ra = arc_rev[a]
                if rcap[ra] > eps:
                    j = arc_head[a]
                    if parent[j] == _NONE:
                        is_sink[j] = True
                        parent[j] = ra
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if not in_q[j]:
                            queue[qt] = j
                            qt = (qt + 1) % qcap
                            in_q[j] = True
                    elif not is_sink[j]:
                        middle = ra
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = ra
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if middle == -1:
            continue
        current = i

        # augmentation: find bottleneck
        b = rcap[middle]
        k = arc_tail[middle]
        while parent[k] != _TERMINAL:
            a = parent[k]
            c = rcap[arc_rev[a]]
            if c < b:
                b = c
            k = arc_head[a]
        if tr[k] < b:
            b = tr[k]
        k = arc_head[middle]
        while parent[k] != _TERMINAL:
            a = parent[k]
            c = rcap[a]
            if c < b:
                b = c
            k = arc_head[a]
        if -tr[k] < b:
            b = -tr[k]

        # push
        n_orph = 0
        rcap[arc_rev[middle]] += b
        rcap[middle] -= b
        k = arc_tail[middle]
        while parent[k] != _TERMINAL:
            a = parent[k]
            rcap[a] += b
            rcap[arc_rev[a]] -= b
            nxt = arc_head[a]
            if rcap[arc_rev[a]] <= eps:
                parent[k] = _ORPHAN
                orphans[n_orph] = k
                n_orph += 1
            k = nxt
        tr[k] -= b
        if tr[k] <= eps:
            parent[k] = _ORPHAN
            orphans[n_orph] = k
            n_orph += 1
        k = arc_head[middle]
        while parent[k] != _TERMINAL:
            a = parent[k]
            rcap[arc_rev[a]] += b
            rcap[a] -= b
            nxt = arc_head[a]
            if rcap[a] <= eps:
                parent[k] = _ORPHAN
                orphans[n_orph] = k
                n_orph += 1
            k = nxt
        tr[k] += b
        if tr[k] >= -eps:
            parent[k] = _ORPHAN
            orphans[n_orph] = k
            n_orph += 1
        flow += b

        # adoption (FIFO over a circular buffer)
        oh = 0
        ot = n_orph
        ocap = n + 1
        time += 1
        while oh != ot:
            i2 = orphans[oh]
            oh = (oh + 1) % ocap
            sink_side = is_sink[i2]
            best = -1
            d_min = _INF_D
            for a0 in range(first[i2], first[i2 + 1]):
                if sink_side:
                    ok = rcap[a0] > eps
                else:
                    ok = rcap[arc_rev[a0]] > eps
                if not ok:
                    continue
                j = arc_head[a0]
                if parent[j] == _NONE or is_sink[j] != sink_side:
                    continue
                # trace j to its root
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    a = parent[k]
                    d += 1
                    if a == _TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if a == _ORPHAN:
                        d = _INF_D
                        break
                    k = arc_head[a]
                if d < _INF_D:
                    if d < d_min:
                        best = a0
                        d_min = d
                    k = j
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = d
                        d -= 1
                        k = arc_head[parent[k]]
            if best != -1:
                parent[i2] = best
                ts[i2] = time
                dist[i2] = d_min + 1
                continue
            # no valid parent: free the node
            for a0 in range(first[i2], first[i2 + 1]):
                j = arc_head[a0]
                if parent[j] == _NONE or is_sink[j] != sink_side:
                    continue
                if sink_side:
                    res = rcap[a0] > eps
                else:
                    res = rcap[arc_rev[a0]] > eps
                if res and not in_q[j]:
                    queue[qt] = j
                    qt = (qt + 1) % qcap
                    in_q[j] = True
                a = parent[j]
                if a >= 0 and arc_head[a] == i2:
                    parent[j] = _ORPHAN
                    orphans[ot] = j
                    ot = (ot + 1) % ocap
            parent[i2] = _NONE

    side = np.zeros(n, np.bool_)
    for i in range(n):
        side[i] = parent[i] != _NONE and not is_sink[i]
    return flow, side


def max_flow(g: FlowGraph) -> CutResult:
    """Solve max-flow on ``g`` without modifying it.

    ``side_of[v]`` is True for vertices reachable from the source in the
    final residual graph, so label-1 pixels of an energy graph are exactly
    the source side.
    """
    g.finalize()
    n = g.n
    const = np.minimum(g.source_cap, g.sink_cap)
    tr0 = g.source_cap - g.sink_cap
    tr = tr0.copy()
    rcap = g.arc_cap.copy()
    flow, side = _bk_solve(g.first, g.arc_head, g.arc_tail, g.arc_rev, rcap, tr, EPS)
    # tr holds the residual terminal capacity; it never changes sign
    pushed = tr0 - tr
    source_flow = const + np.maximum(pushed, 0.0)
    sink_flow = const + np.maximum(-pushed, 0.0)

    side_of = np.zeros(n + 2, bool)
    side_of[:n] = side
    side_of[n] = True
    total = float(flow + const.sum() + g.direct_flow)
    return CutResult(flow_value=total, side_of=side_of, arc_flow=g.arc_cap - rcap,
                     source_flow=source_flow, sink_flow=sink_flow)


def cut_capacity(g: FlowGraph, side_of: np.ndarray) -> float:
    """Capacity of the s-t cut given by ``side_of`` (True = source side)."""
    g.finalize()
    s_side = np.asarray(side_of[:g.n], bool)
    total = g.direct_flow
    total += g.source_cap[~s_side].sum() + g.sink_cap[s_side].sum()
    crossing = s_side[g.arc_tail] & ~s_side[g.arc_head]
    return float(total + g.arc_cap[crossing].sum())


def labels_from_cut(cut: CutResult, width: int, height: int, frame_index: int = 0) -> LabelField:
    n = width * height
    if cut.side_of.size != n + 2:
        raise ValueError(f"cut has {cut.side_of.size - 2} pixel vertices, expected {n}")
    return LabelField(cut.side_of[:n].reshape(height, width), frame_index)
