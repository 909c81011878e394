"""Deterministic HST constructions: offline Kruskal merging, strict online attachment, and
monotone online embedders built from connected components of threshold graphs."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.cluster.hierarchy import cophenet, linkage
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import squareform

from .core import ARRIVE, MetricSpace, UpdateEvent, UpdateSequence
from .hst import EmbeddingTrace, Hst, Snapshot, stack_from_ultrametric
from .incremental import run_embedder

TOL = 1e-9


# -- offline ------------------------------------------------------------------------------------


def offline_kruskal(M: MetricSpace, S=None) -> Hst:
    """Merge trees along pairs in ascending distance; the new root weighs phi(r_u) + phi(r_v) + d.

    Equal distances are processed in lexicographic pair order.
    """
    pts = sorted(M.points if S is None else S)
    if not pts:
        raise ValueError("empty point set")
    phi = [0.0] * len(pts)
    parent = [-1] * len(pts)
    leaves = {p: i for i, p in enumerate(pts)}
    root_of = list(range(len(pts)))  # union-find over leaf slots, values are tree roots

    def find(i: int) -> int:
        while root_of[i] != i:
            root_of[i] = root_of[root_of[i]]
            i = root_of[i]
        return i

    tree_root = list(range(len(pts)))
    pairs = sorted((M.d(u, v), a, b) for a, u in enumerate(pts) for b, v in enumerate(pts) if a < b)
    for d, a, b in pairs:
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        na, nb = tree_root[ra], tree_root[rb]
        node = len(phi)
        phi.append(phi[na] + phi[nb] + d)
        parent.append(-1)
        parent[na] = parent[nb] = node
        root_of[rb] = ra
        tree_root[ra] = node
    return Hst(phi, parent, leaves, mu=1.0)


# -- strict online ------------------------------------------------------------------------------


class StrictOnline:
    """Online embedding that never changes a distance once assigned.

    The i-th arrival x is attached on the root path of its nearest alive point u at the
    lowest weight w keeping d_T(x, v) >= (1 + 2**-(i-1)) d(x, v) for every alive v; then
    d_T(x, v) = max(w, d_T(u, v)).
    """

    def __init__(self, dist: Callable[[int, int], float]):
        self.dist = dist
        self.alive: list[int] = []
        self.dt: dict[tuple[int, int], float] = {}
        self.arrivals = 0

    @classmethod
    def from_metric(cls, M: MetricSpace) -> "StrictOnline":
        return cls(M.d)

    def stretch(self, i: int | None = None) -> float:
        i = self.arrivals if i is None else i
        return 1.0 + 2.0 ** -(i - 1)

    def distance(self, a: int, b: int) -> float:
        if a == b:
            return 0.0
        return self.dt[(min(a, b), max(a, b))]

    def insert(self, x: int) -> None:
        self.arrivals += 1
        if self.alive:
            c = self.stretch()
            u = min(self.alive, key=lambda v: (self.dist(x, v), v))
            w = max(c * self.dist(x, v) for v in self.alive if self.distance(u, v) <= c * self.dist(x, v))
            for v in self.alive:
                self.dt[(min(x, v), max(x, v))] = max(w, self.distance(u, v))
        self.alive.append(x)

    def depart(self, x: int) -> None:
        self.alive.remove(x)

    def process(self, ev: UpdateEvent) -> None:
        if ev.op == ARRIVE:
            self.insert(ev.point)
        else:
            self.depart(ev.point)

    def sandwich_violations(self) -> list[tuple[int, int, float, float]]:
        """Alive pairs whose tree distance leaves [(1 + 2**-(i-1)) d, 2**i d]."""
        i = self.arrivals
        lo_f, hi_f = self.stretch(), 2.0**i
        out = []
        for a in range(len(self.alive)):
            for b in range(a + 1, len(self.alive)):
                u, v = self.alive[a], self.alive[b]
                d, t = self.dist(u, v), self.distance(u, v)
                if not lo_f * d * (1 - TOL) <= t <= hi_f * d * (1 + TOL):
                    out.append((u, v, t, d))
        return out

    def matrix(self, points) -> np.ndarray:
        pts = list(points)
        m = np.zeros((len(pts), len(pts)))
        for a in range(len(pts)):
            for b in range(a + 1, len(pts)):
                m[a, b] = m[b, a] = self.distance(pts[a], pts[b])
        return m

    def snapshot(self) -> Snapshot:
        return _ultrametric_snapshot(sorted(self.alive), self.matrix(sorted(self.alive)), 1.0)

    def hst(self) -> Hst:
        return self.snapshot().hst()


class RecomputingKruskal:
    """The offline construction re-run on the alive set after every arrival; not strict."""

    def __init__(self, dist: Callable[[int, int], float]):
        self.dist = dist
        self.alive: list[int] = []
        self.tree: Hst | None = None

    def insert(self, x: int) -> None:
        self.alive.append(x)
        pts = sorted(self.alive)
        D = np.array([[self.dist(a, b) for b in pts] for a in pts])
        self.tree = offline_kruskal(MetricSpace(D), range(len(pts)))
        self._ids = {p: i for i, p in enumerate(pts)}

    def depart(self, x: int) -> None:
        self.alive.remove(x)

    def distance(self, a: int, b: int) -> float:
        return self.tree.distance(self._ids[a], self._ids[b])


def strict_online(M: MetricSpace, seq: UpdateSequence, check: bool = True) -> list[Hst]:
    """Per-arrival HSTs of the strict embedder; the sandwich bound is asserted after each step."""
    if not seq.is_incremental:
        raise ValueError("strict_online takes an arrival-only sequence")
    emb = StrictOnline.from_metric(M)
    out = []
    for ev in seq.events:
        emb.insert(ev.point)
        if check:
            bad = emb.sandwich_violations()
            assert not bad, f"sandwich bound broken after {emb.arrivals} arrivals: {bad[0]}"
        out.append(emb.hst())
    return out


# -- monotone online ----------------------------------------------------------------------------


def single_linkage(W: np.ndarray) -> np.ndarray:
    """Minimax path distance (bottleneck ultrametric) of a symmetric weight matrix."""
    m = W.shape[0]
    if m < 2:
        return np.zeros((m, m))
    Z = linkage(squareform(W, checks=False), method="single")
    return squareform(cophenet(Z))


def threshold_partition(W: np.ndarray, s: float) -> np.ndarray:
    """Connected components of the graph linking pairs with weight <= s."""
    return connected_components(W <= s * (1 + TOL), directed=False)[1]


def _ultrametric_snapshot(points, U: np.ndarray, factor: float) -> Snapshot:
    pts = np.asarray(points, dtype=np.int64)
    if len(pts) < 2:
        return Snapshot(pts, np.zeros(0), np.zeros((0, len(pts)), dtype=np.int64), factor)
    st = stack_from_ultrametric(pts, U)
    return Snapshot(st.points, st.scales, st.labels, factor)


class _ThresholdEmbedder:
    """Shared online driver: the tree metric is the single linkage of a per-pair weight."""

    def __init__(self, M: MetricSpace):
        self.M = M
        self.seen: list[int] = []
        self._seen: set[int] = set()
        self.alive: set[int] = set()

    def weights(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def process(self, ev: UpdateEvent) -> None:
        v = ev.point
        if ev.op == ARRIVE:
            if v not in self._seen:
                self._seen.add(v)
                self.seen.append(v)
                self._on_new_point()
            self.alive.add(v)
        else:
            self.alive.discard(v)

    def _on_new_point(self) -> None:
        pass

    def ultrametric(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(self.seen, dtype=np.int64)
        return pts, single_linkage(self.weights(pts))

    def snapshot(self) -> Snapshot:
        pts, U = self.ultrametric()
        alive = np.array(sorted(self.alive), dtype=np.int64)
        pos = {p: i for i, p in enumerate(self.seen)}
        idx = np.array([pos[a] for a in alive.tolist()], dtype=np.int64)
        return _ultrametric_snapshot(alive, U[np.ix_(idx, idx)], self.factor())

    def factor(self) -> float:
        return 1.0


class KnownNEmbedder(_ThresholdEmbedder):
    """Scales are the realized pairwise distances; each partition is the threshold-graph components.

    Non-expansive with contraction at most i-1 after i points; rescale multiplies by n-1.
    """

    def __init__(self, M: MetricSpace, n: int, rescale: bool = True):
        super().__init__(M)
        if n < 1:
            raise ValueError("n must be positive")
        self.n = n
        self.rescale = rescale

    def _on_new_point(self) -> None:
        if len(self.seen) > self.n:
            raise ValueError(f"more than n={self.n} points arrived")

    def weights(self, pts: np.ndarray) -> np.ndarray:
        return self.M.dist[np.ix_(pts, pts)]

    def factor(self) -> float:
        return float(max(self.n - 1, 1)) if self.rescale else 1.0


def _default_f_constant(terms: int = 10**6) -> float:
    k = np.arange(2, terms + 1, dtype=float)
    head = float(np.sum(1.0 / (k * np.log2(k + 2) ** 2)))
    # integral tail of 1/(k log2(k)^2) beyond the last summed term
    return head + math.log(2) / math.log2(terms)


F_CONSTANT = _default_f_constant()


def default_f(k):
    """c * k * log2(k + 2)**2 with c chosen so the reciprocals over k >= 2 sum to at most 1."""
    k = np.asarray(k, dtype=float)
    return F_CONSTANT * k * np.log2(k + 2) ** 2


def check_summable(f, terms: int = 10**6) -> float:
    """Sum of 1/f(k) over 2..terms; raises if f decreases or the sum exceeds 1."""
    k = np.arange(2, terms + 1, dtype=float)
    vals = np.asarray(f(k), dtype=float)
    if np.any(vals <= 0) or np.any(np.diff(vals) < 0):
        raise ValueError("f must be positive and non-decreasing")
    total = float(np.sum(1.0 / vals))
    if total > 1 + TOL:
        raise ValueError(f"reciprocal sum of f is {total} > 1")
    return total


class UnknownNEmbedder(_ThresholdEmbedder):
    """The k-th arrival links to earlier points within s / f(k); non-contractive, expansion <= f(i)."""

    def __init__(self, M: MetricSpace, f=None, check: bool = True):
        super().__init__(M)
        self.f = default_f if f is None else f
        if check and f is not None:
            check_summable(self.f)
        self.index: dict[int, int] = {}

    def _on_new_point(self) -> None:
        self.index[self.seen[-1]] = len(self.seen)

    def weights(self, pts: np.ndarray) -> np.ndarray:
        k = np.array([self.index[int(p)] for p in pts], dtype=float)
        later = np.maximum(k[:, None], k[None, :])
        return self.M.dist[np.ix_(pts, pts)] * np.asarray(self.f(later), dtype=float)


def monotone_known_n(M: MetricSpace, seq: UpdateSequence, n: int | None = None, rescale: bool = False,
                     audit: bool = True) -> EmbeddingTrace:
    n = seq.num_points if n is None else n
    emb = KnownNEmbedder(M, n, rescale)
    alpha = None if rescale else (lambda a: float(max(a - 1, 1)))
    return run_embedder(emb, seq, M, audit, alpha=alpha,
                        provenance={"embedder": "det-known-n", "n": n, "rescale": rescale})


def monotone_unknown_n(M: MetricSpace, seq: UpdateSequence, f=None, audit: bool = True) -> EmbeddingTrace:
    emb = UnknownNEmbedder(M, f)
    return run_embedder(emb, seq, M, audit, provenance={"embedder": "det-unknown-n"})


def kruskal_snapshot(M: MetricSpace, S=None) -> Snapshot:
    T = offline_kruskal(M, S)
    pts = sorted(T.leaves)
    return _ultrametric_snapshot(pts, T.distance_matrix(pts), 1.0)

