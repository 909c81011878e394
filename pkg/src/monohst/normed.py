"""Interval partitions of the line and box partitions of l_inf^D, incremental and dynamic.

Cutting points are drawn lazily from keyed_uniform(seed, scale, dimension, k), so any
interval index can be materialized on demand and replays are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ARRIVE, MetricSpace, UpdateEvent, UpdateSequence, keyed_uniform
from .dynamic import DynamicScale
from .hst import EmbeddingTrace
from .incremental import ScaleWindowEmbedder, run_embedder

TOL = 1e-9


@dataclass
class NormedConfig:
    seed: int = 0
    mode: str = "incremental"
    epsilon: float | None = None
    n_known: int | None = None
    trigger: float = 1 / 6
    safety: float = 1.0
    top_factor: float | None = None
    bottom_factor: float = 0.5

    def __post_init__(self):
        if self.mode not in ("incremental", "dynamic"):
            raise ValueError(f"unknown mode {self.mode!r}")


def cut_point(seed: int, j: int, dim: int, k: int, r: float) -> float:
    """Left end of interval k: uniform in [k*r, (k + 1/2)*r]."""
    return (k + 0.5 * keyed_uniform(seed, j, dim, k)) * r


def interval_index(x: float, seed: int, j: int, dim: int, r: float) -> int:
    """Index k with z_k <= x < z_{k+1}."""
    m = math.floor(x / r)
    return m if x >= cut_point(seed, j, dim, m, r) else m - 1


def interval_bounds(k: int, seed: int, j: int, dim: int, r: float) -> tuple[float, float]:
    return cut_point(seed, j, dim, k, r), cut_point(seed, j, dim, k + 1, r)


class LineScale:
    """Incremental interval partition of one coordinate at scale s with interval unit r = s/3.

    A close pair in different groups merges their two intervals, but only if neither interval
    has merged before; groups therefore hold at most two adjacent intervals.
    """

    def __init__(self, j: int, x: np.ndarray, seed: int, eps: float, dim: int = 0):
        if not 0 < eps <= 1 / 6:
            raise ValueError("epsilon must lie in (0, 1/6]")
        self.j = j
        self.s = 2.0**j
        self.r = self.s / 3
        self.x = x
        self.seed = seed
        self.eps = eps
        self.dim = dim
        self.interval = np.zeros(len(x), dtype=np.int64)
        self.plab = np.zeros(len(x), dtype=np.int64)
        self.group: dict[int, int] = {}
        self.used: set[int] = set()
        self.seen: list[int] = []
        self._seen: set[int] = set()
        self.merges = 0

    def step(self, ev: UpdateEvent, t: int) -> None:
        if ev.op != ARRIVE:
            return
        v = ev.point
        xv = float(self.x[v])
        k = interval_index(xv, self.seed, self.j, self.dim, self.r)
        self.interval[v] = k
        self.plab[v] = self.group.get(k, k)
        if self.seen:
            seen = np.asarray(self.seen)
            near = seen[np.abs(self.x[seen] - xv) <= self.eps * self.s]
            for u in near.tolist():
                if self.plab[u] != self.plab[v]:
                    self._merge(int(self.interval[u]), k)
        if v not in self._seen:
            self._seen.add(v)
            self.seen.append(v)

    def _merge(self, a: int, b: int) -> bool:
        if a in self.used or b in self.used:
            return False
        lo_a, hi_a = interval_bounds(a, self.seed, self.j, self.dim, self.r)
        lo_b, hi_b = interval_bounds(b, self.seed, self.j, self.dim, self.r)
        span = max(hi_a, hi_b) - min(lo_a, lo_b)
        assert span <= self.s * (1 + TOL), f"merged intervals span {span} > {self.s}"
        la, lb = self.group.get(a, a), self.group.get(b, b)
        keep, drop = min(la, lb), max(la, lb)
        self.group[a] = self.group[b] = keep
        self.plab[self.plab == drop] = keep
        self.used.update((a, b))
        self.merges += 1
        return True

    def labels(self, points) -> np.ndarray:
        return self.plab[points]


class GridScale:
    """Refinement of one independent LineScale per coordinate."""

    def __init__(self, j: int, coords: np.ndarray, seed: int, eps: float):
        self.j = j
        self.s = 2.0**j
        self.lines = [LineScale(j, coords[:, d], seed, eps, dim=d) for d in range(coords.shape[1])]

    def step(self, ev: UpdateEvent, t: int) -> None:
        for line in self.lines:
            line.step(ev, t)

    def labels(self, points) -> np.ndarray:
        if len(self.lines) == 1:
            return self.lines[0].labels(points)
        stacked = np.stack([line.labels(points) for line in self.lines], axis=1)
        return np.unique(stacked, axis=0, return_inverse=True)[1].reshape(-1)


class BoxScale(DynamicScale):
    """Dynamic partition whose components are the grid boxes of interval unit r = s/6.

    The merge rule bounds the l_inf diameter of the union of the boxes' extents, which for
    intervals equals the radius-sum rule with radius half the interval length.
    """

    def __init__(self, j, M: MetricSpace, seed, trigger=1 / 6, safety=1.0):
        super().__init__(j, M, seed, trigger, safety, dist=M.linf)
        self.coords = M.coords2d()
        self.r = self.s / 6
        self.box_comp: dict[tuple, int] = {}
        self.box_of: list[tuple] = []
        self.lo = np.zeros((0, self.coords.shape[1]))
        self.hi = np.zeros((0, self.coords.shape[1]))

    def _box(self, v: int) -> tuple:
        return tuple(interval_index(float(x), self.seed, self.j, d, self.r) for d, x in enumerate(self.coords[v]))

    def _arrive_component(self, v: int, t: int) -> None:
        box = self._box(v)
        c = self.box_comp.get(box)
        if c is None:
            c = self.add_component(v, t, radius=0.0)
            self.box_comp[box] = c
            self.box_of.append(box)
            b = [interval_bounds(k, self.seed, self.j, d, self.r) for d, k in enumerate(box)]
            self.lo = np.vstack([self.lo, [x for x, _ in b]])
            self.hi = np.vstack([self.hi, [y for _, y in b]])
        self.comp_of[v] = c
        self.plab[v] = self.glab[c]
        self.alive_in[c] += 1

    def _depart_component(self, v: int) -> None:
        for c in self.depart(v):
            del self.box_comp[self.box_of[c]]

    def _cross_ok(self, A: np.ndarray, B: np.ndarray) -> bool:
        hi = np.maximum(self.hi[A][:, None, :], self.hi[B][None, :, :])
        lo = np.minimum(self.lo[A][:, None, :], self.lo[B][None, :, :])
        return bool(np.all((hi - lo).max(axis=2) <= self.limit))


def _check_coords(M: MetricSpace) -> np.ndarray:
    if M.coords is None or M.kind not in ("line", "lp"):
        raise ValueError("normed partitions need a line or lp coordinate metric")
    return M.coords2d()


def distortion_factor(M: MetricSpace) -> float:
    """Factor turning l_inf non-contraction into l_p non-contraction: D**(1/p)."""
    if M.kind == "line" or M.p == math.inf:
        return 1.0
    return float(M.dim ** (1 / M.p))


def make_normed(M: MetricSpace, seq: UpdateSequence, cfg: NormedConfig) -> ScaleWindowEmbedder:
    coords = _check_coords(M)
    dim = coords.shape[1]
    factor = distortion_factor(M)
    if cfg.mode == "incremental":
        n = cfg.n_known if cfg.n_known is not None else seq.num_arrivals
        eps = cfg.epsilon if cfg.epsilon is not None else float(max(n, 2)) ** -3 / dim
        if not 0 < eps <= 1 / 6:
            # shortest interval is r/2 = s/6, so close pairs always sit in adjacent intervals
            raise ValueError("epsilon must lie in (0, 1/6]")
        top = cfg.top_factor if cfg.top_factor is not None else max(8.0, 1 / eps)
        return ScaleWindowEmbedder(M, lambda j: GridScale(j, coords, cfg.seed, eps), top, cfg.bottom_factor,
                                   dist=M.linf, factor=factor)
    top = cfg.top_factor if cfg.top_factor is not None else 16.0
    return ScaleWindowEmbedder(M, lambda j: BoxScale(j, M, cfg.seed, cfg.trigger, cfg.safety), top,
                               cfg.bottom_factor, dist=M.linf, factor=factor)


def line_step(state: LineScale, ev: UpdateEvent, t: int) -> None:
    state.step(ev, t)


def embed_line(seq: UpdateSequence, M: MetricSpace, cfg: NormedConfig | None = None,
               audit: bool = True) -> EmbeddingTrace:
    if M.kind != "line" and M.dim != 1:
        raise ValueError("embed_line needs a line metric")
    cfg = cfg or NormedConfig()
    return run_embedder(make_normed(M, seq, cfg), seq, M, audit,
                        provenance={"embedder": "line", "seed": cfg.seed, "mode": cfg.mode})


def embed_linf(seq: UpdateSequence, M: MetricSpace, cfg: NormedConfig | None = None,
               audit: bool = True) -> EmbeddingTrace:
    cfg = cfg or NormedConfig()
    return run_embedder(make_normed(M, seq, cfg), seq, M, audit,
                        provenance={"embedder": "linf", "seed": cfg.seed, "mode": cfg.mode, "p": str(M.p)})
