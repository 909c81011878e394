"""Probabilistic online monotone embedding for arrival sequences (known or unknown length)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .components import ScaleState, cuts
from .core import ARRIVE, MetricSpace, UpdateEvent, UpdateSequence
from .harness import StepAuditor
from .hst import EmbeddingTrace, Snapshot

log = logging.getLogger(__name__)


@dataclass
class IncrementalConfig:
    n_known: int | None = None
    epsilon: float | None = None
    seed: int = 0
    unknown_n: bool = False
    top_factor: float = 32.0
    bottom_factor: float = 0.5

    def resolved_epsilon(self, n: int) -> float:
        eps = self.epsilon if self.epsilon is not None else float(max(n, 1)) ** -6
        if not 0 < eps <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        return eps


def phase_of(arrivals: int) -> int:
    """Phase i covers arrival counts (m_{i-1}, m_i] with m_i = 2**(2**i); phase 1 starts at 1."""
    i = 1
    while 2 ** (2**i) < arrivals:
        i += 1
    return i


def phase_epsilon(i: int) -> float:
    return 2.0 ** (-6 * 2**i)


class IncrementalScale(ScaleState):
    """One scale of the incremental partition with a designated merging component.

    With phases enabled, each phase has its own merge threshold and its own designated
    component; the component designated in phase i is the only one allowed to absorb
    neighbours during phase i.
    """

    def __init__(self, j, M, seed, eps: float | None = None, phased: bool = False):
        super().__init__(j, M, seed)
        self.eps = eps
        self.phased = phased
        self.designated: dict[int, int] = {}
        self.seen: list[int] = []
        self._seen: set[int] = set()
        self.arrivals = 0
        self.phase = 0
        self.degenerate = 0
        self.rejected = 0

    def step(self, ev: UpdateEvent, t: int) -> None:
        if ev.op != ARRIVE:
            self.depart(ev.point)
            return
        v = ev.point
        self.arrivals += 1
        if v not in self._seen:
            self._seen.add(v)
            self.seen.append(v)
        self.add_component(v, t)
        self.assign(v)
        if self.phased:
            phase = phase_of(self.arrivals)
            eps = phase_epsilon(phase)
            fresh = phase != self.phase
            self.phase = phase
        else:
            phase, eps, fresh = 0, self.eps, False
        thr = eps * self.s
        seen = np.asarray(self.seen)
        if fresh:
            close = np.argwhere(np.triu(self.D[np.ix_(seen, seen)] <= thr, 1))
            pairs = [(int(seen[a]), int(seen[b])) for a, b in close]
        else:
            near = seen[self.D[v, seen] <= thr]
            pairs = [(int(u), v) for u in near if u != v]
        if pairs:
            self._merge_close(pairs, phase)

    def _merge_close(self, pairs, phase) -> None:
        changed = True
        while changed:
            changed = False
            for u, w in pairs:
                cu, cw = int(self.comp_of[u]), int(self.comp_of[w])
                if cu == cw or self.same_group(cu, cw):
                    continue
                star = self.designated.get(phase)
                if star is None:
                    if cuts(self.component(cu), self.M, u, w):
                        star = cu
                    elif cuts(self.component(cw), self.M, u, w):
                        star = cw
                    else:
                        star = cu
                        self.degenerate += 1
                        log.debug("scale %d: neither component cuts (%d, %d)", self.j, u, w)
                    self.designated[phase] = star
                if star in (cu, cw):
                    changed |= self.merge_groups(cu, cw)
                else:
                    self.rejected += 1


class ScaleWindowEmbedder:
    """Runs one partition per power-of-two scale and assembles the per-event target metric.

    Only scales 2**j with bottom_factor * d_min <= 2**j <= top_factor * d_max (over seen points)
    are materialized. Scales entering the window later are replayed from the start of the
    history; per-scale randomness is keyed by (seed, scale, ...), so replay is exact.
    """

    def __init__(self, M: MetricSpace, make_scale, top_factor: float, bottom_factor: float = 0.5,
                 dist: np.ndarray | None = None, factor: float = 1.0):
        self.M = M
        self.D = M.dist if dist is None else dist
        self.make_scale = make_scale
        self.top_factor = top_factor
        self.bottom_factor = bottom_factor
        self.factor = factor
        self.levels: dict[int, object] = {}
        self.history: list[UpdateEvent] = []
        self.seen: list[int] = []
        self._seen: set[int] = set()
        self.alive: set[int] = set()
        self.dmin = math.inf
        self.dmax = 0.0

    def window(self) -> range:
        if not self.dmax > 0:
            return range(0)
        lo = math.floor(math.log2(self.bottom_factor * self.dmin))
        hi = math.ceil(math.log2(self.top_factor * self.dmax))
        return range(lo, hi + 1)

    def process(self, ev: UpdateEvent) -> None:
        t = len(self.history)
        self.history.append(ev)
        if ev.op == ARRIVE:
            v = ev.point
            if v not in self._seen:
                if self.seen:
                    row = self.D[v, self.seen]
                    pos = row[row > 0]
                    if len(pos) < len(row):
                        raise ValueError(f"point {v} coincides with an earlier point")
                    self.dmin = min(self.dmin, float(pos.min()))
                    self.dmax = max(self.dmax, float(row.max()))
                self.seen.append(v)
                self._seen.add(v)
            self.alive.add(v)
        else:
            self.alive.discard(ev.point)
        for j in self.window():
            if j not in self.levels:
                st = self.make_scale(j)
                for k, old in enumerate(self.history[:-1]):
                    st.step(old, k)
                self.levels[j] = st
        for j in sorted(self.levels):
            self.levels[j].step(ev, t)

    def snapshot(self) -> Snapshot:
        pts = np.array(sorted(self.alive), dtype=np.int64)
        js = sorted(self.levels)
        if len(pts) == 0 or not js:
            return Snapshot(pts, np.zeros(0), np.zeros((0, len(pts)), dtype=np.int64), self.factor)
        labels = np.stack([self.levels[j].labels(pts) for j in js])
        scales = np.array([2.0**j for j in js])
        return Snapshot(pts, scales, labels, self.factor)


def run_embedder(emb, seq: UpdateSequence, M: MetricSpace, audit: bool = True,
                 alpha=None, provenance: dict | None = None, keep: bool = True) -> EmbeddingTrace:
    """Feed every event to emb, collecting snapshots and checking each step when audit is set.

    alpha, if given, maps the 1-based arrival count to the allowed contraction factor.
    """
    auditor = StepAuditor(M) if audit else None
    snaps = []
    arrivals = 0
    for t, ev in enumerate(seq.events):
        emb.process(ev)
        arrivals += ev.op == ARRIVE
        snap = emb.snapshot()
        if alpha is not None:
            snap.info["alpha"] = alpha(arrivals)
        if auditor is not None:
            auditor.check(t, snap, snap.info.get("alpha", 1.0))
        if keep:
            snaps.append(snap)
    return EmbeddingTrace(snaps, provenance or {})


def make_known_n(M: MetricSpace, seq: UpdateSequence, cfg: IncrementalConfig) -> ScaleWindowEmbedder:
    n = cfg.n_known if cfg.n_known is not None else seq.num_arrivals
    if seq.num_arrivals > n:
        raise ValueError(f"sequence has {seq.num_arrivals} arrivals but n_known={n}")
    eps = cfg.resolved_epsilon(n)
    return ScaleWindowEmbedder(M, lambda j: IncrementalScale(j, M, cfg.seed, eps=eps),
                               cfg.top_factor, cfg.bottom_factor)


def make_unknown_n(M: MetricSpace, seq: UpdateSequence, cfg: IncrementalConfig) -> ScaleWindowEmbedder:
    return ScaleWindowEmbedder(M, lambda j: IncrementalScale(j, M, cfg.seed, phased=True),
                               cfg.top_factor, cfg.bottom_factor)


def contraction_allowance(arrivals: int) -> float:
    return 2.0 * phase_of(max(arrivals, 1))


def embed_known_n(seq: UpdateSequence, M: MetricSpace, cfg: IncrementalConfig | None = None,
                  audit: bool = True) -> EmbeddingTrace:
    cfg = cfg or IncrementalConfig()
    emb = make_known_n(M, seq, cfg)
    return run_embedder(emb, seq, M, audit, provenance={"embedder": "incremental", "seed": cfg.seed,
                                                        "n_known": cfg.n_known, "epsilon": cfg.epsilon})


def embed_unknown_n(seq: UpdateSequence, M: MetricSpace, cfg: IncrementalConfig | None = None,
                    audit: bool = True) -> EmbeddingTrace:
    cfg = cfg or IncrementalConfig(unknown_n=True)
    emb = make_unknown_n(M, seq, cfg)
    return run_embedder(emb, seq, M, audit, alpha=contraction_allowance,
                        provenance={"embedder": "unknown-n", "seed": cfg.seed})


def step_scale(state: IncrementalScale, ev: UpdateEvent, t: int) -> None:
    state.step(ev, t)
