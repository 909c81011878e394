"""Fully dynamic embedding: merges guarded by a diameter rule and retried after departures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .components import ScaleState
from .core import ARRIVE, MetricSpace, UpdateEvent, UpdateSequence
from .hst import EmbeddingTrace
from .incremental import ScaleWindowEmbedder, run_embedder


@dataclass
class DynamicConfig:
    seed: int = 0
    trigger: float = 1 / 6
    safety: float = 1.0
    top_factor: float = 32.0
    bottom_factor: float = 0.5

    def __post_init__(self):
        if not 0 < self.trigger <= 0.25:
            raise ValueError("merge trigger ratio must lie in (0, 1/4]")


class DynamicScale(ScaleState):
    """One scale of the dynamic partition.

    Two groups may merge only if every pair of their components c1, c2 satisfies
    r1 + r2 + d(c1, c2) <= safety * s, which bounds the diameter of anything the merged
    group can ever contain.
    """

    def __init__(self, j, M, seed, trigger=1 / 6, safety=1.0, dist=None):
        super().__init__(j, M, seed, dist)
        self.trigger = trigger
        self.limit = safety * self.s
        self.alive: set[int] = set()
        self.blocked = 0

    def step(self, ev: UpdateEvent, t: int) -> None:
        v = ev.point
        if ev.op == ARRIVE:
            self.alive.add(v)
            self._arrive_component(v, t)
            alive = np.array(sorted(self.alive))
            near = alive[(self.D[v, alive] <= self.trigger * self.s) & (self.plab[alive] != self.plab[v])]
            for u in near.tolist():
                if self.plab[u] != self.plab[v]:
                    self.try_merge(int(self.comp_of[u]), int(self.comp_of[v]))
        else:
            self.alive.discard(v)
            self._depart_component(v)
            self.recheck()

    def _arrive_component(self, v: int, t: int) -> None:
        self.add_component(v, t)
        self.assign(v)

    def _depart_component(self, v: int) -> None:
        self.depart(v)

    def _cross_ok(self, A: np.ndarray, B: np.ndarray) -> bool:
        span = self.radii[A][:, None] + self.radii[B][None, :] + self.D[np.ix_(self.centers[A], self.centers[B])]
        return bool(np.all(span <= self.limit))

    def try_merge(self, a: int, b: int) -> bool:
        if self.same_group(a, b):
            return False
        if not self._cross_ok(self.group_members(a), self.group_members(b)):
            self.blocked += 1
            return False
        return self.merge_groups(a, b)

    def close_split_pairs(self) -> list[tuple[int, int]]:
        alive = np.array(sorted(self.alive))
        if len(alive) < 2:
            return []
        close = self.D[np.ix_(alive, alive)] <= self.trigger * self.s
        split = self.plab[alive][:, None] != self.plab[alive][None, :]
        idx = np.argwhere(np.triu(close & split, 1))
        return [(int(alive[i]), int(alive[k])) for i, k in idx]

    def recheck(self) -> None:
        progress = True
        while progress:
            progress = False
            for u, w in self.close_split_pairs():
                if self.plab[u] != self.plab[w]:
                    progress |= self.try_merge(int(self.comp_of[u]), int(self.comp_of[w]))


def zero_smooth_check(state, alive, quiet_low: float) -> bool | None:
    """None if some alive pair lies in [quiet_low * s, s]; otherwise whether every pair within s shares a cluster."""
    alive = np.array(sorted(alive))
    if len(alive) < 2:
        return True
    d = state.D[np.ix_(alive, alive)]
    iu = np.triu_indices(len(alive), 1)
    dd = d[iu]
    if np.any((dd >= quiet_low * state.s) & (dd <= state.s)):
        return None
    lab = state.labels(alive)
    close = dd <= state.s
    return bool(np.all(lab[iu[0]][close] == lab[iu[1]][close]))


def make_dynamic(M: MetricSpace, cfg: DynamicConfig) -> ScaleWindowEmbedder:
    return ScaleWindowEmbedder(M, lambda j: DynamicScale(j, M, cfg.seed, cfg.trigger, cfg.safety),
                               cfg.top_factor, cfg.bottom_factor)


def step_dynamic_scale(state: DynamicScale, ev: UpdateEvent, t: int) -> None:
    state.step(ev, t)


def embed_dynamic(seq: UpdateSequence, M: MetricSpace, cfg: DynamicConfig | None = None,
                  audit: bool = True) -> EmbeddingTrace:
    cfg = cfg or DynamicConfig()
    return run_embedder(make_dynamic(M, cfg), seq, M, audit,
                        provenance={"embedder": "dynamic", "seed": cfg.seed, "trigger": cfg.trigger})
