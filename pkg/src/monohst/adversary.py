"""Lower-bound instance generators: three fixed sequences on the line and one adaptive adversary."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ARRIVE, DEPART, MetricSpace, UpdateEvent, UpdateSequence, build_metric

TOL = 1e-12


class StrictnessViolation(AssertionError):
    """An embedder under the strict protocol changed a distance it had already reported."""

    def __init__(self, step: int, pair: tuple[int, int], before: float, after: float):
        super().__init__(f"arrival {step}: distance of {pair} changed from {before} to {after}")
        self.step = step
        self.pair = pair
        self.before = before
        self.after = after


@dataclass
class AdversaryRun:
    seq: UpdateSequence
    metric: MetricSpace
    witness: tuple[int, int]
    expansion: float
    tracked: list[tuple[int, int, float]] = field(default_factory=list)


class _LinePoints:
    def __init__(self):
        self.x: list[float] = []

    def add(self, c: float) -> int:
        self.x.append(c)
        return len(self.x) - 1

    def dist(self, a: int, b: int) -> float:
        return abs(self.x[a] - self.x[b])


def strict_det_adversary(make_embedder: Callable, n: int) -> AdversaryRun:
    """Adaptive median insertion against a strict deterministic embedder.

    make_embedder(dist) must return an object with insert(id), depart(id) and distance(a, b).
    After each arrival every alive distance is queried; a change of an earlier answer raises
    StrictnessViolation. The tracked pair (u, v) always satisfies d(u, v) = 2**(2-i) and
    d_T(u, v) >= d_T(v_1, v_2).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    pts = _LinePoints()
    emb = make_embedder(pts.dist)
    events: list[UpdateEvent] = []
    answers: dict[tuple[int, int], float] = {}
    alive: list[int] = []

    def arrive(c: float, step: int) -> int:
        p = pts.add(c)
        emb.insert(p)
        alive.append(p)
        events.append(UpdateEvent(p, ARRIVE))
        for a in alive:
            for b in alive:
                if a < b:
                    d = float(emb.distance(a, b))
                    if (a, b) in answers and abs(answers[(a, b)] - d) > TOL * max(1.0, d):
                        raise StrictnessViolation(step, (a, b), answers[(a, b)], d)
                    answers[(a, b)] = d
        return p

    def depart(p: int) -> None:
        emb.depart(p)
        alive.remove(p)
        events.append(UpdateEvent(p, DEPART))

    u, v = arrive(0.0, 1), arrive(1.0, 2)
    base = answers[(0, 1)]
    tracked = [(u, v, base)]
    for i in range(3, n + 1):
        x = arrive((pts.x[u] + pts.x[v]) / 2, i)
        if answers[(min(x, u), max(x, u))] >= answers[(min(x, v), max(x, v))]:
            drop, u, v = v, x, u
        else:
            drop, u, v = u, x, v
        depart(drop)
        tracked.append((u, v, answers[(min(u, v), max(u, v))]))
    seq = UpdateSequence(events)
    M = build_metric("line", np.array(pts.x))
    d_t = answers[(min(u, v), max(u, v))]
    return AdversaryRun(seq, M, (u, v), d_t / M.d(u, v), tracked)


@dataclass
class RandomWalkInstance:
    seq: UpdateSequence
    metric: MetricSpace
    coords: list[float]
    bits: list[int]
    evaluation: list[tuple[int, int, int]]  # (v_i, y_i, t_i) with t_i the event index placing v_i


def strict_rand_sequence(n: int, seed: int = 0) -> RandomWalkInstance:
    """Random halving walk of width 3: v_{i+1} = v_i + b_i * 2**-(i-1) with fair signs b_i.

    The printed recurrence is circular; this reading is the one under which the neighbours
    v_i -/+ 2**-(i-2) are exactly the previously placed points, which is asserted.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    rng = np.random.default_rng(seed)
    coords = [0.0, 1.0, 0.5]
    events = [UpdateEvent(0, ARRIVE), UpdateEvent(1, ARRIVE), UpdateEvent(2, ARRIVE)]
    alive = {0, 1, 2}
    bits: list[int] = []
    evaluation = []
    for i in range(3, n + 1):
        vi = i - 1
        if i > 3:
            coords.append(coords[vi - 1] + bits[-1] * 2.0 ** -(i - 2))
            events.append(UpdateEvent(vi, ARRIVE))
            alive.add(vi)
        gap = 2.0 ** -(i - 2)
        near = sorted(p for p in alive if p != vi)
        want = sorted([coords[vi] - gap, coords[vi] + gap])
        assert sorted(coords[p] for p in near) == want, f"neighbour invariant broken at i={i}"
        placed = [c for c in coords if want[0] - TOL <= c <= want[1] + TOL]
        assert len(placed) == 3, f"extra point inside [l_i, r_i] at i={i}"
        b = 1 if rng.random() < 0.5 else -1
        y = next(p for p in near if abs(coords[p] - (coords[vi] + b * gap)) < TOL)
        if i < n:
            evaluation.append((vi, y, len(events) - 1))
            bits.append(b)
            other = next(p for p in near if p != y)
            events.append(UpdateEvent(other, DEPART))
            alive.discard(other)
    seq = UpdateSequence(events)
    return RandomWalkInstance(seq, build_metric("line", np.array(coords)), coords, bits, evaluation)


def monotone_det_dynamic_sequence(n: int) -> tuple[UpdateSequence, MetricSpace]:
    """Points at 0, 1, 2; then while alive is {0, x, x+1}, x departs and x+2 arrives, up to n."""
    if n < 3:
        raise ValueError("n must be at least 3")
    events = [UpdateEvent(c, ARRIVE) for c in (0, 1, 2)]
    for x in range(1, n - 1):
        events.append(UpdateEvent(x, DEPART))
        events.append(UpdateEvent(x + 2, ARRIVE))
    return UpdateSequence(events), build_metric("line", np.arange(n + 1, dtype=float))


def encompassing_points(x: int, l: int) -> set[int]:
    out = set()
    for j in range(l + 1):
        b = (x >> j) << j
        out.update((b, b + (1 << j)))
    return out


@dataclass
class EncompassingInstance:
    seq: UpdateSequence
    metric: MetricSpace
    coords: list[int]
    triples: list[tuple[int, int, int]]  # (id of x, id of x+1, snapshot index)
    alive_sets: list[set[int]]


def encompassing_sequence(l: int, seed: int = 0) -> EncompassingInstance:
    """Two adjacent points sweep 0..2**l while the alive set is kept equal to E(x).

    Transitions emit departures first, then arrivals, each in ascending coordinate. The
    evaluation triples are (x, x+1, t) with t the snapshot where x+1 first iterates. The
    sequence is fixed; seed is accepted for interface uniformity.
    """
    if l < 2:
        raise ValueError("l must be at least 2")
    m = 1 << l
    ids: dict[int, int] = {}
    coords: list[int] = []
    events: list[UpdateEvent] = []
    alive: set[int] = set()
    triples = []
    alive_sets = []
    for x in range(m):
        target = encompassing_points(x, l)
        assert {x, x + 1} <= target
        for c in sorted(alive - target):
            events.append(UpdateEvent(ids[c], DEPART))
        for c in sorted(target - alive):
            if c not in ids:
                ids[c] = len(coords)
                coords.append(c)
            events.append(UpdateEvent(ids[c], ARRIVE))
        alive = target
        alive_sets.append(set(alive))
        triples.append((ids[x], ids[x + 1], len(events) - 1))
    seq = UpdateSequence(events)
    assert seq.width <= 2 * l + 4
    return EncompassingInstance(seq, build_metric("line", np.array(coords, dtype=float)), coords, triples,
                                alive_sets)


def max_adjacent_expansion(trace, M: MetricSpace) -> float:
    """Largest d_t/d over alive pairs at unit distance, across all snapshots."""
    best = 0.0
    for snap in trace.snapshots:
        if len(snap.points) < 2:
            continue
        d = snap.distances()
        dx = M.dist[np.ix_(snap.points, snap.points)]
        unit = np.isclose(dx, 1.0)
        if unit.any():
            best = max(best, float(np.max(d[unit] / dx[unit])))
    return best

