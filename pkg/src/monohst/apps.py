"""Request-answer games on top of online embeddings: Double Coverage on trees, exact offline
optima by work functions, the embed-then-serve pipeline, and the guess-and-double wrapper."""
from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ARRIVE, MetricSpace, UpdateEvent, UpdateSequence, build_metric, read_sequence
from .hst import Hst, Snapshot

TOL = 1e-9
MAX_POINTS, MAX_REQUESTS, MAX_K = 12, 20, 4


# -- games and instances ------------------------------------------------------------------------


@dataclass
class RequestAnswerGame:
    """Per-step cost sum over (u, v) of alpha * d(u, v), plus a metric-free beta."""

    alpha: Callable
    beta: Callable = lambda t, r, a: 0.0

    def cost(self, d: Callable[[int, int], float], t: int, r, a) -> float:
        c = self.beta(t, r, a)
        for (u, v), mult in self.alpha(t, r, a).items():
            if mult < 0:
                raise ValueError("negative movement multiplicity")
            c += mult * d(u, v)
        return c

    def total(self, d, requests, answers) -> float:
        return sum(self.cost(d, t, r, a) for t, (r, a) in enumerate(zip(requests, answers)))


def _taxi_alpha(t, r, moves) -> Counter:
    """Answers are lists of (from, pickup, dropoff); only the empty leg is paid."""
    out: Counter = Counter()
    for src, pick, _ in moves:
        if src != pick:
            out[(src, pick)] += 1
    return out


TAXI_GAME = RequestAnswerGame(_taxi_alpha)


@dataclass
class KServerInstance:
    """k servers (or taxis) on a finite metric; requests are (pickup, dropoff), equal for k-server."""

    metric: MetricSpace
    k: int
    initial: tuple[int, ...]
    requests: list[tuple[int, int]]

    def __post_init__(self):
        if self.k < 1 or len(self.initial) != self.k:
            raise ValueError("initial configuration must list exactly k >= 1 points")
        n = len(self.metric)
        pts = list(self.initial) + [p for r in self.requests for p in r]
        if any(not 0 <= p < n for p in pts):
            raise ValueError("instance references a point outside the metric")
        self.initial = tuple(int(p) for p in self.initial)
        self.requests = [(int(x), int(y)) for x, y in self.requests]

    @property
    def is_kserver(self) -> bool:
        return all(x == y for x, y in self.requests)

    def relevant_points(self) -> list[int]:
        """Points in order of first appearance: initial configuration, then requests."""
        seen: dict[int, None] = {}
        for p in list(self.initial) + [p for r in self.requests for p in r]:
            seen.setdefault(p, None)
        return list(seen)

    @classmethod
    def from_json(cls, obj, base: Path | None = None) -> "KServerInstance":
        if isinstance(obj, (str, Path)):
            path = Path(obj)
            return cls.from_json(json.loads(path.read_text()), path.parent)
        ref = obj["metric"]
        if isinstance(ref, str):
            _, M = read_sequence((base or Path(".")) / ref)
        else:
            M = build_metric(ref["kind"], ref["data"], ref.get("p"))
        reqs = [(r["x"], r.get("y", r["x"])) for r in obj["requests"]]
        return cls(M, int(obj["k"]), tuple(obj["initial"]), reqs)

    def to_json(self) -> dict:
        if self.metric.kind == "matrix" or self.metric.coords is None:
            ref = {"kind": "matrix", "data": self.metric.dist.tolist()}
        elif self.metric.kind == "line":
            ref = {"kind": "line", "data": self.metric.coords.tolist()}
        else:
            ref = {"kind": "lp", "data": self.metric.coords.tolist(), "p": str(self.metric.p)}
        return {"metric": ref, "k": self.k, "initial": list(self.initial),
                "requests": [{"x": x, "y": y} for x, y in self.requests]}


def matching_distance(D: np.ndarray, A, B) -> float:
    """Min-cost perfect matching between two equal-size multisets of points."""
    A, B = list(A), list(B)
    if len(A) != len(B):
        raise ValueError("configurations differ in size")
    if not A:
        return 0.0
    cost = D[np.ix_(A, B)]
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].sum())


# -- tree view and online HST algorithms --------------------------------------------------------


class TreeView:
    """Leaf positions of an HST seen as an edge-weighted tree with every leaf at height 0.

    A node of weight phi sits at height phi/2, so the lca of two leaves is at height d_T/2.
    A server position is (leaf, h): the point at height h on that leaf's root path.
    """

    def __init__(self, points, dmat: np.ndarray, heights):
        self.points = [int(p) for p in points]
        self.index = {p: i for i, p in enumerate(self.points)}
        self.half = np.asarray(dmat, dtype=float) / 2
        self.heights = np.unique(np.concatenate([[0.0], np.asarray(heights, dtype=float)]))

    @classmethod
    def from_hst(cls, T: Hst) -> "TreeView":
        pts = sorted(T.leaves)
        return cls(pts, T.distance_matrix(pts), np.array(T.phi) / 2)

    @classmethod
    def from_snapshot(cls, snap: Snapshot) -> "TreeView":
        return cls(snap.points, snap.distances(), np.asarray(snap.scales) * snap.factor / 2)

    def lca_height(self, a: int, b: int) -> float:
        return float(self.half[self.index[a], self.index[b]])

    def dist(self, p, q) -> float:
        (la, ha), (lb, hb) = p, q
        m = self.lca_height(la, lb)
        if max(ha, hb) >= m - TOL * max(m, 1.0):
            return abs(ha - hb)
        return (m - ha) + (m - hb)

    def leaf_distance(self, a: int, b: int) -> float:
        return 2 * self.lca_height(a, b)

    def next_up(self, h: float) -> float:
        i = np.searchsorted(self.heights, h * (1 + TOL) + TOL, side="right")
        return float(self.heights[i]) if i < len(self.heights) else math.inf

    def next_down(self, h: float) -> float:
        i = np.searchsorted(self.heights, h * (1 - TOL) - TOL, side="left") - 1
        return float(self.heights[i]) if i >= 0 else 0.0


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= TOL * max(abs(a), abs(b), 1.0)


class DoubleCoverage:
    """Double Coverage for k servers on a tree.

    All servers with no other server on their path to the request move toward it at unit
    speed until one arrives; co-located servers yield to the lowest index.
    """

    def __init__(self, initial):
        self.pos = [(int(p), 0.0) for p in initial]

    @property
    def k(self) -> int:
        return len(self.pos)

    def _on_path(self, view: TreeView, i: int, j: int, r: int, mj: float) -> bool:
        """Whether server i lies on server j's path: up j's leaf path to height mj, then down to r."""
        (li, hi), (lj, hj) = self.pos[i], self.pos[j]
        if _close(hi, hj) and view.lca_height(li, lj) <= hi + TOL:
            return i < j
        if hj - TOL <= hi <= mj + TOL and view.lca_height(li, lj) <= hi + TOL:
            return True
        return hi <= max(hj, mj) + TOL and view.lca_height(li, r) <= hi + TOL

    def serve(self, view: TreeView, request) -> tuple[float, list[tuple[int, int, int]]]:
        r = request[0] if isinstance(request, tuple) else int(request)
        if r not in view.index:
            raise KeyError(f"request at unknown leaf {r}")
        cost = 0.0
        for _ in range(100000):
            for i, (l, h) in enumerate(self.pos):
                if _close(h, 0.0) and (l == r or view.lca_height(l, r) <= TOL):
                    self.pos[i] = (r, 0.0)
                    return cost, [(i, r, r)]
            m = [view.lca_height(l, r) for l, _ in self.pos]
            free = [j for j in range(self.k)
                    if not any(self._on_path(view, i, j, r, m[j]) for i in range(self.k) if i != j)]
            steps = []
            for j in free:
                h = self.pos[j][1]
                target = min(view.next_up(h), m[j]) if h < m[j] - TOL else view.next_down(h)
                steps.append(abs(target - h))
            delta = min(steps)
            for j in free:
                l, h = self.pos[j]
                if h < m[j] - TOL:
                    h = min(h + delta, m[j])
                    if _close(h, m[j]):
                        l, h = r, m[j]
                else:
                    l, h = r, max(h - delta, 0.0)
                self.pos[j] = (l, _snap(view, h))
            cost += delta * len(free)
        raise RuntimeError("double coverage did not converge")

    def config(self) -> list[tuple[int, float]]:
        return list(self.pos)


def _snap(view: TreeView, h: float) -> float:
    i = int(np.argmin(np.abs(view.heights - h)))
    return float(view.heights[i]) if _close(view.heights[i], h) else h


class GreedyTaxi:
    """Baseline: the nearest taxi (lowest index on ties) picks up and drops off."""

    def __init__(self, initial):
        self.pos = [int(p) for p in initial]

    def serve(self, view: TreeView, request) -> tuple[float, list[tuple[int, int, int]]]:
        x, y = request if isinstance(request, tuple) else (int(request), int(request))
        i = min(range(len(self.pos)), key=lambda k: (view.leaf_distance(self.pos[k], x), k))
        cost = view.leaf_distance(self.pos[i], x)
        self.pos[i] = y
        return cost, [(i, x, y)]

    def config(self) -> list[tuple[int, float]]:
        return [(p, 0.0) for p in self.pos]


ALGORITHMS = {"dc": DoubleCoverage, "greedy-taxi": GreedyTaxi}


def dc_kserver(T: Hst, k: int, requests, initial=None) -> tuple[list[list[tuple[int, float]]], float]:
    """Serve leaf requests with Double Coverage on T; returns per-request configurations and cost."""
    view = TreeView.from_hst(T)
    if initial is None:
        initial = [view.points[i % len(view.points)] for i in range(k)]
    if len(initial) != k:
        raise ValueError("initial configuration must have k servers")
    dc = DoubleCoverage(initial)
    answers, total = [], 0.0
    for r in requests:
        c, _ = dc.serve(view, int(r))
        total += c
        answers.append(dc.config())
    return answers, total


def dc_potential(D: np.ndarray, servers, opt_servers, k: int) -> float:
    """k times the min matching to the optimal configuration plus all pairwise server distances."""
    s = list(servers)
    pair = sum(D[s[a], s[b]] for a in range(len(s)) for b in range(a + 1, len(s)))
    return k * matching_distance(D, s, opt_servers) + pair


# -- offline optimum by work functions ----------------------------------------------------------


class WorkFunction:
    """Exact work functions over multiset configurations of the instance's relevant points."""

    def __init__(self, inst: KServerInstance, D: np.ndarray | None = None):
        D = inst.metric.dist if D is None else D
        pts = inst.relevant_points()
        if len(pts) > MAX_POINTS or len(inst.requests) > MAX_REQUESTS or inst.k > MAX_K:
            raise ValueError(f"instance exceeds exact limits ({MAX_POINTS} points, {MAX_REQUESTS} requests, k={MAX_K})")
        self.inst = inst
        self.D = D
        self.points = pts
        self.configs = list(itertools.combinations_with_replacement(pts, inst.k))
        self.index = {c: i for i, c in enumerate(self.configs)}
        self.values = [np.array([matching_distance(D, inst.initial, c) for c in self.configs])]
        self._pairwise = None

    def _key(self, items) -> tuple:
        return tuple(sorted(items, key=self.points.index))

    def advance(self) -> np.ndarray:
        t = len(self.values)
        x_t, y_t = self.inst.requests[t - 1]
        prev = self.values[-1]
        cur = np.empty(len(self.configs))
        for i, X in enumerate(self.configs):
            best = math.inf
            for a in set(X):
                rest = list(X)
                rest.remove(a)
                before = self.index[self._key(rest + [x_t])]
                best = min(best, prev[before] + self.D[y_t, a])
            cur[i] = best
        self.values.append(cur)
        return cur

    def at(self, t: int) -> np.ndarray:
        while len(self.values) <= t:
            self.advance()
        return self.values[t]

    def opt(self, t: int | None = None) -> float:
        t = len(self.inst.requests) if t is None else t
        return float(self.at(t).min())

    def pairwise(self) -> np.ndarray:
        """Matching distance between every two configurations."""
        if self._pairwise is None:
            C = np.array([[self.points.index(p) for p in c] for c in self.configs])
            sub = self.D[np.ix_(self.points, self.points)]
            best = np.full((len(C), len(C)), math.inf)
            for perm in itertools.permutations(range(self.inst.k)):
                tot = np.zeros((len(C), len(C)))
                for a, b in enumerate(perm):
                    tot += sub[C[:, a][:, None], C[:, b][None, :]]
                best = np.minimum(best, tot)
            self._pairwise = best
        return self._pairwise

    def support(self, t: int) -> list[tuple[int, ...]]:
        w = self.at(t)
        P = self.pairwise()
        dominated = np.isclose(w[:, None], w[None, :] + P.T, rtol=0, atol=TOL * max(1.0, float(w.max())))
        np.fill_diagonal(dominated, False)
        return [self.configs[i] for i in range(len(self.configs)) if not dominated[i].any()]


def offline_opt(inst: KServerInstance, D: np.ndarray | None = None) -> float:
    return WorkFunction(inst, D).opt()


def work_function_support(inst: KServerInstance, t: int, D: np.ndarray | None = None) -> set[int]:
    return {p for c in WorkFunction(inst, D).support(t) for p in c}


def work_function_width(inst: KServerInstance, D: np.ndarray | None = None) -> int:
    wf = WorkFunction(inst, D)
    return max(len({p for c in wf.support(t) for p in c}) for t in range(len(inst.requests) + 1))


def greedy_cost(inst: KServerInstance, D: np.ndarray | None = None) -> float:
    D = inst.metric.dist if D is None else D
    pos = list(inst.initial)
    total = 0.0
    for x, y in inst.requests:
        i = min(range(len(pos)), key=lambda k: (D[pos[k], x], k))
        total += D[pos[i], x]
        pos[i] = y
    return float(total)


# -- pipeline -----------------------------------------------------------------------------------


class _IdentityEmbedder:
    """Uses the source metric itself, which must already be an ultrametric."""

    def __init__(self, M: MetricSpace):
        from .deterministic import single_linkage

        if not np.allclose(single_linkage(M.dist), M.dist, rtol=1e-12, atol=0):
            raise ValueError("identity embedding needs an ultrametric source")
        self.M = M
        self.alive: list[int] = []

    def process(self, ev: UpdateEvent) -> None:
        self.alive.append(ev.point)

    def snapshot(self) -> Snapshot:
        from .deterministic import _ultrametric_snapshot

        pts = sorted(self.alive)
        return _ultrametric_snapshot(pts, self.M.dist[np.ix_(pts, pts)], 1.0)


@dataclass
class PipelineResult:
    source_cost: float
    target_cost: float
    movement_cost: float
    steps: list[dict] = field(default_factory=list)
    config: list[int] = field(default_factory=list)


class Pipeline:
    """Embed the instance's points online, run an HST algorithm on the current tree, and move
    physical servers lazily: a server is relocated in the source metric only when its tree
    copy reaches a request."""

    def __init__(self, inst: KServerInstance, embedder: str = "incremental", seed: int = 0,
                 cfg: dict | None = None, algorithm: str = "dc", check: bool = True):
        from .harness import make_embedder

        self.inst = inst
        self.order = inst.relevant_points()
        self.local = {p: i for i, p in enumerate(self.order)}
        M = inst.metric
        coords = None if M.coords is None else M.coords[self.order]
        self.sub = MetricSpace(M.dist[np.ix_(self.order, self.order)], M.kind, coords, M.p)
        seq = UpdateSequence.arrivals(range(len(self.order)))
        if embedder == "identity":
            self.emb, alpha = _IdentityEmbedder(self.sub), None
        else:
            self.emb, alpha = make_embedder(embedder, self.sub, seq, seed, cfg)
        self.check = check and alpha is None
        self.arrived = 0
        self._arrive_upto(set(self.local[p] for p in inst.initial))
        self.algo = ALGORITHMS[algorithm]([self.local[p] for p in inst.initial])
        self.physical = list(inst.initial)
        self.t = 0
        self.source_cost = 0.0
        self.target_cost = 0.0
        self.movement_cost = 0.0
        self.steps: list[dict] = []

    def _arrive_upto(self, needed: set[int]) -> None:
        while self.arrived <= max(needed):
            self.emb.process(UpdateEvent(self.arrived, ARRIVE))
            self.arrived += 1

    def view(self) -> TreeView:
        return TreeView.from_snapshot(self.emb.snapshot())

    def step(self) -> dict:
        """Serve the next request.

        target is the cost the same leaf-to-leaf moves would pay in the current tree, so
        source <= target holds per step by non-contraction; movement is the algorithm's own
        tree movement, which may park servers at internal points.
        """
        x, y = self.inst.requests[self.t]
        self._arrive_upto({self.local[x], self.local[y]})
        view = self.view()
        movement, moved = self.algo.serve(view, (self.local[x], self.local[y]))
        answer = [(self.physical[i], self.order[pick], self.order[drop]) for i, pick, drop in moved]
        src = TAXI_GAME.cost(self.inst.metric.d, self.t, (x, y), answer)
        local = [(self.local[a], pick, drop) for (a, _, _), (_, pick, drop) in zip(answer, moved)]
        tgt = TAXI_GAME.cost(view.leaf_distance, self.t, (self.local[x], self.local[y]), local)
        for i, _, drop in moved:
            self.physical[i] = self.order[drop]
        self.source_cost += src
        self.target_cost += tgt
        self.movement_cost += movement
        if self.check and src > tgt * (1 + TOL) + TOL:
            raise AssertionError(f"step {self.t}: source cost {src} exceeds tree cost {tgt}")
        row = {"t": self.t, "request": [x, y], "target": tgt, "source": src, "movement": movement,
               "cum_target": self.target_cost, "cum_source": self.source_cost}
        self.steps.append(row)
        self.t += 1
        return row

    def run(self, upto: int | None = None) -> PipelineResult:
        upto = len(self.inst.requests) if upto is None else upto
        while self.t < upto:
            self.step()
        return PipelineResult(self.source_cost, self.target_cost, self.movement_cost, list(self.steps),
                              list(self.physical))


def pipeline(inst: KServerInstance, embedder: str = "incremental", seed: int = 0, cfg: dict | None = None,
             algorithm: str = "dc") -> PipelineResult:
    return Pipeline(inst, embedder, seed, cfg, algorithm).run()


# -- guess and double ---------------------------------------------------------------------------


@dataclass
class Phase:
    index: int
    zeta: float
    m: int
    start: int
    end: int | None = None
    cost: float = 0.0
    transition: float = 0.0
    trigger: float | None = None


@dataclass
class GuessDoubleResult:
    cost: float
    phases: list[Phase]

    def telescoping_holds(self) -> bool:
        return self.cost <= 4 * self.phases[-1].zeta * (1 + TOL)

    def accounting_holds(self) -> bool:
        return self.cost <= 2 * sum(p.cost for p in self.phases) * (1 + TOL) + TOL


def default_factory(inst: KServerInstance, embedder: str = "incremental", seed: int = 0, algorithm: str = "dc"):
    """Phase pipelines with the merge threshold set from the phase's point-count guess m."""
    from .core import derive_seed

    def make(m: int, phase: int) -> Pipeline:
        cfg = {"epsilon": float(max(m, 2)) ** -6} if embedder == "incremental" else None
        return Pipeline(inst, embedder, derive_seed(seed, phase), cfg, algorithm)

    return make


def guess_and_double(inst: KServerInstance, factory=None, kappa: float = 1.0,
                     opt: Callable[[int], float] | None = None) -> GuessDoubleResult:
    """Restart the pipeline whenever zeta < kappa * log2(2t)**2 * opt_t, doubling zeta and setting m = (2t)**2.

    The restarted pipeline replays the prefix; the physical servers pay the matching distance
    to its configuration.
    """
    factory = factory or default_factory(inst)
    if opt is None:
        opt = WorkFunction(inst).opt
    D = inst.metric.dist
    pts = inst.relevant_points()
    sub = D[np.ix_(pts, pts)]
    zeta = float(sub[sub > 0].min()) if np.any(sub > 0) else 1.0
    phases = [Phase(1, zeta, 2, 0)]
    alg = factory(2, 1)
    total = 0.0
    for t in range(1, len(inst.requests) + 1):
        total += alg.step()["source"]
        o = opt(t)
        while phases[-1].zeta < kappa * math.log2(2 * t) ** 2 * o:
            cur = phases[-1]
            cur.end, cur.cost, cur.trigger = t, alg.source_cost, kappa * math.log2(2 * t) ** 2 * o
            nxt = Phase(cur.index + 1, 2 * cur.zeta, (2 * t) ** 2, t)
            new = factory(nxt.m, nxt.index)
            new.run(t)
            nxt.transition = matching_distance(D, alg.physical, new.physical)
            total += nxt.transition
            alg = new
            phases.append(nxt)
    phases[-1].end = len(inst.requests)
    phases[-1].cost = alg.source_cost
    for a in phases[:-1]:
        assert a.zeta < a.trigger, f"phase {a.index} ended without its trigger"
    return GuessDoubleResult(total, phases)
