"""Node-weighted HSTs, partition stacks and the induced-HST construction."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components


class Hst:
    """Rooted tree with node weights; the distance of two leaves is the weight of their lca."""

    def __init__(self, phi, parent, leaves: dict[int, int], mu: float = 1.0):
        self.phi = [float(x) for x in phi]
        self.parent = list(parent)
        self.leaves = dict(leaves)
        self.mu = mu

    def __len__(self) -> int:
        return len(self.phi)

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    def children(self) -> list[list[int]]:
        ch: list[list[int]] = [[] for _ in self.phi]
        for v, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(v)
        return ch

    def ancestors(self, node: int) -> list[int]:
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(self.parent[out[-1]])
        return out

    def lca(self, a: int, b: int) -> int:
        anc = set(self.ancestors(a))
        while b not in anc:
            b = self.parent[b]
        return b

    def distance(self, u: int, w: int) -> float:
        if u not in self.leaves or w not in self.leaves:
            raise KeyError(f"point {u if u not in self.leaves else w} is not a leaf of this tree")
        if u == w:
            return 0.0
        return self.phi[self.lca(self.leaves[u], self.leaves[w])]

    def distance_matrix(self, points) -> np.ndarray:
        points = list(points)
        m = np.zeros((len(points), len(points)))
        for i, u in enumerate(points):
            for k in range(i + 1, len(points)):
                m[i, k] = m[k, i] = self.distance(u, points[k])
        return m

    def edge_weight(self, v: int) -> float:
        """Edge to the parent in the tree view where leaf-to-leaf path length equals phi(lca)."""
        p = self.parent[v]
        return 0.0 if p < 0 else (self.phi[p] - self.phi[v]) / 2

    def scaled(self, factor: float) -> "Hst":
        return Hst([x * factor for x in self.phi], self.parent, self.leaves, self.mu)

    def to_json(self) -> dict:
        return {
            "mu": self.mu,
            "nodes": [{"id": i, "phi": f, "parent": p} for i, (f, p) in enumerate(zip(self.phi, self.parent))],
            "leaves": {str(k): v for k, v in sorted(self.leaves.items())},
        }

    @classmethod
    def from_json(cls, obj) -> "Hst":
        if isinstance(obj, str):
            obj = json.loads(obj)
        nodes = sorted(obj["nodes"], key=lambda n: n["id"])
        return cls(
            [n["phi"] for n in nodes],
            [n["parent"] for n in nodes],
            {int(k): int(v) for k, v in obj["leaves"].items()},
            obj.get("mu", 1.0),
        )


def hst_distance(T: Hst, u: int, w: int) -> float:
    return T.distance(u, w)


def validate_hst(T: Hst, samples: int = 1000, seed: int = 0, tol: float = 1e-9) -> list[str]:
    problems = []
    leaf_nodes = set(T.leaves.values())
    ch = T.children()
    roots = [v for v, p in enumerate(T.parent) if p < 0]
    if len(roots) != 1:
        problems.append(f"expected one root, found {len(roots)}")
    for v, phi in enumerate(T.phi):
        is_leaf = not ch[v]
        if is_leaf and phi != 0:
            problems.append(f"leaf node {v} has weight {phi}")
        if not is_leaf and phi <= 0:
            problems.append(f"internal node {v} has weight {phi}")
        if is_leaf and v not in leaf_nodes:
            problems.append(f"leaf node {v} carries no point")
        p = T.parent[v]
        if p >= 0 and phi > T.phi[p] / T.mu * (1 + tol):
            problems.append(f"node {v} weight {phi} exceeds parent {p} weight {T.phi[p]} / mu={T.mu}")
    if len(set(T.leaves.values())) != len(T.leaves):
        problems.append("two points share a leaf")
    pts = sorted(T.leaves)
    if len(pts) >= 3:
        rng = np.random.default_rng(seed)
        for a, b, c in rng.integers(0, len(pts), size=(samples, 3)):
            u, v, w = pts[a], pts[b], pts[c]
            if T.distance(u, w) > max(T.distance(u, v), T.distance(v, w)) * (1 + tol):
                problems.append(f"ultrametric violated on ({u},{v},{w})")
                break
    return problems


@dataclass
class PartitionStack:
    """Partitions of one point set at increasing scales; labels[k, i] is the cluster of points[i]."""

    points: np.ndarray
    scales: np.ndarray
    labels: np.ndarray
    levels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=int)
        self.scales = np.asarray(self.scales, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(len(self.scales), len(self.points))
        if np.any(np.diff(self.scales) <= 0):
            raise ValueError("scales must be strictly increasing")

    @classmethod
    def from_clusters(cls, points, levels, scales=None) -> "PartitionStack":
        """levels: iterable of (j, clusters); level j has scale 2**j unless scales[j] is given."""
        points = list(points)
        index = {p: i for i, p in enumerate(points)}
        items = sorted(levels, key=lambda x: x[0])
        labels = []
        for _, clusters in items:
            lab = np.full(len(points), -1, dtype=np.int64)
            for c, cl in enumerate(clusters):
                for p in cl:
                    if p not in index:
                        raise ValueError(f"point {p} not in stack domain")
                    if lab[index[p]] >= 0:
                        raise ValueError(f"point {p} appears in two clusters")
                    lab[index[p]] = c
            if np.any(lab < 0):
                raise ValueError("level does not partition the point set")
            labels.append(lab)
        js = [x[0] for x in items]
        scales = [2.0 ** j if scales is None else scales[j] for j in js]
        return cls(points, scales, np.array(labels).reshape(len(items), len(points)), np.array(js))

    def clusters(self, k: int) -> list[frozenset]:
        out: dict[int, set] = {}
        for p, lab in zip(self.points.tolist(), self.labels[k].tolist()):
            out.setdefault(lab, set()).add(p)
        return sorted((frozenset(c) for c in out.values()), key=min)

    def is_nested(self) -> bool:
        for k in range(len(self.scales) - 1):
            pairs = set(zip(self.labels[k].tolist(), self.labels[k + 1].tolist()))
            if len({a for a, _ in pairs}) != len(pairs):
                return False
        return True


def refine(stack: PartitionStack) -> PartitionStack:
    """Replace every level by its common refinement with all levels above it."""
    S, m = stack.labels.shape
    out = np.empty_like(stack.labels)
    if S == 0:
        return PartitionStack(stack.points, stack.scales, out, stack.levels)
    out[S - 1] = _compact(stack.labels[S - 1])
    for k in range(S - 2, -1, -1):
        pair = np.stack([out[k + 1], stack.labels[k]], axis=1)
        _, inv = np.unique(pair, axis=0, return_inverse=True)
        out[k] = inv.reshape(-1)
    return PartitionStack(stack.points, stack.scales, out, stack.levels)


def _compact(lab: np.ndarray) -> np.ndarray:
    return np.unique(lab, return_inverse=True)[1].reshape(-1)


def stack_distances(stack: PartitionStack, factor: float = 1.0) -> np.ndarray:
    """Smallest scale at which each pair shares a cluster at that level and every level above.

    A pair never separated inside the stack gets the lowest scale. The top level must be a
    single cluster.
    """
    S, m = stack.labels.shape
    if m <= 1:
        return np.zeros((m, m))
    if S == 0:
        raise ValueError("empty stack for more than one point")
    lab = stack.labels
    if np.any(lab[S - 1] != lab[S - 1, 0]):
        raise ValueError("top level is not a single cluster")
    neq = lab[::-1, :, None] != lab[::-1, None, :]
    first = neq.argmax(axis=0)
    sep = neq.any(axis=0)
    highest = np.where(sep, S - 1 - first, -1)
    d = stack.scales[highest + 1] * factor
    np.fill_diagonal(d, 0.0)
    return d


def induced_hst(stack: PartitionStack, mu: float | None = None) -> Hst:
    """One node per cluster per level from the highest all-singleton level up to the top."""
    ref = refine(stack)
    S, m = ref.labels.shape
    singleton = [len(np.unique(ref.labels[k])) == m for k in range(S)]
    if not any(singleton):
        raise ValueError("no all-singleton level in stack")
    Y = max(k for k in range(S) if singleton[k])
    if m > 0 and len(np.unique(ref.labels[S - 1])) != 1:
        raise ValueError("top level is not a single cluster")
    if not ref.is_nested():
        raise ValueError("stack is not nested")
    phi: list[float] = []
    parent: list[int] = []
    node_of: dict[tuple[int, int], int] = {}
    top = S - 1 if m > 1 else Y
    for k in range(top, Y - 1, -1):
        for i in range(m):
            key = (k, int(ref.labels[k, i]))
            if key in node_of:
                continue
            node_of[key] = len(phi)
            phi.append(0.0 if k == Y else float(ref.scales[k]))
            parent.append(-1 if k == top else node_of[(k + 1, int(ref.labels[k + 1, i]))])
    leaves = {int(p): node_of[(Y, int(ref.labels[Y, i]))] for i, p in enumerate(ref.points)}
    if mu is None:
        ratios = ref.scales[1:] / ref.scales[:-1]
        mu = float(ratios.min()) if len(ratios) else 1.0
    return Hst(phi, parent, leaves, mu)


def with_floor(stack: PartitionStack) -> PartitionStack:
    """Prepend an all-singleton level one halving below the lowest scale."""
    m = len(stack.points)
    lowest = stack.scales[0] / 2 if len(stack.scales) else 1.0
    labels = np.vstack([np.arange(m, dtype=np.int64)[None, :], stack.labels])
    levels = None if stack.levels is None else np.concatenate([[stack.levels[0] - 1], stack.levels])
    return PartitionStack(stack.points, np.concatenate([[lowest], stack.scales]), labels, levels)


def stack_from_ultrametric(points, D: np.ndarray) -> PartitionStack:
    """Threshold an ultrametric distance matrix at each of its distinct positive values."""
    points = np.asarray(points, dtype=int)
    vals = np.unique(D[D > 0])
    labels = [_components(D <= s) for s in vals]
    return PartitionStack(points, vals, np.array(labels).reshape(len(vals), len(points)))


def _components(adj: np.ndarray) -> np.ndarray:
    return connected_components(adj, directed=False)[1]


def band_level_counts(d: float, eps: float) -> dict[str, int]:
    """Level counts of the log(1/eps) band for a pair at distance d.

    proof_count counts levels ceil(log2 d) .. floor(log2(d/eps)) inclusive; bound_count is
    ceil(log2(1/eps)) as used in the distortion bound. They can differ by one.
    """
    B = math.ceil(math.log2(d))
    top = math.floor(math.log2(d / eps))
    return {"lowest": B, "highest": top, "proof_count": max(0, top - B + 1), "bound_count": math.ceil(math.log2(1 / eps))}


@dataclass
class Snapshot:
    """Target metric after one event, stored as the per-level labels of the alive points."""

    points: np.ndarray
    scales: np.ndarray
    labels: np.ndarray
    factor: float = 1.0
    info: dict = field(default_factory=dict)

    def stack(self) -> PartitionStack:
        return PartitionStack(self.points, self.scales, self.labels)

    def distances(self) -> np.ndarray:
        return stack_distances(self.stack(), self.factor)

    def hst(self) -> Hst:
        st = self.stack()
        if len(self.points) <= 1:
            leaves = {int(p): 0 for p in self.points}
            return Hst([0.0], [-1], leaves, 2.0) if leaves else Hst([], [], {}, 2.0)
        T = induced_hst(with_floor(st))
        return T.scaled(self.factor) if self.factor != 1.0 else T


@dataclass
class EmbeddingTrace:
    snapshots: list[Snapshot]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> Snapshot:
        return self.snapshots[t]
