"""Points, metric spaces, update sequences and scale-set utilities."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

ARRIVE = "+"
DEPART = "-"
TOL = 1e-9


def keyed_uniform(*keys: int) -> float:
    """Counter-based uniform draw in [0, 1) determined entirely by the integer keys."""
    data = struct.pack(f"<{len(keys)}q", *keys)
    h = int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")
    return (h >> 11) * 2.0**-53


def derive_seed(*keys: int) -> int:
    data = struct.pack(f"<{len(keys)}q", *keys)
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little") >> 1


@dataclass(frozen=True)
class UpdateEvent:
    point: int
    op: str
    payload: tuple | None = None

    @property
    def is_arrival(self) -> bool:
        return self.op == ARRIVE


class UpdateSequence:
    """Ordered arrivals and departures; index t refers to the state after event t (1-based)."""

    def __init__(self, events):
        self.events = list(events)
        alive: set[int] = set()
        seen: list[int] = []
        seen_set: set[int] = set()
        self._alive = [frozenset()]
        self._seen_count = [0]
        for ev in self.events:
            if ev.op == ARRIVE:
                if ev.point in alive:
                    raise ValueError(f"point {ev.point} arrives while alive")
                if ev.point not in seen_set:
                    if ev.point != len(seen):
                        raise ValueError(f"point ids must be dense in arrival order, got {ev.point}")
                    seen.append(ev.point)
                    seen_set.add(ev.point)
                alive.add(ev.point)
            elif ev.op == DEPART:
                if ev.point not in alive:
                    raise ValueError(f"point {ev.point} departs while not alive")
                alive.remove(ev.point)
            else:
                raise ValueError(f"unknown op {ev.op!r}")
            self._alive.append(frozenset(alive))
            self._seen_count.append(len(seen))
        self.order = seen

    def __len__(self) -> int:
        return len(self.events)

    @property
    def n(self) -> int:
        return len(self.events)

    @property
    def num_points(self) -> int:
        return len(self.order)

    @property
    def num_arrivals(self) -> int:
        return sum(ev.op == ARRIVE for ev in self.events)

    @cached_property
    def width(self) -> int:
        return max((len(a) for a in self._alive), default=0)

    def alive(self, t: int) -> frozenset:
        return self._alive[t]

    def seen(self, t: int) -> list[int]:
        return self.order[: self._seen_count[t]]

    @property
    def is_incremental(self) -> bool:
        return all(ev.op == ARRIVE for ev in self.events)

    @classmethod
    def arrivals(cls, points) -> "UpdateSequence":
        return cls(UpdateEvent(p, ARRIVE) for p in points)


class MetricSpace:
    """Finite metric over points 0..N-1, materialized as a dense distance matrix."""

    def __init__(self, dist: np.ndarray, kind: str = "matrix", coords=None, p=None):
        self.dist = np.asarray(dist, dtype=float)
        self.kind = kind
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        self.p = p

    def __len__(self) -> int:
        return self.dist.shape[0]

    @property
    def points(self) -> range:
        return range(len(self))

    @property
    def dim(self) -> int:
        return 1 if self.coords is None or self.coords.ndim == 1 else self.coords.shape[1]

    def d(self, u: int, v: int) -> float:
        return float(self.dist[u, v])

    @cached_property
    def linf(self) -> np.ndarray:
        """Chebyshev distances of the coordinates (the geometry normed partitions cut)."""
        if self.coords is None:
            raise ValueError("metric has no coordinates")
        c = self.coords.reshape(len(self), -1)
        return cdist(c, c, "chebyshev")

    def coords2d(self) -> np.ndarray:
        return self.coords.reshape(len(self), -1)


def build_metric(kind: str, data, p=None) -> MetricSpace:
    if kind == "matrix":
        m = np.asarray(data, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("distance matrix must be square")
        if np.any(m < -TOL):
            raise ValueError("negative distance")
        if not np.allclose(m, m.T, rtol=0, atol=TOL):
            raise ValueError("asymmetric distance matrix")
        if np.any(np.abs(np.diag(m)) > TOL):
            raise ValueError("nonzero self-distance")
        _check_triangle(m)
        return MetricSpace(m, "matrix")
    if kind == "line":
        x = np.asarray(data, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("line coordinates must be a finite 1-D array")
        return MetricSpace(np.abs(x[:, None] - x[None, :]), "line", coords=x, p=math.inf)
    if kind == "lp":
        x = np.asarray(data, dtype=float)
        if x.ndim != 2 or not np.all(np.isfinite(x)):
            raise ValueError("lp coordinates must be a finite 2-D array")
        p = parse_p(p)
        metric = {1: "cityblock", 2: "euclidean", math.inf: "chebyshev"}[p]
        return MetricSpace(cdist(x, x, metric), "lp", coords=x, p=p)
    raise ValueError(f"unknown metric kind {kind!r}")


def parse_p(p) -> float:
    if p in (1, "1"):
        return 1
    if p in (2, "2"):
        return 2
    if p in (math.inf, "inf", "Infinity", None):
        return math.inf
    raise ValueError(f"unsupported p={p!r}; expected 1, 2 or inf")


def _check_triangle(m: np.ndarray) -> None:
    for k in range(m.shape[0]):
        bad = m > m[:, k][:, None] + m[k, :][None, :] + TOL
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise ValueError(f"triangle inequality violated: d({i},{j}) > d({i},{k}) + d({k},{j})")


def metric_stats(M: MetricSpace, S) -> tuple[float, float, float]:
    S = np.asarray(sorted(S), dtype=int)
    if len(S) < 2:
        raise ValueError("need at least two points")
    sub = M.dist[np.ix_(S, S)][np.triu_indices(len(S), 1)]
    pos = sub[sub > 0]
    if len(pos) == 0:
        raise ValueError("all distances are zero")
    dmax, dmin = float(sub.max()), float(pos.min())
    return dmax, dmin, dmax / dmin


def _scales_for_distance(d: float, eps: float) -> range:
    # j with eps * 2^(j-1) <= d < 2^j
    lo = math.frexp(d)[1]
    hi = math.frexp(d / eps)[1]
    while eps * 2.0 ** (hi - 1) > d:
        hi -= 1
    while eps * 2.0**hi <= d:
        hi += 1
    return range(lo, hi + 1)


def relevant_scales(M: MetricSpace, S, eps: float = 1.0) -> set[int]:
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    S = sorted(S)
    if len(S) < 2:
        raise ValueError("need at least two points")
    out: set[int] = set()
    for u, v in itertools.combinations(S, 2):
        d = M.d(u, v)
        if d > 0:
            out.update(_scales_for_distance(d, eps))
    return out


def subset_scale_count_bound(a) -> tuple[int, int]:
    """Count dyadic bands [2**(k-1), 2**k) hit by x + (nonempty subset sum) with 0 <= x < min(a).

    The entries are treated as a multiset and the offset range uses the smallest one; with a
    larger offset the 2 len(a) bound fails (a = [8, 1] hits 5 bands). Returns (count, 2 len(a)).
    """
    a = sorted(float(x) for x in a)
    if not a:
        raise ValueError("empty input")
    if len(a) > 20:
        raise ValueError("input too long for subset enumeration")
    if a[0] <= 0:
        raise ValueError("entries must be positive")
    sums = {0.0}
    for x in a:
        sums |= {s + x for s in sums}
    sums.discard(0.0)
    ks: set[int] = set()
    for lo in sums:
        hi = lo + a[0]
        k_lo = math.frexp(lo)[1]
        mant, e = math.frexp(hi)
        k_hi = e - 1 if mant == 0.5 else e
        ks.update(range(k_lo, k_hi + 1))
    return len(ks), 2 * len(a)


# -- sequence files -------------------------------------------------------------------------


def write_sequence(path, seq: UpdateSequence, M: MetricSpace) -> None:
    path = Path(path)
    with path.open("w") as fh:
        if M.kind == "matrix":
            header = {"kind": "matrix"}
        elif M.kind == "line":
            header = {"kind": "line", "dim": 1}
        else:
            header = {"kind": "lp", "p": "inf" if M.p == math.inf else M.p, "dim": M.dim}
        fh.write(json.dumps(header) + "\n")
        sent: list[int] = []
        for ev in seq.events:
            if ev.op == DEPART:
                rec = {"op": "-", "id": ev.point}
            elif M.kind == "matrix":
                rec = {"op": "+", "id": ev.point}
                if ev.point == len(sent):
                    rec["row"] = [float(M.dist[ev.point, q]) for q in sent]
                    sent.append(ev.point)
            else:
                c = M.coords2d()[ev.point]
                rec = {"op": "+", "id": ev.point, "coords": [float(x) for x in c]}
            fh.write(json.dumps(rec) + "\n")


def read_sequence(path) -> tuple[UpdateSequence, MetricSpace]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty sequence file")
    header = json.loads(lines[0])
    kind = header.get("kind")
    events = []
    rows: list[list[float]] = []
    coords: dict[int, list[float]] = {}
    for ln in lines[1:]:
        rec = json.loads(ln)
        pid = int(rec["id"])
        if rec["op"] == "-":
            events.append(UpdateEvent(pid, DEPART))
            continue
        if kind == "matrix":
            if pid == len(rows):
                row = [float(x) for x in rec["row"]]
                if len(row) != pid:
                    raise ValueError(f"row for point {pid} must have {pid} entries")
                rows.append(row)
            payload = None
        else:
            c = [float(x) for x in rec["coords"]]
            if pid in coords and coords[pid] != c:
                raise ValueError(f"point {pid} re-arrives with different coordinates")
            coords[pid] = c
            payload = tuple(c)
        events.append(UpdateEvent(pid, ARRIVE, payload))
    seq = UpdateSequence(events)
    if kind == "matrix":
        n = len(rows)
        m = np.zeros((n, n))
        for i, row in enumerate(rows):
            m[i, :i] = row
            m[:i, i] = row
        M = build_metric("matrix", m)
    elif kind == "line":
        M = build_metric("line", [coords[i][0] for i in range(len(coords))])
    elif kind == "lp":
        M = build_metric("lp", [coords[i] for i in range(len(coords))], p=header.get("p", "inf"))
    else:
        raise ValueError(f"unknown sequence kind {kind!r}")
    return seq, M
