"""Trace audits, Monte-Carlo estimation, instance generation and experiment reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .core import ARRIVE, DEPART, MetricSpace, UpdateEvent, UpdateSequence, build_metric, derive_seed
from .hst import EmbeddingTrace, Snapshot

REL_TOL = 1e-9


class EmbeddingInvariantError(AssertionError):
    pass


class StepAuditor:
    """Checks each new snapshot against the source metric and the previous snapshot."""

    def __init__(self, M: MetricSpace, tol: float = REL_TOL):
        self.M = M
        self.tol = tol
        self.prev_pts = np.zeros(0, dtype=np.int64)
        self.prev_d = np.zeros((0, 0))
        self.min_ratio = math.inf
        self.max_ratio = 0.0

    def check(self, t: int, snap: Snapshot, alpha: float = 1.0) -> np.ndarray:
        pts = snap.points
        d = snap.distances()
        m = len(pts)
        if m >= 2:
            dx = self.M.dist[np.ix_(pts, pts)]
            off = ~np.eye(m, dtype=bool)
            if np.any(d[off] <= 0):
                i, k = np.argwhere((d <= 0) & off)[0]
                raise EmbeddingInvariantError(f"step {t}: zero target distance for ({pts[i]},{pts[k]})")
            bad = (alpha * d < dx * (1 - self.tol)) & off
            if bad.any():
                i, k = np.argwhere(bad)[0]
                raise EmbeddingInvariantError(
                    f"step {t}: contraction beyond {alpha} on ({pts[i]},{pts[k]}): d_t={d[i, k]} d_X={dx[i, k]}")
            r = d[off] / dx[off]
            self.min_ratio = min(self.min_ratio, float(r.min()))
            self.max_ratio = max(self.max_ratio, float(r.max()))
        _, ia, ib = np.intersect1d(self.prev_pts, pts, assume_unique=True, return_indices=True)
        if len(ia) >= 2:
            before = self.prev_d[np.ix_(ia, ia)]
            after = d[np.ix_(ib, ib)]
            bad = after > before * (1 + self.tol)
            if bad.any():
                i, k = np.argwhere(bad)[0]
                u, v = pts[ib[i]], pts[ib[k]]
                raise EmbeddingInvariantError(
                    f"step {t}: distance of ({u},{v}) increased from {before[i, k]} to {after[i, k]}")
        self.prev_pts, self.prev_d = pts, d
        return d


def audit_monotone(trace: EmbeddingTrace, tol: float = REL_TOL):
    """First (t, u, v) whose target distance grew between consecutive snapshots, or None."""
    prev_pts, prev_d = np.zeros(0, dtype=np.int64), np.zeros((0, 0))
    for t, snap in enumerate(trace.snapshots):
        d = snap.distances()
        _, ia, ib = np.intersect1d(prev_pts, snap.points, assume_unique=True, return_indices=True)
        if len(ia) >= 2:
            bad = d[np.ix_(ib, ib)] > prev_d[np.ix_(ia, ia)] * (1 + tol)
            if bad.any():
                i, k = np.argwhere(bad)[0]
                return t, int(snap.points[ib[i]]), int(snap.points[ib[k]])
        prev_pts, prev_d = snap.points, d
    return None


def audit_contraction(trace: EmbeddingTrace, M: MetricSpace):
    """(lambda_c, lambda_e, per-snapshot [(lambda_c, lambda_e)]) over alive pairs."""
    per = []
    for t, snap in enumerate(trace.snapshots):
        m = len(snap.points)
        if m < 2:
            per.append((1.0, 1.0))
            continue
        d = snap.distances()
        iu = np.triu_indices(m, 1)
        dt = d[iu]
        dx = M.dist[snap.points[iu[0]], snap.points[iu[1]]]
        if np.any(dt <= 0):
            raise EmbeddingInvariantError(f"step {t}: zero target distance on distinct points")
        per.append((max(1.0, float(np.max(dx / dt))), float(np.max(dt / dx))))
    lam_c = max((c for c, _ in per), default=1.0)
    lam_e = max((e for _, e in per), default=1.0)
    return lam_c, lam_e, per


def trace_from_matrices(points_per_step, matrices) -> EmbeddingTrace:
    from .hst import stack_from_ultrametric

    snaps = []
    for pts, D in zip(points_per_step, matrices):
        st = stack_from_ultrametric(pts, np.asarray(D, dtype=float))
        snaps.append(Snapshot(st.points, st.scales, st.labels))
    return EmbeddingTrace(snaps)


# -- embedder registry ------------------------------------------------------------------------


def make_embedder(name: str, M: MetricSpace, seq: UpdateSequence, seed: int, cfg: dict | None = None):
    """Returns (embedder, alpha) where alpha maps the arrival count to the allowed contraction."""
    cfg = dict(cfg or {})
    if name in ("incremental", "unknown-n"):
        from .incremental import IncrementalConfig, contraction_allowance, make_known_n, make_unknown_n

        c = IncrementalConfig(seed=seed, **cfg)
        if name == "incremental":
            return make_known_n(M, seq, c), None
        return make_unknown_n(M, seq, c), contraction_allowance
    if name == "dynamic":
        from .dynamic import DynamicConfig, make_dynamic

        return make_dynamic(M, DynamicConfig(seed=seed, **cfg)), None
    if name in ("line", "linf"):
        from .normed import NormedConfig, make_normed

        c = NormedConfig(seed=seed, **cfg)
        return make_normed(M, seq, c), None
    if name in ("det-known-n", "det-unknown-n"):
        from .deterministic import KnownNEmbedder, UnknownNEmbedder

        if name == "det-known-n":
            return KnownNEmbedder(M, cfg.get("n", seq.num_points), rescale=True), None
        return UnknownNEmbedder(M), None
    raise ValueError(f"unknown embedder {name!r}")


EMBEDDERS = ("incremental", "unknown-n", "dynamic", "line", "linf", "det-known-n", "det-unknown-n")


# -- Monte Carlo --------------------------------------------------------------------------------


@dataclass
class DistortionReport:
    steps: list[np.ndarray]
    pairs: list[tuple[np.ndarray, np.ndarray]]
    d_x: list[np.ndarray]
    sums: list[np.ndarray]
    sumsq: list[np.ndarray]
    trials: int
    lambda_c: float
    lambda_e_realized: float
    provenance: dict = field(default_factory=dict)
    # sums and sumsq are taken around the first trial's values to avoid cancellation
    shift: list[np.ndarray] | None = None

    def _shift(self, t: int):
        return 0.0 if self.shift is None else self.shift[t]

    def mean(self, t: int) -> np.ndarray:
        return self._shift(t) + self.sums[t] / self.trials

    def stderr(self, t: int) -> np.ndarray:
        if self.trials < 2:
            return np.full_like(self.sums[t], math.inf)
        m = self.sums[t] / self.trials
        var = np.maximum(self.sumsq[t] / self.trials - m * m, 0.0) * self.trials / (self.trials - 1)
        return np.sqrt(var / self.trials)

    def expansion(self, t: int) -> np.ndarray:
        return self.mean(t) / self.d_x[t]

    def max_expansion(self):
        """(estimate, stderr of estimate, (t, u, v)) maximizing E[d_t]/d_X."""
        best = (0.0, 0.0, None)
        for t in range(len(self.steps)):
            if len(self.d_x[t]) == 0:
                continue
            r = self.expansion(t)
            k = int(np.argmax(r))
            if r[k] > best[0]:
                se = self.stderr(t)[k] / self.d_x[t][k]
                best = (float(r[k]), float(se), (t, int(self.pairs[t][0][k]), int(self.pairs[t][1][k])))
        return best

    @property
    def lambda_e(self) -> float:
        return self.max_expansion()[0]

    @property
    def distortion(self) -> float:
        return self.lambda_c * self.lambda_e

    def mean_over(self, triples) -> tuple[float, float]:
        """Mean of E[d_t(u, v)] over (u, v, t) triples, with its standard error."""
        lookup = {}
        vals, ses = [], []
        for u, v, t in triples:
            if t not in lookup:
                a, b = self.pairs[t]
                lookup[t] = {(int(x), int(y)): i for i, (x, y) in enumerate(zip(a, b))}
            i = lookup[t][(min(u, v), max(u, v))]
            vals.append(self.mean(t)[i])
            ses.append(self.stderr(t)[i])
        vals = np.array(vals)
        return float(vals.mean()), float(np.sqrt(np.sum(np.square(ses))) / len(ses))


def _pair_layout(seq: UpdateSequence, M: MetricSpace):
    steps, pairs, dx = [], [], []
    for t in range(1, len(seq) + 1):
        pts = np.array(sorted(seq.alive(t)), dtype=np.int64)
        iu = np.triu_indices(len(pts), 1)
        steps.append(pts)
        pairs.append((pts[iu[0]], pts[iu[1]]))
        dx.append(M.dist[pts[iu[0]], pts[iu[1]]])
    return steps, pairs, dx


def run_trial(name: str, M: MetricSpace, seq: UpdateSequence, seed: int, cfg: dict | None = None):
    """Yields (t, snapshot, target distance matrix) for one audited run."""
    emb, alpha = make_embedder(name, M, seq, seed, cfg)
    auditor = StepAuditor(M)
    arrivals = 0
    for t, ev in enumerate(seq.events):
        emb.process(ev)
        arrivals += ev.op == ARRIVE
        snap = emb.snapshot()
        a = alpha(arrivals) if alpha else 1.0
        try:
            d = auditor.check(t, snap, a)
        except EmbeddingInvariantError as exc:
            raise EmbeddingInvariantError(f"{name} seed={seed}: {exc}") from exc
        yield t, snap, d


def mc_distortion(name: str, seq: UpdateSequence, M: MetricSpace, trials: int, seed: int,
                  cfg: dict | None = None, trial_rows: list | None = None) -> DistortionReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    steps, pairs, dx = _pair_layout(seq, M)
    sums = [np.zeros(len(x)) for x in dx]
    sumsq = [np.zeros(len(x)) for x in dx]
    shift = [np.zeros(len(x)) for x in dx]
    lam_c, lam_e = 1.0, 0.0
    for k in range(trials):
        tseed = derive_seed(seed, k)
        for t, snap, d in run_trial(name, M, seq, tseed, cfg):
            if len(dx[t]) == 0:
                continue
            iu = np.triu_indices(len(snap.points), 1)
            v = d[iu]
            if k == 0:
                shift[t] = v.copy()
            dv = v - shift[t]
            sums[t] += dv
            sumsq[t] += dv * dv
            lam_c = max(lam_c, float(np.max(dx[t] / v)))
            lam_e = max(lam_e, float(np.max(v / dx[t])))
            if trial_rows is not None:
                a, b = pairs[t]
                trial_rows.extend((k, t, int(x), int(y), float(z), float(w)) for x, y, z, w in zip(a, b, dx[t], v))
    prov = {"embedder": name, "seed": seed, "trials": trials, "config": cfg or {}}
    return DistortionReport(steps, pairs, dx, sums, sumsq, trials, lam_c, lam_e, prov, shift)


@dataclass
class SmoothnessRow:
    u: int
    v: int
    d: float
    freq: float
    sigma: float
    trials: int

    def within(self, bound: float) -> bool:
        return self.freq - 3 * self.sigma <= bound


def mc_smoothness(driver, M: MetricSpace, s: float, trials: int, seed: int = 0, pairs=None) -> list[SmoothnessRow]:
    """Split frequencies of pairs under driver(seed) -> labels indexed by point id.

    Pairs farther apart than s are skipped since the smoothness bound is vacuous there.
    """
    if s <= 0:
        raise ValueError("scale must be positive")
    if pairs is None:
        pairs = [(u, v) for u in M.points for v in M.points if u < v]
    pairs = [(u, v) for u, v in pairs if M.d(u, v) <= s]
    a = np.array([u for u, _ in pairs], dtype=np.int64)
    b = np.array([v for _, v in pairs], dtype=np.int64)
    splits = np.zeros(len(pairs))
    for k in range(trials):
        lab = np.asarray(driver(derive_seed(seed, k)))
        splits += lab[a] != lab[b]
    out = []
    for (u, v), c in zip(pairs, splits):
        p = c / trials
        out.append(SmoothnessRow(u, v, M.d(u, v), p, math.sqrt(p * (1 - p) / trials), trials))
    return out


# -- instances -----------------------------------------------------------------------------------


def gen_instances(kind: str, params: dict | None = None, seed: int = 0) -> tuple[UpdateSequence, MetricSpace]:
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "uniform-line":
        n = int(params.get("n", 16))
        x = rng.uniform(0, float(params.get("length", n)), size=n)
        return UpdateSequence.arrivals(range(n)), build_metric("line", x)
    if kind == "grid-lp":
        side, dim = int(params.get("side", 4)), int(params.get("dim", 2))
        grid = np.stack(np.meshgrid(*[np.arange(side)] * dim, indexing="ij"), -1).reshape(-1, dim)
        n = int(params.get("n", len(grid)))
        if n > len(grid):
            raise ValueError("more points requested than grid cells")
        pts = grid[rng.permutation(len(grid))[:n]].astype(float)
        return UpdateSequence.arrivals(range(n)), build_metric("lp", pts, p=params.get("p", 2))
    if kind == "random-metric":
        n = int(params.get("n", 16))
        extra = float(params.get("edge_prob", 0.2))
        rows, cols, w = [], [], []
        order = rng.permutation(n)
        for i in range(1, n):
            rows.append(order[i])
            cols.append(order[rng.integers(0, i)])
            w.append(rng.uniform(1, 10))
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < extra:
                    rows.append(u)
                    cols.append(v)
                    w.append(rng.uniform(1, 10))
        g = csr_matrix((w, (rows, cols)), shape=(n, n))
        D = shortest_path(g, directed=False)
        return UpdateSequence.arrivals(range(n)), build_metric("matrix", D)
    if kind == "sliding-window":
        width, n = int(params.get("l", 4)), int(params.get("n", 32))
        if width < 1 or n < width:
            raise ValueError("need n >= l >= 1")
        dim = int(params.get("dim", 1))
        length = float(params.get("length", n))
        x = rng.uniform(0, length, size=(n, dim))
        events = []
        for v in range(n):
            if v >= width:
                events.append(UpdateEvent(v - width, DEPART))
            events.append(UpdateEvent(v, ARRIVE))
        M = build_metric("line", x[:, 0]) if dim == 1 else build_metric("lp", x, p=params.get("p", 2))
        return UpdateSequence(events), M
    if kind == "arrivals-only":
        n, dim = int(params.get("n", 16)), int(params.get("dim", 2))
        x = rng.uniform(0, 1, size=(n, dim))
        return UpdateSequence.arrivals(range(n)), build_metric("lp", x, p=params.get("p", 2))
    raise ValueError(f"unknown instance kind {kind!r}")


# -- reports ---------------------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(report: DistortionReport, out, trial_rows=None, extra: dict | None = None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "distortion.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u", "v", "d_X", "mean_d_t", "stderr", "expansion"])
        for t in range(len(report.steps)):
            a, b = report.pairs[t]
            mean, se, ex = report.mean(t), report.stderr(t), report.expansion(t)
            for i in range(len(a)):
                w.writerow([t, int(a[i]), int(b[i]), _fmt(report.d_x[t][i]), _fmt(mean[i]), _fmt(se[i]), _fmt(ex[i])])
    if trial_rows is not None:
        with (out / "trials.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "t", "u", "v", "d_X", "d_t"])
            for k, t, u, v, dxv, dtv in trial_rows:
                w.writerow([k, t, u, v, _fmt(dxv), _fmt(dtv)])
    est, se, where = report.max_expansion()
    summary = {
        "provenance": report.provenance,
        "max_expansion": est,
        "max_expansion_stderr": se if math.isfinite(se) else "inf",
        "argmax": list(where) if where else None,
        "lambda_c": report.lambda_c,
        "lambda_e_realized": report.lambda_e_realized,
        "distortion": report.distortion,
    }
    if extra:
        summary.update(extra)
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def write_trace(trace: EmbeddingTrace, M: MetricSpace, out, hst_json: bool = True) -> Path:
    """Per-step HST JSON plus summary.csv (step, max_expansion, min_ratio, width, clusters per scale)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t, snap in enumerate(trace.snapshots):
        pts = snap.points
        m = len(pts)
        if m >= 2:
            d = snap.distances()
            iu = np.triu_indices(m, 1)
            r = d[iu] / M.dist[pts[iu[0]], pts[iu[1]]]
            mx, mn = float(r.max()), float(r.min())
        else:
            mx, mn = 1.0, 1.0
        clusters = ";".join(f"{_fmt(s)}:{len(np.unique(l))}" for s, l in zip(snap.scales, snap.labels))
        rows.append([t, _fmt(mx), _fmt(mn), m, clusters])
        if hst_json:
            (out / f"hst_{t:05d}.json").write_text(json.dumps(snap.hst().to_json(), sort_keys=True) + "\n")
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "max_expansion", "min_ratio", "width", "cluster_count_per_scale"])
        w.writerows(rows)
    (out / "provenance.json").write_text(json.dumps(trace.provenance, indent=2, sort_keys=True, default=str) + "\n")
    return out


def read_trace(path) -> EmbeddingTrace:
    """Load per-step HST JSON files written by write_trace."""
    from .hst import Hst

    path = Path(path)
    files = sorted(path.glob("hst_*.json"))
    pts, mats = [], []
    for f in files:
        T = Hst.from_json(f.read_text())
        p = sorted(T.leaves)
        pts.append(p)
        mats.append(T.distance_matrix(p))
    return trace_from_matrices(pts, mats)
