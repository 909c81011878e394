import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monohst.core import UpdateSequence, build_metric
from monohst.deterministic import (
    F_CONSTANT,
    KnownNEmbedder,
    StrictOnline,
    UnknownNEmbedder,
    check_summable,
    default_f,
    kruskal_snapshot,
    monotone_known_n,
    monotone_unknown_n,
    offline_kruskal,
    single_linkage,
    strict_online,
    threshold_partition,
)
from monohst.harness import audit_contraction, audit_monotone, gen_instances
from monohst.hst import validate_hst
from oracles import ultrametric_single_linkage


def line(n):
    return build_metric("line", np.arange(n, dtype=float))


def test_kruskal_single_point():
    T = offline_kruskal(line(1))
    assert list(T.leaves) == [0] and len(T) == 1


def test_kruskal_three_point_line_tie_break():
    T = offline_kruskal(line(3))
    assert T.distance(0, 1) == 1
    assert T.distance(1, 2) == 2
    assert T.distance(0, 2) == 2
    assert not validate_hst(T)


@pytest.mark.parametrize("n", [2, 4, 8, 16, 33])
def test_kruskal_evenly_spaced_is_tight(n):
    M = line(n)
    T = offline_kruskal(M)
    D = T.distance_matrix(range(n))
    off = ~np.eye(n, dtype=bool)
    ratio = D[off] / M.dist[off]
    assert ratio.min() >= 1
    assert ratio.max() == n - 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 14), st.sampled_from(["uniform-line", "random-metric",
                                                                  "arrivals-only"]))
def test_kruskal_sandwich(seed, n, kind):
    _, M = gen_instances(kind, {"n": n}, seed)
    T = offline_kruskal(M)
    D = T.distance_matrix(range(n))
    off = ~np.eye(n, dtype=bool)
    assert np.all(D[off] >= M.dist[off] * (1 - 1e-9))
    assert np.all(D[off] <= (n - 1) * M.dist[off] * (1 + 1e-9))
    snap = kruskal_snapshot(M)
    assert np.allclose(snap.distances(), D)


def test_strict_base_case():
    emb = StrictOnline.from_metric(line(2))
    emb.insert(0)
    emb.insert(1)
    # second arrival: 1 + 2**-1 times the distance, well below 2**2
    assert emb.distance(0, 1) == 1.5
    assert not emb.sandwich_violations()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12), st.sampled_from(["uniform-line", "random-metric",
                                                                  "arrivals-only"]))
def test_strict_sandwich_and_fixed_distances(seed, n, kind):
    seq, M = gen_instances(kind, {"n": n}, seed)
    trees = strict_online(M, seq)
    final = trees[-1]
    for i, T in enumerate(trees):
        pts = sorted(T.leaves)
        for a in pts:
            for b in pts:
                assert T.distance(a, b) == pytest.approx(final.distance(a, b), rel=1e-12)
    D = final.distance_matrix(range(n))
    off = ~np.eye(n, dtype=bool)
    assert np.all(D[off] <= 2.0**n * M.dist[off])


def test_strict_rejects_departures():
    seq, M = gen_instances("sliding-window", {"l": 2, "n": 4}, 0)
    with pytest.raises(ValueError):
        strict_online(M, seq)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12))
def test_single_linkage_matches_oracle(seed, n):
    _, M = gen_instances("random-metric", {"n": n}, seed)
    assert np.allclose(single_linkage(M.dist), ultrametric_single_linkage(M.dist))


def test_threshold_partition():
    M = line(4)
    W = M.dist.copy()
    W[1, 2] = W[2, 1] = 5
    assert threshold_partition(W, 1.0).tolist() == [0, 0, 1, 1]
    assert len(set(threshold_partition(W, 0.5).tolist())) == 4


def test_known_n_two_points_exact():
    M = build_metric("line", [0.0, 2.5])
    trace = monotone_known_n(M, UpdateSequence.arrivals([0, 1]))
    assert trace[-1].distances()[0, 1] == 2.5


@pytest.mark.parametrize("n", [3, 6, 10])
def test_known_n_contraction_on_evenly_spaced_line(n):
    M = line(n)
    trace = monotone_known_n(M, UpdateSequence.arrivals(range(n)))
    for i, snap in enumerate(trace.snapshots, 1):
        if i < 2:
            continue
        D = snap.distances()
        pts = snap.points
        off = ~np.eye(i, dtype=bool)
        contraction = (M.dist[np.ix_(pts, pts)][off] / D[off]).max()
        assert contraction == i - 1
        assert D[0, i - 1] == 1.0
    assert audit_monotone(trace) is None


def test_known_n_rescaled_is_non_contractive():
    seq, M = gen_instances("uniform-line", {"n": 10}, 3)
    trace = monotone_known_n(M, seq, rescale=True)
    lam_c, lam_e, _ = audit_contraction(trace, M)
    assert lam_c <= 1 + 1e-9 and lam_e <= 9 + 1e-9
    with pytest.raises(ValueError):
        monotone_known_n(M, seq, n=5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12))
def test_known_n_partitions_connected_and_bounded(seed, n):
    seq, M = gen_instances("random-metric", {"n": n}, seed)
    emb = KnownNEmbedder(M, n, rescale=False)
    for i, ev in enumerate(seq.events, 1):
        emb.process(ev)
        pts = np.array(emb.seen)
        W = M.dist[np.ix_(pts, pts)]
        for s in np.unique(W[np.triu_indices(len(pts), 1)]):
            lab = threshold_partition(W, s)
            for c in np.unique(lab):
                idx = np.flatnonzero(lab == c)
                assert W[np.ix_(idx, idx)].max() <= (i - 1) * s * (1 + 1e-9)


def test_default_f_normalized():
    total = check_summable(default_f)
    # the tail beyond 10**6 terms is about 0.05, so the partial sum sits visibly below 1
    assert 0.9 < total <= 1
    assert default_f(2) == pytest.approx(F_CONSTANT * 2 * 4)


def test_check_summable_rejects_bad_f():
    with pytest.raises(ValueError):
        check_summable(lambda k: k)
    with pytest.raises(ValueError):
        check_summable(lambda k: 1e6 / k)
    with pytest.raises(ValueError):
        UnknownNEmbedder(line(2), f=lambda k: 2 * k)


def test_unknown_n_first_pair():
    M = build_metric("line", [0.0, 3.0])
    trace = monotone_unknown_n(M, UpdateSequence.arrivals([0, 1]))
    d = trace[-1].distances()[0, 1]
    assert 3.0 <= d <= default_f(2) * 3.0 * (1 + 1e-12)


@pytest.mark.parametrize("n", [5, 20, 60])
def test_unknown_n_necessity_chain(n):
    f = default_f(np.arange(2, n + 1))
    x = np.concatenate([[0.0], np.cumsum(1 / f)])
    M = build_metric("line", x)
    trace = monotone_unknown_n(M, UpdateSequence.arrivals(range(n)))
    D = trace[-1].distances()
    assert D[0, n - 1] == pytest.approx(1.0)
    assert M.d(0, n - 1) == pytest.approx(float(np.sum(1 / f)))
    lam_c, _, _ = audit_contraction(trace, M)
    assert lam_c <= 1 + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 14))
def test_unknown_n_expansion_bound(seed, n):
    seq, M = gen_instances("random-metric", {"n": n}, seed)
    trace = monotone_unknown_n(M, seq)
    assert audit_monotone(trace) is None
    for i, snap in enumerate(trace.snapshots, 1):
        pts = snap.points
        if len(pts) < 2:
            continue
        off = ~np.eye(len(pts), dtype=bool)
        ratio = snap.distances()[off] / M.dist[np.ix_(pts, pts)][off]
        assert ratio.min() >= 1 - 1e-9
        assert ratio.max() <= default_f(i) * (1 + 1e-9)
