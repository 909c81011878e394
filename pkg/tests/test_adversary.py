import numpy as np
import pytest

from monohst.adversary import (
    StrictnessViolation,
    encompassing_points,
    encompassing_sequence,
    max_adjacent_expansion,
    monotone_det_dynamic_sequence,
    strict_det_adversary,
    strict_rand_sequence,
)
from monohst.deterministic import RecomputingKruskal, StrictOnline, monotone_known_n, monotone_unknown_n
from monohst.harness import audit_contraction, audit_monotone


def alive_after_each_event(seq):
    alive, out = set(), []
    for ev in seq.events:
        (alive.add if ev.op == "+" else alive.discard)(ev.point)
        out.append(set(alive))
    return out


@pytest.mark.parametrize("n", [2, 3, 5, 10, 20])
def test_median_adversary_forces_exponential_expansion(n):
    run = strict_det_adversary(StrictOnline, n)
    assert run.expansion >= 2.0 ** (n - 2)
    assert run.metric.d(*run.witness) == 2.0 ** (2 - n)
    assert run.seq.width <= 3
    # tracked pair never shrinks below the first pair's distance
    base = run.tracked[0][2]
    assert all(dt >= base for _, _, dt in run.tracked)


def test_median_adversary_first_step():
    run = strict_det_adversary(StrictOnline, 3)
    assert run.metric.d(*run.witness) == 0.5
    assert run.metric.coords.tolist() == [0.0, 1.0, 0.5]


def test_median_adversary_replays():
    a = strict_det_adversary(StrictOnline, 12)
    b = strict_det_adversary(StrictOnline, 12)
    assert a.seq.events == b.seq.events and a.expansion == b.expansion


def test_recomputed_kruskal_breaks_strictness():
    with pytest.raises(StrictnessViolation) as info:
        strict_det_adversary(RecomputingKruskal, 8)
    assert info.value.step >= 3
    assert info.value.before != info.value.after


def test_adversary_needs_two_points():
    with pytest.raises(ValueError):
        strict_det_adversary(StrictOnline, 1)


def test_random_walk_first_window():
    inst = strict_rand_sequence(3, seed=0)
    assert inst.coords == [0.0, 1.0, 0.5]
    assert inst.seq.width == 3


@pytest.mark.parametrize("seed", range(5))
def test_random_walk_windows_halve(seed):
    n = 16
    inst = strict_rand_sequence(n, seed)
    assert inst.seq.width == 3
    alive_sets = alive_after_each_event(inst.seq)
    x = inst.coords
    for i, (v, y, t) in enumerate(inst.evaluation, start=3):
        alive = alive_sets[t]
        assert v in alive and y in alive and len(alive) == 3
        lo, hi = min(x[p] for p in alive), max(x[p] for p in alive)
        assert hi - lo == 2.0 ** (3 - i)
        assert abs(x[v] - x[y]) == 2.0 ** (2 - i)
    assert len(inst.evaluation) == n - 3


def test_random_walk_rejects_small_n():
    with pytest.raises(ValueError):
        strict_rand_sequence(2)


def test_sliding_sequence_shape():
    seq, M = monotone_det_dynamic_sequence(10)
    assert [ev.point for ev in seq.events[:3]] == [0, 1, 2]
    assert seq.width == 3
    for alive in alive_after_each_event(seq)[2::2]:
        xs = sorted(M.coords[p] for p in alive)
        assert xs[0] == 0 and xs[2] == xs[1] + 1
    assert M.coords[seq.events[-1].point] == 10


@pytest.mark.parametrize("n", [8, 16, 32])
def test_sliding_sequence_beats_deterministic_embedders(n):
    seq, M = monotone_det_dynamic_sequence(n)
    for trace in (monotone_known_n(M, seq, rescale=True), monotone_unknown_n(M, seq)):
        assert audit_monotone(trace) is None
        assert audit_contraction(trace, M)[0] <= 1 + 1e-9
        assert max_adjacent_expansion(trace, M) >= n


def test_encompassing_points_example():
    assert encompassing_points(11, 5) == {0, 8, 10, 11, 12, 16, 32}


@pytest.mark.parametrize("l", [2, 3, 5, 7])
def test_encompassing_alive_sets(l):
    inst = encompassing_sequence(l)
    assert inst.seq.width <= 2 * l + 4
    alive_sets = alive_after_each_event(inst.seq)
    for x, (u, v, t) in enumerate(inst.triples):
        coords = {inst.coords[p] for p in alive_sets[t]}
        assert coords == encompassing_points(x, l)
        assert {x, x + 1} <= coords
        assert (inst.coords[u], inst.coords[v]) == (x, x + 1)
    assert len(inst.triples) == 2**l


@pytest.mark.parametrize("l", [3, 5])
def test_encompassing_lower_bound_for_deterministic(l):
    inst = encompassing_sequence(l)
    trace = monotone_unknown_n(inst.metric, inst.seq)
    vals = []
    for u, v, t in inst.triples:
        snap = trace[t]
        pos = {p: i for i, p in enumerate(snap.points.tolist())}
        vals.append(snap.distances()[pos[u], pos[v]])
    assert np.mean(vals) >= l / 2


def test_encompassing_rejects_small_l():
    with pytest.raises(ValueError):
        encompassing_sequence(1)
