"""End-to-end acceptance checks; each test records one PASS/FAIL line in the terminal summary."""
import filecmp
import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from monohst.adversary import (
    encompassing_sequence,
    max_adjacent_expansion,
    monotone_det_dynamic_sequence,
    strict_det_adversary,
)
from monohst.apps import KServerInstance, Pipeline, dc_kserver, dc_potential, guess_and_double, offline_opt
from monohst.cli import main as cli_main
from monohst.components import ScaleState, radius_cdf, radius_density, sample_radius
from monohst.core import build_metric, relevant_scales, subset_scale_count_bound
from monohst.deterministic import StrictOnline, monotone_known_n, monotone_unknown_n, offline_kruskal, strict_online
from monohst.dynamic import DynamicConfig, make_dynamic, zero_smooth_check
from monohst.harness import audit_contraction, audit_monotone, gen_instances, mc_distortion, mc_smoothness, write_report
from monohst.hst import induced_hst
from monohst.normed import LineScale, line_step
from monohst.core import UpdateEvent
from oracles import min_coclustered_scale, relevant_scales_brute, subset_scales_brute
from strategies import random_nested_stack

slow = pytest.mark.slow


def drift(cs):
    """Largest fitted constant relative to the one at the smallest size, and max/min."""
    cs = np.asarray(cs, dtype=float)
    return float(cs.max() / cs[0]), float(cs.max() / cs.min())


# 1 -----------------------------------------------------------------------------------------------


def test_criterion_1_kruskal_tightness(record):
    start = time.perf_counter()
    rows = []
    ok = True
    for n in (4, 8, 16, 64):
        M = build_metric("line", np.arange(n, dtype=float))
        D = offline_kruskal(M).distance_matrix(range(n))
        off = ~np.eye(n, dtype=bool)
        ratio = D[off] / M.dist[off]
        ok &= ratio.max() == n - 1 and ratio.min() >= 1
        rows.append(f"n={n}:{ratio.max():g}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1
    assert record(1, ok, f"max expansion {' '.join(rows)}; {elapsed:.2f}s")


# 2 -----------------------------------------------------------------------------------------------


def test_criterion_2_strict_blowup(record):
    worst = math.inf
    for n in range(2, 21):
        run = strict_det_adversary(StrictOnline, n)
        worst = min(worst, run.expansion / 2.0 ** (n - 2))
    rng = np.random.default_rng(2024)
    kinds = ["uniform-line", "random-metric", "arrivals-only", "grid-lp"]
    for k in range(1000):
        kind = kinds[k % 4]
        n = int(rng.integers(2, 13))
        params = {"side": 4, "n": n} if kind == "grid-lp" else {"n": n}
        seq, M = gen_instances(kind, params, int(rng.integers(2**31)))
        strict_online(M, seq)  # asserts the sandwich bound after every arrival
    ok = worst >= 1
    assert record(2, ok, f"min expansion / 2^(n-2) over n<=20 = {worst:.3g}; 1000 sandwich runs clean")


# 3 -----------------------------------------------------------------------------------------------


def test_criterion_3_deterministic_monotone(record):
    worst = 0.0
    for n in (2, 5, 8, 16, 32, 64):
        for kind in ("uniform-line", "random-metric", "arrivals-only"):
            for seed in range(3):
                seq, M = gen_instances(kind, {"n": n}, seed)
                raw = monotone_known_n(M, seq, rescale=False)
                lam_c, lam_e, _ = audit_contraction(raw, M)
                assert lam_e <= 1 + 1e-9 and audit_monotone(raw) is None
                scaled = monotone_known_n(M, seq, rescale=True)
                lam_c2, lam_e2, _ = audit_contraction(scaled, M)
                assert lam_c2 <= 1 + 1e-9 and lam_e2 <= (n - 1 if n > 1 else 1) * (1 + 1e-9)
                worst = max(worst, lam_c / max(n - 1, 1))
    sliding = []
    for n in (8, 16, 32):
        seq, M = monotone_det_dynamic_sequence(n)
        for trace in (monotone_known_n(M, seq, rescale=True), monotone_unknown_n(M, seq)):
            assert audit_monotone(trace) is None and audit_contraction(trace, M)[0] <= 1 + 1e-9
            sliding.append(max_adjacent_expansion(trace, M) / n)
    ok = worst <= 1 + 1e-9 and min(sliding) >= 1
    assert record(3, ok, f"max contraction/(n-1) = {worst:.3g}; min sliding expansion/n = {min(sliding):.3g}")


# 4 -----------------------------------------------------------------------------------------------


def test_criterion_4_radius_sampler(record):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    s = 1.0
    ks, quad = [], []
    for j in (1, 4, 16, 64):
        u = rng.random(100_000)
        z = np.array([sample_radius(j, s, x) for x in u])
        ks.append(stats.kstest(z, lambda q: radius_cdf(q, j, s)).statistic)
        val, _ = integrate.quad(lambda q: float(radius_density(q, j, s)), s / 16, s / 8, epsabs=1e-13, epsrel=1e-13)
        quad.append(abs(val - 1))
    elapsed = time.perf_counter() - start
    ok = max(ks) < 0.01 and max(quad) <= 1e-8 and elapsed < 10
    assert record(4, ok, f"max KS {max(ks):.4f}; max |quad-1| {max(quad):.1e}; {elapsed:.1f}s")


# 5 -----------------------------------------------------------------------------------------------


def _line_driver(M, eps):
    def driver(seed):
        S = LineScale(0, M.coords, seed, eps)
        for t in range(len(M)):
            line_step(S, UpdateEvent(t, "+"), t)
        return S.plab

    return driver


def _component_driver(M):
    def driver(seed):
        S = ScaleState(0, M, seed)
        for v in range(len(M)):
            S.add_component(v, v)
            S.assign(v)
        return S.plab

    return driver


def _pressure_layout(l, d, s=1.0):
    # l-2 earlier centers spread over the cutting band [s/16, s/8] left of the pair (0, d)
    rho = np.linspace(s / 16, s / 8, l)[1:-1]
    return build_metric("line", np.concatenate([-rho, [0.0, d]]))


@slow
def test_criterion_5_smoothness(record):
    trials, s = 10_000, 1.0
    rng = np.random.default_rng(5)
    M = build_metric("line", np.sort(rng.uniform(0, 2, 24)))
    rows = mc_smoothness(_line_driver(M, 24.0**-3), M, s, trials, seed=5)
    line_ok = all(r.within(6 * r.d / s) for r in rows)
    line_worst = max((r.freq - 3 * r.sigma) / (6 * r.d / s) for r in rows if r.d > 0)

    ds = (s / 200, s / 50)
    K = 0.0
    for d in ds:
        M4 = _pressure_layout(4, d)
        r = mc_smoothness(_component_driver(M4), M4, s, trials, seed=50, pairs=[(2, 3)])[0]
        K = max(K, r.freq / (math.log(4) * d / s))
    comp_worst = 0.0
    for l in (8, 16, 32):
        for d in ds:
            Ml = _pressure_layout(l, d)
            r = mc_smoothness(_component_driver(Ml), Ml, s, trials, seed=50 + l, pairs=[(l - 2, l - 1)])[0]
            comp_worst = max(comp_worst, (r.freq - 3 * r.sigma) / (K * math.log(l) * d / s))
    ok = line_ok and comp_worst <= 1
    assert record(5, ok, f"line worst (freq-3sd)/(6d/s) = {line_worst:.3f}; component K={K:.2f} "
                         f"worst (freq-3sd)/(K log(l) d/s) = {comp_worst:.3f}")


# 6 -----------------------------------------------------------------------------------------------

SIZES = (16, 32, 64, 128)


def _scaling(kind, params_of, shape, trials=2000):
    cs, lam_c = [], 1.0
    for n in SIZES:
        seq, M = gen_instances(kind, params_of(n), 0)
        rep = mc_distortion("incremental", seq, M, trials, 1)  # every step audited inside
        est, se, _ = rep.max_expansion()
        cs.append(est / shape(n))
        lam_c = max(lam_c, rep.lambda_c)
    return cs, lam_c


@slow
def test_criterion_6_incremental_scaling(record):
    general, lc1 = _scaling("random-metric", lambda n: {"n": n, "edge_prob": 2 / n}, lambda n: math.log2(n) ** 2)
    line, lc2 = _scaling("uniform-line", lambda n: {"n": n}, lambda n: math.log2(n))
    g_up, g_span = drift(general)
    l_up, l_span = drift(line)
    ok = g_up <= 2 and l_up <= 2 and lc1 == 1 and lc2 == 1
    fmt = lambda cs: ",".join(f"{c:.2f}" for c in cs)
    assert record(6, ok, f"c(log^2 n) random-metric [{fmt(general)}] drift {g_up:.2f} spread {g_span:.2f}; "
                         f"c(log n) line [{fmt(line)}] drift {l_up:.2f} spread {l_span:.2f}")


# 7 -----------------------------------------------------------------------------------------------


def _claim_check(trigger, band, seeds=10):
    """(qualifying checks, failures) of the 0-smooth conclusion on random sliding windows."""
    checked = failed = 0
    for l in (4, 8, 16):
        for seed in range(seeds):
            seq, M = gen_instances("sliding-window", {"l": l, "n": 4 * l, "length": l}, 700 + seed)
            emb = make_dynamic(M, DynamicConfig(seed=seed, trigger=trigger))
            for ev in seq.events:
                emb.process(ev)
                for S in emb.levels.values():
                    res = zero_smooth_check(S, emb.alive, band)
                    if res is not None:
                        checked += 1
                        failed += not res
    return checked, failed


@slow
def test_criterion_7_dynamic(record):
    cs = []
    for l in (4, 8, 16):
        seq, M = gen_instances("sliding-window", {"l": l, "n": 4 * l, "length": 4 * l}, 0)
        rep = mc_distortion("dynamic", seq, M, 200, 7)
        cs.append(rep.distortion / (l * math.log2(l)))
    up, span = drift(cs)
    enc = []
    for l in (4, 6, 8):
        inst = encompassing_sequence(l)
        rep = mc_distortion("dynamic", inst.seq, inst.metric, 200, 70 + l)
        mean, se = rep.mean_over(inst.triples)
        enc.append((l, mean, se, mean >= l / 2 - 3 * se))
    matched = _claim_check(1 / 6, 1 / 6)
    quarter = _claim_check(1 / 4, 1 / 4)
    ok = up <= 2 and all(e[3] for e in enc) and matched[1] == 0 and quarter[1] == 0
    enc_txt = " ".join(f"l={l}:{m:.1f}+-{se:.1f}" for l, m, se, _ in enc)
    assert record(7, ok, f"c(l log l) [{','.join(f'{c:.2f}' for c in cs)}] drift {up:.2f} spread {span:.2f}; "
                         f"encompassing {enc_txt}; 0-smooth checks {matched[0]}+{quarter[0]} failures "
                         f"{matched[1]}+{quarter[1]}")


# 8 -----------------------------------------------------------------------------------------------


def test_criterion_8_oracles(record):
    rng = np.random.default_rng(8)
    for _ in range(500):
        stack = random_nested_stack(rng, int(rng.integers(1, 11)))
        T = induced_hst(stack)
        pts = [int(p) for p in stack.points]
        for u, w in itertools.combinations_with_replacement(pts, 2):
            want = min_coclustered_scale(pts, list(stack.scales), list(stack.labels), u, w)
            assert T.distance(u, w) == want
    for _ in range(500):
        m = int(rng.integers(2, 13))
        x = rng.uniform(0, 10, m) * 10.0 ** rng.integers(-3, 4)
        eps = float(10.0 ** rng.uniform(-3, 0))
        M = build_metric("line", x)
        assert relevant_scales(M, range(m), eps) == relevant_scales_brute(M.dist, range(m), eps)
    grid = np.sort(rng.uniform(0.1, 20, 5))
    cases = 0
    for size in range(1, 9):
        for a in itertools.combinations_with_replacement(grid.tolist(), size):
            count, bound = subset_scale_count_bound(a)
            assert count == len(subset_scales_brute(list(a))) and count <= bound
            cases += 1
    assert record(8, True, f"500 stacks, 500 scale sets, {cases} subset multisets all match")


# 9 -----------------------------------------------------------------------------------------------


def _random_hst_instance(rng):
    m = int(rng.integers(2, 9))
    T = induced_hst(random_nested_stack(rng, m, shuffle_points=False))
    k = int(rng.integers(1, min(3, m) + 1))
    D = T.distance_matrix(range(m))
    initial = tuple(int(p) for p in rng.choice(m, k, replace=False))
    reqs = [int(r) for r in rng.integers(0, m, int(rng.integers(1, 13)))]
    return T, D, KServerInstance(build_metric("matrix", D), k, initial, [(r, r) for r in reqs])


@slow
def test_criterion_9_applications(record):
    rng = np.random.default_rng(9)
    slack = math.inf
    for _ in range(200):
        T, D, inst = _random_hst_instance(rng)
        _, cost = dc_kserver(T, inst.k, [x for x, _ in inst.requests], initial=list(inst.initial))
        bound = inst.k * offline_opt(inst) + dc_potential(D, inst.initial, inst.initial, inst.k)
        assert cost <= bound + 1e-9
        slack = min(slack, bound - cost)
    steps = 0
    for seed in range(60):
        r = np.random.default_rng(900 + seed)
        M = build_metric("line", r.uniform(0, 30, 10))
        algo = "dc" if seed % 2 else "greedy-taxi"
        reqs = [(int(a), int(b)) for a, b in r.integers(0, 10, (12, 2))]
        if algo == "dc":
            reqs = [(a, a) for a, _ in reqs]
        for emb in ("incremental", "dynamic", "line"):
            res = Pipeline(KServerInstance(M, 2, (0, 1), reqs), emb, seed, algorithm=algo).run()
            for row in res.steps:
                assert row["source"] <= row["target"] * (1 + 1e-9) + 1e-9
            steps += len(res.steps)
    phases = 0
    for seed in range(50):
        r = np.random.default_rng(990 + seed)
        M = build_metric("line", r.uniform(0, 20, 6))
        inst = KServerInstance(M, 2, (0, 1), [(int(x), int(x)) for x in r.integers(0, 6, 8)])
        res = guess_and_double(inst, kappa=1.0)
        assert len(res.phases) >= 2 and res.telescoping_holds() and res.accounting_holds()
        phases += len(res.phases)
    assert record(9, True, f"DC bound on 200 HST instances (min slack {slack:.3g}); {steps} pipeline steps "
                           f"with source <= target; telescoping on 50 multi-phase runs ({phases} phases)")


# 10 ----------------------------------------------------------------------------------------------


def test_criterion_10_determinism(record, tmp_path):
    runs = [("incremental", "uniform-line", {"n": 10}), ("dynamic", "sliding-window", {"l": 4, "n": 12}),
            ("line", "uniform-line", {"n": 10}), ("unknown-n", "arrivals-only", {"n": 8})]
    compared = 0
    for name, kind, params in runs:
        seq, M = gen_instances(kind, params, 10)
        outs = []
        for rep_id in ("a", "b"):
            rows = []
            rep = mc_distortion(name, seq, M, 20, 10, trial_rows=rows)
            outs.append(write_report(rep, tmp_path / f"{name}-{rep_id}", rows))
        for f in ("distortion.csv", "trials.csv", "report.json"):
            assert filecmp.cmp(outs[0] / f, outs[1] / f, shallow=False)
            compared += 1
    for rep_id in ("a", "b"):
        assert cli_main(["experiment", "--embedder", "dynamic", "--instance", "sliding-window", "--param", "l=3",
                         "--param", "n=9", "--trials", "5", "--seed", "3", "--trial-rows",
                         "--out", str(tmp_path / f"cli-{rep_id}")]) == 0
    for f in ("distortion.csv", "trials.csv", "report.json"):
        assert filecmp.cmp(tmp_path / "cli-a" / f, tmp_path / "cli-b" / f, shallow=False)
        compared += 1
    assert record(10, True, f"{compared} report files identical across reruns")
