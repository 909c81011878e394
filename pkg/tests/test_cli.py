import json

import pytest

from monohst.apps import KServerInstance
from monohst.cli import main
from monohst.core import build_metric, read_sequence


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, json.loads(capsys.readouterr().out)


@pytest.fixture
def seq_file(tmp_path, capsys):
    out = tmp_path / "seq.jsonl"
    code, info = run(capsys, "gen", "--instance", "uniform-line", "--param", "n=8", "--seed", 3, "--out", out)
    assert code == 0 and info["events"] == 8
    return out


def test_gen_and_validate(seq_file, capsys):
    code, info = run(capsys, "core", "validate", "--input", seq_file)
    assert code == 0
    assert info["points"] == 8 and info["width"] == 8 and info["incremental"]
    assert info["aspect_ratio"] >= 1


@pytest.mark.parametrize("variant,extra", [("incremental", []), ("unknown-n", []), ("dynamic", []),
                                           ("line", ["--mode", "dynamic"]), ("linf", [])])
def test_embed_then_audit(seq_file, tmp_path, capsys, variant, extra):
    out = tmp_path / variant
    code, info = run(capsys, "embed", variant, "--input", seq_file, "--out", out, "--seed", 1, *extra)
    assert code == 0 and info["monotone"] and info["steps"] == 8
    assert (out / "summary.csv").exists() and (out / "hst_00007.json").exists()
    code, audit = run(capsys, "audit", "--trace", out)
    assert code == 0 and audit["monotone"] and audit["steps"] == 8
    if variant != "unknown-n":
        assert audit["non_contractive"]


@pytest.mark.parametrize("variant", ["kruskal", "strict", "known-n", "unknown-n"])
def test_det_variants(seq_file, tmp_path, capsys, variant):
    code, info = run(capsys, "det", variant, "--input", seq_file, "--out", tmp_path / variant)
    assert code == 0
    if variant == "kruskal":
        assert 1 <= info["min_ratio"] and info["max_expansion"] <= 7
    else:
        assert info["monotone"] and info["lambda_c"] <= 1 + 1e-9


def test_strict_rejects_departures(tmp_path, capsys):
    seq = tmp_path / "s.jsonl"
    run(capsys, "gen", "--instance", "sliding-window", "--param", "l=2", "--param", "n=5", "--out", seq)
    with pytest.raises(SystemExit):
        main(["det", "strict", "--input", str(seq), "--out", str(tmp_path / "o")])


@pytest.mark.parametrize("kind", ["sliding", "encompassing", "random-walk", "median"])
def test_adversary_kinds(tmp_path, capsys, kind):
    out = tmp_path / f"{kind}.jsonl"
    code, info = run(capsys, "adversary", kind, "--n", 6, "--l", 3, "--out", out)
    assert code == 0
    seq, _ = read_sequence(out)
    assert len(seq) == info["events"]
    if kind in ("encompassing", "random-walk"):
        assert json.loads(open(info["evaluation_file"]).read())


def test_adversary_reports_strictness_violation(tmp_path, capsys):
    code, info = run(capsys, "adversary", "median", "--n", 6, "--embedder", "kruskal", "--out", tmp_path / "m")
    assert code == 1 and "changed" in info["strictness_violation"]


def test_experiment_report(tmp_path, capsys):
    out = tmp_path / "rep"
    code, info = run(capsys, "experiment", "--embedder", "incremental", "--instance", "uniform-line",
                     "--param", "n=6", "--trials", 3, "--trial-rows", "--out", out)
    assert code == 0 and info["max_expansion"] >= 1 and info["lambda_c"] == 1
    assert {p.name for p in out.iterdir()} == {"distortion.csv", "trials.csv", "report.json"}


def test_apps_kserver(tmp_path, capsys):
    inst = KServerInstance(build_metric("line", [0.0, 4.0, 9.0]), 1, (0,), [(2, 2), (1, 1), (2, 2)])
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(inst.to_json()))
    out = tmp_path / "k.json"
    code, info = run(capsys, "apps", "kserver", "--instance", path, "--trials", 3, "--out", out)
    assert code == 0 and info["opt"] == 19
    assert info["mean_cost"] >= 19 and json.loads(out.read_text()) == info
