"""Command-line entry point: ``monohst <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import adversary as adv
from . import deterministic as det
from .core import metric_stats, read_sequence, write_sequence
from .harness import (
    EMBEDDERS,
    audit_contraction,
    audit_monotone,
    gen_instances,
    mc_distortion,
    read_trace,
    write_report,
    write_trace,
)


def _params(items) -> dict:
    out = {}
    for item in items or []:
        key, _, val = item.partition("=")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _save_trace(trace, M, seq, args) -> None:
    out = write_trace(trace, M, args.out)
    write_sequence(out / "sequence.jsonl", seq, M)
    lam_c, lam_e, _ = audit_contraction(trace, M)
    _emit({"steps": len(trace), "monotone": audit_monotone(trace) is None, "lambda_c": lam_c,
           "lambda_e": lam_e, "out": str(out)})


def cmd_validate(args) -> int:
    seq, M = read_sequence(args.input)
    pts = list(seq.seen(len(seq)))
    stats = metric_stats(M, pts) if len(pts) >= 2 else (0.0, None, None)
    _emit({"events": len(seq), "points": seq.num_points, "width": seq.width, "kind": M.kind,
           "d_max": stats[0], "d_min": stats[1], "aspect_ratio": stats[2], "incremental": seq.is_incremental})
    return 0


def cmd_embed(args) -> int:
    from .dynamic import DynamicConfig, embed_dynamic
    from .incremental import IncrementalConfig, embed_known_n, embed_unknown_n
    from .normed import NormedConfig, embed_line, embed_linf

    seq, M = read_sequence(args.input)
    if args.variant == "incremental":
        trace = embed_known_n(seq, M, IncrementalConfig(n_known=args.n_known, epsilon=args.epsilon, seed=args.seed))
    elif args.variant == "unknown-n":
        trace = embed_unknown_n(seq, M, IncrementalConfig(seed=args.seed, unknown_n=True))
    elif args.variant == "dynamic":
        trace = embed_dynamic(seq, M, DynamicConfig(seed=args.seed))
    else:
        cfg = NormedConfig(seed=args.seed, mode=args.mode, epsilon=args.epsilon, n_known=args.n_known)
        trace = (embed_line if args.variant == "line" else embed_linf)(seq, M, cfg)
    _save_trace(trace, M, seq, args)
    return 0


def cmd_det(args) -> int:
    seq, M = read_sequence(args.input)
    if args.variant == "kruskal":
        pts = sorted(seq.alive(len(seq)))
        T = det.offline_kruskal(M, pts)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "hst.json").write_text(json.dumps(T.to_json(), sort_keys=True) + "\n")
        D = T.distance_matrix(pts)
        off = ~np.eye(len(pts), dtype=bool)
        ratio = D[off] / M.dist[np.ix_(pts, pts)][off] if len(pts) > 1 else np.ones(1)
        _emit({"points": len(pts), "max_expansion": float(ratio.max()), "min_ratio": float(ratio.min())})
        return 0
    if args.variant == "strict":
        from .incremental import run_embedder

        if not seq.is_incremental:
            raise SystemExit("strict embedding needs an arrival-only sequence")
        trace = run_embedder(det.StrictOnline.from_metric(M), seq, M, provenance={"embedder": "det-strict"})
    elif args.variant == "known-n":
        trace = det.monotone_known_n(M, seq, args.n, rescale=True)
    else:
        trace = det.monotone_unknown_n(M, seq)
    _save_trace(trace, M, seq, args)
    return 0


def cmd_adversary(args) -> int:
    info: dict = {"kind": args.kind}
    if args.kind == "sliding":
        seq, M = adv.monotone_det_dynamic_sequence(args.n)
    elif args.kind == "encompassing":
        inst = adv.encompassing_sequence(args.l, args.seed)
        seq, M = inst.seq, inst.metric
        info["triples"] = inst.triples
    elif args.kind == "random-walk":
        inst = adv.strict_rand_sequence(args.n, args.seed)
        seq, M = inst.seq, inst.metric
        info["evaluation"] = inst.evaluation
    else:
        make = {"strict": det.StrictOnline, "kruskal": det.RecomputingKruskal}[args.embedder]
        try:
            run = adv.strict_det_adversary(make, args.n)
        except adv.StrictnessViolation as exc:
            _emit({"kind": "median", "embedder": args.embedder, "strictness_violation": str(exc)})
            return 1
        seq, M = run.seq, run.metric
        info.update(witness=list(run.witness), expansion=run.expansion)
    write_sequence(args.out, seq, M)
    info.update(events=len(seq), width=seq.width, out=str(args.out))
    if "triples" in info or "evaluation" in info:
        side = Path(str(args.out) + ".eval.json")
        side.write_text(json.dumps(info.pop("triples", None) or info.pop("evaluation")) + "\n")
        info["evaluation_file"] = str(side)
    _emit(info)
    return 0


def cmd_gen(args) -> int:
    seq, M = gen_instances(args.instance, _params(args.param), args.seed)
    write_sequence(args.out, seq, M)
    _emit({"events": len(seq), "width": seq.width, "out": str(args.out)})
    return 0


def cmd_experiment(args) -> int:
    if Path(args.instance).exists():
        seq, M = read_sequence(args.instance)
    else:
        seq, M = gen_instances(args.instance, _params(args.param), args.seed)
    rows = [] if args.trial_rows else None
    rep = mc_distortion(args.embedder, seq, M, args.trials, args.seed, _params(args.config), rows)
    out = write_report(rep, args.out, rows, extra={"instance": args.instance, "params": _params(args.param)})
    est, se, where = rep.max_expansion()
    _emit({"max_expansion": est, "stderr": se, "argmax": where, "lambda_c": rep.lambda_c, "out": str(out)})
    return 0


def cmd_audit(args) -> int:
    trace = read_trace(args.trace)
    res = {"steps": len(trace)}
    bad = audit_monotone(trace)
    res["monotone"] = bad is None
    if bad is not None:
        res["first_violation"] = list(bad)
    seq_file = Path(args.trace) / "sequence.jsonl"
    if seq_file.exists():
        _, M = read_sequence(seq_file)
        lam_c, lam_e, _ = audit_contraction(trace, M)
        res.update(lambda_c=lam_c, lambda_e=lam_e, non_contractive=lam_c <= 1 + 1e-9)
    _emit(res)
    return 0 if bad is None else 1


def cmd_kserver(args) -> int:
    from .apps import KServerInstance, Pipeline, WorkFunction
    from .core import derive_seed

    inst = KServerInstance.from_json(args.instance)
    try:
        opt = WorkFunction(inst).opt()
    except ValueError:
        opt = None
    costs = []
    for k in range(args.trials):
        res = Pipeline(inst, args.embedder, derive_seed(args.seed, k), algorithm=args.algorithm).run()
        costs.append(res.source_cost)
    costs = np.array(costs)
    out = {"trials": args.trials, "mean_cost": float(costs.mean()), "max_cost": float(costs.max()), "opt": opt,
           "ratio": float(costs.mean() / opt) if opt else None}
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    _emit(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monohst", description="Online monotone embeddings into HSTs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    core = sub.add_parser("core", help="sequence utilities")
    csub = core.add_subparsers(dest="action", required=True)
    v = csub.add_parser("validate", help="validate a sequence file and print its statistics")
    v.add_argument("--input", required=True)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("embed", help="run a randomized embedder on a sequence file")
    e.add_argument("variant", choices=["incremental", "unknown-n", "dynamic", "line", "linf"])
    e.add_argument("--input", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--epsilon", type=float)
    e.add_argument("--n-known", type=int)
    e.add_argument("--mode", choices=["incremental", "dynamic"], default="incremental")
    e.set_defaults(func=cmd_embed)

    d = sub.add_parser("det", help="deterministic constructions")
    d.add_argument("variant", choices=["kruskal", "strict", "known-n", "unknown-n"])
    d.add_argument("--input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--n", type=int)
    d.set_defaults(func=cmd_det)

    a = sub.add_parser("adversary", help="write a lower-bound sequence")
    a.add_argument("kind", choices=["sliding", "encompassing", "random-walk", "median"])
    a.add_argument("--n", type=int, default=8)
    a.add_argument("--l", type=int, default=4)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--embedder", choices=["strict", "kruskal"], default="strict")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_adversary)

    g = sub.add_parser("gen", help="generate an instance sequence")
    g.add_argument("--instance", required=True)
    g.add_argument("--param", action="append", help="key=value, repeatable")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    x = sub.add_parser("experiment", help="Monte-Carlo distortion report")
    x.add_argument("--embedder", required=True, choices=EMBEDDERS)
    x.add_argument("--instance", required=True, help="sequence file or generator kind")
    x.add_argument("--param", action="append", help="generator key=value, repeatable")
    x.add_argument("--config", action="append", help="embedder key=value, repeatable")
    x.add_argument("--trials", type=int, default=100)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--trial-rows", action="store_true", help="also write trials.csv")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)

    u = sub.add_parser("audit", help="audit a trace directory")
    u.add_argument("--trace", required=True)
    u.set_defaults(func=cmd_audit)

    ap = sub.add_parser("apps", help="applications")
    asub = ap.add_subparsers(dest="app", required=True)
    k = asub.add_parser("kserver", help="k-server or k-taxi through an online embedding")
    k.add_argument("--embedder", default="incremental", choices=list(EMBEDDERS) + ["identity"])
    k.add_argument("--instance", required=True)
    k.add_argument("--trials", type=int, default=10)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--algorithm", choices=["dc", "greedy-taxi"], default="dc")
    k.add_argument("--out")
    k.set_defaults(func=cmd_kserver)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
