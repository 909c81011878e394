"""Max-pair expected expansion across instance sizes, with fitted constants.

Example:
    python3 scripts/distortion_scaling.py --embedder incremental --instance random-metric --shape log2
"""
import argparse
import csv
import math
import sys
import time

from monohst.harness import EMBEDDERS, gen_instances, mc_distortion

SHAPES = {"log": lambda n: math.log2(n), "log2": lambda n: math.log2(n) ** 2}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--embedder", default="incremental", choices=EMBEDDERS)
    p.add_argument("--instance", default="uniform-line")
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--shape", choices=SHAPES, default="log")
    p.add_argument("--sparse", action="store_true", help="random-metric edge probability 2/n")
    args = p.parse_args(argv)

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["n", "estimate", "stderr", "c", "lambda_c", "argmax", "seconds"])
    for n in args.sizes:
        params = {"n": n}
        if args.sparse:
            params["edge_prob"] = 2 / n
        seq, M = gen_instances(args.instance, params, args.instance_seed)
        t0 = time.perf_counter()
        rep = mc_distortion(args.embedder, seq, M, args.trials, args.seed)
        est, se, where = rep.max_expansion()
        out.writerow([n, f"{est:.4g}", f"{se:.3g}", f"{est / SHAPES[args.shape](n):.4g}", rep.lambda_c,
                      "/".join(map(str, where)), f"{time.perf_counter() - t0:.1f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
