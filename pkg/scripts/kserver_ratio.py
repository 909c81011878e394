"""Source-metric cost of k-server through an online embedding, relative to the offline optimum."""
import argparse

import numpy as np

from monohst.apps import KServerInstance, Pipeline, offline_opt
from monohst.core import build_metric, derive_seed


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--embedder", default="incremental")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--requests", type=int, default=15)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    M = build_metric("line", rng.uniform(0, 100, args.points))
    reqs = [(int(r), int(r)) for r in rng.integers(0, args.points, args.requests)]
    inst = KServerInstance(M, args.k, tuple(range(args.k)), reqs)
    opt = offline_opt(inst)
    costs = np.array([Pipeline(inst, args.embedder, derive_seed(args.seed, t)).run().source_cost
                      for t in range(args.trials)])
    se = costs.std(ddof=1) / np.sqrt(len(costs)) if len(costs) > 1 else float("inf")
    print(f"opt={opt:.4g} mean={costs.mean():.4g} stderr={se:.3g} ratio={costs.mean() / opt:.4g}")


if __name__ == "__main__":
    main()
