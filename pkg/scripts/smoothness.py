"""Split frequencies of the line interval partition and of single-scale random components."""
import argparse
import math

import numpy as np

from monohst.components import ScaleState
from monohst.core import UpdateEvent, build_metric
from monohst.harness import mc_smoothness
from monohst.normed import LineScale, line_step


def line(trials, seed):
    M = build_metric("line", np.sort(np.random.default_rng(seed).uniform(0, 2, 24)))

    def driver(k):
        S = LineScale(0, M.coords, k, 24.0**-3)
        for t in range(len(M)):
            line_step(S, UpdateEvent(t, "+"), t)
        return S.plab

    print("u,v,d,freq,sigma,bound_6d_over_s")
    for r in mc_smoothness(driver, M, 1.0, trials, seed):
        print(f"{r.u},{r.v},{r.d:.4g},{r.freq:.4g},{r.sigma:.2g},{6 * r.d:.4g}")


def components(trials, seed, widths):
    print("l,d,freq,sigma,freq_over_log_l_d")
    for l in widths:
        for d in (1 / 200, 1 / 50):
            rho = np.linspace(1 / 16, 1 / 8, l)[1:-1]
            M = build_metric("line", np.concatenate([-rho, [0.0, d]]))

            def driver(k):
                S = ScaleState(0, M, k)
                for v in range(l):
                    S.add_component(v, v)
                    S.assign(v)
                return S.plab

            r = mc_smoothness(driver, M, 1.0, trials, seed + l, pairs=[(l - 2, l - 1)])[0]
            print(f"{l},{d:.4g},{r.freq:.4g},{r.sigma:.2g},{r.freq / (math.log(l) * d):.4g}")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("part", choices=["line", "components"])
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--widths", type=int, nargs="+", default=[4, 8, 16, 32])
    args = p.parse_args(argv)
    if args.part == "line":
        line(args.trials, args.seed)
    else:
        components(args.trials, args.seed, args.widths)


if __name__ == "__main__":
    main()
