"""Dynamic embedder on sliding windows and encompassing sequences, plus the per-step 0-smooth check."""
import argparse
import math

from monohst.adversary import encompassing_sequence
from monohst.dynamic import DynamicConfig, make_dynamic, zero_smooth_check
from monohst.harness import gen_instances, mc_distortion


def sliding(widths, trials, seed):
    print("width,distortion,c_l_log_l")
    for l in widths:
        seq, M = gen_instances("sliding-window", {"l": l, "n": 4 * l, "length": 4 * l}, 0)
        rep = mc_distortion("dynamic", seq, M, trials, seed)
        print(f"{l},{rep.distortion:.4g},{rep.distortion / (l * math.log2(l)):.4g}")


def encompassing(widths, trials, seed):
    print("l,mean_unit_pair_distance,stderr,l_over_2")
    for l in widths:
        inst = encompassing_sequence(l)
        rep = mc_distortion("dynamic", inst.seq, inst.metric, trials, seed + l)
        mean, se = rep.mean_over(inst.triples)
        print(f"{l},{mean:.4g},{se:.3g},{l / 2}")


def claim(widths, seeds, trigger, band):
    checked = failed = 0
    for l in widths:
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
    print(f"trigger={trigger:.4g} quiet band=[{band:.4g}s, s]: {checked} qualifying checks, {failed} failures")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("part", choices=["sliding", "encompassing", "claim"])
    p.add_argument("--widths", type=int, nargs="+")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--trigger", type=float, default=1 / 6)
    p.add_argument("--band", type=float, help="lower end of the quiet band, defaults to the trigger")
    args = p.parse_args(argv)
    if args.part == "sliding":
        sliding(args.widths or [4, 8, 16], args.trials, args.seed)
    elif args.part == "encompassing":
        encompassing(args.widths or [4, 6, 8], args.trials, args.seed)
    else:
        claim(args.widths or [4, 8, 16], 10, args.trigger, args.band or args.trigger)


if __name__ == "__main__":
    main()
