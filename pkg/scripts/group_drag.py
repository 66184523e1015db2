"""Flow of individuals versus group members across densities.

Prints the relative gap (individual flow - group flow) / individual flow at
each density, for the calibrated weights or for overrides given on the
command line, e.g.

    python3 scripts/group_drag.py --corridor corridor_B --delta 6 --set kappa_c=25
"""

import argparse
from dataclasses import replace

from crowdsim import engine
from crowdsim.behavior import CALIBRATED_WEIGHTS
from crowdsim.scenario import preset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--corridor", default="corridor_A")
    p.add_argument("--densities", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--steps", type=int, default=1800)
    p.add_argument("--delta", type=float, default=2.5)
    p.add_argument("--set", action="append", default=[], metavar="KAPPA=VALUE",
                   help="override one calibrated weight, repeatable")
    args = p.parse_args()

    weights = replace(CALIBRATED_WEIGHTS, **{k: float(v) for k, v in (s.split("=") for s in args.set)})
    print(f"{args.corridor}, delta={args.delta}, {weights}")
    print("density  individuals  groups  relative_gap")
    for d in args.densities:
        sc = preset(args.corridor, d, weights=weights, delta=args.delta)
        runs = [engine.run(sc, args.steps, s) for s in range(args.seeds)]
        ind = sum(r.summary["flow_individuals"] for r in runs) / len(runs)
        grp = sum(r.summary["flow_groups"] for r in runs) / len(runs)
        print(f"{d:7.2f}  {ind:11.3f}  {grp:6.3f}  {(ind - grp) / ind:12.3f}")


if __name__ == "__main__":
    main()
