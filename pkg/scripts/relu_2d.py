"""SiMEC and SiMExp walks on ReLU(x - y) from an active and an inactive start.

Writes one CSV per walk plus an oracle level-set CSV for the active class.
"""
import argparse
from pathlib import Path

import numpy as np

from equivwalk.model_io import WalkRecord, write_walk_csv
from equivwalk.oracle import brute_force_level_set
from equivwalk.walkers import WalkConfig, run_walk
from equivwalk.zoo import relu_line_2d

STARTS = {"active": (-0.98, -2.45), "inactive": (-1.45, 1.30)}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("runs/relu_2d"))
    parser.add_argument("--steps", type=int, default=5000)
    parser.add_argument("--delta", type=float, default=1e-2)
    parser.add_argument("--eps", type=float, default=1e-8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    net = relu_line_2d()
    for mode in ("simec", "simexp"):
        for label, start in STARTS.items():
            if mode == "simexp" and label == "inactive":
                continue  # the metric vanishes there: no direction leaves the class
            cfg = WalkConfig(mode=mode, steps=args.steps, delta=args.delta, eps=args.eps, seed=args.seed)
            result = run_walk(net, np.array(start), cfg)
            path = args.out / f"{mode}_{label}.csv"
            write_walk_csv(WalkRecord.from_result(result), path)
            print(f"{path}: {len(result)} points, {result.termination.value}")
    grid = brute_force_level_set(net, [(-3, 3), (-3, 3)], 601, STARTS["active"], 3 * (0.01 + args.delta))
    np.savetxt(args.out / "oracle_active.csv", grid.points, delimiter=",", header="x0,x1", comments="",
               fmt="%.17g")
    print(f"{args.out / 'oracle_active.csv'}: {grid.points.shape[0]} grid points")


if __name__ == "__main__":
    main()
