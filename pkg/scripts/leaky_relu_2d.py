"""Direction-coherent walks on leaky ReLU(2x - y): every class is a line parallel to y = 2x."""
import argparse
from pathlib import Path

import numpy as np

from equivwalk.model_io import WalkRecord, write_walk_csv
from equivwalk.walkers import WalkConfig, simec_1d_leaky
from equivwalk.zoo import leaky_line_2d

STARTS = {"below": (-1.0, 2.0), "above": (1.85, 1.30), "left": (-1.85, 1.30)}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/leaky_relu_2d"))
    parser.add_argument("--steps", type=int, default=10_000)
    parser.add_argument("--delta", type=float, default=1e-3)
    parser.add_argument("--eps", type=float, default=1e-8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    net = leaky_line_2d()
    cfg = WalkConfig(mode="simec_1d_leaky", steps=args.steps, delta=args.delta, eps=args.eps, seed=args.seed)
    for label, start in STARTS.items():
        result = simec_1d_leaky(net, np.array(start), cfg=cfg)
        path = args.out / f"leaky_{label}.csv"
        write_walk_csv(WalkRecord.from_result(result), path)
        x, y = result.points.T
        level = 2 * x[0] - y[0]
        print(f"{path}: {len(result)} points, {result.termination.value}, "
              f"max |(2x - y) - {level:.4f}| = {np.max(np.abs(2 * x - y - level)):.2e}")


if __name__ == "__main__":
    main()
