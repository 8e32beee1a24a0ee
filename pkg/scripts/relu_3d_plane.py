"""Guarded SiMEC on ReLU(x - y + z) and a least-squares plane through the walk."""
import argparse
from pathlib import Path

import numpy as np

from equivwalk.linalg import fit_affine_subspace
from equivwalk.model_io import WalkRecord, write_walk_csv
from equivwalk.walkers import WalkConfig, simec_guarded
from equivwalk.zoo import relu_plane_3d

STARTS = {"active": (1.85, 1.30, 1.50), "inactive": (1.85, 1.30, -1.0)}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/relu_3d_plane"))
    parser.add_argument("--steps", type=int, default=5000)
    parser.add_argument("--delta", type=float, default=1e-2)
    parser.add_argument("--eps", type=float, default=1e-1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    net = relu_plane_3d()
    cfg = WalkConfig(mode="simec_guarded", steps=args.steps, delta=args.delta, eps=args.eps, seed=args.seed)
    for label, start in STARTS.items():
        result = simec_guarded(net, np.array(start), cfg)
        path = args.out / f"guarded_{label}.csv"
        write_walk_csv(WalkRecord.from_result(result), path)
        basis, offset, rms = fit_affine_subspace(result.points, 2)
        normal = np.linalg.svd(basis.T)[2][-1]
        normal *= np.sign(normal[0]) or 1.0
        print(f"{path}: {len(result)} points, {result.termination.value}; "
              f"plane normal {np.round(normal, 6)}, offset {normal @ offset:.6f}, rms {rms:.2e}")


if __name__ == "__main__":
    main()
