"""Write the reference networks as model manifests for the CLI.

    python scripts/make_models.py --out models/
"""
import argparse
from pathlib import Path

from equivwalk.model_io import save_model
from equivwalk.zoo import (leaky_line_2d, leaky_plane_3d, mnist_architecture, relu_axis_3d,
                           relu_line_2d, relu_plane_3d)

MODELS = {
    "relu_line_2d": relu_line_2d,
    "relu_plane_3d": relu_plane_3d,
    "relu_axis_3d": relu_axis_3d,
    "leaky_line_2d": leaky_line_2d,
    "leaky_plane_3d": leaky_plane_3d,
    "mnist_random": mnist_architecture,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("models"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, build in MODELS.items():
        path = args.out / f"{name}.json"
        save_model(build(), path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
