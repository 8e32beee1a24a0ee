"""Command-line entry point: ``equivwalk {walk,pullback,verify,oracle}``.

Exit codes::

    0  success (walks: any natural termination reason)
    2  bad flags or unsupported request
    3  model, dataset or walk-file errors
    4  numeric errors (non-finite values, points on a kink, missing directions)
    5  invariance violation found by ``verify``

Every failure prints one stderr line ``equivwalk: error[<kind>]: <message>``
where ``<kind>`` is one of ``usage``, ``data``, ``numeric``, ``invariance``.
Output files go to ``--out``, defaulting to ``$EQUIVWALK_OUT`` or
``./equivwalk-runs``; each command writes one ``manifest.json`` there.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (ContractError, EquivWalkError, ModelFormatError, NoDirectionError,
                     NumericError, UnsupportedError)
from .metric import IDENTITY_METRIC, OutputMetric, analyze_point
from .model_io import (WalkRecord, file_sha256, load_csv_features, load_idx_images, load_model,
                       read_walk, write_walk, write_walk_csv)
from .oracle import audit_invariance, brute_force_level_set, default_value_tol
from .walkers import MODES, WalkConfig, run_walk

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_INVARIANCE = 0, 2, 3, 4, 5
OUT_ENV = "EQUIVWALK_OUT"
DEFAULT_OUT = "equivwalk-runs"
# options whose values may begin with '-' (negative coordinates)
VECTOR_OPTIONS = ("--start", "--point", "--reference", "--box", "--initial-direction")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_USAGE, "usage", message)


def _glue_vector_values(argv):
    """Turn ``--start -1,2`` into ``--start=-1,2`` so argparse keeps the value."""
    out, i = [], 0
    while i < len(argv):
        arg = argv[i]
        if arg in VECTOR_OPTIONS and i + 1 < len(argv):
            out.append(f"{arg}={argv[i + 1]}")
            i += 2
        else:
            out.append(arg)
            i += 1
    return out


def parse_vector(text: str, what: str = "vector") -> np.ndarray:
    try:
        vals = [float(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"cannot parse {what} {text!r}") from None
    if not vals or not np.all(np.isfinite(vals)):
        raise CliError(EXIT_USAGE, "usage", f"{what} {text!r} must hold finite numbers")
    return np.array(vals)


def parse_metric(text: str) -> OutputMetric:
    if text == "identity":
        return IDENTITY_METRIC
    if text.startswith("diag:"):
        try:
            return OutputMetric.diagonal(parse_vector(text[5:], "metric weights"))
        except ContractError as exc:
            raise CliError(EXIT_USAGE, "usage", str(exc)) from None
    raise CliError(EXIT_USAGE, "usage", f"--metric must be 'identity' or 'diag:w1,w2,...', got {text!r}")


def resolve_start(text: str, csv_normalize: bool = False):
    """Start point from ``x1,x2,...``, ``csv:PATH:ROW`` or ``idx:PATH:INDEX``.

    CSV rows use every column except the last (the target). Returns the
    point and the dataset file it came from, if any.
    """
    for prefix in ("csv:", "idx:"):
        if text.startswith(prefix):
            path, _, index = text[len(prefix):].rpartition(":")
            if not path or not index.isdigit():
                raise CliError(EXIT_USAGE, "usage", f"expected {prefix}PATH:INDEX, got {text!r}")
            row = int(index)
            try:
                data = (load_csv_features(path, normalize=csv_normalize).features
                        if prefix == "csv:" else load_idx_images(path))
            except OSError as exc:
                raise CliError(EXIT_DATA, "data", f"cannot read {path}: {exc.strerror}") from None
            if row >= data.shape[0]:
                raise CliError(EXIT_DATA, "data", f"{path} has {data.shape[0]} rows, index {row} requested")
            return data[row].copy(), path
    return parse_vector(text, "start point"), None


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, "data", f"cannot read model {path}: {exc.strerror}") from None


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, config: dict, model_path, datasets, outputs,
                    started: float, extra=None) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "model": {"path": str(model_path), "sha256": file_sha256(model_path)} if model_path else None,
        "datasets": {str(p): file_sha256(p) for p in sorted(set(map(str, datasets)))},
        "outputs": [str(p) for p in outputs],
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _walk_job(job):
    model_path, start, cfg_kwargs, metric_text, base = job
    net = load_model(model_path)
    cfg = WalkConfig(**cfg_kwargs)
    result = run_walk(net, start, cfg, parse_metric(metric_text))
    record = WalkRecord.from_result(result)
    csv_path, bin_path = base.with_suffix(".csv"), base.with_suffix(".walk")
    write_walk_csv(record, csv_path)
    write_walk(record, bin_path)
    drift = float(np.max(np.abs(record.outputs - record.outputs[0])))
    return {"csv": str(csv_path), "record": str(bin_path), "start": [float(x) for x in start],
            "termination": record.termination, "points": int(record.points.shape[0]),
            "energy": record.energy, "pseudolength": record.pseudolength,
            "max_output_drift": drift}


def cmd_walk(args) -> int:
    started = time.time()
    parse_metric(args.metric)
    net = _load_model(args.model)
    starts, datasets = [], []
    for text in args.start:
        point, source = resolve_start(text, args.csv_normalize)
        if point.shape[0] != net.input_dim:
            raise CliError(EXIT_USAGE, "usage",
                           f"start point has dimension {point.shape[0]}, model expects {net.input_dim}")
        starts.append(point)
        if source:
            datasets.append(source)
    cfg_kwargs = dict(mode=args.mode, steps=args.steps, delta=args.delta, eps=args.eps, tau=args.tau,
                      seed=args.seed, energy_budget=args.energy_budget,
                      relative_eps=args.relative_eps, eig_method=args.eig_method,
                      region_guard=args.region_guard,
                      initial_direction=(None if args.initial_direction is None
                                         else parse_vector(args.initial_direction, "initial direction")))
    cfg = WalkConfig(**cfg_kwargs)  # validate once before any work
    out = _out_dir(args)
    names = ["walk"] if len(starts) == 1 else [f"walk_{i:03d}" for i in range(len(starts))]
    jobs = [(args.model, s, cfg_kwargs, args.metric, out / n) for s, n in zip(starts, names)]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_walk_job, jobs))
    else:
        summaries = [_walk_job(job) for job in jobs]
    for s in summaries:
        print(f"walk {s['csv']}: {s['points']} points, termination={s['termination']}, "
              f"energy={s['energy']:.6g}, max_output_drift={s['max_output_drift']:.6g}")
    files = [p for s in summaries for p in (s["csv"], s["record"])]
    _write_manifest(out, "walk", {**cfg.echo(), "metric": args.metric}, args.model, datasets,
                    files, started, {"walks": summaries})
    return EXIT_OK


def _fmt_row(row) -> str:
    return " ".join(format(float(x), ".17g") for x in row)


def cmd_pullback(args) -> int:
    started = time.time()
    net = _load_model(args.model)
    point = parse_vector(args.point, "point")
    if point.shape[0] != net.input_dim:
        raise CliError(EXIT_USAGE, "usage", f"point has dimension {point.shape[0]}, model expects {net.input_dim}")
    pm = analyze_point(net, point, parse_metric(args.metric), args.eps, relative=args.relative_eps,
                       strict=True, eig_method=args.eig_method)
    print("pullback metric:")
    for row in pm.h:
        print("  " + _fmt_row(row))
    print("eigenvalues: " + _fmt_row(pm.eigen.eigenvalues))
    print(f"kernel_dim: {pm.kernel_dim}")
    print(f"signature: {pm.signature.digest()} {''.join(str(int(c)) for c in pm.signature.codes)}")
    out = _out_dir(args)
    _write_manifest(out, "pullback", {"point": point.tolist(), "metric": args.metric, "eps": args.eps,
                                      "relative_eps": args.relative_eps}, args.model, [], [], started,
                    {"kernel_dim": pm.kernel_dim, "eigenvalues": pm.eigen.eigenvalues.tolist(),
                     "signature": pm.signature.digest()})
    return EXIT_OK


def _read_walk(path):
    try:
        return read_walk(path)
    except OSError as exc:
        raise CliError(EXIT_DATA, "data", f"cannot read walk {path}: {exc.strerror}") from None


def cmd_verify(args) -> int:
    started = time.time()
    net = _load_model(args.model)
    walk = _read_walk(args.walk)
    if walk.points.shape[1] != net.input_dim:
        raise CliError(EXIT_DATA, "data", "walk points do not match the model input dimension")
    report = audit_invariance(net, walk, args.tol)
    print(report.describe())
    _write_manifest(_out_dir(args), "verify", {"walk": args.walk, "tol": args.tol}, args.model,
                    [args.walk], [], started, {"report": report.summary()})
    if not report.within_tol:
        raise CliError(EXIT_INVARIANCE, "invariance", report.describe())
    return EXIT_OK


def cmd_oracle(args) -> int:
    started = time.time()
    net = _load_model(args.model)
    flat = parse_vector(args.box, "box")
    if flat.size % 2:
        raise CliError(EXIT_USAGE, "usage", "--box needs lo,hi pairs")
    box = flat.reshape(-1, 2)
    reference = parse_vector(args.reference, "reference")
    walk = _read_walk(args.walk) if args.walk else None
    if args.value_tol is not None:
        value_tol = args.value_tol
    elif walk is not None:
        value_tol = default_value_tol(walk)
    else:
        raise CliError(EXIT_USAGE, "usage", "--value-tol is required when no --walk is given")
    grid = brute_force_level_set(net, box, args.resolution, reference, value_tol)
    pts = grid.points
    out = _out_dir(args)
    csv_path = out / "oracle_points.csv"
    lines = [",".join(f"x{i}" for i in range(pts.shape[1]))]
    lines += [",".join(format(float(v), ".17g") for v in row) for row in pts]
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    extra = {"oracle_points": int(pts.shape[0]), "value_tol": value_tol}
    print(f"oracle: {pts.shape[0]} of {grid.mask.size} grid points within {value_tol:.6g}")
    if walk is not None:
        in_box = np.all((walk.points >= box[:, 0]) & (walk.points <= box[:, 1]), axis=1)
        hits = grid.contains(walk.points[in_box])
        extra["walk_points_in_box"] = int(in_box.sum())
        extra["walk_points_contained"] = int(hits.sum())
        print(f"walk containment: {int(hits.sum())}/{int(in_box.sum())} in-box walk points lie in the level set")
    _write_manifest(out, "oracle", {"box": box.tolist(), "resolution": args.resolution,
                                    "reference": reference.tolist()}, args.model,
                    [args.walk] if args.walk else [], [csv_path], started, extra)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="equivwalk", description="Explore equivalence classes of neural networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--model", required=True, help="model manifest (JSON)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    def spectral(p):
        p.add_argument("--eps", type=float, default=1e-8, help="null eigenvalue threshold")
        p.add_argument("--relative-eps", action="store_true", help="scale eps by the largest eigenvalue")
        p.add_argument("--metric", default="identity", help="identity | diag:w1,w2,...")
        p.add_argument("--eig-method", choices=("auto", "jacobi", "lapack", "factored"), default="auto")

    w = sub.add_parser("walk", help="run a random walk")
    common(w)
    spectral(w)
    w.add_argument("--start", action="append", required=True,
                   help="x1,x2,... | csv:PATH:ROW | idx:PATH:INDEX (repeat for multi-start)")
    w.add_argument("--mode", choices=MODES, default="simec")
    w.add_argument("--steps", type=int, default=100)
    w.add_argument("--delta", type=float, default=1e-2)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--tau", type=float, help="metric-jump threshold for simec_guarded")
    w.add_argument("--energy-budget", type=float, help="largest accepted per-step energy")
    w.add_argument("--region-guard", action="store_true",
                   help="also stop simec/simec_guarded walks when a piecewise unit changes region")
    w.add_argument("--initial-direction", help="seed direction for simec_1d_leaky")
    w.add_argument("--csv-normalize", action="store_true", help="min-max scale CSV start features")
    w.add_argument("--jobs", type=int, default=1, help="parallel processes for multi-start walks")
    w.set_defaults(func=cmd_walk)

    p = sub.add_parser("pullback", help="print the pullback metric at a point")
    common(p)
    spectral(p)
    p.add_argument("--point", required=True)
    p.set_defaults(func=cmd_pullback)

    v = sub.add_parser("verify", help="audit output invariance along a recorded walk")
    common(v)
    v.add_argument("--walk", required=True, help="binary walk record")
    v.add_argument("--tol", type=float, default=1e-3)
    v.set_defaults(func=cmd_verify)

    o = sub.add_parser("oracle", help="brute-force a level set on a grid")
    common(o)
    o.add_argument("--box", required=True, help="lo1,hi1,lo2,hi2,...")
    o.add_argument("--resolution", type=int, required=True, help="grid points per axis")
    o.add_argument("--reference", required=True, help="point whose level set is scanned")
    o.add_argument("--value-tol", type=float, help="output tolerance (default: 2x walk output spread)")
    o.add_argument("--walk", help="walk record to test for containment")
    o.set_defaults(func=cmd_oracle)
    return parser


def _classify(exc: Exception):
    if isinstance(exc, CliError):
        return exc.code, exc.kind
    if isinstance(exc, ModelFormatError):
        return EXIT_DATA, "data"
    if isinstance(exc, (NumericError, NoDirectionError)):
        return EXIT_NUMERIC, "numeric"
    if isinstance(exc, (ContractError, UnsupportedError)):
        return EXIT_USAGE, "usage"
    return EXIT_DATA, "data"


def main(argv=None) -> int:
    argv = _glue_vector_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise CliError(EXIT_USAGE, "usage", "--jobs must be at least 1")
        return args.func(args)
    except (CliError, EquivWalkError, OSError) as exc:
        code, kind = _classify(exc)
        message = " ".join(str(exc).split())
        print(f"equivwalk: error[{kind}]: {message}", file=sys.stderr)
        return code
