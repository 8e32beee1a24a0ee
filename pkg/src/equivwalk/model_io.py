"""File formats: model manifests, MNIST IDX images, CSV feature tables, walks.

Model files are UTF-8 JSON manifests with a fixed field order. Weight arrays
are embedded as base64 of little-endian binary64 values in row-major order,
next to their declared shape.

Walk records have two encodings: a CSV for plotting (one point per row,
17 significant digits) and a binary file that round-trips every float
bit-exactly.
"""
from __future__ import annotations

import base64
import csv
import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import EquivWalkError, ModelFormatError
from .network import (Activation, AvgPool, Conv2D, Dense, Flatten, LSTMCell, NetworkSpec,
                      Residual)

MODEL_FORMAT = "equivwalk-model"
MODEL_VERSION = 1
WALK_MAGIC = b"EQWALK\x00\x00"
WALK_VERSION = 1
IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# models


def _encode(arr) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(blob, where) -> np.ndarray:
    try:
        shape = [int(s) for s in blob["shape"]]
        raw = base64.b64decode(blob["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{where}: malformed weight blob ({exc})") from exc
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise ModelFormatError(
            f"{where}: weight blob has {len(raw)} bytes, shape {shape} needs {expected}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def _act_to_dict(act: Activation) -> dict:
    d = {"kind": act.kind}
    if act.kind == "leaky_relu":
        d["slope"] = act.slope
    if act.kind == "saturating_ramp":
        d.update(alpha=act.alpha, beta=act.beta, a=act.a, b=act.b, inner=act.inner)
    return d


def _act_from_dict(d, where) -> Activation:
    if not isinstance(d, dict) or "kind" not in d:
        raise ModelFormatError(f"{where}: activation record needs a 'kind'")
    kwargs = {k: d[k] for k in ("slope", "alpha", "beta", "a", "b") if k in d}
    if "inner" in d:
        kwargs["inner"] = d["inner"]
    try:
        return Activation(d["kind"], **{k: (v if k == "inner" else float(v)) for k, v in kwargs.items()})
    except EquivWalkError as exc:
        raise ModelFormatError(f"{where}: {exc}") from exc


def _layer_to_dict(layer) -> dict:
    if isinstance(layer, Dense):
        return {"type": "dense", "activation": _act_to_dict(layer.act),
                "blobs": {"A": _encode(layer.A), "b": _encode(layer.b)}}
    if isinstance(layer, Conv2D):
        return {"type": "conv2d", "height": layer.height, "width": layer.width,
                "stride": layer.stride, "padding": layer.padding,
                "activation": _act_to_dict(layer.act),
                "blobs": {"kernel": _encode(layer.kernel), "bias": _encode(layer.bias)}}
    if isinstance(layer, AvgPool):
        return {"type": "avgpool", "window": layer.window, "channels": layer.channels,
                "height": layer.height, "width": layer.width,
                "activation": _act_to_dict(layer.act)}
    if isinstance(layer, Flatten):
        return {"type": "flatten", "channels": layer.channels, "height": layer.height,
                "width": layer.width}
    if isinstance(layer, Residual):
        return {"type": "residual", "inner": [_layer_to_dict(x) for x in layer.inner]}
    if isinstance(layer, LSTMCell):
        return {"type": "lstm", "hidden_dim": layer.hidden_dim,
                "blobs": {"W": _encode(layer.W), "U": _encode(layer.U), "b": _encode(layer.b)}}
    raise ModelFormatError(f"cannot serialise layer of type {type(layer).__name__}")


def _layer_from_dict(d, where):
    if not isinstance(d, dict):
        raise ModelFormatError(f"{where}: layer record must be an object")
    kind = d.get("type")
    blobs = d.get("blobs", {})

    def blob(name):
        if name not in blobs:
            raise ModelFormatError(f"{where}: missing weight blob {name!r}")
        return _decode(blobs[name], f"{where} blob {name!r}")

    try:
        if kind == "dense":
            return Dense(blob("A"), blob("b"), _act_from_dict(d.get("activation"), where))
        if kind == "conv2d":
            return Conv2D(blob("kernel"), int(d["height"]), int(d["width"]), int(d["stride"]),
                          d["padding"], blob("bias"), _act_from_dict(d.get("activation"), where))
        if kind == "avgpool":
            return AvgPool(int(d["window"]), int(d["channels"]), int(d["height"]), int(d["width"]),
                           _act_from_dict(d.get("activation", {"kind": "identity"}), where))
        if kind == "flatten":
            return Flatten(int(d["height"]), int(d["width"]), int(d.get("channels", 1)))
        if kind == "residual":
            inner = [_layer_from_dict(x, f"{where}.{i}") for i, x in enumerate(d["inner"])]
            return Residual(tuple(inner))
        if kind == "lstm":
            return LSTMCell(blob("W"), blob("U"), blob("b"), int(d["hidden_dim"]))
    except KeyError as exc:
        raise ModelFormatError(f"{where}: missing field {exc}") from exc
    except ModelFormatError:
        raise
    except EquivWalkError as exc:
        raise ModelFormatError(f"{where}: {exc}") from exc
    raise ModelFormatError(f"{where}: unknown layer type {kind!r}")


def model_to_dict(net: NetworkSpec) -> dict:
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "input_dim": net.input_dim,
            "output_dim": net.output_dim, "memory_dim": net.memory_dim,
            "layers": [_layer_to_dict(layer) for layer in net.layers]}


def model_from_dict(doc) -> NetworkSpec:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not an {MODEL_FORMAT} manifest")
    if "version" not in doc:
        raise ModelFormatError("manifest has no version field")
    if doc["version"] != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc['version']!r}")
    try:
        layers = [_layer_from_dict(d, f"layer {i}") for i, d in enumerate(doc["layers"])]
        input_dim, output_dim = int(doc["input_dim"]), int(doc["output_dim"])
        memory_dim = int(doc.get("memory_dim", 0))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed manifest header: {exc}") from exc
    try:
        return NetworkSpec(tuple(layers), input_dim, output_dim, memory_dim)
    except EquivWalkError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(net: NetworkSpec, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(net), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> NetworkSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: malformed manifest ({exc})") from exc
    return model_from_dict(doc)


# --------------------------------------------------------------------------
# datasets


def _open_maybe_gzip(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx_images(path) -> np.ndarray:
    """IDX image file -> ``(count, rows * cols)`` array scaled to [0, 1]."""
    with _open_maybe_gzip(path) as fh:
        data = fh.read()
    if len(data) < 16:
        raise ModelFormatError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ModelFormatError(f"{path}: bad IDX image magic {magic:#010x}")
    payload = data[16:]
    if count * rows * cols != len(payload):
        raise ModelFormatError(
            f"{path}: header declares {count}x{rows}x{cols} pixels, payload has {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return pixels.reshape(count, rows * cols)


def load_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise ModelFormatError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ModelFormatError(f"{path}: bad IDX label magic {magic:#010x}")
    if len(data) - 8 != count:
        raise ModelFormatError(f"{path}: header declares {count} labels, payload has {len(data) - 8}")
    return np.frombuffer(data[8:], dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images) -> None:
    """Write a ``(count, rows, cols)`` uint8 array as an IDX image file."""
    arr = np.asarray(images, dtype=np.uint8)
    count, rows, cols = arr.shape
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols) + arr.tobytes())


class CsvFeatures(NamedTuple):
    features: np.ndarray
    targets: np.ndarray
    ranges: Optional[np.ndarray] = None


def _resolve_column(col, header, path):
    if isinstance(col, int):
        if not -len(header) <= col < len(header):
            raise ModelFormatError(f"{path}: column index {col} out of range")
        return col % len(header)
    if col not in header:
        raise ModelFormatError(f"{path}: missing column {col!r}")
    return header.index(col)


def load_csv_features(path, feature_cols=None, target_col=-1, normalize=False) -> CsvFeatures:
    """Read a headed numeric CSV into feature rows and a target column.

    Columns may be given by name or index; ``feature_cols=None`` takes every
    column but the target. With ``normalize`` the features are min-max scaled
    to [0, 1] and the ``(min, max)`` per feature is returned in ``ranges``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ModelFormatError(f"{path}: empty file, header row expected") from None
        t_idx = _resolve_column(target_col, header, path)
        if feature_cols is None:
            f_idx = [i for i in range(len(header)) if i != t_idx]
        else:
            f_idx = [_resolve_column(c, header, path) for c in feature_cols]
        feats, targets = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ModelFormatError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            values = []
            for i in f_idx + [t_idx]:
                try:
                    values.append(float(row[i]))
                except ValueError:
                    raise ModelFormatError(
                        f"{path}: non-numeric cell {row[i]!r} at row {row_no}, column {header[i]!r}") from None
            feats.append(values[:-1])
            targets.append(values[-1])
    features = np.array(feats, dtype=np.float64).reshape(len(feats), len(f_idx))
    targets_arr = np.array(targets, dtype=np.float64)
    if not normalize:
        return CsvFeatures(features, targets_arr)
    lo, hi = features.min(axis=0), features.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return CsvFeatures((features - lo) / span, targets_arr, np.stack([lo, hi], axis=1))


# --------------------------------------------------------------------------
# walk records


@dataclass
class WalkRecord:
    config: dict
    points: np.ndarray
    outputs: np.ndarray
    signature_hashes: list
    energy: float
    pseudolength: float
    termination: str
    dE: np.ndarray
    dPl: np.ndarray
    kernel_dims: list = field(default_factory=list)

    def __post_init__(self):
        n = self.points.shape[0]
        if not (self.outputs.shape[0] == n == len(self.signature_hashes)
                == self.dE.shape[0] == self.dPl.shape[0]):
            raise ModelFormatError("walk record row counts are inconsistent")

    @classmethod
    def from_result(cls, result) -> "WalkRecord":
        return cls(result.config.echo(), np.asarray(result.points), np.asarray(result.outputs),
                   [s.digest() for s in result.signatures], float(result.energy),
                   float(result.pseudolength), str(result.termination.value),
                   np.asarray(result.dE), np.asarray(result.dPl), list(map(int, result.kernel_dims)))

    def __eq__(self, other):
        if not isinstance(other, WalkRecord):
            return NotImplemented
        arrays = ("points", "outputs", "dE", "dPl")
        same_arrays = all(
            getattr(self, a).shape == getattr(other, a).shape
            and getattr(self, a).tobytes() == getattr(other, a).tobytes() for a in arrays)
        return (same_arrays and self.config == other.config
                and self.signature_hashes == other.signature_hashes
                and struct.pack("<dd", self.energy, self.pseudolength)
                == struct.pack("<dd", other.energy, other.pseudolength)
                and self.termination == other.termination and self.kernel_dims == other.kernel_dims)


def write_walk(record: WalkRecord, path) -> None:
    n, dim = record.points.shape
    out_dim = record.outputs.shape[1]
    header = json.dumps({"config": record.config, "termination": record.termination,
                         "signature_hashes": record.signature_hashes,
                         "kernel_dims": record.kernel_dims}).encode("utf-8")
    parts = [WALK_MAGIC, struct.pack("<II", WALK_VERSION, len(header)), header,
             struct.pack("<QII", n, dim, out_dim),
             struct.pack("<dd", record.energy, record.pseudolength)]
    for arr in (record.points, record.outputs, record.dE, record.dPl):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_walk(path) -> WalkRecord:
    data = Path(path).read_bytes()
    if data[:8] != WALK_MAGIC:
        raise ModelFormatError(f"{path}: not a walk record")
    try:
        version, hlen = struct.unpack_from("<II", data, 8)
        if version != WALK_VERSION:
            raise ModelFormatError(f"{path}: walk record version {version}, expected {WALK_VERSION}")
        off = 16
        meta = json.loads(data[off:off + hlen].decode("utf-8"))
        off += hlen
        n, dim, out_dim = struct.unpack_from("<QII", data, off)
        off += 16
        energy, pseudolength = struct.unpack_from("<dd", data, off)
        off += 16

        def take(count, shape):
            nonlocal off
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
            off += 8 * count
            return arr.reshape(shape)

        points = take(n * dim, (n, dim))
        outputs = take(n * out_dim, (n, out_dim))
        dE = take(n, (n,))
        dPl = take(n, (n,))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: truncated or corrupt walk record ({exc})") from exc
    if off != len(data):
        raise ModelFormatError(f"{path}: {len(data) - off} trailing bytes in walk record")
    return WalkRecord(meta["config"], points, outputs, meta["signature_hashes"], energy,
                      pseudolength, meta["termination"], dE, dPl, meta.get("kernel_dims", []))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_walk_csv(record: WalkRecord, path) -> None:
    """``step,x0..,out0..,dE,dPl``; row ``k`` carries the increments of the segment ending at ``p_k``."""
    n, dim = record.points.shape
    out_dim = record.outputs.shape[1]
    lines = [",".join(["step"] + [f"x{i}" for i in range(dim)]
                      + [f"out{i}" for i in range(out_dim)] + ["dE", "dPl"])]
    for k in range(n):
        cells = [str(k)] + [_fmt(v) for v in record.points[k]] + [_fmt(v) for v in record.outputs[k]]
        cells += [_fmt(record.dE[k]), _fmt(record.dPl[k])]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
