import base64
import gzip
import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from equivwalk.errors import ModelFormatError
from equivwalk.model_io import (WalkRecord, load_csv_features, load_idx_images, load_idx_labels,
                                load_model, model_to_dict, read_walk, save_model, write_idx_images,
                                write_walk, write_walk_csv)
from equivwalk.network import (Activation, AvgPool, Conv2D, Dense, Flatten, LSTMCell, NetworkSpec,
                               Residual, forward_batch)
from equivwalk.walkers import Termination, WalkConfig, simec_nd
from equivwalk.zoo import mnist_architecture, relu_line_2d


def mixed_net(rng):
    ramp = Activation("saturating_ramp", alpha=-2.0, beta=2.0, a=-1.0, b=1.0, inner="tanh")
    return NetworkSpec.from_layers([
        Conv2D(rng.normal(size=(2, 1, 3, 3)), 6, 6, stride=1, padding="zero", bias=rng.normal(size=2),
               act=Activation.leaky_relu(-0.01)),
        AvgPool(2, 2, 6, 6, Activation("softplus")),
        Flatten(3, 3, 2),
        Residual((Dense(rng.normal(size=(18, 18)), rng.normal(size=18), ramp),
                  Dense(rng.normal(size=(18, 18)) * 0.1, np.zeros(18), Activation("sigmoid")))),
        LSTMCell(rng.normal(size=(8, 18)), rng.normal(size=(8, 2)), rng.normal(size=8), 2),
        Dense(rng.normal(size=(3, 2)), rng.normal(size=3), Activation("softmax")),
    ])


# ---------------------------------------------------------------- models


def test_minimal_model(tmp_path):
    path = tmp_path / "relu.json"
    save_model(relu_line_2d(), path)
    net = load_model(path)
    assert net.input_dim == 2 and net.output_dim == 1
    assert np.array_equal(net.layers[0].A, [[1.0, -1.0]])
    doc = json.loads(path.read_text())
    assert list(doc)[:3] == ["format", "version", "input_dim"]


def test_mnist_architecture_loads(tmp_path):
    path = tmp_path / "mnist.json"
    save_model(mnist_architecture(seed=1), path)
    net = load_model(path)
    assert net.input_dim == 784 and net.output_dim == 10
    assert net.layers[5].A.shape == (50, 320)


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    net = mixed_net(rng)
    path = tmp_path / "mixed.json"
    save_model(net, path)
    again = load_model(path)
    xs = rng.normal(size=(100, 36))
    state = rng.normal(size=(100, 4))
    assert forward_batch(net, xs, state).tobytes() == forward_batch(again, xs, state).tobytes()
    save_model(again, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_weights_little_endian():
    doc = model_to_dict(relu_line_2d())
    raw = base64.b64decode(doc["layers"][0]["blobs"]["A"]["data"])
    assert raw == struct.pack("<2d", 1.0, -1.0)


def corrupt(tmp_path, mutate):
    doc = model_to_dict(relu_line_2d())
    mutate(doc)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    return path


def test_truncated_blob_names_layer(tmp_path):
    def truncate(doc):
        blob = doc["layers"][0]["blobs"]["A"]
        blob["data"] = base64.b64encode(base64.b64decode(blob["data"])[:8]).decode()
    with pytest.raises(ModelFormatError, match="layer 0"):
        load_model(corrupt(tmp_path, truncate))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.update(version=2), "version"),
    (lambda d: d.pop("version"), "version"),
    (lambda d: d.update(format="other"), "manifest"),
    (lambda d: d.pop("input_dim"), "header"),
    (lambda d: d["layers"][0].update(type="maxpool"), "unknown layer type"),
    (lambda d: d.update(input_dim=3), "first layer"),
    (lambda d: d["layers"][0]["blobs"]["A"].update(shape=[2, 1]), "layer 0"),
    (lambda d: d["layers"][0]["activation"].update(kind="leaky_relu", slope=1.0), "layer 0"),
])
def test_model_errors(tmp_path, mutate, message):
    with pytest.raises(ModelFormatError, match=message):
        load_model(corrupt(tmp_path, mutate))


def test_shape_mismatch_names_layer(tmp_path):
    net = NetworkSpec.from_layers([Dense(np.ones((3, 2)), np.zeros(3)), Dense(np.ones((1, 3)), np.zeros(1))])
    doc = model_to_dict(net)
    doc["layers"][1]["blobs"]["A"] = {"shape": [1, 4], "data": base64.b64encode(np.ones(4).tobytes()).decode()}
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="layer 1"):
        load_model(path)


def test_malformed_json(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(path)


# ---------------------------------------------------------------- idx


def test_idx_scaling(tmp_path):
    path = tmp_path / "one.idx"
    write_idx_images(path, np.array([[[0, 255], [128, 64]]], dtype=np.uint8))
    images = load_idx_images(path)
    assert images.shape == (1, 4)
    assert np.array_equal(images[0], [0.0, 1.0, 128 / 255, 64 / 255])
    header = path.read_bytes()[:16]
    assert header == bytes.fromhex("00000803" "00000001" "00000002" "00000002")


def test_idx_empty_and_gzip(tmp_path):
    path = tmp_path / "empty.idx"
    path.write_bytes(struct.pack(">IIII", 2051, 0, 28, 28))
    assert load_idx_images(path).shape == (0, 784)
    gz = tmp_path / "one.idx.gz"
    gz.write_bytes(gzip.compress(struct.pack(">IIII", 2051, 1, 1, 2) + bytes([255, 0])))
    assert np.array_equal(load_idx_images(gz), [[1.0, 0.0]])


def test_idx_full_size_file(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "t10k.idx"
    write_idx_images(path, rng.integers(0, 256, size=(10_000, 28, 28), dtype=np.uint8))
    images = load_idx_images(path)
    assert images.shape == (10_000, 784)
    assert 0.0 <= images.min() and images.max() <= 1.0


def test_idx_errors(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(struct.pack(">IIII", 2049, 1, 2, 2) + bytes(4))
    with pytest.raises(ModelFormatError, match="magic"):
        load_idx_images(path)
    path.write_bytes(struct.pack(">IIII", 2051, 2, 2, 2) + bytes(4))
    with pytest.raises(ModelFormatError, match="payload"):
        load_idx_images(path)
    labels = tmp_path / "labels.idx"
    labels.write_bytes(struct.pack(">II", 2049, 3) + bytes([4, 9, 0]))
    assert load_idx_labels(labels).tolist() == [4, 9, 0]


# ---------------------------------------------------------------- csv


def test_csv_power_plant_row(tmp_path):
    path = tmp_path / "ccpp.csv"
    path.write_text("AT,V,AP,RH,PE\n23.64,58.49,1011.4,74.2,469.69\n")
    table = load_csv_features(path, ["AT", "V", "AP", "RH"], "PE")
    assert table.features.tolist() == [[23.64, 58.49, 1011.4, 74.2]]
    assert table.targets.tolist() == [469.69]
    assert load_csv_features(path).features.shape == (1, 4)


def test_csv_many_rows_and_normalization(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.uniform(0, 100, size=(9568, 5))
    path = tmp_path / "big.csv"
    np.savetxt(path, data, delimiter=",", header="AT,V,AP,RH,PE", comments="")
    table = load_csv_features(path, normalize=True)
    assert table.features.shape == (9568, 4) and table.targets.shape == (9568,)
    assert table.features.min() == 0.0 and table.features.max() == 1.0
    lo, hi = table.ranges[:, 0], table.ranges[:, 1]
    restored = table.features * (hi - lo) + lo
    assert np.allclose(restored, data[:, :4], rtol=0, atol=1e-10)
    assert np.allclose(table.targets, data[:, 4], rtol=0, atol=1e-12)


def test_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(ModelFormatError, match=r"row 2, column 'b'"):
        load_csv_features(path)
    with pytest.raises(ModelFormatError, match="missing column"):
        load_csv_features(path, ["a"], "c")
    path.write_text("")
    with pytest.raises(ModelFormatError, match="header"):
        load_csv_features(path)


# ---------------------------------------------------------------- walks


def record_for(steps=3, **kwargs):
    cfg = WalkConfig(steps=steps, **kwargs)
    return WalkRecord.from_result(simec_nd(relu_line_2d(), np.array([-0.98, -2.45]), cfg))


def test_walk_round_trip_minimal(tmp_path):
    rec = record_for(steps=1)
    write_walk(rec, tmp_path / "w.walk")
    assert read_walk(tmp_path / "w.walk") == rec


def test_walk_round_trip_5000(tmp_path):
    rec = record_for(steps=5000, delta=1e-2)
    path = tmp_path / "w.walk"
    write_walk(rec, path)
    back = read_walk(path)
    assert back == rec and back.points.shape == (5001, 2)
    payload = 5001 * (2 + 1 + 2) * 8
    assert payload < path.stat().st_size < payload + 200_000


def test_walk_preserves_termination(tmp_path):
    rec = record_for()
    rec.termination = Termination.METRIC_JUMP.value
    write_walk(rec, tmp_path / "w.walk")
    assert read_walk(tmp_path / "w.walk").termination == "metric_jump"


@given(st.lists(st.floats(allow_nan=False, width=64), min_size=2, max_size=40))
def test_walk_float_payload_bit_exact(values):
    import tempfile
    from pathlib import Path
    pts = np.array(values[: len(values) // 2 * 2]).reshape(-1, 2)
    n = pts.shape[0]
    rec = WalkRecord({"mode": "simec"}, pts, pts[:, :1].copy(), ["0" * 16] * n, float(values[0]),
                     float(values[-1]), "max_iterations", pts[:, 0].copy(), pts[:, 1].copy(), [1] * n)
    with tempfile.TemporaryDirectory() as d:
        write_walk(rec, Path(d) / "w.walk")
        assert read_walk(Path(d) / "w.walk") == rec


def test_walk_version_and_corruption(tmp_path):
    rec = record_for()
    path = tmp_path / "w.walk"
    write_walk(rec, path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", 9)
    (tmp_path / "v.walk").write_bytes(bytes(raw))
    with pytest.raises(ModelFormatError, match="version"):
        read_walk(tmp_path / "v.walk")
    (tmp_path / "t.walk").write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ModelFormatError):
        read_walk(tmp_path / "t.walk")
    (tmp_path / "m.walk").write_bytes(b"NOTAWALK" + path.read_bytes()[8:])
    with pytest.raises(ModelFormatError):
        read_walk(tmp_path / "m.walk")


def test_walk_csv_layout(tmp_path):
    rec = record_for(steps=2)
    path = tmp_path / "w.csv"
    write_walk_csv(rec, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,x0,x1,out0,dE,dPl"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[:3] == ["0", "-0.97999999999999998", "-2.4500000000000002"]
    back = np.array([[float(c) for c in line.split(",")] for line in lines[1:]])
    assert back[:, 1:3].tobytes() == rec.points.tobytes()
