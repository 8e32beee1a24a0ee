"""Small reference networks used by the experiment scripts and tests."""
from __future__ import annotations

import numpy as np

from .network import Activation, AvgPool, Conv2D, Dense, Flatten, NetworkSpec

LEAKY_SLOPE = -0.01


def single_unit(weights, act: Activation, bias: float = 0.0) -> NetworkSpec:
    """``x -> act(w . x + bias)``: one unit on a linear functional."""
    w = np.asarray(weights, dtype=np.float64)[None, :]
    return NetworkSpec.from_layers([Dense(w, np.array([bias]), act)])


def relu_line_2d() -> NetworkSpec:
    """ReLU of ``x - y``; classes are lines ``x - y = c`` and the half-plane ``x <= y``."""
    return single_unit([1.0, -1.0], Activation.relu())


def relu_plane_3d() -> NetworkSpec:
    """ReLU of ``x - y + z``; active classes are planes parallel to ``x - y + z = 0``."""
    return single_unit([1.0, -1.0, 1.0], Activation.relu())


def relu_axis_3d() -> NetworkSpec:
    """ReLU of ``3x``: pullback ``diag(9, 0, 0)`` where ``x > 0``, zero where ``x < 0``."""
    return single_unit([3.0, 0.0, 0.0], Activation.relu())


def leaky_line_2d(slope: float = LEAKY_SLOPE) -> NetworkSpec:
    """Leaky ReLU of ``2x - y``; every class is a line parallel to ``y = 2x``."""
    return single_unit([2.0, -1.0], Activation.leaky_relu(slope))


def leaky_plane_3d(slope: float = LEAKY_SLOPE) -> NetworkSpec:
    """Leaky ReLU of ``x + y + z`` (or of ``x - y + z`` via ``weights``)."""
    return single_unit([1.0, 1.0, 1.0], Activation.leaky_relu(slope))


def mnist_architecture(seed: int = 0, side: int = 28) -> NetworkSpec:
    """Convolutional digit classifier with fixed random weights.

    conv 1->10 (5x5) -> avgpool 2 -> relu -> conv 10->20 (5x5) -> avgpool 2 ->
    relu -> flatten -> dense 50 relu -> dense 10 softmax. Weights are drawn
    with variance ``2 / fan_in`` so activations keep their scale through depth.
    """
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    s1 = side - 4
    p1 = s1 // 2
    s2 = p1 - 4
    p2 = s2 // 2
    flat = 20 * p2 * p2
    layers = [
        Conv2D(he((10, 1, 5, 5), 25), side, side, bias=rng.normal(0.0, 0.1, 10)),
        AvgPool(2, 10, s1, s1, Activation.relu()),
        Conv2D(he((20, 10, 5, 5), 250), p1, p1, bias=rng.normal(0.0, 0.1, 20)),
        AvgPool(2, 20, s2, s2, Activation.relu()),
        Flatten(p2, p2, 20),
        Dense(he((50, flat), flat), rng.normal(0.0, 0.1, 50), Activation.relu()),
        Dense(he((10, 50), 50), rng.normal(0.0, 0.1, 10), Activation("softmax")),
    ]
    return NetworkSpec.from_layers(layers)


def synthetic_digit(side: int = 28, seed: int = 0) -> np.ndarray:
    """A blurred ring-and-stroke image in [0, 1], flattened row-major."""
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1) - 0.5
    ring = np.exp(-((np.hypot(xx, yy + 0.12) - 0.18) ** 2) / 0.004)
    stroke = np.exp(-((xx - 0.16) ** 2) / 0.003) * (yy > -0.25)
    img = np.clip(ring + stroke, 0.0, 1.0)
    noise = np.random.default_rng(seed).uniform(0.0, 0.05, img.shape)
    return np.clip(img + noise, 0.0, 1.0).ravel()


def random_smooth_mlp(rng: np.random.Generator, max_layers: int = 4, max_dim: int = 32) -> NetworkSpec:
    """Random dense network with smooth activations (tanh, sigmoid, softplus, identity)."""
    kinds = ("tanh", "sigmoid", "softplus", "identity")
    depth = int(rng.integers(1, max_layers + 1))
    dims = rng.integers(1, max_dim + 1, size=depth + 1)
    layers = []
    for i in range(depth):
        A = rng.normal(0.0, 1.0 / np.sqrt(dims[i]), size=(dims[i + 1], dims[i]))
        layers.append(Dense(A, rng.normal(0.0, 0.5, dims[i + 1]), Activation(str(rng.choice(kinds)))))
    return NetworkSpec.from_layers(layers)
