"""Brute-force checks that do not share code paths with the walkers.

* a grid scan that reconstructs a level set of a low-dimensional network,
* an audit that recomputes walk outputs from scratch,
* central finite-difference Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, OnKinkError, UnsupportedError
from .linalg import as_vector
from .network import NetworkSpec, activation_signature, forward_batch

MAX_GRID_DIM = 4
GRID_CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class LevelSetGrid:
    """Regular grid over a box with a membership mask for one level set."""

    axes: tuple
    mask: np.ndarray
    reference_output: np.ndarray
    value_tol: float

    @property
    def spacing(self) -> np.ndarray:
        return np.array([ax[1] - ax[0] for ax in self.axes])

    @property
    def points(self) -> np.ndarray:
        idx = np.argwhere(self.mask)
        return np.stack([ax[idx[:, i]] for i, ax in enumerate(self.axes)], axis=1)

    def snap(self, points) -> np.ndarray:
        """Index of the nearest grid node for each point; ``-1`` rows lie outside the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        lo = np.array([ax[0] for ax in self.axes])
        hi = np.array([ax[-1] for ax in self.axes])
        idx = np.rint((pts - lo) / self.spacing).astype(np.int64)
        outside = np.any((pts < lo - 0.5 * self.spacing) | (pts > hi + 0.5 * self.spacing), axis=1)
        idx[outside] = -1
        return idx

    def contains(self, points) -> np.ndarray:
        """Whether each point's nearest grid node is in the level set (False outside the box)."""
        idx = self.snap(points)
        inside = idx[:, 0] >= 0
        out = np.zeros(idx.shape[0], dtype=bool)
        out[inside] = self.mask[tuple(idx[inside].T)]
        return out


def brute_force_level_set(net: NetworkSpec, box, resolution: int, reference,
                          value_tol: float, state=None) -> LevelSetGrid:
    """Every grid node ``p`` with ``max|N(p) - N(reference)| <= value_tol``.

    ``box`` is a sequence of ``(lo, hi)`` per input coordinate and
    ``resolution`` the number of nodes per axis (endpoints included).
    """
    box = np.asarray(box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2 or box.shape[0] != net.input_dim:
        raise ContractError(f"box must have one (lo, hi) pair per input, got shape {box.shape}")
    dim = box.shape[0]
    if dim > MAX_GRID_DIM:
        raise UnsupportedError(f"grid oracle supports at most {MAX_GRID_DIM} input dimensions, got {dim}")
    if int(resolution) < 2:
        raise ContractError("resolution must be at least 2")
    if not np.all(box[:, 0] < box[:, 1]):
        raise ContractError("box bounds must satisfy lo < hi")
    if not value_tol >= 0:
        raise ContractError("value_tol must be non-negative")
    resolution = int(resolution)
    axes = tuple(np.linspace(lo, hi, resolution) for lo, hi in box)
    ref_out = forward_batch(net, as_vector(reference, "reference")[None, :], state)[0]

    total = resolution ** dim
    mask = np.empty(total, dtype=bool)
    for start in range(0, total, GRID_CHUNK):
        flat = np.arange(start, min(total, start + GRID_CHUNK))
        idx = np.unravel_index(flat, (resolution,) * dim)
        pts = np.stack([axes[i][idx[i]] for i in range(dim)], axis=1)
        out = forward_batch(net, pts, state)
        mask[flat] = np.max(np.abs(out - ref_out), axis=1) <= value_tol
    return LevelSetGrid(axes, mask.reshape((resolution,) * dim), ref_out, float(value_tol))


def default_value_tol(walk) -> float:
    """Twice the spread of the walk's own outputs around its first output."""
    outputs = np.asarray(walk.outputs)
    return 2.0 * float(np.max(np.abs(outputs - outputs[0]))) if outputs.size else 0.0


@dataclass(frozen=True, eq=False)
class InvarianceReport:
    max_output_deviation: float
    argmax_flips: int
    series: np.ndarray
    tol: float

    @property
    def within_tol(self) -> bool:
        return self.max_output_deviation <= self.tol

    def summary(self) -> dict:
        return {"max_output_deviation": self.max_output_deviation,
                "argmax_flips": self.argmax_flips, "points": int(self.series.size),
                "tol": self.tol, "within_tol": self.within_tol}

    def describe(self) -> str:
        verdict = "ok" if self.within_tol else "VIOLATED"
        return (f"invariance {verdict}: max deviation {self.max_output_deviation:.3e} "
                f"(tol {self.tol:.3e}) over {self.series.size} points, "
                f"{self.argmax_flips} argmax flips")


def audit_invariance(net: NetworkSpec, walk, tol: float, state=None) -> InvarianceReport:
    """Recompute outputs along a walk and measure drift from the start output.

    Only ``walk.points`` is used; stored outputs are ignored. Argmax flips are
    counted for networks with more than one output.
    """
    pts = np.atleast_2d(np.asarray(walk.points, dtype=np.float64))
    if pts.shape[0] < 1:
        raise ContractError("walk has no points")
    out = forward_batch(net, pts, state)
    series = np.max(np.abs(out - out[0]), axis=1)
    flips = int(np.count_nonzero(np.argmax(out, axis=1) != np.argmax(out[0]))) if out.shape[1] > 1 else 0
    return InvarianceReport(float(series.max()), flips, series, float(tol))


def finite_difference_jacobian(net: NetworkSpec, x, step: float = 1e-6, state=None) -> np.ndarray:
    """Central-difference Jacobian of the outputs with respect to ``x``.

    Raises :class:`OnKinkError` when a perturbed point sits in a different
    activation region, since the difference quotient would straddle a kink.
    """
    if not step > 0:
        raise ContractError("step must be positive")
    x = as_vector(x, "x")
    n = x.shape[0]
    base = activation_signature(net, x, state)
    if base.flagged:
        raise OnKinkError("point lies on a kink")
    pts = np.concatenate([x + step * np.eye(n), x - step * np.eye(n)])
    for k, p in enumerate(pts):
        if activation_signature(net, p, state) != base:
            raise OnKinkError(f"activation region changes within step {step:g} along coordinate {k % n}")
    out = forward_batch(net, pts, state)
    return ((out[:n] - out[n:]) / (2.0 * step)).T
