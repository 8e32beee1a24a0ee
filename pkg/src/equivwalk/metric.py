"""Pullback metrics, their null/non-null split, and curve accumulators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, NumericError, ShapeError
from .linalg import (JACOBI_MAX_DIM, SymmetricEigenDecomposition, as_matrix, as_vector,
                     gram_eigen, sym_eigen)
from .network import (ActivationSignature, NetworkSpec, forward, network_jacobian,
                      signature_from_trace, trace_has_kink)

PSD_CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class OutputMetric:
    """Riemannian metric on the output space: identity or positive diagonal."""

    kind: str = "euclidean_identity"
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "euclidean_identity":
            return
        if self.kind != "diagonal":
            raise ContractError(f"unknown output metric {self.kind!r}")
        w = as_vector(self.weights, "metric weights")
        if np.any(w <= 0):
            raise ContractError("diagonal metric weights must be positive")
        object.__setattr__(self, "weights", w)

    @classmethod
    def diagonal(cls, weights):
        return cls("diagonal", np.asarray(weights, dtype=np.float64))

    @property
    def dim(self) -> Optional[int]:
        return None if self.weights is None else self.weights.shape[0]

    def diag(self, m: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(m)
        if self.weights.shape[0] != m:
            raise ShapeError(f"metric has dimension {self.weights.shape[0]}, Jacobian has {m} rows")
        return self.weights

    def matrix(self, m: int) -> np.ndarray:
        return np.diag(self.diag(m))

    def describe(self) -> str:
        if self.weights is None:
            return "identity"
        return "diag:" + ",".join(repr(float(w)) for w in self.weights)


IDENTITY_METRIC = OutputMetric()


def pullback(J, g: OutputMetric = IDENTITY_METRIC) -> np.ndarray:
    """``J^T G J``: the output metric pulled back through a Jacobian."""
    J = as_matrix(J, "Jacobian")
    w = g.diag(J.shape[0])
    h = J.T @ (w[:, None] * J)
    return 0.5 * (h + h.T)


@dataclass(frozen=True, eq=False)
class PullbackMetric:
    point: np.ndarray
    h: np.ndarray
    eigen: SymmetricEigenDecomposition
    null_indices: np.ndarray
    nonnull_indices: np.ndarray
    jacobian: np.ndarray
    output: np.ndarray
    signature: ActivationSignature
    on_kink: bool = False

    @property
    def kernel_dim(self) -> int:
        return int(self.null_indices.size)

    @property
    def null_vectors(self) -> np.ndarray:
        return self.eigen.eigenvectors[:, self.null_indices]

    @property
    def nonnull_vectors(self) -> np.ndarray:
        return self.eigen.eigenvectors[:, self.nonnull_indices]


def split_spectrum(dec: SymmetricEigenDecomposition, eps: float, relative=False):
    """Clamp roundoff negatives and split indices at the null threshold."""
    w = dec.eigenvalues
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w[0] < -PSD_CLAMP * scale:
        raise NumericError(f"pullback metric has a negative eigenvalue {w[0]:.3e}")
    w = np.where(w < 0, 0.0, w)
    threshold = eps * float(w[-1]) if relative and w.size else eps
    null = np.flatnonzero(w <= threshold)
    nonnull = np.flatnonzero(w > threshold)
    return SymmetricEigenDecomposition(w, dec.eigenvectors), null, nonnull


def _metric_eigen(J, h, g, method):
    m, n = J.shape
    if method == "factored" or (method == "auto" and n > JACOBI_MAX_DIM and m < n):
        return gram_eigen(np.sqrt(g.diag(m))[:, None] * J)
    return sym_eigen(h, method)


def analyze_point(net: NetworkSpec, p, g: OutputMetric = IDENTITY_METRIC, eps: float = 1e-8,
                  state=None, relative=False, strict=True, eig_method="auto") -> PullbackMetric:
    """Pullback metric at ``p`` with its eigenbasis split at ``eps``.

    ``eig_method`` is one of ``"jacobi"``, ``"lapack"``, ``"factored"`` (from
    the weighted Jacobian, see :func:`gram_eigen`) or ``"auto"``: Jacobi for
    small inputs, factored for wide Jacobians, LAPACK otherwise.

    ``eps`` is an absolute eigenvalue cutoff unless ``relative`` is set, in
    which case the cutoff is ``eps * max eigenvalue``.
    """
    if not eps > 0:
        raise ContractError("eps must be positive")
    p = as_vector(p, "point")
    out, trace = forward(net, p, state)
    J = network_jacobian(net, p, state, strict=strict, trace=trace)
    h = pullback(J, g)
    dec, null, nonnull = split_spectrum(_metric_eigen(J, h, g, eig_method), eps, relative)
    return PullbackMetric(p, h, dec, null, nonnull, J, out,
                          signature_from_trace(net, trace), trace_has_kink(trace))


def metric_jump(h1, h2, tau: float) -> bool:
    """True iff some entry of the two metrics differs by strictly more than ``tau``."""
    if not tau > 0:
        raise ContractError("tau must be positive")
    a, b = np.asarray(h1, dtype=np.float64), np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric shapes differ: {a.shape} vs {b.shape}")
    return bool(np.any(np.abs(a - b) > tau))


def lipschitz_bound(net: NetworkSpec) -> float:
    """Product of per-layer operator-norm bounds (1 for the empty network)."""
    return float(np.prod([layer.lipschitz_bound() for layer in net.layers])) if net.layers else 1.0


def suggest_tau(net: NetworkSpec, delta: float) -> float:
    """Jump threshold ``2 * L * delta`` with ``L`` a Lipschitz bound of the network."""
    if not delta > 0:
        raise ContractError("delta must be positive")
    return 2.0 * lipschitz_bound(net) * delta


def step_increments(h, v, delta: float):
    """Energy and pseudolength of the segment ``p -> p + delta * v``.

    ``dE = delta**2 * v.h.v`` and ``dPl = delta * sqrt(v.h.v)``; tiny negative
    roundoff is clamped to zero.
    """
    if not delta > 0:
        raise ContractError("delta must be positive")
    v = np.asarray(v, dtype=np.float64)
    q = float(v @ np.asarray(h) @ v)
    if q < 0:
        if q < -1e-12:
            raise NumericError(f"negative squared pseudo-norm {q:.3e}")
        q = 0.0
    return delta * delta * q, delta * np.sqrt(q)


@dataclass
class CurveAccumulators:
    energy: float = 0.0
    pseudolength: float = 0.0

    def add(self, dE: float, dPl: float) -> None:
        self.energy += dE
        self.pseudolength += dPl
