"""Dense linear algebra helpers.

Vectors and matrices are plain float64 numpy arrays. The symmetric
eigensolver is a cyclic Jacobi sweep for small matrices; larger ones go
through LAPACK (``numpy.linalg.eigh``). Both routes are post-processed with
the same sign and ordering convention so results are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ShapeError

# Jacobi is used up to this size when method="auto".
JACOBI_MAX_DIM = 64
SYMMETRY_TOL = 1e-12
SIGN_TOL = 1e-12


def as_vector(x, name="vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} has non-finite entries")
    return v


def as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class SymmetricEigenDecomposition:
    """Eigenvalues sorted ascending, eigenvectors as orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def _check_symmetric(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise ContractError(f"sym_eigen needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ContractError("sym_eigen needs a symmetric matrix")


def jacobi_eigen(m, tol=1e-13, max_sweeps=100):
    """Cyclic-by-row Jacobi eigenvalue iteration.

    Returns unsorted ``(eigenvalues, eigenvectors)``. Converged once the
    off-diagonal Frobenius norm drops below ``tol * ||m||_F``.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off < tol * norm:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < abs(diff) * 1e-150:
                    t = apq / diff  # theta would overflow; t ~ 1 / (2 theta)
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise NumericError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def _lex_order(cols: np.ndarray, row: int = 0) -> np.ndarray:
    """Indices sorting the columns of ``cols`` lexicographically by their entries."""
    k = cols.shape[1]
    if k < 2 or row >= cols.shape[0]:
        return np.arange(k)
    order = np.argsort(cols[row], kind="stable")
    keys = cols[row, order]
    start = 0
    while start < k:
        stop = start + 1
        while stop < k and keys[stop] == keys[start]:
            stop += 1
        if stop - start > 1:
            block = order[start:stop]
            order[start:stop] = block[_lex_order(cols[:, block], row + 1)]
        start = stop
    return order


def canonicalize(eigenvalues, eigenvectors) -> SymmetricEigenDecomposition:
    """Apply the sign convention and the ascending, tie-broken ordering.

    Each eigenvector gets its first entry with magnitude above 1e-12 made
    positive. Columns are sorted by eigenvalue, ties broken lexicographically
    on the (sign-fixed) eigenvector entries.
    """
    w = np.asarray(eigenvalues, dtype=np.float64).copy()
    q = np.asarray(eigenvectors, dtype=np.float64).copy()
    n = q.shape[0]
    significant = np.abs(q) > SIGN_TOL
    first = np.argmax(significant, axis=0)
    signs = np.sign(q[first, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    q *= signs
    order = np.argsort(w, kind="stable")
    ws = w[order]
    # only exactly equal eigenvalues need the entry-wise tie break
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and ws[stop] == ws[start]:
            stop += 1
        if stop - start > 1:
            block = order[start:stop]
            order[start:stop] = block[_lex_order(q[:, block])]
        start = stop
    return SymmetricEigenDecomposition(w[order], np.ascontiguousarray(q[:, order]))


def sym_eigen(m, method="auto") -> SymmetricEigenDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_DIM``). Output is deterministic for identical input.
    """
    a = as_matrix(m)
    _check_symmetric(a)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, q = jacobi_eigen(a)
    elif method == "lapack":
        w, q = np.linalg.eigh(0.5 * (a + a.T))
    else:
        raise ContractError(f"unknown eigen method {method!r}")
    return canonicalize(w, q)


def gram_eigen(b) -> SymmetricEigenDecomposition:
    """Eigendecomposition of ``b.T @ b`` computed from the factor ``b``.

    For a wide ``m x n`` factor (``m < n``) the non-null eigenpairs come from
    the thin SVD of ``b`` and the remaining ``n - m`` eigenvectors (eigenvalue
    exactly 0) from a complete QR of the right singular vectors. This is far
    cheaper than a dense ``n x n`` solve when ``m`` is small.
    """
    b = as_matrix(b)
    m, n = b.shape
    if m >= n:
        g = b.T @ b
        return sym_eigen(0.5 * (g + g.T), "lapack")
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    q, _ = np.linalg.qr(vt.T, mode="complete")
    w = np.concatenate([np.zeros(n - m), s * s])
    vecs = np.concatenate([q[:, m:], vt.T], axis=1)
    return canonicalize(w, vecs)


def orthogonal_complement(basis) -> np.ndarray:
    """Orthonormal basis (as columns) of the complement of span(basis)."""
    b = as_matrix(basis)
    n, d = b.shape
    if d >= n:
        return np.zeros((n, 0))
    proj = np.eye(n) - b @ b.T
    dec = sym_eigen(0.5 * (proj + proj.T))
    # eigenvalues of the projector are 0 (d times) then 1 (n - d times)
    return dec.eigenvectors[:, d:]


def fit_affine_subspace(points, target_dim: int):
    """Least-squares affine subspace of dimension ``target_dim``.

    Returns ``(basis, offset, rms_residual)`` where ``basis`` has orthonormal
    columns, ``offset`` is the centroid, and ``rms_residual`` is the root
    mean square distance from the points to the fitted subspace.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ContractError("points must be a sequence of equal-length vectors")
    n_points, dim = x.shape
    if target_dim < 0 or target_dim > dim:
        raise ContractError(f"target_dim must be in [0, {dim}], got {target_dim}")
    if n_points < target_dim + 1:
        raise ContractError(
            f"need at least {target_dim + 1} points for a {target_dim}-dim fit, got {n_points}")
    offset = x.mean(axis=0)
    centred = x - offset
    scatter = centred.T @ centred
    dec = sym_eigen(0.5 * (scatter + scatter.T))
    basis = dec.eigenvectors[:, dim - target_dim:] if target_dim else np.zeros((dim, 0))
    residual = centred - (centred @ basis) @ basis.T
    rms = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
    return basis, offset, rms
