"""Small dense linear-algebra kernel shared by the solvers and the protocol.

Everything here wraps numpy's LAPACK-backed routines behind explicit
contracts (tolerances, orderings, error types) so the rest of the package
never calls numpy.linalg directly.  All matrices are small and dense:
the optimization problems this package targets have dimension in the
hundreds, so O(d^3) factorizations per round are deliberate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "NotPositiveDefinite",
    "EigenDecomp",
    "as_vector",
    "as_square_matrix",
    "symmetrize",
    "sym_eig",
    "min_eigenvalue",
    "solve_spd",
    "mean_in_order",
]

# Relative eigenvalue threshold below which a matrix is treated as not
# positive definite by solve_spd.
SPD_EIG_FLOOR = 1e-12


class NotPositiveDefinite(ValueError):
    """Raised when a routine requiring a positive definite matrix gets one
    whose smallest eigenvalue is at or below the relative floor."""


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a contiguous 1-d float64 array, optionally checking length."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected a vector of length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def as_square_matrix(a, dim: int | None = None) -> np.ndarray:
    """Coerce to a contiguous 2-d square float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise ValueError(f"expected a {dim}x{dim} matrix, got {m.shape[0]}x{m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def symmetrize(a) -> np.ndarray:
    """Return a matrix that is exactly symmetric, built from the lower triangle.

    Copying one triangle (rather than averaging A and A.T) guarantees
    H[i, j] == H[j, i] bitwise, so later equality checks on stored
    matrices are exact.
    """
    m = as_square_matrix(a)
    out = np.tril(m)
    out = out + np.tril(m, -1).T
    return out


def asymmetry(a: np.ndarray) -> float:
    """Max absolute difference between A and A.T."""
    return float(np.max(np.abs(a - a.T))) if a.size else 0.0


@dataclass(frozen=True)
class EigenDecomp:
    """Eigendecomposition of a symmetric matrix.

    eigenvalues are ascending; eigenvectors[:, i] is the unit eigenvector
    for eigenvalues[i].  Vectors are sign-fixed: the first component with
    magnitude above 1e-12 is made positive, so the decomposition of a
    given matrix is reproducible down to the bit.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def _fix_signs(q: np.ndarray) -> np.ndarray:
    q = q.copy()
    for i in range(q.shape[1]):
        col = q[:, i]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0.0:
            q[:, i] = -col
    return q


def sym_eig(a, *, check_tol: float = 1e-8) -> EigenDecomp:
    """Full eigendecomposition of a symmetric matrix.

    The input must be symmetric up to check_tol * (1 + max|A|); only the
    lower triangle is read, so tiny asymmetries from assembling a matrix
    column-by-column are tolerated but anything larger is an error.
    """
    m = as_square_matrix(a)
    scale = 1.0 + (float(np.max(np.abs(m))) if m.size else 0.0)
    if asymmetry(m) > check_tol * scale:
        raise ValueError("matrix is not symmetric")
    w, q = np.linalg.eigh(m, UPLO="L")
    return EigenDecomp(eigenvalues=w, eigenvectors=_fix_signs(q))


def min_eigenvalue(a) -> float:
    """Smallest eigenvalue of a symmetric matrix (values only, cheaper)."""
    m = as_square_matrix(a)
    return float(np.linalg.eigvalsh(m, UPLO="L")[0])


def solve_spd(a, b) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A.

    Raises NotPositiveDefinite when the smallest eigenvalue is at or below
    SPD_EIG_FLOOR times the largest absolute eigenvalue.  One step of
    iterative refinement keeps the residual within 1e-9 * (1 + ||b||).
    """
    m = as_square_matrix(a)
    rhs = as_vector(b, m.shape[0])
    w = np.linalg.eigvalsh(m, UPLO="L")
    lam_min = float(w[0])
    lam_scale = float(np.max(np.abs(w))) if w.size else 0.0
    if lam_min <= SPD_EIG_FLOOR * lam_scale or lam_min <= 0.0:
        raise NotPositiveDefinite(
            f"matrix is not positive definite: min eigenvalue {lam_min:.3e} "
            f"(scale {lam_scale:.3e})"
        )
    x = np.linalg.solve(m, rhs)
    # One refinement step; cheap and tightens the residual by orders of
    # magnitude when the system is mildly ill-conditioned.
    r = rhs - m @ x
    x = x + np.linalg.solve(m, r)
    resid = float(np.linalg.norm(rhs - m @ x))
    if resid > 1e-9 * (1.0 + float(np.linalg.norm(rhs))):
        raise ArithmeticError(
            f"linear solve residual {resid:.3e} exceeds tolerance; "
            "matrix is too ill-conditioned"
        )
    return x


def mean_in_order(items: Sequence[np.ndarray | float]) -> np.ndarray | float:
    """Mean with a fixed left-to-right summation order.

    Floating-point addition is not associative, so averaging client
    payloads in a fixed order is what makes aggregated traces
    bit-reproducible across transports and reruns.
    """
    if len(items) == 0:
        raise ValueError("cannot average zero items")
    first = items[0]
    if np.isscalar(first) or getattr(first, "ndim", None) == 0:
        acc = float(first)
        for item in items[1:]:
            acc += float(item)
        return acc / len(items)
    acc = np.array(first, dtype=np.float64, copy=True)
    for item in items[1:]:
        acc += item
    acc /= len(items)
    return acc
