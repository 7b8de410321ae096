"""
Dense symmetric-positive-definite linear algebra shared by the GP code.

All functions are pure; factors are immutable once returned.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from plebo.config import DEFAULT_CONFIG
from plebo.errors import DimensionMismatch, NotPositiveDefinite


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor ``L`` of ``A + jitter_used * I``."""

    L: np.ndarray
    jitter_used: float = 0.0

    @property
    def n(self) -> int:
        return self.L.shape[0]


def as_square_matrix(A) -> np.ndarray:
    """Validate and return ``A`` as a finite float64 square matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    return A


def cholesky(A, jitter_ladder: Optional[Sequence[float]] = None) -> CholeskyFactor:
    """
    Factorise a symmetric positive-definite matrix.

    The input is symmetrised as (A + A^T)/2. Each jitter in ``jitter_ladder``
    is tried in ascending order and the first successful factorisation wins.

    Raises:
        NotPositiveDefinite: if every ladder entry fails.
    """
    A = as_square_matrix(A)
    ladder = DEFAULT_CONFIG.gp.JITTER_LADDER if jitter_ladder is None else jitter_ladder
    sym = 0.5 * (A + A.T)
    eye = np.eye(sym.shape[0])
    for jitter in sorted(float(j) for j in ladder):
        try:
            L = linalg.cholesky(sym + jitter * eye if jitter else sym, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        # LAPACK can return a factor with a zero pivot on exactly singular input
        if np.all(np.diag(L) > 0):
            return CholeskyFactor(L=L, jitter_used=jitter)
    raise NotPositiveDefinite(f"Cholesky failed for every jitter in {list(ladder)}")


def solve_chol(F: CholeskyFactor, b) -> np.ndarray:
    """Solve (L L^T) x = b with two triangular solves. ``b`` may be a vector or matrix."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != F.n:
        raise DimensionMismatch(f"factor has dimension {F.n}, right-hand side has {b.shape[0]} rows")
    return linalg.cho_solve((F.L, True), b, check_finite=False)


def solve_lower(F: CholeskyFactor, b) -> np.ndarray:
    """Solve L v = b (one triangular solve); used for predictive variances."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != F.n:
        raise DimensionMismatch(f"factor has dimension {F.n}, right-hand side has {b.shape[0]} rows")
    return linalg.solve_triangular(F.L, b, lower=True, check_finite=False)


def log_det(F: CholeskyFactor) -> float:
    """log |L L^T| = 2 * sum(log diag L)."""
    return float(2.0 * np.sum(np.log(np.diag(F.L))))
