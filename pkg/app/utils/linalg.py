import warnings
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from app.core.errors import RankDeficiencyWarning

RANK_TOL = 1e-10


def orthonormal_basis(
    mat: np.ndarray, tol: float = RANK_TOL, scale: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pivoted QR of `mat`. Returns (Q, kept) where Q is an orthonormal basis of the column
    space and `kept` are the (sorted) indices of the columns that span it.

    Directions below tol * scale are dropped; scale defaults to the largest pivot of
    `mat`. Pass one scale for a nested sequence of matrices to get nested ranks.
    """
    n = mat.shape[0]
    if mat.ndim != 2 or mat.shape[1] == 0:
        return np.empty((n, 0)), np.empty(0, dtype=int)

    q, r, piv = linalg.qr(mat, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return np.empty((n, 0)), np.empty(0, dtype=int)
    cutoff = tol * (diag[0] if scale is None else scale)
    rank = int(np.sum(diag > cutoff))
    return q[:, :rank], np.sort(piv[:rank])


def rank_of(mat: np.ndarray) -> int:
    return orthonormal_basis(mat)[0].shape[1]


def residualize(basis: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Applies I - Q Q' to a vector or matrix without forming the projector."""
    if basis.shape[1] == 0:
        return vec.copy()
    return vec - basis @ (basis.T @ vec)


def residual_projector(basis: np.ndarray) -> np.ndarray:
    """Dense projector onto the orthogonal complement of span(basis)."""
    n = basis.shape[0]
    return np.eye(n) - basis @ basis.T


def drop_dependent_columns(mat: np.ndarray, label: str = "matrix") -> Tuple[np.ndarray, np.ndarray]:
    """Keeps a full-column-rank subset of `mat` (pivoted QR), warning about dropped columns."""
    _, kept = orthonormal_basis(mat)
    dropped = mat.shape[1] - len(kept)
    if dropped:
        warnings.warn(
            f"{label}: dropped {dropped} linearly dependent column(s).",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return mat[:, kept], kept


def append_independent(base: np.ndarray, extra: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """
    Indices of the columns of `extra` that add new directions to span(base).
    Columns of `base` are never dropped.
    """
    if extra.shape[1] == 0:
        return np.empty(0, dtype=int)
    q_base, _ = orthonormal_basis(base)
    resid = residualize(q_base, extra)
    scale = max(np.linalg.norm(extra, axis=0).max(), 1.0)
    norms = np.linalg.norm(resid, axis=0)
    candidates = np.flatnonzero(norms > tol * scale)
    if candidates.size == 0:
        return candidates
    _, kept = orthonormal_basis(resid[:, candidates], tol=tol)
    return candidates[kept]
