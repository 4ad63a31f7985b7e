from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict

import numpy as np

from app.core.dataset import FoldSplit
from app.core.errors import DataValidationError, EstimationError
from app.utils.linalg import drop_dependent_columns, orthonormal_basis

ROW_SUM_TOL = 1e-12
SYMMETRY_TOL = 1e-10
IDEMPOTENCE_TOL = 1e-8


class LearnerTag(str, Enum):
    forest = "forest"
    boosting = "boosting"
    polynomial = "polynomial"
    user = "user"


METHOD_LABELS = {
    LearnerTag.forest: "Random Forest",
    LearnerTag.boosting: "Boosting",
    LearnerTag.polynomial: "Polynomial Basis Expansion",
    LearnerTag.user: "Specified by User",
}


@dataclass(frozen=True, eq=False)
class HatMatrix:
    """
    Omega over fold A1: the fitted treatment on A1 is omega @ D[A1].
    `projection` marks hat matrices that are orthogonal projections.
    """

    omega: np.ndarray
    learner_tag: LearnerTag
    hyperparams: Dict[str, Any] = field(default_factory=dict)
    projection: bool = False

    @property
    def size(self) -> int:
        return self.omega.shape[0]

    def fitted(self, d_a1: np.ndarray) -> np.ndarray:
        return self.omega @ d_a1


def check_hat_matrix(hat: HatMatrix) -> HatMatrix:
    """Asserts the invariants that hold for the given learner; returns the hat matrix."""
    omega = hat.omega
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise EstimationError(f"Hat matrix must be square, got shape {omega.shape}.")
    if not np.all(np.isfinite(omega)):
        raise EstimationError("Hat matrix contains non-finite entries.")

    if hat.learner_tag == LearnerTag.forest:
        if omega.min() < 0 or np.abs(omega.sum(axis=1) - 1).max() > ROW_SUM_TOL:
            raise EstimationError("Forest hat matrix rows must be convex weights.")
    if hat.projection:
        if np.abs(omega - omega.T).max() > SYMMETRY_TOL:
            raise EstimationError("Projection hat matrix is not symmetric.")
        if np.abs(omega @ omega - omega).max() > IDEMPOTENCE_TOL:
            raise EstimationError("Projection hat matrix is not idempotent.")
    return hat


def projection_from_design(design: np.ndarray, label: str = "design matrix") -> np.ndarray:
    """OLS hat matrix H (H'H)^-1 H' of a design, after dropping dependent columns."""
    design, _ = drop_dependent_columns(design, label)
    q, _ = orthonormal_basis(design)
    return q @ q.T


def user_hat_matrix(matrix, split: FoldSplit) -> HatMatrix:
    """
    Accepts either an n x n matrix, used as Omega, or an n x p design with p < n,
    converted to its OLS projection. Rows/columns are restricted to A1.
    """
    arr = np.asarray(matrix, dtype=float)
    n = split.n_a1 + split.n_a2
    if arr.ndim != 2:
        raise DataValidationError("Weight matrix must be two-dimensional.")
    if not np.all(np.isfinite(arr)):
        row, col = np.argwhere(~np.isfinite(arr))[0]
        raise DataValidationError(f"Weight matrix has a non-finite entry at ({row}, {col}).")
    if arr.shape[0] != n:
        raise DataValidationError(f"Weight matrix has {arr.shape[0]} rows, data has {n}.")

    if arr.shape[1] == n:
        omega = arr[np.ix_(split.a1, split.a1)]
        hat = HatMatrix(omega=omega, learner_tag=LearnerTag.user, hyperparams={"input": "matrix"})
    elif arr.shape[1] < n:
        omega = projection_from_design(arr[split.a1], "user design matrix")
        hat = HatMatrix(
            omega=omega,
            learner_tag=LearnerTag.user,
            hyperparams={"input": "design", "columns": arr.shape[1]},
            projection=True,
        )
    else:
        raise DataValidationError(
            f"Weight matrix must be n x n or n x p with p < n, got {arr.shape[0]} x {arr.shape[1]}."
        )
    return check_hat_matrix(hat)
