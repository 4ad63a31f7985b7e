import logging
import warnings
from typing import List, Tuple, Union

import numpy as np
from sklearn.model_selection import KFold
from sklearn.preprocessing import PolynomialFeatures

from app.core.dataset import Dataset
from app.core.errors import DataValidationError, WeakInstrumentWarning
from app.modules.learners.hat_matrix import (
    HatMatrix,
    LearnerTag,
    check_hat_matrix,
    projection_from_design,
)

logger = logging.getLogger(__name__)

MAX_AUTO_DEGREE = 5
CV_FOLDS = 10


def has_binary_column(z: np.ndarray) -> bool:
    return any(len(np.unique(z[:, j])) <= 2 for j in range(z.shape[1]))


def polynomial_design(z: np.ndarray, x: np.ndarray, degree: int) -> np.ndarray:
    """[1, monomials of Z up to `degree`, X]."""
    poly = PolynomialFeatures(degree=degree, include_bias=False).fit_transform(z)
    return np.hstack([np.ones((z.shape[0], 1)), poly, x])


def _cv_mse(design: np.ndarray, d: np.ndarray, seed: int) -> Tuple[float, float]:
    folds = KFold(n_splits=CV_FOLDS, shuffle=True, random_state=seed)
    errors = []
    for train, test in folds.split(design):
        coef, *_ = np.linalg.lstsq(design[train], d[train], rcond=None)
        errors.append(np.mean((d[test] - design[test] @ coef) ** 2))
    errors = np.asarray(errors)
    return float(errors.mean()), float(errors.std(ddof=1) / np.sqrt(len(errors)))


def select_degree(dataset: Dataset, seed: int = 0, max_degree: int = MAX_AUTO_DEGREE) -> Tuple[int, List[float]]:
    """
    Degree in 1..max_degree by 10-fold CV on the full sample, one-standard-error rule:
    the smallest degree whose CV MSE is within one SE of the best.
    """
    if has_binary_column(dataset.z):
        warnings.warn(
            "Binary instrument: polynomial degree fixed at 1.", WeakInstrumentWarning, stacklevel=2
        )
        return 1, []

    scores = [
        _cv_mse(polynomial_design(dataset.z, dataset.x, k), dataset.d, seed)
        for k in range(1, max_degree + 1)
    ]
    means = np.array([s[0] for s in scores])
    best = int(np.argmin(means))
    cutoff = means[best] + scores[best][1]
    degree = int(np.flatnonzero(means <= cutoff)[0]) + 1
    logger.debug("Polynomial CV MSE by degree: %s -> degree %d", np.round(means, 4), degree)
    return degree, means.tolist()


def polynomial_hat_matrix(dataset: Dataset, degree: Union[int, str] = "auto", seed: int = 0) -> HatMatrix:
    """
    Projection onto [1, monomials of Z, X] on the full sample (no sample splitting).
    """
    cv_curve: List[float] = []
    if degree == "auto":
        degree, cv_curve = select_degree(dataset, seed=seed)
    degree = int(degree)
    if degree < 1:
        raise DataValidationError(f"Polynomial degree must be at least 1, got {degree}.")
    if degree > 1 and has_binary_column(dataset.z):
        raise DataValidationError("polynomial expansion cannot be employed for binary IVs")

    design = polynomial_design(dataset.z, dataset.x, degree)
    omega = projection_from_design(design, f"polynomial design (degree {degree})")
    hat = HatMatrix(
        omega=omega,
        learner_tag=LearnerTag.polynomial,
        hyperparams={"degree": degree, "cv_mse": cv_curve},
        projection=True,
    )
    return check_hat_matrix(hat)
