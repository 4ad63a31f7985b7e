from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from app.core.dataset import Dataset, FoldSplit
from app.core.errors import DataValidationError
from app.modules.learners.forest_algo import (
    BoostingSpec,
    ForestSpec,
    boosting_hat_matrix,
    forest_hat_matrix,
)
from app.modules.learners.hat_matrix import HatMatrix, LearnerTag, user_hat_matrix
from app.modules.learners.polynomial_algo import polynomial_hat_matrix

SPLITTING_LEARNERS = (LearnerTag.forest, LearnerTag.boosting)


@dataclass(frozen=True)
class LearnerConfig:
    learner: LearnerTag = LearnerTag.forest
    forest: ForestSpec = field(default_factory=ForestSpec)
    boosting: BoostingSpec = field(default_factory=BoostingSpec)
    degree: Union[int, str] = "auto"
    weight_matrix: Optional[np.ndarray] = None

    @property
    def requires_split(self) -> bool:
        """Sample splitting is only needed for the machine learning learners."""
        return self.learner in SPLITTING_LEARNERS


def fit_hat_matrix(
    config: LearnerConfig, dataset: Dataset, split: FoldSplit, seed: int = 0
) -> HatMatrix:
    if config.learner == LearnerTag.forest:
        return forest_hat_matrix(dataset, split, replace(config.forest, seed=seed))
    if config.learner == LearnerTag.boosting:
        return boosting_hat_matrix(dataset, split, replace(config.boosting, seed=seed))
    if config.learner == LearnerTag.polynomial:
        return polynomial_hat_matrix(dataset, config.degree, seed=seed)
    if config.learner == LearnerTag.user:
        if config.weight_matrix is None:
            raise DataValidationError("The user learner needs a weight matrix.")
        return user_hat_matrix(config.weight_matrix, split)
    raise DataValidationError(f"Unknown learner '{config.learner}'.")
