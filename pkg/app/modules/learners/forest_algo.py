"""
Tree-based treatment learners read as weighted nearest neighbour smoothers.

Trees are grown on fold A2 only. Their leaves are then populated with the A1 points, and
each A1 query spreads weight uniformly over the A1 points sharing its leaf.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from sklearn.ensemble import RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from app.core.dataset import Dataset, FoldSplit
from app.core.errors import DataValidationError, EstimationError
from app.modules.learners.hat_matrix import HatMatrix, LearnerTag, check_hat_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestSpec:
    num_trees: int = 200
    min_node_size: int = 5
    mtry: Optional[int] = None
    max_depth: Optional[int] = None
    seed: int = 0

    def resolved_mtry(self, n_features: int) -> int:
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(n_features))
        if self.num_trees < 1 or self.min_node_size < 1 or mtry < 1:
            raise DataValidationError("Forest hyperparameters must be positive.")
        if self.max_depth is not None and self.max_depth < 1:
            raise DataValidationError("max_depth must be positive.")
        if mtry > n_features:
            raise DataValidationError(f"mtry={mtry} exceeds the {n_features} available features.")
        return mtry


@dataclass(frozen=True)
class BoostingSpec:
    n_rounds: int = 100
    shrinkage: float = 0.1
    max_depth: int = 3
    min_node_size: int = 5
    seed: int = 0

    def validate(self):
        if not 0 < self.shrinkage <= 1:
            raise DataValidationError(f"shrinkage must lie in (0, 1], got {self.shrinkage}.")
        if self.n_rounds < 1 or self.max_depth < 1 or self.min_node_size < 1:
            raise DataValidationError("Boosting hyperparameters must be positive.")


def leaf_smoother(
    query_leaves: np.ndarray, reference_leaves: np.ndarray
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """
    Leaf-averaging matrix of one tree: entry (i, j) is 1/#{reference points in i's leaf}
    when reference point j shares query i's leaf. Also returns which query rows found
    a non-empty leaf.
    """
    n_q, n_r = len(query_leaves), len(reference_leaves)
    codes, inverse = np.unique(
        np.concatenate([reference_leaves, query_leaves]), return_inverse=True
    )
    ref_codes, query_codes = inverse[:n_r], inverse[n_r:]
    k = len(codes)

    ref_ind = sparse.csr_matrix(
        (np.ones(n_r), (np.arange(n_r), ref_codes)), shape=(n_r, k)
    )
    counts = np.asarray(ref_ind.sum(axis=0)).ravel()
    inv_counts = np.divide(1.0, counts, out=np.zeros(k), where=counts > 0)
    query_ind = sparse.csr_matrix(
        (inv_counts[query_codes], (np.arange(n_q), query_codes)), shape=(n_q, k)
    )
    covered = counts[query_codes] > 0
    return (query_ind @ ref_ind.T).tocsr(), covered


def fit_treatment_forest(dataset: Dataset, split: FoldSplit, spec: ForestSpec) -> RandomForestRegressor:
    """Grows the forest on A2 rows only, regressing D on (Z, X)."""
    features = dataset.features
    mtry = spec.resolved_mtry(features.shape[1])
    forest = RandomForestRegressor(
        n_estimators=spec.num_trees,
        min_samples_leaf=spec.min_node_size,
        max_features=mtry,
        max_depth=spec.max_depth,
        random_state=spec.seed,
        n_jobs=1,
    )
    forest.fit(features[split.a2], dataset.d[split.a2])
    return forest


def forest_hat_matrix(dataset: Dataset, split: FoldSplit, spec: ForestSpec) -> HatMatrix:
    forest = fit_treatment_forest(dataset, split, spec)
    leaves = forest.apply(dataset.features[split.a1])  # (|A1|, S)

    n1 = split.n_a1
    total = sparse.csr_matrix((n1, n1))
    used = np.zeros(n1)
    for s in range(leaves.shape[1]):
        smoother, covered = leaf_smoother(leaves[:, s], leaves[:, s])
        total = total + smoother
        used += covered

    if np.any(used == 0):
        raise EstimationError(f"empty neighborhood for A1 row {int(np.argmin(used))}")
    omega = total.toarray() / used[:, None]

    logger.debug("Forest hat matrix: %d trees over %d A1 rows", leaves.shape[1], n1)
    hat = HatMatrix(
        omega=omega,
        learner_tag=LearnerTag.forest,
        hyperparams={
            "num_trees": spec.num_trees,
            "min_node_size": spec.min_node_size,
            "mtry": spec.resolved_mtry(dataset.features.shape[1]),
            "max_depth": spec.max_depth,
        },
    )
    return check_hat_matrix(hat)


def fit_boosting_sequence(
    dataset: Dataset, split: FoldSplit, spec: BoostingSpec
) -> List[DecisionTreeRegressor]:
    """L2 boosting on A2 starting from the zero fit; returns the tree sequence B_1..B_M."""
    spec.validate()
    features = dataset.features[split.a2]
    resid = dataset.d[split.a2].copy()
    seeds = np.random.SeedSequence(spec.seed).generate_state(spec.n_rounds)

    trees = []
    for m in range(spec.n_rounds):
        tree = DecisionTreeRegressor(
            max_depth=spec.max_depth,
            min_samples_leaf=spec.min_node_size,
            random_state=int(seeds[m]),
        )
        tree.fit(features, resid)
        resid = resid - spec.shrinkage * tree.predict(features)
        trees.append(tree)
    return trees


def boosting_smoothers(
    trees: List[DecisionTreeRegressor], features_a1: np.ndarray
) -> List[Tuple[sparse.csr_matrix, np.ndarray]]:
    smoothers = []
    for tree in trees:
        leaves = tree.apply(features_a1)
        smoothers.append(leaf_smoother(leaves, leaves))
    return smoothers


def boosting_hat_matrix(dataset: Dataset, split: FoldSplit, spec: BoostingSpec) -> HatMatrix:
    """
    Omega = I - (I - nu B_M) ... (I - nu B_1), with B_m the A1 leaf-averaging matrix of
    the m-th boosting tree.
    """
    trees = fit_boosting_sequence(dataset, split, spec)
    n1 = split.n_a1

    remainder = np.eye(n1)
    used = np.zeros(n1)
    for smoother, covered in boosting_smoothers(trees, dataset.features[split.a1]):
        remainder = remainder - spec.shrinkage * (smoother @ remainder)
        used += covered
    if np.any(used == 0):
        raise EstimationError(f"empty neighborhood for A1 row {int(np.argmin(used))}")

    hat = HatMatrix(
        omega=np.eye(n1) - remainder,
        learner_tag=LearnerTag.boosting,
        hyperparams={
            "n_rounds": spec.n_rounds,
            "shrinkage": spec.shrinkage,
            "max_depth": spec.max_depth,
            "min_node_size": spec.min_node_size,
        },
    )
    return check_hat_matrix(hat)
