"""
Turns a RunConfig plus a CSV into a TsciResult: data loading, dataset validation,
violation space, learner settings, then the multi-split estimator.
"""

import logging
import os
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core import config as settings
from app.core.dataset import Dataset, numeric_columns, validate_dataset
from app.core.errors import DataValidationError
from app.core.models import LearnerName, RunConfig
from app.modules.learners.forest_algo import BoostingSpec, ForestSpec
from app.modules.learners.hat_matrix import LearnerTag
from app.modules.learners.polynomial_algo import select_degree
from app.modules.learners.registry import LearnerConfig
from app.modules.multisplit.splitting import InferenceOptions, TsciResult, run_tsci
from app.modules.violation.candidates import create_monomials, parse_violation_spec

logger = logging.getLogger(__name__)

LEARNER_TAGS = {
    LearnerName.forest: LearnerTag.forest,
    LearnerName.boosting: LearnerTag.boosting,
    LearnerName.poly: LearnerTag.polynomial,
    LearnerName.user: LearnerTag.user,
}


def load_frame(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise DataValidationError(f"Input file '{path}' does not exist.")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataValidationError(f"Cannot parse '{path}' as CSV: {e}")


def build_dataset(frame: pd.DataFrame, config: RunConfig) -> Dataset:
    roles = [config.y, config.d] + config.z + config.x + (config.w or [])
    missing = [c for c in dict.fromkeys(roles) if c not in frame.columns]
    if missing:
        raise DataValidationError(f"Column(s) not found in input: {', '.join(missing)}")

    return validate_dataset(
        numeric_columns(frame, [config.y])[:, 0],
        numeric_columns(frame, [config.d])[:, 0],
        numeric_columns(frame, config.z),
        numeric_columns(frame, config.x),
        None if config.w is None else numeric_columns(frame, config.w),
        z_names=config.z,
        x_names=config.x,
        w_names=config.w,
        y_name=config.y,
        d_name=config.d,
    )


def load_weight_matrix(path: str) -> np.ndarray:
    """Headerless numeric CSV; errors name the file but never echo its content."""
    name = os.path.basename(path)
    try:
        return pd.read_csv(path, header=None).to_numpy(dtype=float)
    except FileNotFoundError:
        raise DataValidationError(f"Weight matrix file '{name}' does not exist.")
    except (ValueError, OSError):
        raise DataValidationError(
            f"Weight matrix file '{name}' is not a headerless CSV of numbers."
        )


def learner_config(config: RunConfig, dataset: Dataset) -> LearnerConfig:
    tag = LEARNER_TAGS[config.learner]
    degree = config.degree
    if tag == LearnerTag.polynomial and degree == "auto":
        degree, _ = select_degree(dataset, seed=config.seed or 0)
        logger.info("Polynomial degree selected by cross-validation: %d", degree)

    return LearnerConfig(
        learner=tag,
        forest=ForestSpec(
            num_trees=config.num_trees,
            min_node_size=config.min_node_size,
            mtry=config.mtry,
            max_depth=config.max_depth,
        ),
        boosting=BoostingSpec(
            n_rounds=config.boost_rounds,
            shrinkage=config.shrinkage,
            max_depth=config.boost_depth,
            min_node_size=config.min_node_size,
        ),
        degree=degree,
        weight_matrix=load_weight_matrix(config.weight_matrix) if tag == LearnerTag.user else None,
    )


def violation_space(
    frame: pd.DataFrame, config: RunConfig, dataset: Dataset, learner: LearnerConfig
) -> Tuple[List[np.ndarray], List[str]]:
    if config.vio:
        return parse_violation_spec(config.vio, frame, config.z, config.x)
    if learner.learner == LearnerTag.polynomial and int(learner.degree) > 1:
        # The top degree stays available for identification
        top = int(learner.degree) - 1
        labels = ["Z" if q == 1 else f"Z^{q}" for q in range(1, top + 1)]
        return create_monomials(dataset.z, top), labels
    return [], []


def inference_options(config: RunConfig) -> InferenceOptions:
    return InferenceOptions(
        split_prop=config.split_prop,
        sel_method=config.sel_method,
        sd_boot=config.sd_boot,
        iv_threshold=config.iv_threshold,
        threshold_boot=config.threshold_boot,
        threshold_mode=config.threshold_mode,
        boot_draws=config.boot_draws,
        alpha=config.alpha,
        nested=config.nested,
    )


def execute_run(
    config: RunConfig, frame: Optional[pd.DataFrame] = None, n_jobs: Optional[int] = None
) -> TsciResult:
    if frame is None:
        if not config.input:
            raise DataValidationError("No input data given.")
        frame = load_frame(config.input)

    dataset = build_dataset(frame, config)
    learner = learner_config(config, dataset)
    elements, labels = violation_space(frame, config, dataset, learner)
    logger.info(
        "Run: n=%d, learner=%s, %d violation candidate(s), nsplits=%d",
        dataset.n, learner.learner.value, len(elements), config.nsplits,
    )
    return run_tsci(
        dataset,
        elements,
        learner=learner,
        options=inference_options(config),
        nsplits=config.nsplits,
        mult_split_method=config.mult_split_method,
        seed=config.seed,
        n_jobs=settings.N_JOBS if n_jobs is None else n_jobs,
        vio_labels=labels,
    )
