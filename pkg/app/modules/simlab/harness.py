"""
Monte Carlo replications of a scenario: per-rep estimate, SE, selection and coverage.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from app.core.errors import TsciError
from app.modules.learners.forest_algo import ForestSpec
from app.modules.learners.hat_matrix import LearnerTag
from app.modules.learners.registry import LearnerConfig
from app.modules.multisplit.splitting import Aggregation, InferenceOptions, run_tsci
from app.modules.simlab.dgp import generate, ols_oracle, scenario, tsls_oracle
from app.modules.violation.candidates import create_monomials

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "rep", "scenario", "n", "beta_true", "beta_hat", "se", "ci_lower", "ci_upper",
    "covers", "q_comp", "q_max", "beta_ols", "beta_tsls", "error",
]


@dataclass(frozen=True)
class SimulationSettings:
    scenario: str = "A"
    n: int = 1000
    reps: int = 20
    seed: Optional[int] = 0
    nsplits: int = 1
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    options: InferenceOptions = field(default_factory=InferenceOptions)
    mult_split_method: Aggregation = Aggregation.DML
    vio_degree: int = 2


def _modal_index(counts) -> int:
    return int(np.argmax(counts))


def _oracle(oracle, dataset, rep: int) -> float:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return oracle(dataset)
    except (TsciError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning("Replication %d: %s failed: %s", rep, oracle.__name__, e)
        return float("nan")


def run_replication(settings: SimulationSettings, rep: int, seed_seq: np.random.SeedSequence) -> Dict[str, Any]:
    data_seed, fit_seed = (int(s.generate_state(1)[0]) for s in seed_seq.spawn(2))
    spec = scenario(settings.scenario, n=settings.n, seed=data_seed)
    dataset, truth = generate(spec)
    row: Dict[str, Any] = {
        "rep": rep, "scenario": settings.scenario, "n": settings.n, "beta_true": truth.beta,
        "beta_ols": _oracle(ols_oracle, dataset, rep), "beta_tsls": _oracle(tsls_oracle, dataset, rep),
    }
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = run_tsci(
                dataset,
                create_monomials(dataset.z, settings.vio_degree),
                learner=settings.learner,
                options=settings.options,
                nsplits=settings.nsplits,
                mult_split_method=settings.mult_split_method,
                seed=fit_seed,
                vio_labels=["Z" if q == 1 else f"Z^{q}" for q in range(1, settings.vio_degree + 1)],
            )
    except (TsciError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning("Replication %d failed: %s", rep, e)
        row.update(error=str(e))
        return row

    lower, upper = result.ci
    row.update(
        beta_hat=result.beta,
        se=result.se,
        ci_lower=lower,
        ci_upper=upper,
        covers=bool(lower <= truth.beta <= upper),
        q_comp=_modal_index(result.tallies["q_comp"]),
        q_max=_modal_index(result.tallies["q_max"]),
        error=None,
    )
    return row


def run_replications(settings: SimulationSettings, n_jobs: int = 1) -> pd.DataFrame:
    """One row per replication; replications are seeded independently from settings.seed."""
    children = np.random.SeedSequence(settings.seed).spawn(settings.reps)
    rows = Parallel(n_jobs=n_jobs)(
        delayed(run_replication)(settings, rep, children[rep]) for rep in range(settings.reps)
    )
    frame = pd.DataFrame(rows).reindex(columns=RESULT_COLUMNS)
    logger.info("Scenario %s: %d replication(s) done", settings.scenario, len(frame))
    return frame


def summarize(frame: pd.DataFrame) -> Dict[str, Any]:
    done = frame[frame["error"].isna()]
    beta_true = float(frame["beta_true"].iloc[0]) if len(frame) else float("nan")
    if done.empty:
        return {"reps": len(frame), "failed": len(frame)}

    q_freq = done["q_comp"].value_counts(normalize=True).sort_index()
    sd = float(done["beta_hat"].std(ddof=1)) if len(done) > 1 else None
    return {
        "reps": int(len(frame)),
        "failed": int(len(frame) - len(done)),
        "beta_true": beta_true,
        "median_beta": float(done["beta_hat"].median()),
        "mean_beta": float(done["beta_hat"].mean()),
        "sd_beta": sd,
        "mean_se": float(done["se"].mean()),
        "coverage": float(done["covers"].astype(float).mean()),
        "q_comp_freq": {f"q{int(q)}": float(p) for q, p in q_freq.items()},
        "ols_bias": float(frame["beta_ols"].mean() - beta_true),
        "tsls_bias": float(frame["beta_tsls"].mean() - beta_true),
    }


def settings_from_request(request) -> SimulationSettings:
    """Maps a SimulationRequest (HTTP or CLI) onto harness settings."""
    return SimulationSettings(
        scenario=request.scenario.value if hasattr(request.scenario, "value") else request.scenario,
        n=request.n,
        reps=request.reps,
        seed=request.seed,
        nsplits=request.nsplits,
        learner=LearnerConfig(learner=LearnerTag.forest, forest=ForestSpec(num_trees=request.num_trees)),
        options=InferenceOptions(boot_draws=request.boot_draws),
        mult_split_method=request.mult_split_method,
    )


def render_summary(summary: Dict[str, Any]) -> str:
    lines = [f"{key}: {value}" for key, value in summary.items() if key != "q_comp_freq"]
    for q, p in summary.get("q_comp_freq", {}).items():
        lines.append(f"q_comp={q}: {p:.3f}")
    return "\n".join(lines) + "\n"
