"""
Repeated sample splitting: one split-fit-select pipeline per data split, aggregated by
the median with FWER- or DML-style inference.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from app.core.dataset import DEFAULT_SPLIT_PROP, Dataset, FoldSplit, full_split, make_split
from app.core.errors import EstimationError, SplitFailureWarning, TsciError
from app.modules.estimator.tsci_algo import (
    DEFAULT_BOOT_DRAWS,
    EffectEstimate,
    ProjectionContext,
    bootstrap_se,
    draw_multipliers,
    estimate_beta,
    normal_ci,
    normal_p_value,
    projection_context,
    sequence_rank_scale,
)
from app.modules.learners.hat_matrix import METHOD_LABELS
from app.modules.learners.registry import LearnerConfig, fit_hat_matrix
from app.modules.selection.selection_algo import (
    DEFAULT_TAU_MIN,
    SelectionMethod,
    SelectionResult,
    ThresholdMode,
    Validity,
    determine_qmax,
    iv_strength,
    select_candidate,
    strength_report,
    strength_threshold,
)
from app.modules.violation.candidates import build_candidates, check_violation_space

logger = logging.getLogger(__name__)


class Aggregation(str, Enum):
    FWER = "FWER"
    DML = "DML"


@dataclass(frozen=True)
class InferenceOptions:
    split_prop: float = DEFAULT_SPLIT_PROP
    sel_method: SelectionMethod = SelectionMethod.comparison
    sd_boot: bool = True
    iv_threshold: float = DEFAULT_TAU_MIN
    threshold_boot: bool = True
    threshold_mode: ThresholdMode = ThresholdMode.add
    boot_draws: int = DEFAULT_BOOT_DRAWS
    alpha: float = 0.05
    nested: bool = True


@dataclass(frozen=True, eq=False)
class SplitFit:
    split_id: int
    fold: FoldSplit
    selection: SelectionResult
    betas: List[Optional[float]]
    ses: List[Optional[float]]
    se_plugin: List[Optional[float]]
    strengths: List[float]
    thresholds: List[float]
    selected_beta: float
    selected_se: float
    p_value: float

    def candidate_p_values(self) -> List[Optional[float]]:
        return [
            None if b is None else normal_p_value(b, s)
            for b, s in zip(self.betas, self.ses)
        ]


@dataclass(frozen=True)
class SplitFailure:
    split_id: int
    reason: str


@dataclass
class CandidateSummary:
    q: int
    beta: Optional[float]
    se: Optional[float]
    ci: Optional[Tuple[float, float]]
    p: Optional[float]
    iv_strength: float
    iv_threshold: float


@dataclass
class TsciResult:
    beta: float
    se: Optional[float]
    ci: Tuple[float, float]
    p: float
    alpha: float
    aggregation: Aggregation
    tallies: Dict[str, List[int]]
    validity_counts: Dict[str, int]
    candidates: List[CandidateSummary]
    n: int
    n_a1: int
    n_a2: int
    nsplits: int
    n_failed: int
    sample_split: bool
    sel_method: SelectionMethod
    learner_label: str
    interpret_carefully: int = 0
    notes: List[str] = field(default_factory=list)
    splits: List[SplitFit] = field(default_factory=list, repr=False)

    def coef(self) -> float:
        return self.beta

    def confint(self, level: Optional[float] = None) -> Tuple[float, float]:
        if level is None or math.isclose(level, 1 - self.alpha):
            return self.ci
        if not 0 < level < 1:
            raise ValueError(f"level must lie in (0, 1), got {level}.")
        alpha = 1 - level
        if self.aggregation == Aggregation.DML:
            return normal_ci(self.beta, self.se, alpha)
        return _fwer_ci(self.splits, alpha)


def _spawn_streams(seed_seq: np.random.SeedSequence) -> Dict[str, int]:
    children = seed_seq.spawn(4)
    names = ("fold", "learner", "se_boot", "strength_boot")
    return {name: int(child.generate_state(1)[0]) for name, child in zip(names, children)}


def fit_split(
    dataset: Dataset,
    learner: LearnerConfig,
    vio_space: Sequence[np.ndarray],
    options: InferenceOptions,
    split_id: int,
    seed_seq: np.random.SeedSequence,
    vio_labels: Optional[Sequence[str]] = None,
) -> SplitFit:
    """One full pipeline: split, hat matrix, candidates, strength test, estimates, selection."""
    seeds = _spawn_streams(seed_seq)

    # 1. Folds and treatment model
    if learner.requires_split:
        fold = make_split(dataset.n, options.split_prop, seeds["fold"], p_w=dataset.w.shape[1])
    else:
        fold = full_split(dataset.n)
    hat = fit_hat_matrix(learner, dataset, fold, seed=seeds["learner"])

    # 2. Violation candidates on A1
    candidates = build_candidates(
        dataset.w[fold.a1], [np.asarray(e)[fold.a1] for e in vio_space], options.nested, vio_labels
    )
    d_a1 = dataset.d[fold.a1]
    delta_hat = d_a1 - hat.fitted(d_a1)

    rank_scale = sequence_rank_scale(hat, candidates)
    contexts: List[Optional[ProjectionContext]] = []
    for cand in candidates:
        try:
            contexts.append(projection_context(hat, cand, d_a1, rank_scale))
        except EstimationError as e:
            logger.debug("Split %d candidate q%d: %s", split_id, cand.q, e)
            contexts.append(None)

    # 3. Strength test
    strength_draws = (
        draw_multipliers(options.boot_draws, fold.n_a1, seeds["strength_boot"])
        if options.threshold_boot
        else None
    )
    strengths, thresholds = [], []
    for ctx in contexts:
        if ctx is None:
            strengths.append(0.0)
            thresholds.append(options.iv_threshold)
            continue
        strengths.append(iv_strength(ctx, delta_hat))
        thresholds.append(
            strength_threshold(
                ctx, delta_hat, options.threshold_boot, options.iv_threshold,
                strength_draws, options.threshold_mode,
            )
        )
    report = strength_report(strengths, thresholds)
    q_max = determine_qmax(report)

    # 4. Per-candidate estimates
    estimates: List[Optional[EffectEstimate]] = []
    for ctx in contexts:
        if ctx is None:
            estimates.append(None)
            continue
        try:
            estimates.append(estimate_beta(ctx, dataset, fold))
        except EstimationError as e:
            logger.debug("Split %d: %s", split_id, e)
            estimates.append(None)
    while q_max > 0 and estimates[q_max] is None:
        q_max -= 1
    if estimates[0] is None:
        raise EstimationError("no estimate available for the candidate without violation")

    # 5. Standard errors
    se_plugin = [None if e is None else e.se_plugin for e in estimates]
    if options.sd_boot:
        se_draws = draw_multipliers(options.boot_draws, fold.n_a1, seeds["se_boot"])
        ses = bootstrap_se(estimates[q_max], [c if e is not None else None for c, e in zip(contexts, estimates)], se_draws)
    else:
        ses = list(se_plugin)
    betas = [None if e is None else e.beta_hat for e in estimates]

    # 6. Selection
    selection = select_candidate(
        betas[: q_max + 1], ses[: q_max + 1], q_max, options.sel_method, estimates=estimates
    )
    selected_beta = betas[selection.selected_q]
    selected_se = ses[selection.selected_q]
    logger.info(
        "Split %d: q_max=%d q_comp=%d beta=%.5f se=%.5f",
        split_id, q_max, selection.q_comp, selected_beta, selected_se,
    )
    return SplitFit(
        split_id=split_id,
        fold=fold,
        selection=selection,
        betas=betas,
        ses=ses,
        se_plugin=se_plugin,
        strengths=strengths,
        thresholds=thresholds,
        selected_beta=selected_beta,
        selected_se=selected_se,
        p_value=normal_p_value(selected_beta, selected_se),
    )


def _safe_fit(*args) -> object:
    try:
        return fit_split(*args)
    except TsciError as e:
        return SplitFailure(split_id=args[4], reason=str(e))
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        logger.debug("Split %d: numerical failure", args[4], exc_info=True)
        return SplitFailure(split_id=args[4], reason=f"{type(e).__name__}: {e}")


def run_splits(
    dataset: Dataset,
    learner: LearnerConfig,
    vio_space: Sequence[np.ndarray],
    options: InferenceOptions,
    nsplits: int = 10,
    seed: Optional[int] = None,
    n_jobs: int = 1,
    vio_labels: Optional[Sequence[str]] = None,
) -> Tuple[List[SplitFit], List[SplitFailure]]:
    """Runs nsplits independent pipelines (one for learners without sample splitting)."""
    if nsplits < 1:
        raise ValueError(f"nsplits must be at least 1, got {nsplits}.")
    if not learner.requires_split and nsplits > 1:
        logger.info("Learner '%s' needs no sample splitting; running once.", learner.learner.value)
        nsplits = 1

    vio_space = check_violation_space(vio_space, dataset.n)
    children = np.random.SeedSequence(seed).spawn(nsplits)
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_safe_fit)(dataset, learner, vio_space, options, j, children[j], vio_labels)
        for j in range(nsplits)
    )
    fits = [o for o in outcomes if isinstance(o, SplitFit)]
    failures = [o for o in outcomes if isinstance(o, SplitFailure)]
    for failure in failures:
        warnings.warn(
            f"Split {failure.split_id} failed and is excluded: {failure.reason}",
            SplitFailureWarning,
            stacklevel=2,
        )
    if not fits:
        reasons = "; ".join(sorted({f.reason for f in failures}))
        raise EstimationError(f"All {nsplits} data splits failed: {reasons}")
    return fits, failures


# --- Aggregation ---
def _fwer_values(betas, ses, ps, alpha) -> Tuple[float, Tuple[float, float], float]:
    z = norm.ppf(1 - alpha / 4)
    lows = [b - z * s for b, s in zip(betas, ses)]
    highs = [b + z * s for b, s in zip(betas, ses)]
    return (
        float(np.median(betas)),
        (float(np.median(lows)), float(np.median(highs))),
        float(min(1.0, 2 * np.median(ps))),
    )


def _fwer_ci(splits: Sequence[SplitFit], alpha: float) -> Tuple[float, float]:
    betas = [s.selected_beta for s in splits]
    ses = [s.selected_se for s in splits]
    return _fwer_values(betas, ses, [s.p_value for s in splits], alpha)[1]


def _dml_values(betas, ses, alpha) -> Tuple[float, float, Tuple[float, float], float]:
    beta = float(np.median(betas))
    se = float(np.median([math.sqrt(s ** 2 + (b - beta) ** 2) for b, s in zip(betas, ses)]))
    return beta, se, normal_ci(beta, se, alpha), normal_p_value(beta, se)


def _tallies(fits: Sequence[SplitFit], n_candidates: int) -> Dict[str, List[int]]:
    tallies = {"q_comp": [0] * n_candidates, "q_cons": [0] * n_candidates, "q_max": [0] * n_candidates}
    for fit in fits:
        tallies["q_comp"][fit.selection.q_comp] += 1
        tallies["q_cons"][fit.selection.q_cons] += 1
        tallies["q_max"][fit.selection.q_max] += 1
    return tallies


def _candidate_summaries(fits: Sequence[SplitFit], aggregation: Aggregation, alpha: float) -> List[CandidateSummary]:
    summaries = []
    for q in range(len(fits[0].betas)):
        rows = [(f.betas[q], f.ses[q]) for f in fits if f.betas[q] is not None]
        strength = float(np.median([f.strengths[q] for f in fits]))
        threshold = float(np.median([f.thresholds[q] for f in fits]))
        if not rows:
            summaries.append(CandidateSummary(q, None, None, None, None, strength, threshold))
            continue
        betas, ses = zip(*rows)
        if aggregation == Aggregation.DML:
            beta, se, ci, p = _dml_values(betas, ses, alpha)
        else:
            ps = [normal_p_value(b, s) for b, s in rows]
            beta, ci, p = _fwer_values(betas, ses, ps, alpha)
            se = None
        summaries.append(CandidateSummary(q, beta, se, ci, p, strength, threshold))
    return summaries


def _aggregate(
    fits: Sequence[SplitFit],
    alpha: float,
    aggregation: Aggregation,
    dataset_n: int,
    sel_method: SelectionMethod,
    learner_label: str,
    n_failed: int,
) -> TsciResult:
    betas = [f.selected_beta for f in fits]
    ses = [f.selected_se for f in fits]
    if aggregation == Aggregation.DML:
        beta, se, ci, p = _dml_values(betas, ses, alpha)
    else:
        beta, ci, p = _fwer_values(betas, ses, [f.p_value for f in fits], alpha)
        se = None

    n_candidates = len(fits[0].betas)
    validity = {v.value: 0 for v in Validity}
    for fit in fits:
        validity[fit.selection.validity.value] += 1
    fold = fits[0].fold
    return TsciResult(
        beta=beta,
        se=se,
        ci=ci,
        p=p,
        alpha=alpha,
        aggregation=aggregation,
        tallies=_tallies(fits, n_candidates),
        validity_counts=validity,
        candidates=_candidate_summaries(fits, aggregation, alpha),
        n=dataset_n,
        n_a1=fold.n_a1,
        n_a2=fold.n_a2,
        nsplits=len(fits) + n_failed,
        n_failed=n_failed,
        sample_split=fold.split,
        sel_method=sel_method,
        learner_label=learner_label,
        interpret_carefully=sum(f.selection.interpret_carefully for f in fits),
        splits=list(fits),
    )


def aggregate_fwer(fits: Sequence[SplitFit], alpha: float = 0.05, **context) -> TsciResult:
    """Median estimate; p = min(1, 2 median p_j); CI = medians of per-split 1 - alpha/2 bounds."""
    return _aggregate(fits, alpha, Aggregation.FWER, **_context_defaults(fits, context))


def aggregate_dml(fits: Sequence[SplitFit], alpha: float = 0.05, **context) -> TsciResult:
    """Median estimate; se = median of sqrt(SE_j^2 + (beta_j - beta)^2)."""
    return _aggregate(fits, alpha, Aggregation.DML, **_context_defaults(fits, context))


def _context_defaults(fits: Sequence[SplitFit], context: dict) -> dict:
    fold = fits[0].fold
    return {
        "dataset_n": context.get("dataset_n", fold.n_a1 + fold.n_a2),
        "sel_method": context.get("sel_method", SelectionMethod.comparison),
        "learner_label": context.get("learner_label", ""),
        "n_failed": context.get("n_failed", 0),
    }


def run_tsci(
    dataset: Dataset,
    vio_space: Sequence[np.ndarray],
    learner: Optional[LearnerConfig] = None,
    options: Optional[InferenceOptions] = None,
    nsplits: int = 10,
    mult_split_method: Aggregation = Aggregation.FWER,
    seed: Optional[int] = None,
    n_jobs: int = 1,
    vio_labels: Optional[Sequence[str]] = None,
) -> TsciResult:
    """Full estimator: repeated splitting plus aggregation."""
    learner = learner or LearnerConfig()
    options = options or InferenceOptions()
    fits, failures = run_splits(
        dataset, learner, vio_space, options, nsplits, seed, n_jobs, vio_labels
    )

    notes = []
    aggregation = Aggregation(mult_split_method)
    if len(fits) + len(failures) == 1 and aggregation == Aggregation.FWER:
        aggregation = Aggregation.DML
        notes.append("Single data split: aggregation reported as DML.")
        logger.info(notes[-1])

    aggregate = aggregate_dml if aggregation == Aggregation.DML else aggregate_fwer
    result = aggregate(
        fits,
        options.alpha,
        dataset_n=dataset.n,
        sel_method=options.sel_method,
        learner_label=METHOD_LABELS[learner.learner],
        n_failed=len(failures),
    )
    result.notes.extend(notes)
    return result
