import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import norm

from app.core.errors import BootstrapWarning, WeakInstrumentWarning
from app.modules.estimator.tsci_algo import (
    BootstrapDraws,
    EffectEstimate,
    ProjectionContext,
    centered,
)

logger = logging.getLogger(__name__)

DEFAULT_TAU_MIN = 40.0
MIN_STRENGTH_DRAWS = 200
STRENGTH_QUANTILE = 0.975
DEFAULT_COMPARISON_ALPHA = 0.05


class SelectionMethod(str, Enum):
    comparison = "comparison"
    conservative = "conservative"


class ThresholdMode(str, Enum):
    add = "add"
    replace = "replace"


class Validity(str, Enum):
    valid = "valid"
    invalid = "invalid"
    non_testable = "non_testable"


@dataclass(frozen=True)
class StrengthReport:
    strengths: List[float]
    thresholds: List[float]
    passed: List[bool]


@dataclass(frozen=True, eq=False)
class SelectionResult:
    q_max: int
    q_comp: int
    q_cons: int
    validity: Validity
    selected_q: int
    interpret_carefully: bool
    estimates: List[Optional[EffectEstimate]] = field(default_factory=list)


def sigma_delta_sq(delta_hat: np.ndarray) -> float:
    return float(delta_hat @ delta_hat) / len(delta_hat)


def iv_strength(ctx: ProjectionContext, delta_hat: np.ndarray) -> float:
    """||P_perp Omega D||^2 scaled by the treatment noise variance."""
    noise = sigma_delta_sq(delta_hat)
    if noise == 0:
        return math.inf
    return ctx.dmd / noise


def strength_threshold(
    ctx: ProjectionContext,
    delta_hat: np.ndarray,
    boot: bool = True,
    tau_min: float = DEFAULT_TAU_MIN,
    draws: Optional[BootstrapDraws] = None,
    mode: ThresholdMode = ThresholdMode.add,
) -> float:
    """
    Without bootstrap the threshold is tau_min. With it, the 97.5% quantile of the
    strength that pure treatment noise (wild bootstrap of the centred residual)
    generates through Omega is added to tau_min, or replaces it in `replace` mode.
    """
    if not boot:
        return tau_min
    if draws is None:
        raise ValueError("Bootstrap threshold needs multiplier draws.")
    if draws.L < MIN_STRENGTH_DRAWS:
        warnings.warn(
            f"Strength threshold uses {draws.L} draws; at least {MIN_STRENGTH_DRAWS} recommended.",
            BootstrapWarning,
            stacklevel=2,
        )

    noise = sigma_delta_sq(delta_hat)
    delta_tilde = centered(delta_hat)
    if noise == 0 or not np.any(delta_tilde):
        return tau_min if mode == ThresholdMode.add else 0.0

    noise_draws = draws.multipliers * delta_tilde  # (L, n1)
    projected = ctx.p_perp_omega @ noise_draws.T  # (n1, L)
    noise_strengths = np.einsum("il,il->l", projected, projected) / noise
    q_hat = float(np.quantile(noise_strengths, STRENGTH_QUANTILE))
    return tau_min + q_hat if mode == ThresholdMode.add else q_hat


def strength_report(strengths: Sequence[float], thresholds: Sequence[float]) -> StrengthReport:
    passed = [bool(s > t) for s, t in zip(strengths, thresholds)]
    return StrengthReport(strengths=list(strengths), thresholds=list(thresholds), passed=passed)


def determine_qmax(report: StrengthReport) -> int:
    """Largest m such that candidates 0..m all pass the strength test (prefix rule)."""
    if not report.passed or not report.passed[0]:
        warnings.warn(
            "Instruments are weak even without violation (candidate q0 fails the strength test).",
            WeakInstrumentWarning,
            stacklevel=2,
        )
        return 0
    q_max = 0
    for q in range(1, len(report.passed)):
        if not report.passed[q]:
            break
        q_max = q
    return q_max


def classify_validity(q_comp: int, q_max: int) -> Validity:
    if q_max == 0:
        return Validity.non_testable
    return Validity.valid if q_comp == 0 else Validity.invalid


def select_candidate(
    betas: Sequence[float],
    ses: Sequence[float],
    q_max: int,
    method: SelectionMethod = SelectionMethod.comparison,
    alpha: float = DEFAULT_COMPARISON_ALPHA,
    estimates: Optional[List[Optional[EffectEstimate]]] = None,
) -> SelectionResult:
    """
    q_comp is the smallest candidate whose estimate is not significantly different from
    any larger candidate up to q_max; q_cons is its successor, capped at q_max.
    """
    z = norm.ppf(1 - alpha / 2)
    q_comp = q_max
    for q in range(q_max + 1):
        if all(
            abs(betas[q] - betas[r]) <= z * math.sqrt(ses[q] ** 2 + ses[r] ** 2)
            for r in range(q + 1, q_max + 1)
        ):
            q_comp = q
            break
    q_cons = min(q_comp + 1, q_max)
    selected = q_comp if method == SelectionMethod.comparison else q_cons

    result = SelectionResult(
        q_max=q_max,
        q_comp=q_comp,
        q_cons=q_cons,
        validity=classify_validity(q_comp, q_max),
        selected_q=selected,
        interpret_carefully=q_comp == q_max,
        estimates=list(estimates or []),
    )
    logger.debug("Selection: q_max=%d q_comp=%d q_cons=%d (%s)", q_max, q_comp, q_cons, result.validity.value)
    return result
