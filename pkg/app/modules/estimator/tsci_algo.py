"""
Second stage of TSCI for one hat matrix and one violation candidate.

With M(V) = Omega' P_perp Omega and P_perp the projector onto the orthogonal complement
of span(Omega V), the raw estimate is Y'MD / D'MD. A bias correction built from the
treatment and outcome residuals is subtracted; standard errors come from a plug-in
formula or from a wild (Gaussian multiplier) bootstrap of the error terms.
"""

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from app.core.dataset import Dataset, FoldSplit
from app.core.errors import BootstrapWarning, EstimationError
from app.modules.learners.hat_matrix import HatMatrix
from app.modules.violation.candidates import ViolationCandidate
from app.utils.linalg import orthonormal_basis, residual_projector, residualize

logger = logging.getLogger(__name__)

DMD_REL_TOL = 1e-10
DEFAULT_BOOT_DRAWS = 300
MIN_BOOT_DRAWS = 50


@dataclass(frozen=True, eq=False)
class ProjectionContext:
    omega: np.ndarray
    v: np.ndarray
    vhat_basis: np.ndarray
    p_perp_omega: np.ndarray
    d_a1: np.ndarray
    dmd: float
    rank_v: int

    @cached_property
    def p_perp(self) -> np.ndarray:
        return residual_projector(self.vhat_basis)

    @cached_property
    def m_matrix(self) -> np.ndarray:
        # P_perp is a symmetric idempotent, so M = (P_perp Omega)' (P_perp Omega)
        return self.p_perp_omega.T @ self.p_perp_omega

    @cached_property
    def m_diag(self) -> np.ndarray:
        return np.einsum("ij,ij->j", self.p_perp_omega, self.p_perp_omega)

    @cached_property
    def md(self) -> np.ndarray:
        """M D as a vector, without forming M."""
        return self.p_perp_omega.T @ (self.p_perp_omega @ self.d_a1)

    def quadratic(self, a: np.ndarray, b: np.ndarray) -> float:
        """a' M b."""
        return float((self.p_perp_omega @ a) @ (self.p_perp_omega @ b))


@dataclass(frozen=True, eq=False)
class EffectEstimate:
    beta_hat: float
    beta_raw: float
    bias_term: float
    se_plugin: float
    sigma_eps_hat: float
    sigma_delta_hat: float
    residuals_eps: np.ndarray
    residuals_delta: np.ndarray
    se_boot: Optional[float] = None

    @property
    def se(self) -> float:
        return self.se_boot if self.se_boot is not None else self.se_plugin


@dataclass(frozen=True, eq=False)
class BootstrapDraws:
    multipliers: np.ndarray
    seed: Optional[int] = None

    @property
    def L(self) -> int:
        return self.multipliers.shape[0]


def draw_multipliers(L: int, n1: int, seed=None) -> BootstrapDraws:
    """i.i.d. standard normal multipliers U[l, i]."""
    if L < MIN_BOOT_DRAWS:
        warnings.warn(
            f"Only {L} bootstrap draws; standard errors may be unstable.",
            BootstrapWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    return BootstrapDraws(multipliers=rng.standard_normal((L, n1)), seed=seed)


def sequence_rank_scale(hat: HatMatrix, candidates: Sequence[ViolationCandidate]) -> float:
    """Largest column norm of Omega V over all candidates; one rank cutoff for the sequence."""
    norms = [np.linalg.norm(hat.omega @ c.columns, axis=0).max() for c in candidates if c.width]
    return float(max(norms)) if norms else 0.0


def projection_context(
    hat: HatMatrix,
    cand: ViolationCandidate,
    d_a1: np.ndarray,
    rank_scale: Optional[float] = None,
) -> ProjectionContext:
    omega = hat.omega
    vhat = omega @ cand.columns
    basis, _ = orthonormal_basis(vhat, scale=rank_scale or None)
    rank_v = basis.shape[1]
    if rank_v == 0:
        raise EstimationError("violation basis annihilated by hat matrix")
    n1 = omega.shape[0]
    if n1 <= rank_v + 1:
        raise EstimationError(
            f"Fold A1 has {n1} rows, too few for a violation space of rank {rank_v}."
        )

    p_perp_omega = residualize(basis, omega)
    projected_d = p_perp_omega @ d_a1
    return ProjectionContext(
        omega=omega,
        v=cand.columns,
        vhat_basis=basis,
        p_perp_omega=p_perp_omega,
        d_a1=d_a1,
        dmd=float(projected_d @ projected_d),
        rank_v=rank_v,
    )


def estimate_beta(ctx: ProjectionContext, dataset: Dataset, split: FoldSplit) -> EffectEstimate:
    y = dataset.y[split.a1]
    d = dataset.d[split.a1]
    n1 = len(d)

    # 1. Identification strength left after projecting out the violation space
    if ctx.dmd <= DMD_REL_TOL * float(d @ d):
        raise EstimationError("IV fully absorbed by violation space")
    dof = n1 - ctx.rank_v - 1
    if dof <= 0:
        raise EstimationError(f"Negative degrees of freedom ({dof}) for the outcome residuals.")

    # 2. Raw estimate
    beta_raw = float(y @ ctx.md) / ctx.dmd

    # 3. Residuals; the outcome residual removes both Omega V and V
    delta_hat = d - ctx.omega @ d
    combined, _ = orthonormal_basis(np.hstack([ctx.omega @ ctx.v, ctx.v]))
    eps_hat = residualize(combined, y - d * beta_raw)

    # 4. Bias correction
    bias_term = float(np.sum(ctx.m_diag * delta_hat * eps_hat)) / ctx.dmd

    sigma_eps_hat = float(np.sqrt(eps_hat @ eps_hat / dof))
    sigma_delta_hat = float(np.sqrt(delta_hat @ delta_hat / n1))
    return EffectEstimate(
        beta_hat=beta_raw - bias_term,
        beta_raw=beta_raw,
        bias_term=bias_term,
        se_plugin=sigma_eps_hat / np.sqrt(ctx.dmd),
        sigma_eps_hat=sigma_eps_hat,
        sigma_delta_hat=sigma_delta_hat,
        residuals_eps=eps_hat,
        residuals_delta=delta_hat,
    )


def centered(values: np.ndarray) -> np.ndarray:
    return values - values.mean()


def bootstrap_se(
    estimate_at_qmax: EffectEstimate,
    contexts: Sequence[Optional[ProjectionContext]],
    draws: BootstrapDraws,
) -> List[Optional[float]]:
    """
    Wild bootstrap SE for each candidate. Residuals are centred, with the outcome
    residual taken at Q_max; every candidate reuses the same multipliers.
    """
    delta_tilde = centered(estimate_at_qmax.residuals_delta)
    eps_tilde = centered(estimate_at_qmax.residuals_eps)
    u = draws.multipliers
    eps_draws = u * eps_tilde
    cross_draws = (u * delta_tilde) * eps_draws

    ses: List[Optional[float]] = []
    for ctx in contexts:
        if ctx is None:
            ses.append(None)
            continue
        stats = (eps_draws @ ctx.md - cross_draws @ ctx.m_diag) / ctx.dmd
        ses.append(float(np.std(stats, ddof=1)))
    return ses


def normal_ci(beta: float, se: float, alpha: float = 0.05) -> Tuple[float, float]:
    z = norm.ppf(1 - alpha / 2)
    return beta - z * se, beta + z * se


def normal_p_value(beta: float, se: float) -> float:
    if se <= 0:
        return 0.0 if beta != 0 else 1.0
    return float(2 * norm.sf(abs(beta / se)))
