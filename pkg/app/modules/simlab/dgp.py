"""
Synthetic data for the estimator checks.

D = f(Z, X) + delta and Y = beta * D + h(Z) + phi(X) + eps, with (delta, eps) jointly
normal with correlation rho. h != 0 makes the instruments invalid.
"""

import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from app.core.dataset import Dataset, validate_dataset
from app.core.errors import DataValidationError, EstimationError, WeakInstrumentWarning

logger = logging.getLogger(__name__)

MIN_SIM_ROWS = 100
COVARIATE_WEIGHT = 0.3
PHI_WEIGHT = 0.2


class FForm(str, Enum):
    linear = "linear"
    quad = "quad"
    interaction = "interaction"
    sine = "sine"


class HForm(str, Enum):
    none = "none"
    linear = "linear"
    quad = "quad"


@dataclass(frozen=True)
class DgpSpec:
    n: int = 1000
    beta_true: float = 1.0
    f_form: FForm = FForm.quad
    h_form: HForm = HForm.none
    rho: float = 0.6
    iv_dim: int = 1
    covariate_dim: int = 5
    binary_iv: bool = False
    seed: Optional[int] = None

    def validate(self):
        if self.n < MIN_SIM_ROWS:
            raise DataValidationError(f"Simulations need n >= {MIN_SIM_ROWS}, got {self.n}.")
        if not -1 <= self.rho <= 1:
            raise DataValidationError(f"rho must lie in [-1, 1], got {self.rho}.")
        if self.iv_dim < 1 or self.covariate_dim < 0:
            raise DataValidationError("iv_dim must be positive and covariate_dim nonnegative.")
        if self.f_form == FForm.interaction and self.covariate_dim < 1:
            raise DataValidationError("The interaction treatment model needs a covariate.")


@dataclass(frozen=True, eq=False)
class DgpTruth:
    beta: float
    f: np.ndarray
    h: np.ndarray
    phi: np.ndarray
    delta: np.ndarray
    eps: np.ndarray


# Named presets; every Monte Carlo check runs one of these
SCENARIOS = {
    "A": dict(beta_true=0.5, f_form=FForm.quad, h_form=HForm.none, rho=0.6),
    "B": dict(beta_true=1.0, f_form=FForm.quad, h_form=HForm.linear, rho=0.6),
    "C": dict(beta_true=1.0, f_form=FForm.interaction, h_form=HForm.quad, rho=0.6),
}


def scenario(name: str, n: int = 3000, seed: Optional[int] = None) -> DgpSpec:
    key = str(name).upper()
    if key not in SCENARIOS:
        raise DataValidationError(f"Unknown scenario '{name}'; choose A, B or C.")
    return DgpSpec(n=n, seed=seed, **SCENARIOS[key])


def treatment_function(form: FForm, z: np.ndarray, x: np.ndarray) -> np.ndarray:
    z_sum = z.sum(axis=1)
    x_part = COVARIATE_WEIGHT * x.sum(axis=1) if x.shape[1] else 0.0
    if form == FForm.linear:
        core = z_sum
    elif form == FForm.quad:
        core = z_sum + (z ** 2).sum(axis=1)
    elif form == FForm.interaction:
        core = z_sum + (z ** 2).sum(axis=1) + z_sum * x[:, 0]
    else:
        core = np.sin(np.pi * z).sum(axis=1) + z_sum
    return core + x_part


def violation_function(form: HForm, z: np.ndarray) -> np.ndarray:
    if form == HForm.none:
        return np.zeros(z.shape[0])
    if form == HForm.linear:
        return 0.5 * z.sum(axis=1)
    return 0.5 * z.sum(axis=1) + 0.25 * (z ** 2).sum(axis=1)


def generate(spec: DgpSpec) -> Tuple[Dataset, DgpTruth]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n

    if spec.binary_iv:
        z = rng.binomial(1, 0.5, size=(n, spec.iv_dim)).astype(float)
    else:
        z = rng.standard_normal((n, spec.iv_dim))
    x = rng.standard_normal((n, spec.covariate_dim))
    errors = rng.multivariate_normal([0.0, 0.0], [[1.0, spec.rho], [spec.rho, 1.0]], size=n)
    delta, eps = errors[:, 0], errors[:, 1]

    f = treatment_function(spec.f_form, z, x)
    h = violation_function(spec.h_form, z)
    phi = PHI_WEIGHT * x.sum(axis=1) if spec.covariate_dim else np.zeros(n)
    d = f + delta
    y = spec.beta_true * d + h + phi + eps

    dataset = validate_dataset(
        y, d, z, x,
        z_names=[f"z{j + 1}" for j in range(spec.iv_dim)] if spec.iv_dim > 1 else ["z"],
        x_names=[f"x{j + 1}" for j in range(spec.covariate_dim)],
    )
    truth = DgpTruth(beta=spec.beta_true, f=f, h=h, phi=phi, delta=delta, eps=eps)
    return dataset, truth


# --- Oracles, by direct dense algebra ---
def _lstsq_fit(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return design @ coef


def _with_intercept(mat: Optional[np.ndarray], n: int) -> np.ndarray:
    ones = np.ones((n, 1))
    if mat is None or mat.size == 0:
        return ones
    return np.hstack([ones, mat])


def tsls_oracle(
    dataset: Dataset, instruments: Optional[np.ndarray] = None, exog: Optional[np.ndarray] = None
) -> float:
    """Classical two stage least squares: (D^ P_X D^)^-1 D^ P_X Y with D^ = P_[1,Z,X] D."""
    n = dataset.n
    z = dataset.z if instruments is None else np.asarray(instruments, dtype=float).reshape(n, -1)
    x = dataset.x if exog is None else np.asarray(exog, dtype=float).reshape(n, -1)
    exog_design = _with_intercept(x, n)
    first_stage = np.hstack([exog_design, z])
    if np.linalg.matrix_rank(first_stage) < first_stage.shape[1]:
        raise EstimationError("First-stage design [1, Z, X] is rank deficient.")

    d_hat = _lstsq_fit(first_stage, dataset.d)
    d_res = d_hat - _lstsq_fit(exog_design, d_hat)
    y_res = dataset.y - _lstsq_fit(exog_design, dataset.y)
    denominator = float(d_res @ d_res)
    if denominator <= 1e-10 * float(dataset.d @ dataset.d):
        warnings.warn(
            "Instruments explain (almost) none of the treatment; TSLS is unstable.",
            WeakInstrumentWarning,
            stacklevel=2,
        )
        if denominator == 0:
            raise EstimationError("TSLS denominator is zero.")
    return float(d_res @ y_res) / denominator


def ols_oracle(dataset: Dataset) -> float:
    """Naive OLS coefficient of D in a regression of Y on [D, W]."""
    design = np.hstack([dataset.d.reshape(-1, 1), dataset.w])
    coef, *_ = np.linalg.lstsq(design, dataset.y, rcond=None)
    return float(coef[0])
