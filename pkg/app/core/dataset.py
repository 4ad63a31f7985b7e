"""
Data model shared by every stage: the validated Dataset and the A1/A2 fold split.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.core.errors import DataValidationError

MIN_ROWS = 20
MIN_A2_SIZE = 10
DEFAULT_SPLIT_PROP = 2 / 3
INTERCEPT_NAME = "intercept"


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    w: np.ndarray
    z_names: Tuple[str, ...] = ()
    x_names: Tuple[str, ...] = ()
    w_names: Tuple[str, ...] = ()
    y_name: str = "Y"
    d_name: str = "D"

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def features(self) -> np.ndarray:
        """Treatment-model inputs (Z, X) column-stacked."""
        return np.hstack([self.z, self.x])


@dataclass(frozen=True, eq=False)
class FoldSplit:
    a1: np.ndarray
    a2: np.ndarray
    seed: Optional[int] = None
    split: bool = field(default=True)

    @property
    def n_a1(self) -> int:
        return len(self.a1)

    @property
    def n_a2(self) -> int:
        return len(self.a2)


def _as_matrix(values, n: int, role: str) -> np.ndarray:
    if values is None:
        return np.empty((n, 0))
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DataValidationError(f"{role} must be a vector or a matrix.")
    if arr.shape[1] == 0:
        return np.empty((n, 0))
    return arr


def _default_names(prefix: str, count: int) -> Tuple[str, ...]:
    if count == 1:
        return (prefix,)
    return tuple(f"{prefix}{j + 1}" for j in range(count))


def check_finite(arr: np.ndarray, names: Sequence[str], role: str):
    bad = ~np.isfinite(arr)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataValidationError(
            f"Non-finite value in {role} at row {row}, column '{names[col]}'."
        )


def numeric_columns(frame: pd.DataFrame, names: List[str]) -> np.ndarray:
    """Named CSV columns as a float matrix; text columns are rejected by name."""
    if not names:
        return np.empty((len(frame), 0))
    block = frame[names]
    non_numeric = [c for c in names if not pd.api.types.is_numeric_dtype(block[c])]
    if non_numeric:
        raise DataValidationError(
            f"Column(s) {', '.join(non_numeric)} are not numeric; encode them as 0/1 dummies."
        )
    return block.to_numpy(dtype=float)


def _has_intercept(w: np.ndarray) -> bool:
    return bool(np.any(np.all(w == 1.0, axis=0))) if w.shape[1] else False


def validate_dataset(
    y: Union[np.ndarray, Dataset],
    d: Optional[np.ndarray] = None,
    z: Optional[np.ndarray] = None,
    x: Optional[np.ndarray] = None,
    w: Optional[np.ndarray] = None,
    z_names: Optional[Sequence[str]] = None,
    x_names: Optional[Sequence[str]] = None,
    w_names: Optional[Sequence[str]] = None,
    y_name: str = "Y",
    d_name: str = "D",
) -> Dataset:
    """
    Builds a Dataset from raw columns and enforces its invariants.

    Passing an existing Dataset re-validates it and returns an equal Dataset.
    W defaults to X; an all-ones intercept column is prepended to W when absent.
    """
    if isinstance(y, Dataset):
        ds = y
        return validate_dataset(
            ds.y, ds.d, ds.z, ds.x, ds.w,
            z_names=ds.z_names, x_names=ds.x_names, w_names=ds.w_names,
            y_name=ds.y_name, d_name=ds.d_name,
        )

    # 1. Shapes
    y_arr = np.asarray(y, dtype=float).reshape(-1)
    n = y_arr.shape[0]
    if d is None or z is None:
        raise DataValidationError("Outcome, treatment and instruments are required.")
    d_arr = np.asarray(d, dtype=float).reshape(-1)
    z_arr = _as_matrix(z, n, "Z")
    x_arr = _as_matrix(x, n, "X")
    w_arr = x_arr if w is None else _as_matrix(w, n, "W")

    for role, arr in (("D", d_arr), ("Z", z_arr), ("X", x_arr), ("W", w_arr)):
        if arr.shape[0] != n:
            raise DataValidationError(
                f"Dimension mismatch: {role} has {arr.shape[0]} rows, Y has {n}."
            )
    if n < MIN_ROWS:
        raise DataValidationError(f"At least {MIN_ROWS} observations required, got {n}.")
    if z_arr.shape[1] == 0:
        raise DataValidationError("At least one instrument column is required.")

    # 2. Names
    z_names = tuple(z_names) if z_names is not None else _default_names("Z", z_arr.shape[1])
    x_names = tuple(x_names) if x_names is not None else _default_names("X", x_arr.shape[1])
    if w_names is not None:
        w_names = tuple(w_names)
    elif w is None:
        w_names = x_names
    else:
        w_names = _default_names("W", w_arr.shape[1])

    for role, arr, names in (("Z", z_arr, z_names), ("X", x_arr, x_names), ("W", w_arr, w_names)):
        if len(names) != arr.shape[1]:
            raise DataValidationError(f"{role} has {arr.shape[1]} columns but {len(names)} names.")
    treatment_side = (y_name, d_name) + z_names + x_names
    if len(set(treatment_side)) != len(treatment_side):
        raise DataValidationError("Duplicate column names among Y, D, Z and X.")
    if len(set(w_names)) != len(w_names):
        raise DataValidationError("Duplicate column names in W.")

    # 3. Values
    check_finite(y_arr.reshape(-1, 1), (y_name,), "Y")
    check_finite(d_arr.reshape(-1, 1), (d_name,), "D")
    check_finite(z_arr, z_names, "Z")
    check_finite(x_arr, x_names, "X")
    check_finite(w_arr, w_names, "W")
    if np.ptp(d_arr) == 0:
        raise DataValidationError("treatment has zero variance")

    # 4. Intercept
    if not _has_intercept(w_arr):
        w_arr = np.hstack([np.ones((n, 1)), w_arr])
        name = INTERCEPT_NAME if INTERCEPT_NAME not in w_names else f"{INTERCEPT_NAME}_"
        w_names = (name,) + w_names

    return Dataset(
        y=y_arr, d=d_arr, z=z_arr, x=x_arr, w=w_arr,
        z_names=z_names, x_names=x_names, w_names=w_names,
        y_name=y_name, d_name=d_name,
    )


def split_sizes(n: int, split_prop: float = DEFAULT_SPLIT_PROP) -> Tuple[int, int]:
    n_a1 = int(np.floor(split_prop * n + 0.5))
    return n_a1, n - n_a1


def make_split(
    n: int,
    split_prop: float = DEFAULT_SPLIT_PROP,
    seed: Optional[int] = None,
    p_w: int = 1,
) -> FoldSplit:
    """
    Uniformly random partition of 0..n-1 into A1 (outcome model, fraction split_prop)
    and A2 (treatment learner). Deterministic given the seed.
    """
    if not 0 < split_prop < 1:
        raise DataValidationError(f"split_prop must lie in (0, 1), got {split_prop}.")
    n_a1, n_a2 = split_sizes(n, split_prop)
    if n_a1 < p_w + 2:
        raise DataValidationError(
            f"Fold A1 has {n_a1} rows; at least {p_w + 2} needed for {p_w} outcome-model columns."
        )
    if n_a2 < MIN_A2_SIZE:
        raise DataValidationError(
            f"Fold A2 has {n_a2} rows; at least {MIN_A2_SIZE} needed to fit the treatment model."
        )

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return FoldSplit(a1=np.sort(perm[:n_a1]), a2=np.sort(perm[n_a1:]), seed=seed)


def full_split(n: int) -> FoldSplit:
    """No sample splitting: A1 is the whole sample (polynomial and user learners)."""
    return FoldSplit(a1=np.arange(n), a2=np.arange(0), seed=None, split=False)
