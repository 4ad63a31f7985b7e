import logging
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.dataset import check_finite, numeric_columns
from app.core.errors import DataValidationError, RankDeficiencyWarning
from app.modules.learners.polynomial_algo import has_binary_column
from app.utils.linalg import append_independent

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ViolationCandidate:
    q: int
    columns: np.ndarray
    label: str
    names: Tuple[str, ...] = ()
    degenerate: bool = False

    @property
    def width(self) -> int:
        return self.columns.shape[1]


def _as_columns(element, n_rows: int, position: int) -> np.ndarray:
    try:
        arr = np.asarray(element, dtype=float)
    except (TypeError, ValueError):
        raise DataValidationError(f"Violation space element {position + 1} is not numeric.")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape[0] != n_rows:
        raise DataValidationError(
            f"Violation space element {position + 1} has {arr.shape[0]} rows, expected {n_rows}."
        )
    bad = ~np.isfinite(arr)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataValidationError(
            f"Non-finite value in violation space element {position + 1} at row {row}, column {col}."
        )
    return arr


def check_violation_space(vio_space: Sequence, n_rows: int) -> List[np.ndarray]:
    """Full-sample elements as finite float matrices, before any fold slicing."""
    return [_as_columns(e, n_rows, k) for k, e in enumerate(vio_space)]


def build_candidates(
    w: np.ndarray,
    vio_space: Sequence[np.ndarray],
    nested: bool = True,
    labels: Optional[Sequence[str]] = None,
) -> List[ViolationCandidate]:
    """
    V_0 = W; nested: V_q = [W | e_1 | ... | e_q], otherwise V_q = [W | e_q].
    Columns adding no new direction are dropped with a warning (W is kept as is).
    """
    n_rows = w.shape[0]
    elements = [_as_columns(e, n_rows, k) for k, e in enumerate(vio_space)]
    labels = list(labels) if labels is not None else [f"vio{k + 1}" for k in range(len(elements))]

    candidates = [ViolationCandidate(q=0, columns=w, label="W", names=("W",))]
    current = w
    for q, element in enumerate(elements, start=1):
        base = current if nested else w
        kept = append_independent(base, element)
        dropped = element.shape[1] - len(kept)
        if dropped:
            warnings.warn(
                f"Violation candidate q{q}: dropped {dropped} linearly dependent column(s).",
                RankDeficiencyWarning,
                stacklevel=2,
            )
        columns = np.hstack([base, element[:, kept]])
        prev_names = candidates[-1].names if nested else ("W",)
        candidates.append(
            ViolationCandidate(
                q=q,
                columns=columns,
                label=labels[q - 1],
                names=prev_names + (labels[q - 1],),
                degenerate=len(kept) == 0,
            )
        )
        if len(kept) == 0:
            logger.warning("Violation candidate q%d adds no new direction to its base.", q)
        if nested:
            current = columns
    return candidates


def create_monomials(z: np.ndarray, degree: int) -> List[np.ndarray]:
    """Element q (1..degree) holds the q-th powers of every Z column, no cross terms."""
    if degree < 1:
        raise DataValidationError(f"degree must be at least 1, got {degree}.")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if degree > 1 and has_binary_column(z):
        warnings.warn(
            "Powers of a binary instrument repeat the instrument itself.",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return [z ** q for q in range(1, degree + 1)]


def create_interactions(z_col: np.ndarray, x: Optional[np.ndarray]) -> List[np.ndarray]:
    """[z, z * each column of X]; just [z] when X is empty."""
    z_col = np.asarray(z_col, dtype=float)
    if z_col.ndim == 2:
        if z_col.shape[1] != 1:
            raise DataValidationError("create_interactions needs a single instrument column.")
        z_col = z_col[:, 0]
    z_vec = z_col.reshape(-1, 1)
    if x is None or np.asarray(x).size == 0:
        return [z_vec]
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != z_vec.shape[0]:
        raise DataValidationError(
            f"Dimension mismatch: instrument has {z_vec.shape[0]} rows, X has {x.shape[0]}."
        )
    return [z_vec, z_vec * x]


def _checked_block(frame: pd.DataFrame, names: List[str]) -> np.ndarray:
    block = numeric_columns(frame, names)
    check_finite(block, names, "violation space")
    return block


def parse_violation_spec(
    spec: Optional[str],
    frame: pd.DataFrame,
    z_names: Sequence[str],
    x_names: Sequence[str],
) -> Tuple[List[np.ndarray], List[str]]:
    """
    Mini-language: `monomials:<degree>`, `interactions:<zcol>`, `cols:<a,b,...>` joined
    by `+`. Returns full-sample elements and their labels.
    """
    elements: List[np.ndarray] = []
    labels: List[str] = []
    if not spec:
        return elements, labels

    for token in spec.split("+"):
        token = token.strip()
        kind, _, arg = token.partition(":")
        kind, arg = kind.strip().lower(), arg.strip()
        if not arg:
            raise DataValidationError(f"Violation spec element '{token}' needs an argument.")

        if kind == "monomials":
            try:
                degree = int(arg)
            except ValueError:
                raise DataValidationError(f"monomials degree must be an integer, got '{arg}'.")
            z = _checked_block(frame, list(z_names))
            elements.extend(create_monomials(z, degree))
            labels.extend("Z" if q == 1 else f"Z^{q}" for q in range(1, degree + 1))
        elif kind == "interactions":
            if arg not in frame.columns:
                raise DataValidationError(f"Unknown column '{arg}' in violation spec.")
            x = _checked_block(frame, list(x_names)) if x_names else None
            parts = create_interactions(_checked_block(frame, [arg]), x)
            elements.extend(parts)
            labels.extend([arg, f"{arg}:X"][: len(parts)])
        elif kind == "cols":
            names = [c.strip() for c in arg.split(",") if c.strip()]
            missing = [c for c in names if c not in frame.columns]
            if missing:
                raise DataValidationError(f"Unknown column(s) in violation spec: {', '.join(missing)}.")
            elements.append(_checked_block(frame, names))
            labels.append(",".join(names))
        else:
            raise DataValidationError(
                f"Unknown violation spec element '{kind}'; use monomials, interactions or cols."
            )
    return elements, labels
