"""
Summary report in five blocks (data splitting, instrument validity, selected estimate,
treatment model, violation space selection) plus the extended per-candidate and IV
strength blocks. The text is rendered from the structured record only, so the record
file reproduces every printed number.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

from app.core.errors import DataValidationError
from app.modules.multisplit.splitting import Aggregation, TsciResult

logger = logging.getLogger(__name__)

RECORD_SCHEMA_VERSION = 1
DECIMALS = 5
COLUMN_WIDTH = 12


def result_record(result: TsciResult, config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Nested, JSON-ready view of a result with stable field names."""
    lower, upper = result.ci
    return {
        "schema_version": RECORD_SCHEMA_VERSION,
        "splitting": {
            "sample_split": result.sample_split,
            "n": result.n,
            "n_a1": result.n_a1,
            "n_a2": result.n_a2,
            "nsplits": result.nsplits,
            "n_failed": result.n_failed,
            "aggregation": result.aggregation.value,
        },
        "validity": dict(result.validity_counts),
        "estimate": {
            "beta": result.beta,
            "se": result.se,
            "ci_lower": lower,
            "ci_upper": upper,
            "p_value": result.p,
            "alpha": result.alpha,
            "sel_method": result.sel_method.value,
        },
        "candidates": [
            {
                "q": c.q,
                "beta": c.beta,
                "se": c.se,
                "ci_lower": None if c.ci is None else c.ci[0],
                "ci_upper": None if c.ci is None else c.ci[1],
                "p_value": c.p,
                "iv_strength": c.iv_strength,
                "iv_threshold": c.iv_threshold,
            }
            for c in result.candidates
        ],
        "treatment_model": {"method": result.learner_label},
        "selection": {
            "q_comp": list(result.tallies["q_comp"]),
            "q_cons": list(result.tallies["q_cons"]),
            "q_max": list(result.tallies["q_max"]),
        },
        "interpret_carefully": result.interpret_carefully,
        "notes": list(result.notes),
        "config": config or {},
    }


# --- Text rendering ---
def fmt(value: Optional[float]) -> str:
    if value is None:
        return "."
    return f"{value:.{DECIMALS}f}"


def _row(label: str, cells: List[str], label_width: int) -> str:
    return label.ljust(label_width) + "".join(c.rjust(COLUMN_WIDTH) for c in cells)


def _ci_labels(alpha: float) -> Tuple[str, str]:
    return f"{100 * alpha / 2:g} %", f"{100 * (1 - alpha / 2):g} %"


def _estimate_table(rows: List[Tuple[str, Dict[str, Any]]], alpha: float) -> List[str]:
    label_width = max(len(label) for label, _ in rows) + 1
    low, high = _ci_labels(alpha)
    lines = [_row("", ["Estimate", "Std_Error", low, high, "Pr(>|z|)"], label_width)]
    for label, entry in rows:
        lines.append(
            _row(
                label,
                [fmt(entry["beta"]), fmt(entry["se"]), fmt(entry["ci_lower"]),
                 fmt(entry["ci_upper"]), fmt(entry["p_value"])],
                label_width,
            )
        )
    return lines


def render_report(record: Dict[str, Any], extended: bool = False) -> str:
    splitting = record["splitting"]
    estimate = record["estimate"]
    alpha = estimate["alpha"]
    lines: List[str] = []

    # 1. Data splitting
    lines.append("Statistics about the data splitting procedure:")
    if splitting["sample_split"]:
        lines.append(f"Sample size A1: {splitting['n_a1']}")
        lines.append(f"Sample size A2: {splitting['n_a2']}")
        lines.append(f"Number of data splits: {splitting['nsplits']}")
        if splitting["n_failed"]:
            lines.append(f"Failed data splits (excluded): {splitting['n_failed']}")
        lines.append(f"Aggregation method: {splitting['aggregation']}")
    else:
        lines.append(f"Sample size: {splitting['n']}")
        lines.append("No sample splitting was performed.")
    lines.append("")

    # 2. Validity
    validity = record["validity"]
    names = ["valid", "invalid", "non_testable"]
    lines.append("Statistics about the validity of the instrument(s):")
    lines.append("".join(n.rjust(13) for n in names))
    lines.append("".join(str(validity.get(n, 0)).rjust(13) for n in names))
    lines.append("")

    # 3. Selected estimate
    lines.append("Treatment effect estimate of selected violation space candidate(s):")
    lines.extend(_estimate_table([("TSCI-Estimate", estimate)], alpha))
    lines.append(f"Selection method: {estimate['sel_method']}")
    if record["interpret_carefully"]:
        lines.append(
            f"Note: in {record['interpret_carefully']} data split(s) the selected candidate is the "
            "largest one with strong enough IVs; interpret the estimate carefully."
        )
    lines.append("")

    candidates = record["candidates"]
    if extended:
        lines.append("Treatment effect estimates of all violation space candidates:")
        lines.extend(_estimate_table([(f"TSCI-q{c['q']}", c) for c in candidates], alpha))
        lines.append("")

    # 4. Treatment model
    lines.append("Statistics about the treatment model:")
    lines.append(f"Estimation method: {record['treatment_model']['method']}")
    lines.append("")

    # 5. Violation space selection
    selection = record["selection"]
    label_width = max(len(f"q{len(candidates) - 1}"), 2) + 1
    lines.append("Statistics about the violation space selection:")
    lines.append(_row("", ["q_comp", "q_cons", "Qmax"], label_width))
    for q in range(len(selection["q_comp"])):
        lines.append(
            _row(
                f"q{q}",
                [str(selection["q_comp"][q]), str(selection["q_cons"][q]), str(selection["q_max"][q])],
                label_width,
            )
        )

    if extended:
        lines.append("")
        lines.append("Statistics about the IV strength:")
        lines.append(_row("", ["IV_Strength", "IV_Threshold"], label_width))
        for c in candidates:
            lines.append(_row(f"q{c['q']}", [fmt(c["iv_strength"]), fmt(c["iv_threshold"])], label_width))

    for note in record["notes"]:
        lines.append("")
        lines.append(f"Note: {note}")
    return "\n".join(lines) + "\n"


def record_to_json(record: Dict[str, Any]) -> str:
    return json.dumps(record, indent=2) + "\n"


def report_paths(out: str) -> Tuple[str, str]:
    stem, ext = os.path.splitext(out)
    json_path = out if ext.lower() == ".json" else f"{out}.json"
    return json_path, f"{os.path.splitext(json_path)[0]}.txt"


def emit_report(
    result: TsciResult,
    extended: bool = False,
    out: Optional[str] = None,
    config: Optional[Dict[str, Any]] = None,
) -> Tuple[str, Dict[str, Any]]:
    """
    Builds the record and its text rendering. With `out`, writes the record as JSON and
    the text report next to it (same name, .txt).
    """
    record = result_record(result, config)
    text = render_report(record, extended)
    if out:
        json_path, text_path = report_paths(out)
        try:
            with open(json_path, "w") as handle:
                handle.write(record_to_json(record))
            with open(text_path, "w") as handle:
                handle.write(text)
        except OSError as e:
            raise DataValidationError(f"Cannot write output to '{out}': {e}")
        logger.info("Wrote %s and %s", json_path, text_path)
    return text, record
