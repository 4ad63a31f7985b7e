"""
Run configuration from command-line flags and an optional key=value config file.
Flags override file values.
"""

import argparse
import logging
from typing import Any, Dict, List, Optional, Sequence

from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.errors import DataValidationError
from app.core.models import RunConfig

logger = logging.getLogger(__name__)

LIST_FIELDS = ("z", "x", "w")
TRUTHY = {"true", "1", "yes", "on"}
FALSY = {"false", "0", "no", "off"}


class ConfigArgumentParser(argparse.ArgumentParser):
    """argparse that raises DataValidationError instead of exiting."""

    def error(self, message):
        raise DataValidationError(f"Invalid command line: {message}")


def str_to_bool(value: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in TRUTHY:
        return True
    if lowered in FALSY:
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got '{value}'")


def add_run_arguments(parser: argparse.ArgumentParser):
    # Every default is SUPPRESS so only flags actually given override the file
    S = argparse.SUPPRESS
    data = parser.add_argument_group("data")
    data.add_argument("--config", default=S, help="key=value file with run settings")
    data.add_argument("--input", default=S, help="CSV file with a header row")
    data.add_argument("--y", default=S, help="outcome column")
    data.add_argument("--d", default=S, help="treatment column")
    data.add_argument("--z", default=S, help="instrument column(s), comma separated")
    data.add_argument("--x", default=S, help="treatment-model covariates, comma separated")
    data.add_argument("--w", default=S, help="outcome-model covariates (default: --x)")

    vio = parser.add_argument_group("violation space")
    vio.add_argument("--vio", default=S, help="e.g. monomials:2, interactions:z, cols:a,b joined by +")
    vio.add_argument("--nested", type=str_to_bool, default=S)

    learner = parser.add_argument_group("treatment model")
    learner.add_argument("--learner", default=S, help="forest | boosting | poly | user")
    learner.add_argument("--weight-matrix", dest="weight_matrix", default=S, help="CSV without header")
    learner.add_argument("--num-trees", dest="num_trees", type=int, default=S)
    learner.add_argument("--min-node-size", dest="min_node_size", type=int, default=S)
    learner.add_argument("--mtry", type=int, default=S)
    learner.add_argument("--max-depth", dest="max_depth", type=int, default=S)
    learner.add_argument("--boost-rounds", dest="boost_rounds", type=int, default=S)
    learner.add_argument("--shrinkage", type=float, default=S)
    learner.add_argument("--boost-depth", dest="boost_depth", type=int, default=S)
    learner.add_argument("--degree", default=S, help="integer or auto")

    inference = parser.add_argument_group("inference")
    inference.add_argument("--nsplits", type=int, default=S)
    inference.add_argument("--split-prop", dest="split_prop", type=float, default=S)
    inference.add_argument("--sel-method", dest="sel_method", default=S)
    inference.add_argument("--mult-split-method", dest="mult_split_method", default=S)
    inference.add_argument("--sd-boot", dest="sd_boot", type=str_to_bool, default=S)
    inference.add_argument("--iv-threshold", dest="iv_threshold", type=float, default=S)
    inference.add_argument("--threshold-boot", dest="threshold_boot", type=str_to_bool, default=S)
    inference.add_argument("--threshold-mode", dest="threshold_mode", default=S)
    inference.add_argument("--boot-draws", dest="boot_draws", type=int, default=S)
    inference.add_argument("--alpha", type=float, default=S)
    inference.add_argument("--seed", type=int, default=S)

    output = parser.add_argument_group("output")
    output.add_argument("--extended", nargs="?", const=True, type=str_to_bool, default=S)
    output.add_argument("--out", default=S, help="structured result file (JSON)")


def _split_list(value) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [part.strip() for part in str(value).split(",") if part.strip()]


def read_config_file(path: str) -> Dict[str, Any]:
    """Reads a dotenv-style key=value file; keys match flag names (dashes or underscores)."""
    try:
        with open(path) as handle:
            raw = dotenv_values(stream=handle)
    except OSError as e:
        raise DataValidationError(f"Cannot read config file '{path}': {e}")

    known = set(RunConfig.model_fields)
    values: Dict[str, Any] = {}
    unknown = []
    for key, value in raw.items():
        name = key.strip().lower().replace("-", "_")
        if name not in known:
            unknown.append(key)
            continue
        values[name] = value
    if unknown:
        raise DataValidationError(f"Unknown key(s) in config file '{path}': {', '.join(unknown)}")
    return values


def build_run_config(values: Dict[str, Any]) -> RunConfig:
    values = {k: v for k, v in values.items() if v is not None}
    for name in LIST_FIELDS:
        if name in values:
            values[name] = _split_list(values[name])
    if values.get("learner") == "polynomial":
        values["learner"] = "poly"

    missing = [name for name in ("y", "d", "z") if name not in values]
    if missing:
        raise DataValidationError(f"Missing required column role(s): {', '.join(missing)}")
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise DataValidationError(f"Invalid run configuration: {problems}")


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    """Resolves flags plus the optional --config file into a validated RunConfig."""
    parser = ConfigArgumentParser(prog="app.cli run", description="Estimate a treatment effect with TSCI")
    add_run_arguments(parser)
    flags = vars(parser.parse_args(argv))

    values: Dict[str, Any] = {}
    config_path = flags.pop("config", None)
    if config_path:
        values.update(read_config_file(config_path))
        logger.debug("Loaded %d setting(s) from %s", len(values), config_path)
    values.update(flags)

    config = build_run_config(values)
    if not config.input:
        raise DataValidationError("An input CSV is required (--input).")
    return config
