"""
Command line entry point.

    python -m app.cli run --input card.csv --y lwage --d educ --z nearc4 --vio monomials:1
    python -m app.cli sim --scenario B --n 3000 --reps 200 --seed 1 --out results.csv

Exit codes: 0 success, 2 invalid input or configuration, 3 estimation failure.
"""

import logging
import sys
from typing import Optional, Sequence

from app.core import config as settings
from app.core.errors import DataValidationError, TsciError
from app.core.models import Scenario, SimulationRequest
from app.modules.multisplit.splitting import Aggregation
from app.modules.runs.config import ConfigArgumentParser, parse_config
from app.modules.runs.pipeline import execute_run
from app.modules.runs.report import emit_report
from app.modules.simlab.harness import render_summary, run_replications, settings_from_request, summarize

logger = logging.getLogger(__name__)


def run_command(argv: Sequence[str]) -> int:
    config = parse_config(argv)
    result = execute_run(config)
    text, _ = emit_report(
        result, extended=config.extended, out=config.out, config=config.model_dump(mode="json")
    )
    sys.stdout.write(text)
    return 0


def sim_command(argv: Sequence[str]) -> int:
    parser = ConfigArgumentParser(prog="app.cli sim", description="Monte Carlo replications of a scenario")
    parser.add_argument("--scenario", default="A", choices=[s.value for s in Scenario])
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--nsplits", type=int, default=1)
    parser.add_argument("--num-trees", dest="num_trees", type=int, default=100)
    parser.add_argument("--boot-draws", dest="boot_draws", type=int, default=300)
    parser.add_argument("--mult-split-method", dest="mult_split_method", default="DML")
    parser.add_argument("--out", default=None, help="per-replication CSV")
    args = parser.parse_args(argv)

    try:
        request = SimulationRequest(
            scenario=Scenario(args.scenario),
            n=args.n,
            reps=args.reps,
            seed=args.seed,
            nsplits=args.nsplits,
            num_trees=args.num_trees,
            boot_draws=args.boot_draws,
            mult_split_method=Aggregation(args.mult_split_method.upper()),
        )
    except ValueError as e:
        raise DataValidationError(f"Invalid simulation settings: {e}")

    frame = run_replications(settings_from_request(request), n_jobs=settings.N_JOBS)
    if args.out:
        try:
            frame.to_csv(args.out, index=False)
        except OSError as e:
            raise DataValidationError(f"Cannot write '{args.out}': {e}")
    sys.stdout.write(render_summary(summarize(frame)))
    return 0


COMMANDS = {"run": run_command, "sim": sim_command}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    settings.configure_logging()
    if not argv or argv[0] not in COMMANDS:
        sys.stderr.write("usage: python -m app.cli {run,sim} [options]\n")
        return 2

    try:
        return COMMANDS[argv[0]](argv[1:])
    except TsciError as e:
        logger.error("%s", e)
        sys.stderr.write(f"error: {e}\n")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
