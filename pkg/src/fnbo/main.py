import argparse
import asyncio
import logging
import sys

from . import __version__
from .config import ALGORITHMS, ExperimentConfig, Settings
from .discrete import ABLATION_PRESETS
from .errors import FnboError
from .harness import read_traces, run_experiment, summarize, write_summary
from .problems import COST_SCENARIOS, PROBLEMS, get_problem


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnbo", description="Cost-aware Bayesian optimization of function networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="overrides FNBO_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", default=None, help="experiment config JSON")
    run.add_argument("--problem", default=None, help="ackmat[:a|b|c], manu[:seed] or a problem JSON file")
    run.add_argument("--algo", choices=ALGORITHMS, default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--budget", type=float, default=None)
    run.add_argument("--out", dest="output_dir", default=None)
    run.add_argument("--no-timing", dest="record_timing", action="store_const", const=False, default=None,
                     help="write 0 as acquisition time so repeated runs give identical traces")

    summ = sub.add_parser("summarize", help="aggregate trace files")
    summ.add_argument("--in", dest="in_dir", required=True)
    summ.add_argument("--out", dest="out_dir", required=True)

    sub.add_parser("problems", help="list builtin problems, cost scenarios and set presets")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    if args.log_level:
        settings.log_level = args.log_level
    settings.validate()

    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)-8s [%(name)s] %(message)s",
        stream=sys.stdout,
    )
    logger = logging.getLogger("fnbo")
    if settings.env_path:
        logger.info("Environment loaded from %s", settings.env_path)

    if args.command == "problems":
        for name in PROBLEMS:
            problem = get_problem(name)
            print(f"{name}: K={problem.spec.K} d={problem.spec.d} costs={list(problem.default_costs)} "
                  f"budget={problem.default_budget:g}")
        for name, (costs, budget) in COST_SCENARIOS.items():
            print(f"ackmat:{name}: costs={list(costs)} budget={budget:g}")
        print("discrete presets: " + ", ".join(ABLATION_PRESETS))
        return 0

    if args.command == "summarize":
        traces = read_traces(args.in_dir)
        if not traces:
            logger.error("No trace files found under %s", args.in_dir)
            return 1
        write_summary(summarize(traces), args.out_dir)
        logger.info("Summary of %d run(s) written to %s", len(traces), args.out_dir)
        return 0

    try:
        config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
        config = config.with_overrides(
            problem=args.problem,
            algo=args.algo,
            trials=args.trials,
            seed=args.seed,
            budget=args.budget,
            output_dir=args.output_dir,
            record_timing=args.record_timing,
        )
        problem = get_problem(config.problem, costs=config.costs)
        config.validate(problem.spec.costs)
    except FnboError as e:
        logger.error("%s", e)
        return 2

    logger.info("fnbo %s starting", __version__)
    logger.info("Problem: %s (K=%d, d=%d)", problem.name, problem.spec.K, problem.spec.d)
    logger.info("Algorithm: %s, trials: %d, seed: %d", config.algo, config.trials, config.seed)
    try:
        asyncio.run(run_experiment(config, settings))
    except KeyboardInterrupt:
        logger.info("Interrupted, partial traces are kept")
        return 130
    logger.info("fnbo finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
