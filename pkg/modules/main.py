"""Command line: `simulate`, `bounds`, `maxload` and `scaling`."""

import argparse
import sys

from pydantic import ValidationError

from modules.core import RngStream
from modules.environments import asymptotic_max_load, estimate_max_load
from modules.harness import run_experiment, scaling_study, theoretical_bounds
from modules.models import ExperimentConfig, ProblemDims
from modules.utils import (DEFAULT_F_TRIALS, DEFAULT_OUTPUT_DIR, DEFAULT_WORKERS,
                           SimulationError, logger)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _comma_separated_ints(text):
    try:
        return [int(value) for value in text.split(",") if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _add_dims(parser, with_T=True):
    parser.add_argument("--N", type=int, required=True, help="Number of experts")
    parser.add_argument("--K", type=int, required=True, help="Number of arms")
    parser.add_argument("--M", type=int, required=True, help="Experts whose advice may be queried per round")
    if with_T:
        parser.add_argument("--T", type=int, required=True, help="Horizon (rounds)")


def _add_experiment(parser):
    parser.add_argument("--algo", choices=["mw", "polyinf"], required=True, help="Expert forecaster")
    parser.add_argument("--runs", type=int, default=1, help="Independent replications")
    parser.add_argument("--seed", type=int, default=0, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--env", default="lower_bound",
                        help="lower_bound, null, dirichlet or script:<path>")
    parser.add_argument("--eta", type=float, default=None, help="Override the tuned learning rate")
    parser.add_argument("--epsilon", type=float, default=None, help="Override the tuned environment gap")
    parser.add_argument("--hstar", type=int, default=None,
                        help="Planted best expert (1-based); drawn per run when omitted")
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS, help="Worker processes")
    parser.add_argument("--f-trials", type=int, default=DEFAULT_F_TRIALS,
                        help="Monte-Carlo trials for the max-load estimate")
    parser.add_argument("--shuffle-partition", action="store_true",
                        help="Group experts by a seeded permutation instead of contiguous blocks")
    parser.add_argument("--stride", type=int, default=None, help="Log cumulative series every STRIDE rounds")
    parser.add_argument("--out", default=DEFAULT_OUTPUT_DIR, help="Output directory")


def build_parser():
    """
    Command-line parser with the `simulate`, `bounds`, `maxload` and `scaling` commands.

    Returns:
        argparse.ArgumentParser: Parser whose `command` attribute names the chosen command
    """
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Multiarmed bandits with limited expert advice: experiments, bounds and diagnostics.")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Run Monte-Carlo replications and write CSVs")
    _add_dims(simulate)
    _add_experiment(simulate)

    bounds = commands.add_parser("bounds", help="Print the theoretical regret bounds")
    _add_dims(bounds)
    bounds.add_argument("--f-trials", type=int, default=DEFAULT_F_TRIALS)
    bounds.add_argument("--seed", type=int, default=0)

    maxload = commands.add_parser("maxload", help="Estimate the balls-into-bins maximum load f(K, M)")
    maxload.add_argument("--K", type=int, required=True, help="Bins")
    maxload.add_argument("--M", type=int, required=True, help="Balls")
    maxload.add_argument("--trials", type=int, default=DEFAULT_F_TRIALS)
    maxload.add_argument("--seed", type=int, default=0)

    scaling = commands.add_parser("scaling", help="Mean regret across horizons and its log-log slope")
    _add_dims(scaling, with_T=False)
    scaling.add_argument("--T-list", type=_comma_separated_ints, required=True,
                         help="Ascending comma-separated horizons")
    _add_experiment(scaling)
    return parser


def _experiment_config(args, T):
    dims = ProblemDims(N=args.N, K=args.K, M=args.M, T=T)
    return ExperimentConfig(
        dims=dims, algo=args.algo, env=args.env, runs=args.runs, seed=args.seed,
        eta_override=args.eta, epsilon_override=args.epsilon,
        hstar=None if args.hstar is None else args.hstar - 1,
        workers=args.workers, f_trials=args.f_trials,
        shuffle_partition=args.shuffle_partition, stride=args.stride, out=args.out,
    )


def _check_seed(seed):
    if not 0 <= seed < 2**64:
        raise SimulationError(f"seed must be an unsigned 64-bit integer, got {seed}")


def _dispatch(args):
    if args.command in ("bounds", "maxload"):
        _check_seed(args.seed)
    if args.command == "simulate":
        summary = run_experiment(_experiment_config(args, args.T))
        print(f"mean_regret={summary.mean_regret:.6g} stderr={summary.stderr:.6g} "
              f"mw_bound={summary.mw_bound:.6g} polyinf_bound={summary.polyinf_bound:.6g} "
              f"lower_bound_estimate={summary.lower_bound_estimate:.6g}")
    elif args.command == "bounds":
        dims = ProblemDims(N=args.N, K=args.K, M=args.M, T=args.T)
        bounds = theoretical_bounds(dims, f_trials=args.f_trials, seed=args.seed)
        for name, value in bounds.model_dump().items():
            print(f"{name}={value:.6g}")
    elif args.command == "maxload":
        if args.K < 1 or args.M < 1:
            raise SimulationError("K and M must be positive")
        mean, stderr = estimate_max_load(args.K, args.M, args.trials, RngStream.auxiliary(args.seed))
        print(f"f={mean:.6g} stderr={stderr:.6g} asymptotic={asymptotic_max_load(args.K, args.M):.6g}")
    elif args.command == "scaling":
        if not args.T_list:
            raise SimulationError("--T-list must name at least one horizon")
        cfg = _experiment_config(args, args.T_list[0])
        points, fit = scaling_study(cfg, args.T_list)
        for point in points:
            print(f"T={point.T} mean_regret={point.mean_regret:.6g} stderr={point.stderr:.6g}")
        print("slope=undefined" if fit is None else f"slope={fit[0]:.6g}")


def main(argv=None):
    """
    Parse the command line, run the chosen command and map failures to exit codes.

    Args:
        argv (list, optional): Arguments without the program name; sys.argv[1:] when None

    Returns:
        int: EXIT_OK, EXIT_CONFIG for invalid settings, EXIT_IO for file errors
        or EXIT_FAILURE for anything else
    """
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except (SimulationError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except Exception as e:
        logger.exception(f"Error during execution: {str(e)}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
