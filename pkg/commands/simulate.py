"""simulate: Monte Carlo selection experiment on a simulated design"""
import logging

from services.experiment_service import cmd_simulate, load_config
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


def register(subparsers, common):
    parser = subparsers.add_parser('simulate', parents=[common], help='repeat sample and select on a simulated design')
    parser.add_argument('--reps', type=int, default=None, help='Monte Carlo replicates (overrides the config)')
    parser.set_defaults(handler=run)


def run(args):
    config = load_config(args.config, args.overrides())
    if args.reps is not None:
        if args.reps < 1:
            raise ConfigError(f"--reps must be >= 1, got {args.reps}")
        config.monte_carlo_reps = args.reps
    summary = cmd_simulate(config, workers=args.workers, verbose=args.verbose)
    print(summary.aggregate.to_string(index=False))
    print(f"Reports written to {config.output_dir}")
    return 0
