"""select: evaluate a method menu on a CSV data set"""
import logging

from services.experiment_service import cmd_select, load_config

logger = logging.getLogger(__name__)


def register(subparsers, common):
    parser = subparsers.add_parser('select', parents=[common], help='select among a method menu on CSV data')
    parser.set_defaults(handler=run)


def run(args):
    config = load_config(args.config, args.overrides())
    report = cmd_select(config, workers=args.workers, verbose=args.verbose)
    for criterion, method_id in report.selected.items():
        print(f"{criterion:>10}  {method_id}")
    print(f"Reports written to {config.output_dir}")
    return 0
