"""Command-line entry point for quadratic-score cluster selection"""
import argparse
import logging
import sys

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from config import Config
from commands import metrics, population, select, simulate
from utils.errors import ConfigError, QselError

logger = logging.getLogger(__name__)


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='experiment config (JSON, schema_version 1)')
    common.add_argument('--seed', type=int, default=None)
    common.add_argument('--workers', type=int, default=None, help='worker threads (0 = all cores)')
    common.add_argument('--out', default=None, help='output directory')
    common.add_argument('--b', type=int, default=None, help='bootstrap replicates')
    common.add_argument('--alpha', type=float, default=None)
    common.add_argument('--folds', type=int, default=None)
    common.add_argument('--delta', type=float, default=None)
    common.add_argument('--verbose', action='store_true', help='debug logging and replicate arrays in report.json')
    return common


def build_parser():
    parser = argparse.ArgumentParser(prog='qsel', description=__doc__)
    subparsers = parser.add_subparsers(dest='command', required=True)
    common = _common_parser()
    for module in (select, simulate, population, metrics):
        module.register(subparsers, common)
    return parser


def _overrides(args):
    def overrides():
        if not args.config:
            raise ConfigError("--config is required for this command")
        return {
            'seed': args.seed, 'b': args.b, 'alpha': args.alpha, 'folds': args.folds,
            'delta': args.delta, 'output_dir': args.out,
        }
    return overrides


def configure_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    args.overrides = _overrides(args)

    try:
        Config.validate()
        return args.handler(args)
    except QselError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 1


if __name__ == '__main__':
    sys.exit(main())
