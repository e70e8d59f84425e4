"""population-curve: population hard/smooth scores against separation d"""
from services.experiment_service import cmd_population_curve
from utils.errors import ConfigError


def register(subparsers, common):
    parser = subparsers.add_parser('population-curve', parents=[common],
                                   help='Monte Carlo population scores of the one- and two-cluster descriptions')
    parser.add_argument('--design', choices=['dgpG', 'dgpU'], default='dgpG')
    parser.add_argument('--d-min', type=float, default=0.0)
    parser.add_argument('--d-max', type=float, default=10.0)
    parser.add_argument('--step', type=float, default=0.01)
    parser.add_argument('--draws', type=int, default=100000)
    parser.add_argument('--repeats', type=int, default=10)
    parser.set_defaults(handler=run)


def run(args):
    if args.seed is None:
        raise ConfigError("population-curve needs --seed")
    out_dir = args.out or 'results'
    _, crossings = cmd_population_curve(args.design, args.d_min, args.d_max, args.step, args.draws,
                                        args.repeats, args.seed, out_dir, workers=args.workers)
    for mode, crossing in crossings.items():
        located = f"{crossing:.4f}" if crossing is not None else 'not in range'
        print(f"{args.design} {mode} crossing: {located}")
    return 0
