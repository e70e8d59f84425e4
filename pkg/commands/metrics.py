"""metrics: ARI and -VIC between two label files"""
from services.metrics_service import adjusted_rand_index, negative_vic
from utils.data_io import load_labels


def register(subparsers, common):
    parser = subparsers.add_parser('metrics', parents=[common], help='compare two label files')
    parser.add_argument('labels_a')
    parser.add_argument('labels_b')
    parser.add_argument('--column', default=None, help='label column name (default: first column)')
    parser.set_defaults(handler=run)


def run(args):
    a = load_labels(args.labels_a, args.column)
    b = load_labels(args.labels_b, args.column)
    print(f"ARI  {adjusted_rand_index(a, b):.6f}")
    print(f"-VIC {negative_vic(a, b):.6f}")
    return 0
