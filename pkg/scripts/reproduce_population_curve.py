#!/usr/bin/env python3
"""
Script to reproduce the population-score curves of dgpG and dgpU.
Writes one score_curve.csv per design and prints the located crossings.
"""
import sys
import os
import argparse

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.experiment_service import cmd_population_curve


def reproduce(out_root, draws, repeats, step, seed, workers):
    """Full 0..10 grid for both designs"""
    print("=" * 60)
    for design in ('dgpG', 'dgpU'):
        out_dir = os.path.join(out_root, design)
        result, crossings = cmd_population_curve(design, 0.0, 10.0, step, draws, repeats, seed, out_dir, workers)
        print(f"{design}: {result.d_grid.size} grid points, {repeats} x {draws} draws")
        for mode, crossing in crossings.items():
            located = f"{crossing:.3f}" if crossing is not None else 'not in range'
            print(f"  {mode:>6} crossing: {located}")
        print(f"  largest standard error: {max(result.se_h_k2.max(), result.se_t_k2.max()):.2e}")
        print(f"  curve written to {os.path.join(out_dir, 'score_curve.csv')}")
    print("=" * 60)


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument('--out', default='results/population')
    parser.add_argument('--draws', type=int, default=100000)
    parser.add_argument('--repeats', type=int, default=10)
    parser.add_argument('--step', type=float, default=0.01)
    parser.add_argument('--seed', type=int, default=1)
    parser.add_argument('--workers', type=int, default=None)
    args = parser.parse_args()
    reproduce(args.out, args.draws, args.repeats, args.step, args.seed, args.workers)
