"""Reference external predictor: copies the belief and fills unknown cells
with Free.

Usage: python -m nlosexplore.echo_predictor [--k K] DIR
"""

import argparse
import sys
from pathlib import Path

from .gridmap import FREE, save_grid
from .predict import read_predictor_input


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="echo_predictor", description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=1, help="number of members to write")
    ap.add_argument("directory")
    args = ap.parse_args(argv)
    inp = read_predictor_input(args.directory)
    pred = inp.belief.copy()
    pred.cells[pred.unknown] = FREE
    for i in range(args.k):
        save_grid(pred, Path(args.directory) / f"pred_{i:03d}.pgm")
    return 0


if __name__ == "__main__":
    sys.exit(main())
