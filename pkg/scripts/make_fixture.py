"""Regenerate the bundled synthetic fixture under ``fixtures/synthetic``.

    python3 scripts/make_fixture.py [--out-dir DIR] [--seed N] [--n-days N]

This is the same data set ``tangency-forecast synth`` writes; the bundled
copy lets tests and docs run without generating anything first.
"""

import argparse
import sys
from pathlib import Path

from tangency_forecast.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--out-dir", type=Path, default=ROOT / "fixtures" / "synthetic")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--n-days", type=int, default=1200)
    args = parser.parse_args(argv)
    return main(["synth", "--out-dir", str(args.out_dir), "--seed", str(args.seed), "--n-days", str(args.n_days)])


if __name__ == "__main__":
    sys.exit(run())
