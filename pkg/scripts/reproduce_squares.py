#!/usr/bin/env python3
"""Regenerate the rotated-squares study end to end.

Trains the pinned bias-free and with-bias autoencoders, then writes the
spectra comparison, bias study, cross-sample similarity, and a per-layer
sweep report for one held-out square.  Everything goes through the
public CLI so the run doubles as an integration exercise.

Usage: python scripts/reproduce_squares.py [--out runs/squares] [--quick]
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from specxai.cli import main as cli
from specxai.modelio import save_tensor

DATASET_SEED = 7
TRAIN_SEED = 1


def run(*argv) -> None:
    argv = [str(a) for a in argv]
    code = cli(argv)
    if code not in (0, 6):  # 6 = completed with a region-boundary warning
        sys.exit(f"command failed ({code}): specxai {' '.join(argv)}")


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/squares")
    parser.add_argument("--quick", action="store_true",
                        help="tiny dataset and 2 epochs, for smoke testing")
    args = parser.parse_args()
    out = Path(args.out)
    count, epochs = (64, 2) if args.quick else (2048, 40)

    t0 = time.time()
    nobias = out / "nobias"
    bias = out / "bias"
    run("train-toy", "--no-bias", "--seed", DATASET_SEED,
        "--train-seed", TRAIN_SEED, "--count", count, "--epochs", epochs,
        "--out", nobias)
    run("train-toy", "--bias", "--seed", DATASET_SEED,
        "--train-seed", TRAIN_SEED, "--count", count, "--epochs", epochs,
        "--out", bias)

    # one held-out square as the anchoring input
    from specxai.toylab import SquaresConfig, generate_squares

    heldout, _ = generate_squares(SquaresConfig(count=4, seed=99))
    x_path = save_tensor(heldout[0], out / "heldout.sxt")

    # quick mode splits at the bottleneck and analyzes one sample; the full
    # study uses the whole operator (one 4096x4096 SVD takes tens of seconds)
    layer = "6" if args.quick else "last"
    samples = "0" if args.quick else "0,1,2"
    run("compare-spectra", "--model", nobias / "model.sxm",
        "--dataset", nobias / "dataset.sxt", "--samples", samples,
        "--out", out / "spectra")
    run("bias-study", "--model", bias / "model.sxm", "--input", x_path,
        "--out", out / "bias-study")
    run("similarity", "--model", nobias / "model.sxm",
        "--dataset", nobias / "dataset.sxt", "--samples", "0,1,2,3",
        "--k", 3, "--layer", layer, "--out", out / "similarity")
    run("explain", "--model", nobias / "model.sxm", "--input", x_path,
        "--layer", layer, "--reduce", "--top-k", 4, "--out", out / "explain")
    if not args.quick:
        run("sweep", "--model", nobias / "model.sxm", "--input", x_path,
            "--reduce", "--out", out / "sweep")

    report = json.loads((out / "spectra" / "report.json").read_text())
    print(json.dumps(report, indent=2))
    print(f"study written to {out} in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
