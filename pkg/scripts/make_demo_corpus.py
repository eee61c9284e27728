#!/usr/bin/env python3
"""Generate a directory of synthetic RGB PNGs to feed `specgrid augment`.

Useful for trying the pipeline end to end without a photo collection:

    python scripts/make_demo_corpus.py --out-dir /tmp/rgb --count 8 --size 64
    specgrid augment --in-dir /tmp/rgb --out-dir /tmp/corpus --count 32 --seed 0
"""

import argparse
from pathlib import Path

import numpy as np

from specgrid.augment import synthetic_rgb
from specgrid.imaging import save_png


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--count", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        save_png(out / f"scene_{i:03d}.png", synthetic_rgb((args.size, args.size), rng))
    print(f"wrote {args.count} RGB images to {out}")


if __name__ == "__main__":
    main()
