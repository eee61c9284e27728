#!/usr/bin/env python3
"""Desk-scale training experiment: overfit a reduced-size predictor on a
handful of synthetic scenes and compare its masked-region PSNR against the
two trivial baselines (leave the white fill in place / copy the guide).

    python scripts/toy_overfit.py --steps 500 --luma-bins 8
"""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from specgrid.augment import AugmentConfig, make_sample, synthetic_rgb
from specgrid.bilateral import blend
from specgrid.metrics import psnr_masked
from specgrid.network import NetConfig
from specgrid.train import TrainHyper, fit, holdout_masked_psnr


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--images", type=int, default=8)
    parser.add_argument("--train-samples", type=int, default=32)
    parser.add_argument("--holdout-samples", type=int, default=8)
    parser.add_argument("--crop", type=int, default=64)
    parser.add_argument("--luma-bins", type=int, default=8)
    parser.add_argument("--bin-size", type=int, default=16)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--lr", type=float, default=1e-4)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--checkpoint-dir", help="defaults to a temp directory")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cfg = AugmentConfig()
    rgbs = [synthetic_rgb((args.crop, args.crop), rng) for _ in range(args.images)]
    train, hold = [], []
    for i in range(args.train_samples + args.holdout_samples):
        sample, _ = make_sample(rgbs[i % args.images], rng, cfg)
        (train if i < args.train_samples else hold).append(sample)

    leave_white = np.mean([psnr_masked(s.distorted, s.target, s.mask) for s in hold])
    copy_guide = np.mean([psnr_masked(blend(s.distorted, s.mask, s.guide), s.target, s.mask) for s in hold])
    print(f"baseline leave-white: {leave_white:6.2f} dB")
    print(f"baseline copy-guide:  {copy_guide:6.2f} dB")

    steps_per_epoch = -(-len(train) // args.batch_size)
    epochs = -(-args.steps // steps_per_epoch)
    config = NetConfig.scaled(luma_bins=args.luma_bins, bin_size=args.bin_size)
    hyper = TrainHyper(
        epochs=epochs, batch_size=args.batch_size, lr0=args.lr, halve_epochs=(), seed=args.seed
    )
    ckpt_dir = Path(args.checkpoint_dir) if args.checkpoint_dir else Path(tempfile.mkdtemp(prefix="specgrid_"))
    print(f"training {epochs} epochs x {steps_per_epoch} steps -> {ckpt_dir}")

    t0 = time.time()
    params = fit(train, config, hyper, ckpt_dir, holdout=hold, print_progress=True)
    trained = holdout_masked_psnr(params, hold)
    print(f"trained masked PSNR:  {trained:6.2f} dB "
          f"({trained - leave_white:+.2f} vs white, {trained - copy_guide:+.2f} vs guide) "
          f"in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
