"""Command-line pipeline: corpus augmentation, training, inference,
evaluation, and a reconstruction runtime benchmark.

Exit codes: 0 success, 2 usage/config errors, 3 data mismatches (unpaired
or malformed files), 4 internal numeric failures. Thread counts resolve
from --threads, then the config file, then the SPECGRID_THREADS
environment variable, then the default (all cores; the benchmark headline
is always measured single-threaded as well).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment as aug
from . import metrics
from .bilateral import apply_affine, blend, slice_grid
from .imaging import FormatError, crop, load_png, pad_replicate, save_png
from .network import NetConfig, forward_grids, load_checkpoint, params_bin_size, reconstruct
from .train import NumericError, TrainHyper, fit


class UsageError(Exception):
    pass


class DataMismatchError(Exception):
    pass


def _csv_ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


_TRAIN_SCHEMA = {
    "corpus_dir": str,
    "checkpoint_dir": str,
    "log_path": str,
    "resume": str,
    "holdout_count": int,
    "threads": int,
    "seed": int,
    "bin_size": int,
    "luma_bins": int,
    "trunk_depth": int,
    "downscale_channels": _csv_ints,
    "alpha": float,
    "lr0": float,
    "halve_epochs": _csv_ints,
    "epochs": int,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "batch_size": int,
}


def parse_config_file(path) -> dict[str, str]:
    """Plain-text `key = value` lines; `#` starts a comment."""
    raw: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        raw[key.strip()] = value.strip()
    return raw


def resolve_train_config(raw: dict[str, str]) -> dict:
    """Validate keys against the schema and cast values."""
    unknown = sorted(set(raw) - set(_TRAIN_SCHEMA))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, value in raw.items():
        try:
            out[key] = _TRAIN_SCHEMA[key](value)
        except ValueError:
            raise UsageError(f"config key {key}: cannot parse {value!r}") from None
    for key in ("corpus_dir", "checkpoint_dir"):
        if key not in out:
            raise UsageError(f"missing required config key: {key}")
    return out


def _resolve_threads(explicit, config_value=None) -> int:
    for v in (explicit, config_value, os.environ.get("SPECGRID_THREADS")):
        if v is not None:
            n = int(v)
            if n < 1:
                raise UsageError(f"thread count must be >= 1, got {n}")
            return n
    return os.cpu_count() or 1


# ----------------------------------------------------------------------
# augment


def cmd_augment(args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    sources = sorted(in_dir.glob("*.png"))
    if not sources:
        raise UsageError(f"no PNG files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = _resolve_threads(args.threads)
    cfg = aug.AugmentConfig()

    usable = []
    skipped = 0
    for path in sources:
        try:
            rgb = load_png(path)
        except (FormatError, OSError, ValueError) as e:
            print(f"warning: skipping {path.name}: {e}", file=sys.stderr)
            skipped += 1
            continue
        if rgb.ndim == 2:
            rgb = np.stack([rgb] * 3, axis=-1)
        if args.size and min(rgb.shape[:2]) < args.size:
            print(f"warning: skipping {path.name}: smaller than --size {args.size}", file=sys.stderr)
            skipped += 1
            continue
        usable.append((path.name, rgb))
    if not usable:
        raise UsageError("no usable PNG files after skipping corrupt/small inputs")

    def generate(i: int):
        rng = np.random.default_rng([args.seed, i])
        name, rgb = usable[i % len(usable)]
        if args.size:
            h, w = rgb.shape[:2]
            y = int(rng.integers(0, h - args.size + 1))
            x = int(rng.integers(0, w - args.size + 1))
            rgb = rgb[y : y + args.size, x : x + args.size]
        sample, family = aug.make_sample(rgb, rng, cfg)
        stem = f"sample_{i:04d}"
        save_png(out_dir / f"{stem}_guide.png", sample.guide)
        save_png(out_dir / f"{stem}_target.png", sample.target)
        save_png(out_dir / f"{stem}_distorted.png", sample.distorted)
        save_png(out_dir / f"{stem}_mask.png", sample.mask)
        return f"{stem} src={name} family={family} seed={args.seed},{i}"

    with ThreadPoolExecutor(max_workers=threads) as pool:
        lines = list(pool.map(generate, range(args.count)))

    manifest = out_dir / "manifest.txt"
    with open(manifest, "w") as f:
        f.write("# specgrid corpus\n")
        f.write(f"count = {args.count}\n")
        f.write(f"seed = {args.seed}\n")
        f.write(f"skipped = {skipped}\n")
        for line in lines:
            f.write(line + "\n")
    print(f"wrote {args.count} samples to {out_dir} ({skipped} inputs skipped)")
    return 0


def load_corpus(corpus_dir) -> list[aug.SpectralSample]:
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.txt"
    if manifest.exists():
        stems = []
        for line in manifest.read_text().splitlines():
            tokens = line.strip().split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) >= 2 and tokens[1] == "=":
                continue  # header `key = value` line
            stems.append(tokens[0])
    else:
        stems = sorted(p.name[: -len("_guide.png")] for p in corpus_dir.glob("*_guide.png"))
    if not stems:
        raise UsageError(f"no samples found in {corpus_dir}")
    samples = []
    for stem in stems:
        samples.append(
            aug.SpectralSample(
                guide=load_png(corpus_dir / f"{stem}_guide.png"),
                target=load_png(corpus_dir / f"{stem}_target.png"),
                distorted=load_png(corpus_dir / f"{stem}_distorted.png"),
                mask=load_png(corpus_dir / f"{stem}_mask.png"),
            )
        )
    return samples


# ----------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    raw = parse_config_file(args.config)
    for override in args.set or []:
        key, sep, value = override.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {override!r}")
        raw[key.strip()] = value.strip()
    cfg = resolve_train_config(raw)

    if "downscale_channels" in cfg:
        net_config = NetConfig(
            bin_size=cfg.get("bin_size", 16),
            luma_bins=cfg.get("luma_bins", 32),
            downscale_channels=cfg["downscale_channels"],
            trunk_depth=cfg.get("trunk_depth", 8),
        )
    else:
        net_config = NetConfig.scaled(
            luma_bins=cfg.get("luma_bins", 32),
            bin_size=cfg.get("bin_size", 16),
            trunk_depth=cfg.get("trunk_depth", 8),
        )
    hyper_keys = ("alpha", "lr0", "halve_epochs", "epochs", "beta1", "beta2", "eps", "batch_size", "seed")
    hyper = TrainHyper(**{k: cfg[k] for k in hyper_keys if k in cfg})

    samples = load_corpus(cfg["corpus_dir"])
    holdout_count = cfg.get("holdout_count", 0)
    if holdout_count >= len(samples):
        raise UsageError(f"holdout_count {holdout_count} >= corpus size {len(samples)}")
    holdout = samples[len(samples) - holdout_count :] if holdout_count else None
    corpus = samples[: len(samples) - holdout_count] if holdout_count else samples

    fit(
        corpus,
        net_config,
        hyper,
        checkpoint_dir=cfg["checkpoint_dir"],
        holdout=holdout,
        log_path=cfg.get("log_path"),
        resume_from=cfg.get("resume"),
        print_progress=True,
    )
    print(f"done; checkpoints in {cfg['checkpoint_dir']}")
    return 0


# ----------------------------------------------------------------------
# infer


def _load_gray(path) -> np.ndarray:
    img = load_png(path)
    if img.ndim != 2:
        raise UsageError(f"{path}: expected a grayscale image")
    return img


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    guide = _load_gray(args.guide)
    distorted = _load_gray(args.distorted)
    mask = (_load_gray(args.mask) >= 0.5).astype(np.float32)
    if not guide.shape == distorted.shape == mask.shape:
        raise UsageError(
            f"input dimensions differ: guide {guide.shape}, distorted {distorted.shape}, mask {mask.shape}"
        )
    result, net_out = reconstruct(ckpt.params, guide, distorted, mask)
    save_png(args.out, result)
    if args.debug_netout:
        out = Path(args.out)
        save_png(out.with_name(out.stem + ".netout.png"), net_out)
    return 0


# ----------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    dirs = {name: Path(d) for name, d in (("result", args.result_dir), ("truth", args.truth_dir), ("mask", args.mask_dir))}
    names = {k: {p.name for p in d.glob("*.png")} for k, d in dirs.items()}
    common = names["result"] & names["truth"] & names["mask"]
    unmatched = sorted(set.union(*names.values()) - common)
    if not common:
        raise DataMismatchError("no files with matching basenames across the three directories")
    if unmatched:
        for n in unmatched:
            where = ", ".join(k for k in dirs if n in names[k])
            print(f"unmatched: {n} (only in {where})", file=sys.stderr)
        raise DataMismatchError(f"{len(unmatched)} files without counterparts")

    pairs, labels = [], []
    for n in sorted(common):
        result = _load_gray(dirs["result"] / n)
        truth = _load_gray(dirs["truth"] / n)
        mask = (_load_gray(dirs["mask"] / n) >= 0.5).astype(np.float32)
        pairs.append((result, truth, mask))
        labels.append(n)
    report = metrics.evaluate(pairs, names=labels)
    print(report.table())
    if args.out_csv:
        Path(args.out_csv).write_text(report.csv())
    return 0


# ----------------------------------------------------------------------
# bench


def _limit_blas_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:  # measured numbers then depend on BLAS defaults
        import contextlib

        return contextlib.nullcontext()


def bench_reconstruct(params, size: int, threads: int, repeats: int = 3, seed: int = 0) -> dict:
    """Time the reconstruction stages on a synthetic size x size input.

    Returns run totals, the best run, and its forward/slice breakdown.
    """
    rng = np.random.default_rng(seed)
    rgb = aug.synthetic_rgb((size, size), rng)
    guide = aug.luminance(rgb)
    mask = aug.gen_pixel_mask((size, size), rng)
    distorted = guide.copy()
    distorted[mask == 1.0] = 1.0

    b = params_bin_size(params)
    runs = []
    with _limit_blas_threads(threads):
        for _ in range(repeats):
            t0 = time.perf_counter()
            guide_p, info = pad_replicate(guide, b)
            distorted_p, _ = pad_replicate(distorted, b)
            mask_p, _ = pad_replicate(mask, b)
            t1 = time.perf_counter()
            grid_a, grid_b = forward_grids(params, guide_p, distorted_p, mask_p)
            t2 = time.perf_counter()
            hi_a = slice_grid(grid_a, guide_p)
            hi_b = slice_grid(grid_b, guide_p)
            net_out = crop(apply_affine(hi_a, hi_b, guide_p), info)
            blend(distorted, mask, net_out)
            t3 = time.perf_counter()
            runs.append({"total": t3 - t0, "forward": t2 - t1, "slice": t3 - t2, "pad": t1 - t0})
    best = min(runs, key=lambda r: r["total"])
    return {
        "size": size,
        "threads": threads,
        "runs": [r["total"] for r in runs],
        "best_total": best["total"],
        "forward": best["forward"],
        "slice": best["slice"],
        "pixels_per_second": size * size / best["total"],
    }


def _format_bench(r: dict) -> str:
    runs = ", ".join(f"{t:.4f}" for t in r["runs"])
    return (
        f"threads={r['threads']} size={r['size']}x{r['size']} runs_s=[{runs}] "
        f"best_s={r['best_total']:.4f} forward_s={r['forward']:.4f} slice_s={r['slice']:.4f} "
        f"pixels_per_s={r['pixels_per_second']:.0f}"
    )


def cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    threads = _resolve_threads(args.threads)
    print(f"best-of-3 reconstruction timing, {args.size}x{args.size} synthetic input")
    print(_format_bench(bench_reconstruct(ckpt.params, args.size, threads=1)))
    if threads > 1:
        print(_format_bench(bench_reconstruct(ckpt.params, args.size, threads=threads)))
    return 0


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specgrid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="synthesize training quadruples from RGB PNGs")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=0, help="random-crop sources to this square size")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train from a key = value config file")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reconstruct one channel image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--distorted", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--debug-netout", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score reconstructions against ground truth")
    p.add_argument("--result-dir", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--mask-dir", required=True)
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time reconstruction on synthetic input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, DataMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
