"""Weighted L1 objective, reverse-mode gradients, Adam, and the epoch loop.

The regression output is supervised over the whole image so the predictor
keeps learning global structure, but pixels under the occlusion mask get
an `alpha`-times larger weight; replicated padding pixels get weight 0 and
the loss is normalized by the unpadded pixel count.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .bilateral import apply_affine, slice_backward, slice_grid
from .imaging import check_mask, check_same_shape, pad_replicate
from .network import (
    Checkpoint,
    ConvLayer,
    NetConfig,
    NumericError,
    _conv2d_backward,
    _forward_stack,
    load_checkpoint,
    params_bin_size,
    params_luma_bins,
    reconstruct,
    save_checkpoint,
)


@dataclass(frozen=True)
class TrainHyper:
    alpha: float = 10.0
    lr0: float = 1e-4
    halve_epochs: tuple[int, ...] = (20, 32, 40, 48, 56)
    epochs: int = 64
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "halve_epochs", tuple(int(e) for e in self.halve_epochs))
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if any(b >= a for a, b in zip(self.halve_epochs[1:], self.halve_epochs)):
            raise ValueError("halve_epochs must be strictly increasing")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def lr_at(epoch: int, hyper: TrainHyper) -> float:
    """Initial rate halved once for every listed epoch that has been reached."""
    halvings = sum(1 for e in hyper.halve_epochs if e <= epoch)
    return hyper.lr0 * 0.5**halvings


def weighted_l1(net_out: np.ndarray, target: np.ndarray, mask: np.ndarray, alpha: float) -> float:
    """Mean absolute error with weight `alpha` on masked pixels, 1 elsewhere."""
    check_same_shape(net_out, target, mask)
    check_mask(mask)
    weight = np.where(mask == 1.0, float(alpha), 1.0)
    return _weighted_l1_map(net_out, target, weight, net_out.size)[0]


def _weighted_l1_map(net_out, target, weight, norm_count):
    diff = net_out.astype(np.float64) - target.astype(np.float64)
    loss = float(np.sum(weight * np.abs(diff)) / norm_count)
    # d|x|/dx with the subgradient at 0 taken as 0
    grad = (weight * np.sign(diff)) / norm_count
    return loss, grad


@dataclass
class AdamState:
    """First/second-moment accumulators, shaped like the parameter tree."""

    moments: list[tuple]  # per layer: (m_w, v_w, m_b | None, v_b | None)
    t: int = 0

    @classmethod
    def for_params(cls, params: list[ConvLayer]) -> "AdamState":
        moments = []
        for layer in params:
            zw = np.zeros_like(layer.weight)
            mb = vb = None
            if layer.bias is not None:
                mb, vb = np.zeros_like(layer.bias), np.zeros_like(layer.bias)
            moments.append((zw, np.zeros_like(layer.weight), mb, vb))
        return cls(moments=moments)


def _adam_update(theta, g, m, v, lr, hyper, t):
    m *= hyper.beta1
    m += (1.0 - hyper.beta1) * g
    v *= hyper.beta2
    v += (1.0 - hyper.beta2) * np.square(g)
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + hyper.eps)


def adam_step(params: list[ConvLayer], grads, state: AdamState, lr: float, hyper: TrainHyper):
    """One bias-corrected Adam update, in place. Returns (params, state).

    Aborts (raising, with nothing mutated) if any gradient is non-finite.
    """
    for i, (gw, gb) in enumerate(grads):
        if not np.isfinite(gw).all():
            raise NumericError(f"layer {i}: non-finite weight gradient")
        if gb is not None and not np.isfinite(gb).all():
            raise NumericError(f"layer {i}: non-finite bias gradient")
    state.t += 1
    for layer, (gw, gb), (mw, vw, mb, vb) in zip(params, grads, state.moments):
        _adam_update(layer.weight, gw, mw, vw, lr, hyper, state.t)
        if layer.bias is not None:
            _adam_update(layer.bias, gb, mb, vb, lr, hyper, state.t)
    return params, state


def backward(params: list[ConvLayer], sample, hyper: TrainHyper):
    """Loss and exact reverse-mode gradients for one sample.

    Inputs of any size are padded to bin multiples; padding pixels carry
    zero loss weight and the guide path carries no gradient. Returns
    (loss, grads) with grads as a per-layer list of (d_weight, d_bias).
    """
    b = params_bin_size(params)
    guide, _ = pad_replicate(sample.guide, b)
    distorted, _ = pad_replicate(sample.distorted, b)
    mask, _ = pad_replicate(sample.mask, b)
    target, _ = pad_replicate(sample.target, b)
    orig_h, orig_w = sample.guide.shape

    weight = np.zeros(guide.shape)
    weight[:orig_h, :orig_w] = np.where(sample.mask == 1.0, float(hyper.alpha), 1.0)

    y, caches = _forward_stack(params, guide, distorted, mask, keep_caches=True)
    d = params_luma_bins(params)
    grid_a, grid_b = y[:d], y[d:]
    hi_a = slice_grid(grid_a, guide)
    hi_b = slice_grid(grid_b, guide)
    net_out = apply_affine(hi_a, hi_b, guide)

    loss, d_net = _weighted_l1_map(net_out, target, weight, orig_h * orig_w)
    d_grid_a = slice_backward(grid_a, guide, d_net * guide)
    d_grid_b = slice_backward(grid_b, guide, d_net)
    grad_y = np.concatenate([d_grid_a, d_grid_b]).astype(y.dtype)

    grads: list[tuple] = [None] * len(params)
    g = grad_y
    for i in range(len(params) - 1, -1, -1):
        g, gw, gb = _conv2d_backward(params[i], caches[i], g)
        if not (np.isfinite(gw).all() and (gb is None or np.isfinite(gb).all())):
            raise NumericError(f"layer {i}: non-finite gradient")
        grads[i] = (gw, gb)
    return loss, grads


def _zero_grads(params):
    return [(np.zeros_like(l.weight), None if l.bias is None else np.zeros_like(l.bias)) for l in params]


def _accumulate(total, grads):
    for (tw, tb), (gw, gb) in zip(total, grads):
        tw += gw
        if tb is not None:
            tb += gb


def _scale_grads(total, factor):
    for tw, tb in total:
        tw *= factor
        if tb is not None:
            tb *= factor


def _adam_blobs(state: AdamState):
    blobs = {}
    for i, (mw, vw, mb, vb) in enumerate(state.moments):
        out_c, in_c = mw.shape[:2]
        blobs[f"adam.layer{i:02d}.weight.m"] = mw.reshape(out_c, in_c, 9)
        blobs[f"adam.layer{i:02d}.weight.v"] = vw.reshape(out_c, in_c, 9)
        if mb is not None:
            blobs[f"adam.layer{i:02d}.bias.m"] = mb.reshape(1, 1, -1)
            blobs[f"adam.layer{i:02d}.bias.v"] = vb.reshape(1, 1, -1)
    return blobs


def _adam_from_checkpoint(ckpt: Checkpoint, params) -> AdamState:
    state = AdamState.for_params(params)
    state.t = int(ckpt.meta.get("adam_t", "0"))
    moments = []
    for i, layer in enumerate(params):
        try:
            mw = ckpt.extras[f"adam.layer{i:02d}.weight.m"].reshape(layer.weight.shape)
            vw = ckpt.extras[f"adam.layer{i:02d}.weight.v"].reshape(layer.weight.shape)
            mb = vb = None
            if layer.bias is not None:
                mb = ckpt.extras[f"adam.layer{i:02d}.bias.m"].reshape(layer.bias.shape)
                vb = ckpt.extras[f"adam.layer{i:02d}.bias.v"].reshape(layer.bias.shape)
        except KeyError as e:
            raise ValueError(f"checkpoint has no optimizer state blob {e}") from None
        moments.append((mw, vw, mb, vb))
    state.moments = moments
    return state


def holdout_masked_psnr(params, samples) -> float:
    """Mean masked-region PSNR of reconstructions over held-out samples."""
    scores = []
    for s in samples:
        result, _ = reconstruct(params, s.guide, s.distorted, s.mask)
        scores.append(metrics.psnr_masked(result, s.target, s.mask))
    scores = [s for s in scores if not np.isnan(s)]
    return float(np.mean(scores)) if scores else float("nan")


def fit(
    corpus,
    config: NetConfig,
    hyper: TrainHyper,
    checkpoint_dir,
    holdout=None,
    log_path=None,
    resume_from=None,
    print_progress: bool = False,
) -> list[ConvLayer]:
    """Train for hyper.epochs full passes over the corpus.

    Per-epoch sample order comes from a generator seeded with
    (hyper.seed, epoch), so a run resumed from the epoch-k checkpoint
    reproduces the uninterrupted trajectory exactly. Every epoch appends
    one `epoch, lr, mean_loss, holdout_psnr` line to the log and writes a
    DGCKPT1 checkpoint (with optimizer state) to checkpoint_dir.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training corpus is empty")
    checkpoint_dir = Path(checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path is not None else checkpoint_dir / "train_log.txt"

    start_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config != config:
            raise ValueError(f"checkpoint config {ckpt.config} does not match requested {config}")
        params = ckpt.params
        state = _adam_from_checkpoint(ckpt, params)
        start_epoch = int(ckpt.meta["epoch"]) + 1
    else:
        from .network import init_params

        params = init_params(config, hyper.seed)
        state = AdamState.for_params(params)

    for epoch in range(start_epoch, hyper.epochs):
        lr = lr_at(epoch, hyper)
        order = np.random.default_rng([hyper.seed, epoch]).permutation(len(corpus))
        losses = []
        for lo in range(0, len(order), hyper.batch_size):
            batch = [corpus[j] for j in order[lo : lo + hyper.batch_size]]
            total = _zero_grads(params)
            batch_loss = 0.0
            for sample in batch:
                loss, grads = backward(params, sample, hyper)
                batch_loss += loss
                _accumulate(total, grads)
            _scale_grads(total, 1.0 / len(batch))
            adam_step(params, total, state, lr, hyper)
            losses.append(batch_loss / len(batch))

        mean_loss = float(np.mean(losses))
        psnr = holdout_masked_psnr(params, holdout) if holdout else float("nan")
        line = f"{epoch}, {lr:.8g}, {mean_loss:.8g}, {psnr:.4f}"
        with open(log_path, "a") as f:
            f.write(line + "\n")
        if print_progress:
            print(line, flush=True)

        meta = {"epoch": str(epoch), "adam_t": str(state.t), "seed": str(hyper.seed)}
        save_checkpoint(checkpoint_dir / f"epoch_{epoch:04d}.ckpt", params, config, meta, _adam_blobs(state))
        save_checkpoint(checkpoint_dir / "latest.ckpt", params, config, meta, _adam_blobs(state))

    return params
