"""specgrid: guided reconstruction of occluded cross-spectral camera channels.

A small convolutional network predicts a low-resolution grid of per-pixel
linear-regression coefficients from (guide, distorted, mask); trilinear
slicing with the guide image turns the grid into full-resolution slope and
bias maps, and `result = slope * guide + bias` fills the masked pixels.
Includes the training-data synthesis pipeline (pseudo-spectral renderings
of RGB corpora plus five occlusion-mask families), the weighted-L1 / Adam
training stack, PSNR/SSIM evaluation, and a CLI
(`augment` / `train` / `infer` / `eval` / `bench`).
"""

from .augment import AugmentConfig, SpectralSample, make_sample, synth_spectral
from .bilateral import apply_affine, blend, hat, slice_backward, slice_grid
from .imaging import (
    FormatError,
    PadInfo,
    crop,
    load_png,
    load_raw_f32,
    pad_replicate,
    save_png,
    save_raw_f32,
)
from .metrics import EvalReport, evaluate, psnr, psnr_masked, ssim
from .network import (
    Checkpoint,
    ConvLayer,
    NetConfig,
    conv2d,
    forward_grids,
    init_params,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
)
from .train import AdamState, NumericError, TrainHyper, adam_step, backward, fit, lr_at, weighted_l1

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AugmentConfig",
    "Checkpoint",
    "ConvLayer",
    "EvalReport",
    "FormatError",
    "NetConfig",
    "NumericError",
    "PadInfo",
    "SpectralSample",
    "TrainHyper",
    "adam_step",
    "apply_affine",
    "backward",
    "blend",
    "conv2d",
    "crop",
    "evaluate",
    "fit",
    "forward_grids",
    "hat",
    "init_params",
    "load_checkpoint",
    "load_png",
    "load_raw_f32",
    "lr_at",
    "make_sample",
    "pad_replicate",
    "psnr",
    "psnr_masked",
    "reconstruct",
    "save_checkpoint",
    "save_png",
    "save_raw_f32",
    "slice_backward",
    "slice_grid",
    "ssim",
    "synth_spectral",
    "weighted_l1",
]
