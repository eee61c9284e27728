"""PSNR / SSIM quality metrics and dataset-level evaluation reports."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .imaging import check_mask, check_same_shape

PSNR_CAP_DB = 99.0  # sentinel for (near-)zero MSE


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 99.0 for identical images."""
    check_same_shape(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def psnr_masked(a: np.ndarray, b: np.ndarray, mask: np.ndarray, peak: float = 1.0) -> float:
    """PSNR restricted to mask == 1 pixels; NaN when the mask is empty."""
    check_same_shape(a, b, mask)
    check_mask(mask)
    sel = mask == 1.0
    if not sel.any():
        return float("nan")
    mse = float(np.mean((a[sel].astype(np.float64) - b[sel].astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def _ssim_window() -> np.ndarray:
    half = 5
    x, y = np.mgrid[-half : half + 1, -half : half + 1]
    g = np.exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5))
    return g / g.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1/K2 = 0.01/0.03,
    dynamic range 1.0, averaged over the valid (fully covered) region."""
    check_same_shape(a, b)
    if min(a.shape) < 11:
        raise ValueError(f"image too small for an 11x11 window: {a.shape}")
    win = _ssim_window()
    x = a.astype(np.float64)
    y = b.astype(np.float64)

    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, win, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y

    c1 = 0.01**2
    c2 = 0.03**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


@dataclass
class EvalEntry:
    name: str
    psnr: float
    ssim: float
    masked_psnr: float  # NaN = not applicable (empty mask)
    seconds: float | None = None


@dataclass
class EvalReport:
    entries: list[EvalEntry]

    def _mean(self, values):
        values = [v for v in values if not math.isnan(v)]
        return float(np.mean(values)) if values else float("nan")

    @property
    def mean_psnr(self) -> float:
        return self._mean([e.psnr for e in self.entries])

    @property
    def mean_ssim(self) -> float:
        return self._mean([e.ssim for e in self.entries])

    @property
    def mean_masked_psnr(self) -> float:
        return self._mean([e.masked_psnr for e in self.entries])

    def table(self) -> str:
        def fmt(v):
            return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.4f}"

        rows = [("image", "psnr_db", "ssim", "masked_psnr_db", "seconds")]
        for e in self.entries:
            rows.append((e.name, fmt(e.psnr), fmt(e.ssim), fmt(e.masked_psnr), fmt(e.seconds)))
        rows.append(("mean", fmt(self.mean_psnr), fmt(self.mean_ssim), fmt(self.mean_masked_psnr), ""))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)

    def csv(self) -> str:
        def fmt(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

        lines = ["image,psnr_db,ssim,masked_psnr_db,seconds"]
        for e in self.entries:
            lines.append(f"{e.name},{fmt(e.psnr)},{fmt(e.ssim)},{fmt(e.masked_psnr)},{fmt(e.seconds)}")
        lines.append(f"mean,{fmt(self.mean_psnr)},{fmt(self.mean_ssim)},{fmt(self.mean_masked_psnr)},")
        return "\n".join(lines) + "\n"


def evaluate(pairs, names=None) -> EvalReport:
    """Score (result, ground_truth, mask) triples.

    Full-image PSNR and SSIM plus PSNR restricted to the masked region;
    means are arithmetic over per-image entries.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("nothing to evaluate")
    if names is None:
        names = [f"pair{i:04d}" for i in range(len(pairs))]
    entries = []
    for name, (result, truth, mask) in zip(names, pairs):
        entries.append(
            EvalEntry(
                name=name,
                psnr=psnr(result, truth),
                ssim=ssim(result, truth),
                masked_psnr=psnr_masked(result, truth, mask),
            )
        )
    return EvalReport(entries=entries)
