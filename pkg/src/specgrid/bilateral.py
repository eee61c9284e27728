"""Coefficient-grid slicing, per-pixel affine application and masked blending.

A coefficient grid is a low-resolution (depth, grid_h, grid_w) array over
coarse spatial bins and luma bins. Slicing evaluates it at every
full-resolution pixel with trilinear weights, taking the guide intensity as
the depth coordinate; the result is one scalar coefficient per pixel.

Coordinate convention: a pixel x maps to the continuous grid coordinate
c = s * (x + 0.5) - 0.5 with s = bins / pixels (and c = depth * intensity
- 0.5 on the luma axis), then c is clamped to [0, bins - 1]. Bin-center
alignment plus clamping keeps the interpolation weights an exact partition
of unity everywhere, including image borders and intensities 0.0 / 1.0.
"""

from __future__ import annotations

import numpy as np

from .imaging import check_mask, check_same_shape


def hat(t):
    """Linear interpolation kernel max(1 - |t|, 0); accepts scalars or arrays."""
    return np.maximum(1.0 - np.abs(t), 0.0)


def _spatial_taps(n_bins: int, n_pixels: int):
    """Per-pixel neighbor indices and weights along one spatial axis.

    Weights are computed in float64; coordinates are clamped to
    [0, n_bins - 1] so w0 + w1 == 1 exactly.
    """
    if n_pixels % n_bins != 0:
        raise ValueError(f"{n_pixels} pixels not divisible into {n_bins} grid bins")
    scale = n_bins / n_pixels
    c = (np.arange(n_pixels, dtype=np.float64) + 0.5) * scale - 0.5
    np.clip(c, 0.0, n_bins - 1.0, out=c)
    i0 = c.astype(np.int64)  # floor: c >= 0 after the clamp
    i1 = np.minimum(i0 + 1, n_bins - 1)
    w1 = c - i0
    return i0, i1, 1.0 - w1, w1


def _depth_taps(depth: int, guide: np.ndarray):
    c = np.clip(guide, 0.0, 1.0).astype(np.float64) * depth - 0.5
    np.clip(c, 0.0, depth - 1.0, out=c)
    i0 = c.astype(np.int64)
    i1 = np.minimum(i0 + 1, depth - 1)
    w1 = c - i0
    return i0, i1, 1.0 - w1, w1


def slice_grid(grid: np.ndarray, guide: np.ndarray) -> np.ndarray:
    """Trilinearly interpolate a coefficient grid at every guide pixel.

    guide values are clamped to [0, 1] before indexing the luma axis.
    Guide dimensions must be exact multiples of the grid's spatial bins.
    """
    if grid.ndim != 3:
        raise ValueError(f"grid must be (depth, grid_h, grid_w), got {grid.shape}")
    if guide.ndim != 2:
        raise ValueError(f"guide must be 2-D, got {guide.shape}")
    depth, gh, gw = grid.shape
    h, w = guide.shape
    ix0, ix1, wx0, wx1 = _spatial_taps(gw, w)
    iy0, iy1, wy0, wy1 = _spatial_taps(gh, h)
    iz0, iz1, wz0, wz1 = _depth_taps(depth, guide)

    out = np.zeros((h, w), np.float64)
    for iy, wy in ((iy0, wy0), (iy1, wy1)):
        for ix, wx in ((ix0, wx0), (ix1, wx1)):
            wxy = wy[:, None] * wx[None, :]
            v0 = grid[iz0, iy[:, None], ix[None, :]]
            v1 = grid[iz1, iy[:, None], ix[None, :]]
            out += wxy * (wz0 * v0 + wz1 * v1)
    return out.astype(np.result_type(grid.dtype, guide.dtype))


def slice_backward(grid: np.ndarray, guide: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``slice_grid`` w.r.t. the grid, given upstream pixel grads.

    Slicing is linear in the grid, so each upstream value is scattered onto
    its eight neighboring cells with the same trilinear weights. The guide
    is a fixed input: no gradient flows through the depth coordinate.
    """
    if upstream.shape != guide.shape:
        raise ValueError(f"upstream {upstream.shape} does not match guide {guide.shape}")
    depth, gh, gw = grid.shape
    h, w = guide.shape
    ix0, ix1, wx0, wx1 = _spatial_taps(gw, w)
    iy0, iy1, wy0, wy1 = _spatial_taps(gh, h)
    iz0, iz1, wz0, wz1 = _depth_taps(depth, guide)

    up = upstream.astype(np.float64, copy=False)
    acc = np.zeros(depth * gh * gw, np.float64)
    for iz, wz in ((iz0, wz0), (iz1, wz1)):
        contrib = wz * up
        for iy, wy in ((iy0, wy0), (iy1, wy1)):
            for ix, wx in ((ix0, wx0), (ix1, wx1)):
                vals = (wy[:, None] * wx[None, :]) * contrib
                lin = (iz * gh + iy[:, None]) * gw + ix[None, :]
                acc += np.bincount(lin.ravel(), weights=vals.ravel(), minlength=acc.size)
    return acc.reshape(depth, gh, gw).astype(grid.dtype)


def apply_affine(a: np.ndarray, b: np.ndarray, guide: np.ndarray) -> np.ndarray:
    """Per-pixel linear regression a * guide + b. No clamping."""
    check_same_shape(a, b, guide)
    return a * guide + b


def blend(distorted: np.ndarray, mask: np.ndarray, net_out: np.ndarray) -> np.ndarray:
    """Keep observed pixels, substitute net_out where the mask is set.

    out = (1 - m) * distorted + m * net_out, clamped to [0, 1]. For valid
    inputs the unmasked pixels come through bit-exactly.
    """
    check_same_shape(distorted, mask, net_out)
    check_mask(mask)
    out = (1.0 - mask) * distorted + mask * net_out
    return np.clip(out, 0.0, 1.0).astype(distorted.dtype)
