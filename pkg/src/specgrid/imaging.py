"""Image and mask containers, file I/O, padding and cropping.

All pixel data is carried in plain numpy arrays:

- grayscale image: ``(H, W)`` float32, nominal range [0, 1]
- RGB image:       ``(H, W, 3)`` float32 in [0, 1]
- binary mask:     ``(H, W)`` float32 with values exactly 0.0 or 1.0
  (1 marks a pixel that needs to be reconstructed)
- coefficient grid: ``(depth, grid_h, grid_w)`` float32

Missing pixels are represented as white (1.0). Every public operation
returns finite values only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

RAW_MAGIC = b"SGF1"
_RAW_HEADER = struct.Struct("<4sIII")


class FormatError(RuntimeError):
    """Malformed or unsupported file contents (bad magic, truncation, depth)."""


def check_finite(a: np.ndarray, name: str = "image") -> np.ndarray:
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains NaN or Inf values")
    return a


def check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    """Masks must be strictly binary: every value 0.0 or 1.0."""
    if mask.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValueError(f"{name} has values other than 0.0 and 1.0")
    return mask


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


@dataclass(frozen=True)
class PadInfo:
    """Inverse-crop record: original size plus the right/bottom padding added."""

    width: int
    height: int
    pad_right: int
    pad_bottom: int


def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG, scaled linearly to [0, 1] float32.

    Grayscale files yield an (H, W) array, color files (H, W, 3).
    Any other mode (palette, alpha, 1-bit, float) is rejected.
    """
    with Image.open(path) as im:
        im.load()
        mode = im.mode
        arr = np.asarray(im)
    if mode == "L":
        out = arr.astype(np.float32) / 255.0
    elif mode in ("I;16", "I"):
        if arr.min() < 0 or arr.max() > 65535:
            raise FormatError(f"{path}: integer PNG outside 16-bit range")
        out = arr.astype(np.float32) / 65535.0
    elif mode == "RGB":
        out = arr.astype(np.float32) / 255.0
    else:
        raise FormatError(f"{path}: unsupported PNG mode {mode!r} (need 8/16-bit gray or RGB)")
    return check_finite(out, str(path))


def save_png(path, image: np.ndarray) -> None:
    """Write an image as 8-bit PNG, clamping to [0, 1] and rounding half up."""
    check_finite(image, "image")
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3) array, got {image.shape}")
    # floor(v*255 + 0.5): round-half-up, unlike numpy's round-half-even
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, mode="L" if image.ndim == 2 else "RGB").save(path, format="PNG")


def raw_f32_bytes(array: np.ndarray) -> bytes:
    """Serialize an array to the SGF1 raw-float32 wire format.

    Layout: magic "SGF1", then u32 little-endian channel count, height,
    width, then float32 little-endian values, channel-major then row-major.
    2-D input is written as a single channel.
    """
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D array, got shape {array.shape}")
    check_finite(a, "raw payload")
    c, h, w = a.shape
    return _RAW_HEADER.pack(RAW_MAGIC, c, h, w) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def raw_f32_from_bytes(buf: bytes) -> np.ndarray:
    """Inverse of :func:`raw_f32_bytes`; single-channel payloads come back 2-D."""
    if len(buf) < _RAW_HEADER.size:
        raise FormatError("raw payload shorter than its header")
    magic, c, h, w = _RAW_HEADER.unpack_from(buf)
    if magic != RAW_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RAW_MAGIC!r}")
    n = c * h * w * 4
    if len(buf) != _RAW_HEADER.size + n:
        raise FormatError(f"truncated payload: expected {n} data bytes, got {len(buf) - _RAW_HEADER.size}")
    data = np.frombuffer(buf, dtype="<f4", offset=_RAW_HEADER.size).reshape(c, h, w)
    out = data.astype(np.float32)  # native order, owned copy
    if not np.isfinite(out).all():
        raise FormatError("raw payload contains non-finite values")
    return out[0] if c == 1 else out


def save_raw_f32(path, array: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(raw_f32_bytes(array))


def load_raw_f32(path) -> np.ndarray:
    with open(path, "rb") as f:
        return raw_f32_from_bytes(f.read())


def pad_replicate(image: np.ndarray, bin_size: int) -> tuple[np.ndarray, PadInfo]:
    """Pad right/bottom with edge replication to the next multiple of bin_size.

    Pixel (0, 0) stays fixed; the returned PadInfo drives the inverse crop.
    """
    if bin_size < 1:
        raise ValueError(f"bin_size must be >= 1, got {bin_size}")
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    h, w = image.shape
    if h == 0 or w == 0:
        raise ValueError("cannot pad an empty image")
    ph = -(-h // bin_size) * bin_size
    pw = -(-w // bin_size) * bin_size
    info = PadInfo(width=w, height=h, pad_right=pw - w, pad_bottom=ph - h)
    if (pw, ph) == (w, h):
        return image.copy(), info
    return np.pad(image, ((0, ph - h), (0, pw - w)), mode="edge"), info


def crop(image: np.ndarray, pad_info: PadInfo) -> np.ndarray:
    """Undo :func:`pad_replicate`: drop the right/bottom padding."""
    h, w = image.shape
    if h != pad_info.height + pad_info.pad_bottom or w != pad_info.width + pad_info.pad_right:
        raise ValueError(
            f"image {image.shape} inconsistent with pad info "
            f"({pad_info.height}+{pad_info.pad_bottom}, {pad_info.width}+{pad_info.pad_right})"
        )
    return image[: pad_info.height, : pad_info.width].copy()
