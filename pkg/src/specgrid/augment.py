"""Training-data synthesis from plain RGB images.

Plain RGB corpora stand in for scarce cross-spectral recordings: a
randomized hue-to-gray mapping imitates how object textures differ between
spectral bands, and five mask families imitate the pixel losses a warped
peripheral camera view exhibits (occlusion strokes, depth-noise speckle
and blocks, unseen borders, disparity gaps along object edges).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import check_finite, check_mask, check_same_shape


@dataclass(frozen=True)
class AugmentConfig:
    hue_anchors: tuple[int, int] = (4, 12)
    exposure: tuple[float, float] = (0.2, 1.5)
    noise_sigma: tuple[float, float] = (0.0, 0.04)
    # stroke masks; lengths/widths are fractions of min(H, W)
    stroke_count: tuple[int, int] = (1, 4)
    stroke_width: tuple[float, float] = (0.01, 0.05)
    stroke_vertices: tuple[int, int] = (4, 12)
    stroke_step: tuple[float, float] = (0.05, 0.20)
    stroke_max_turn_deg: float = 60.0
    # i.i.d. pixel loss
    pixel_loss: tuple[float, float] = (0.05, 0.4)
    # rectangular block loss; sizes are fractions of each dim
    block_count: tuple[int, int] = (1, 4)
    block_size: tuple[float, float] = (0.05, 0.25)
    # border strips, depth up to this fraction of the border's dim
    border_max_fraction: float = 0.25
    # edge masks grown from detected edges, extension length in pixels
    edge_width: tuple[float, float] = (2.0, 8.0)
    canny_low: float = 0.1
    canny_high: float = 0.2

    def __post_init__(self):
        for name in ("hue_anchors", "exposure", "noise_sigma", "stroke_count", "stroke_width",
                     "stroke_vertices", "stroke_step", "pixel_loss", "block_count", "block_size",
                     "edge_width"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
        if not (0.0 < self.exposure[0] and self.exposure[1] <= 10.0):
            raise ValueError("exposure range must lie within (0, 10]")
        if not 0.0 <= self.canny_low < self.canny_high:
            raise ValueError("need 0 <= canny_low < canny_high")


@dataclass
class SpectralSample:
    """One training quadruple: guide view, clean target channel, the target
    with masked pixels painted white, and the mask itself."""

    guide: np.ndarray
    target: np.ndarray
    distorted: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        check_same_shape(self.guide, self.target, self.distorted, self.mask)
        check_mask(self.mask)
        off = self.mask == 0.0
        if not np.array_equal(self.distorted[off], self.target[off]):
            raise ValueError("distorted must equal target on unmasked pixels")
        if not (self.distorted[~off] == 1.0).all():
            raise ValueError("masked pixels of distorted must be white (1.0)")


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV; hue as a fraction of the full turn in [0, 1).

    Works on any (..., 3) array. Achromatic pixels get hue 0; black gets
    saturation 0.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    chromatic = delta > 0

    safe = np.where(chromatic, delta, 1.0)
    h = np.zeros_like(maxc)
    rmax = chromatic & (maxc == r)
    gmax = chromatic & ~rmax & (maxc == g)
    bmax = chromatic & ~rmax & ~gmax
    h[rmax] = ((g - b) / safe)[rmax] / 6.0
    h[gmax] = (2.0 + (b - r) / safe)[gmax] / 6.0
    h[bmax] = (4.0 + (r - g) / safe)[bmax] / 6.0
    h = np.mod(h, 1.0)

    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def synth_spectral(rgb: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Render one pseudo-spectral grayscale view of an RGB image.

    Hue anchors on the color circle get random gray levels, pixels
    interpolate circularly between them, random grays for white/black fold
    in saturation and value, then the image is normalized to [0, 1],
    exposed, noised and clipped. Pixels with identical (h, s, v) always
    map to the same gray before noise.
    """
    hsv = rgb_to_hsv(rgb)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]

    n = int(rng.integers(cfg.hue_anchors[0], cfg.hue_anchors[1] + 1))
    anchor_h = rng.random(n)
    anchor_g = rng.random(n)
    order = np.argsort(anchor_h)
    ah, ag = anchor_h[order], anchor_g[order]
    # wrap the circle so every hue sits between two anchors
    xp = np.concatenate([[ah[-1] - 1.0], ah, [ah[0] + 1.0]])
    fp = np.concatenate([[ag[-1]], ag, [ag[0]]])
    hue_gray = np.interp(h, xp, fp)

    g_white = rng.random()
    g_black = rng.random()
    out = v * (s * hue_gray + (1.0 - s) * g_white) + (1.0 - v) * g_black

    lo, hi = out.min(), out.max()
    if hi > lo:
        out = (out - lo) / (hi - lo)
    else:
        out = np.ones_like(out)  # constant image: any level is valid, use white

    out = out * rng.uniform(*cfg.exposure)
    sigma = rng.uniform(*cfg.noise_sigma)
    out = out + sigma * rng.standard_normal(out.shape)
    return check_finite(np.clip(out, 0.0, 1.0).astype(np.float32), "spectral image")


def stamp_capsule(mask: np.ndarray, p0, p1, width: float) -> None:
    """Set mask pixels within width/2 of the segment p0-p1 (round caps).

    Points are (x, y) in pixel-center coordinates. In-place.
    """
    h, w = mask.shape
    radius = max(float(width), 1.0) / 2.0
    x0, y0 = p0
    x1, y1 = p1
    xmin = max(int(math.floor(min(x0, x1) - radius - 1)), 0)
    xmax = min(int(math.ceil(max(x0, x1) + radius + 1)), w - 1)
    ymin = max(int(math.floor(min(y0, y1) - radius - 1)), 0)
    ymax = min(int(math.ceil(max(y0, y1) + radius + 1)), h - 1)
    if xmin > xmax or ymin > ymax:
        return
    ys, xs = np.mgrid[ymin : ymax + 1, xmin : xmax + 1]
    dx, dy = x1 - x0, y1 - y0
    seg_sq = dx * dx + dy * dy
    if seg_sq == 0:
        dist_sq = (xs - x0) ** 2 + (ys - y0) ** 2
    else:
        t = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg_sq, 0.0, 1.0)
        dist_sq = (xs - (x0 + t * dx)) ** 2 + (ys - (y0 + t * dy)) ** 2
    region = mask[ymin : ymax + 1, xmin : xmax + 1]
    region[dist_sq <= radius * radius] = 1.0


def gen_stroke_mask(shape, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Free-form stroke mask: random-walk polylines with round caps."""
    h, w = shape
    mind = min(h, w)
    mask = np.zeros(shape, np.float32)
    for _ in range(int(rng.integers(cfg.stroke_count[0], cfg.stroke_count[1] + 1))):
        width = rng.uniform(*cfg.stroke_width) * mind
        n_vertices = int(rng.integers(cfg.stroke_vertices[0], cfg.stroke_vertices[1] + 1))
        x = rng.uniform(0, w - 1)
        y = rng.uniform(0, h - 1)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        for _ in range(n_vertices - 1):
            step = rng.uniform(*cfg.stroke_step) * mind
            nx = x + step * math.cos(angle)
            ny = y + step * math.sin(angle)
            stamp_capsule(mask, (x, y), (nx, ny), width)
            x, y = nx, ny
            angle += math.radians(rng.uniform(-cfg.stroke_max_turn_deg, cfg.stroke_max_turn_deg))
    return mask


def gen_pixel_mask(shape, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """i.i.d. Bernoulli pixel loss with a probability drawn from the config range."""
    p = rng.uniform(*cfg.pixel_loss)
    return (rng.random(shape) < p).astype(np.float32)


def gen_block_mask(shape, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Union of random axis-aligned rectangles."""
    h, w = shape
    mask = np.zeros(shape, np.float32)
    for _ in range(int(rng.integers(cfg.block_count[0], cfg.block_count[1] + 1))):
        bh = max(1, int(round(rng.uniform(*cfg.block_size) * h)))
        bw = max(1, int(round(rng.uniform(*cfg.block_size) * w)))
        bh, bw = min(bh, h), min(bw, w)
        y0 = int(rng.integers(0, h - bh + 1))
        x0 = int(rng.integers(0, w - bw + 1))
        mask[y0 : y0 + bh, x0 : x0 + bw] = 1.0
    return mask


def border_mask_from_depths(shape, left: int, right: int, top: int, bottom: int) -> np.ndarray:
    """Strips of the given pixel depths along the four image borders."""
    mask = np.zeros(shape, np.float32)
    if left:
        mask[:, :left] = 1.0
    if right:
        mask[:, shape[1] - right :] = 1.0
    if top:
        mask[:top, :] = 1.0
    if bottom:
        mask[shape[0] - bottom :, :] = 1.0
    return mask


def gen_border_mask(shape, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Cut off a random subset of the four borders at random depths."""
    h, w = shape
    depths = []
    for dim in (w, w, h, h):  # left, right, top, bottom
        take = rng.random() < 0.5
        depth = int(rng.integers(0, int(cfg.border_max_fraction * dim) + 1))
        depths.append(depth if take else 0)
    return border_mask_from_depths(shape, *depths)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x, y = np.mgrid[-half : half + 1, -half : half + 1]
    g = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return g / g.sum()

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], np.float64)
_SOBEL_Y = _SOBEL_X.T


def canny(gray: np.ndarray, low: float = 0.1, high: float = 0.2):
    """Classic Canny: Gaussian 5x5 (sigma 1.4), Sobel, NMS, hysteresis.

    Thresholds apply to the raw Sobel magnitude of [0, 1]-ranged images.
    Returns (edges, gx, gy): a thin binary edge mask plus the smoothed
    gradient field used for suppression.
    """
    if not 0.0 <= low < high:
        raise ValueError(f"need 0 <= low < high, got {low}, {high}")
    smooth = ndimage.convolve(gray.astype(np.float64), _gaussian_kernel(5, 1.4), mode="nearest")
    gx = ndimage.correlate(smooth, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(smooth, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)

    # quantize orientation into 4 sectors; ties between the two symmetric
    # neighbors of an ideal step break toward one side (> vs >=), keeping
    # the ridge one pixel wide
    angle = np.mod(np.arctan2(gy, gx), math.pi)
    sector = ((angle + math.pi / 8) // (math.pi / 4)).astype(np.int64) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1)
    ys, xs = np.mgrid[0 : mag.shape[0], 0 : mag.shape[1]]
    fwd = np.empty_like(mag)
    back = np.empty_like(mag)
    for k, (dy, dx) in offsets.items():
        sel = sector == k
        fwd[sel] = padded[ys[sel] + 1 + dy, xs[sel] + 1 + dx]
        back[sel] = padded[ys[sel] + 1 - dy, xs[sel] + 1 - dx]
    keep = (mag >= fwd) & (mag > back)

    strong = keep & (mag >= high)
    weak = keep & (mag >= low)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n:
        has_strong = ndimage.maximum(strong, labels, index=np.arange(1, n + 1)).astype(bool)
        edges = np.zeros(mag.shape, bool)
        edges[weak] = has_strong[labels[weak] - 1]
    else:
        edges = np.zeros(mag.shape, bool)
    return edges.astype(np.float32), gx, gy


def luminance(rgb: np.ndarray) -> np.ndarray:
    return (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]).astype(np.float32)


def gen_edge_mask(rgb: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Grow detected edges into bands along the gradient direction.

    Every connected edge component picks one gradient sign and one
    extension length; each edge pixel then stamps a thin line from itself
    to pixel + sign * length * unit_gradient.
    """
    edges, gx, gy = canny(luminance(rgb), cfg.canny_low, cfg.canny_high)
    mask = np.zeros(edges.shape, np.float32)
    labels, n = ndimage.label(edges, structure=np.ones((3, 3)))
    for comp in range(1, n + 1):
        sign = 1.0 if rng.random() < 0.5 else -1.0
        length = rng.uniform(*cfg.edge_width)
        ys, xs = np.nonzero(labels == comp)
        for y, x in zip(ys, xs):
            norm = math.hypot(gx[y, x], gy[y, x])
            if norm < 1e-12:
                continue
            ex = x + sign * length * gx[y, x] / norm
            ey = y + sign * length * gy[y, x] / norm
            stamp_capsule(mask, (x, y), (ex, ey), 1.0)
    return mask


MASK_FAMILIES = ("stroke", "pixel", "block", "border", "edge")


def gen_mask(family: str, rgb: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    shape = rgb.shape[:2]
    if family == "stroke":
        return gen_stroke_mask(shape, rng, cfg)
    if family == "pixel":
        return gen_pixel_mask(shape, rng, cfg)
    if family == "block":
        return gen_block_mask(shape, rng, cfg)
    if family == "border":
        return gen_border_mask(shape, rng, cfg)
    if family == "edge":
        return gen_edge_mask(rgb, rng, cfg)
    raise ValueError(f"unknown mask family {family!r}")


def make_sample(rgb: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    """Synthesize one training sample from an RGB image.

    Guide and target are two independent pseudo-spectral renderings; the
    mask family is drawn uniformly; masked target pixels become white.
    Returns (sample, family).
    """
    guide = synth_spectral(rgb, rng, cfg)
    target = synth_spectral(rgb, rng, cfg)
    family = MASK_FAMILIES[int(rng.integers(0, len(MASK_FAMILIES)))]
    mask = gen_mask(family, rgb, rng, cfg)
    distorted = target.copy()
    distorted[mask == 1.0] = 1.0
    return SpectralSample(guide=guide, target=target, distorted=distorted, mask=mask), family


def synthetic_rgb(shape, rng: np.random.Generator) -> np.ndarray:
    """Toy RGB scene for demos, benches and tests: a smooth color field
    with a few solid rectangles for edge content."""
    h, w = shape
    base = rng.random((4, 4, 3))
    ys = np.linspace(0, 3, h)
    xs = np.linspace(0, 3, w)
    y0 = np.clip(ys.astype(int), 0, 2)
    x0 = np.clip(xs.astype(int), 0, 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = base[y0][:, x0]
    b = base[y0][:, x0 + 1]
    c = base[y0 + 1][:, x0]
    d = base[y0 + 1][:, x0 + 1]
    img = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    for _ in range(int(rng.integers(2, 5))):
        rh = int(rng.integers(h // 8, h // 3 + 1))
        rw = int(rng.integers(w // 8, w // 3 + 1))
        y = int(rng.integers(0, h - rh + 1))
        x = int(rng.integers(0, w - rw + 1))
        img[y : y + rh, x : x + rw] = rng.random(3)
    return img.astype(np.float32)
