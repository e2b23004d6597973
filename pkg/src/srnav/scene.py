"""Synthetic fiducial scenes and the acquisition degradation model.

Coordinates are continuous with the pixel-corner convention: pixel ``(row, col)``
covers ``[col, col + 1) x [row, row + 1)``, so its center sits at
``(col + 0.5, row + 0.5)``. Points are always given as ``(x, y)``. Upscaling by
an integer factor ``f`` maps a point ``u`` to ``f * u``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

GAUSS_TRUNCATE = 4.0
MAX_SHIFT = 2.0


@dataclass(frozen=True)
class GroundTruthCircle:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class DegradationParams:
    blur_sigma: float = 0.5  # Gaussian PSF std, base pixels
    downsample_factor: int = 1
    noise_sigma: float = 0.02  # fraction of the [0, 1] dynamic range
    rng_seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if int(self.downsample_factor) != self.downsample_factor or self.downsample_factor < 1:
            raise ValueError(f"downsample_factor must be an integer >= 1, got {self.downsample_factor}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class HighResImage:
    pixels: np.ndarray
    supersample_factor: int
    origin_offset: tuple[float, float] = field(default=(0.0, 0.0))  # (x, y), high-res pixels

    def __post_init__(self):
        h, w = self.pixels.shape
        f = self.supersample_factor
        if f < 1 or h % f or w % f:
            raise ValueError(f"image shape {self.pixels.shape} not divisible by supersample factor {f}")

    @property
    def base_shape(self) -> tuple[int, int]:
        f = self.supersample_factor
        return self.pixels.shape[0] // f, self.pixels.shape[1] // f


def render_disk(truth: GroundTruthCircle, canvas_size: tuple[int, int], supersample_factor: int = 8) -> HighResImage:
    """Rasterize a bright disk on a dark background at high resolution.

    Args:
        truth: disk center and radius in base-resolution pixels.
        canvas_size: base-resolution canvas as ``(height, width)``.
        supersample_factor: high-res pixels per base pixel along each axis.

    Returns:
        An image of shape ``canvas_size * supersample_factor`` that is 1 inside,
        0 outside, with edge pixels set to their approximate covered area.
    """
    if supersample_factor < 1:
        raise ValueError("supersample_factor must be >= 1")
    h, w = canvas_size
    cx, cy = truth.center
    r = float(truth.radius)
    if r < 0:
        raise ValueError(f"radius must be non-negative, got {r}")
    if cx - r < 0 or cy - r < 0 or cx + r > w or cy + r > h:
        raise ValueError(
            f"disk at ({cx}, {cy}) with radius {r} exceeds the {w}x{h} canvas"
        )
    f = supersample_factor
    out = np.zeros((h * f, w * f), dtype=np.float64)
    if r == 0:
        return HighResImage(out, f)
    # only rasterize the bounding box
    c0, c1 = max(int(np.floor((cx - r) * f)) - 1, 0), min(int(np.ceil((cx + r) * f)) + 2, w * f)
    r0, r1 = max(int(np.floor((cy - r) * f)) - 1, 0), min(int(np.ceil((cy + r) * f)) + 2, h * f)
    xs = (np.arange(c0, c1) + 0.5) / f - cx
    ys = (np.arange(r0, r1) + 0.5) / f - cy
    d = np.hypot(ys[:, None], xs[None, :])
    # signed distance to the edge, in high-res pixels, gives the covered fraction
    out[r0:r1, c0:c1] = np.clip(0.5 + (r - d) * f, 0.0, 1.0)
    return HighResImage(out, f)


def block_mean(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average ``img`` over non-overlapping ``factor x factor`` blocks."""
    if factor == 1:
        return img.copy()
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"shape {img.shape} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def _active_window(img: np.ndarray, margin: int, block: int):
    """Block-aligned crop holding everything that differs from the background.

    Shift, blur and block averaging all preserve a constant background, so the
    pipeline only needs to run on the non-constant region plus a margin that
    covers the shift and the PSF support.
    """
    h, w = img.shape
    background = float(img[0, 0])
    mask = img != background
    if not mask.any():
        return img[:0, :0], (0, 0, 0, 0), background
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0 = max(rows[0] - margin, 0) // block * block
    c0 = max(cols[0] - margin, 0) // block * block
    r1 = min(-(-(rows[-1] + 1 + margin) // block) * block, h)
    c1 = min(-(-(cols[-1] + 1 + margin) // block) * block, w)
    return img[r0:r1, c0:c1], (r0, r1, c0, c1), background


def degrade(
    hi: HighResImage,
    params: DegradationParams,
    shift: tuple[float, float] = (0.0, 0.0),
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Simulate one acquisition of a high-resolution scene.

    The scene content is translated by ``shift`` (base pixels, ``(x, y)``) with
    bilinear resampling at the high-resolution grid, blurred by a Gaussian PSF,
    area-averaged down to the output grid and corrupted with additive Gaussian
    noise. Boundaries replicate the edge pixels.

    ``rng`` overrides ``params.rng_seed`` so that callers drawing many frames
    can thread one generator through; results stay deterministic either way.
    """
    sx, sy = float(shift[0]), float(shift[1])
    if abs(sx) > MAX_SHIFT or abs(sy) > MAX_SHIFT:
        raise ValueError(f"shift {shift} exceeds the +/-{MAX_SHIFT} base-pixel limit")
    f = hi.supersample_factor
    tx = hi.origin_offset[0] + sx * f
    ty = hi.origin_offset[1] + sy * f
    block = f * params.downsample_factor
    h, w = hi.pixels.shape
    if h % block or w % block:
        raise ValueError(f"high-res shape {hi.pixels.shape} not divisible by {block}")
    sigma = params.blur_sigma * f
    margin = int(np.ceil(max(abs(tx), abs(ty)))) + 2 + (int(GAUSS_TRUNCATE * sigma + 0.5) if sigma > 0 else 0)
    img, window, background = _active_window(hi.pixels, margin, block)
    out = np.full((h // block, w // block), background)
    if img.size:
        if tx or ty:
            img = ndimage.shift(img, (ty, tx), order=1, mode="nearest")
        if sigma > 0:
            img = ndimage.gaussian_filter(img, sigma, mode="nearest", truncate=GAUSS_TRUNCATE)
        r0, r1, c0, c1 = window
        out[r0 // block:r1 // block, c0 // block:c1 // block] = block_mean(img, block)
    if params.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(params.rng_seed)
        out = np.clip(out + rng.normal(0.0, params.noise_sigma, out.shape), 0.0, 1.0)
    return out
