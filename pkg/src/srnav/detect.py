"""Circular fiducial detection with sub-pixel center refinement.

Coarse detection is a gradient-directed circular Hough transform: every edge
pixel votes along its intensity gradient (markers are bright on a dark
background) at each candidate radius. Peaks are then refined by an
intensity-weighted centroid over the disk support.

Coordinates follow :mod:`srnav.scene`: ``(x, y)`` with pixel centers at
half-integers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

EDGE_NOISE_FACTOR = 4.0  # threshold in units of the gradient noise std
EDGE_SMOOTH_SIGMA = 1.0  # Gaussian pre-smoothing (px) before differentiation; coarse stage only
EDGE_FLOOR = 0.1  # fraction of the strongest gradient; suppresses interpolation ripple
STRENGTH_THRESHOLD = 0.3
REFINE_MAX_ITER = 50
REFINE_TOL = 1e-6
SUPPORT_SCALE = 1.25  # centroid window radius, in units of the disk radius
SUPPORT_PAD = 1.0  # plus this many pixels, so the blurred edge is fully inside


@dataclass(frozen=True)
class CircleEstimate:
    center: tuple[float, float]
    radius: float
    strength: float
    refined: bool = False


def estimate_noise(img: np.ndarray) -> float:
    """Robust noise std from the median absolute deviation of pixel differences."""
    d = np.diff(img, axis=1).ravel()
    if d.size == 0:
        return 0.0
    mad = np.median(np.abs(d - np.median(d)))
    return float(1.4826 * mad / np.sqrt(2.0))


def gradient_noise(gx: np.ndarray, gy: np.ndarray) -> float:
    """Robust per-component noise std of gradient images (MAD, pooled over x and y)."""
    g = np.concatenate([gx.ravel(), gy.ravel()])
    if g.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(g - np.median(g))))


def edge_map(img: np.ndarray):
    """Sobel gradients of the pre-smoothed image, normalised to intensity change per pixel, and the edge mask."""
    if EDGE_SMOOTH_SIGMA > 0:
        img = ndimage.gaussian_filter(img, EDGE_SMOOTH_SIGMA, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        return gx, gy, mag, np.zeros_like(mag, dtype=bool)
    # noise measured on the gradient images themselves, so correlated noise
    # in upsampled or reconstructed images is judged on its own scale
    thresh = max(EDGE_NOISE_FACTOR * gradient_noise(gx, gy), EDGE_FLOOR * peak)
    return gx, gy, mag, mag > thresh


def _radii(radius_range) -> np.ndarray:
    rmin, rmax = float(radius_range[0]), float(radius_range[1])
    return np.arange(rmin, rmax + 1e-9, 1.0) if rmax - rmin >= 1 else np.array([(rmin + rmax) / 2])


def hough_accumulator(img: np.ndarray, radius_range) -> tuple[np.ndarray, np.ndarray]:
    """Vote counts of shape ``(n_radii, H, W)`` and the radii they belong to."""
    img = np.asarray(img, dtype=float)
    radii = _radii(radius_range)
    h, w = img.shape
    acc = np.zeros((len(radii), h, w))
    gx, gy, mag, edges = edge_map(img)
    rows, cols = np.nonzero(edges)
    if rows.size == 0:
        return acc, radii
    ux = gx[rows, cols] / mag[rows, cols]
    uy = gy[rows, cols] / mag[rows, cols]
    px, py = cols + 0.5, rows + 0.5
    for k, r in enumerate(radii):
        vx = np.floor(px + r * ux).astype(int)
        vy = np.floor(py + r * uy).astype(int)
        ok = (vx >= 0) & (vx < w) & (vy >= 0) & (vy < h)
        np.add.at(acc[k], (vy[ok], vx[ok]), 1.0)
    return acc, radii


def detect_circles(img: np.ndarray, radius_range, max_count: int = 1,
                   threshold: float = STRENGTH_THRESHOLD, refine: bool = True) -> list[CircleEstimate]:
    """Find bright circles with radius in ``radius_range``, strongest first.

    Strength is the 3x3-pooled vote count at a peak divided by the ideal count
    ``2 * pi * r`` for a one-pixel-wide ring. Peaks below ``threshold`` are
    discarded. Equal strengths are ordered by distance to the image center.
    """
    img = np.asarray(img, dtype=float)
    rmin, rmax = float(radius_range[0]), float(radius_range[1])
    if not 0 < rmin <= rmax or rmax >= min(img.shape) / 2:
        raise ValueError(f"invalid radius range {tuple(radius_range)} for image of shape {img.shape}")
    if max_count < 1:
        return []
    acc, radii = hough_accumulator(img, radius_range)
    pooled = np.stack([ndimage.uniform_filter(a, size=3, mode="constant") * 9.0 for a in acc])
    strength = pooled / (2 * np.pi * radii)[:, None, None]

    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dist_center = np.hypot(xx + 0.5 - w / 2, yy + 0.5 - h / 2)
    best = strength.max(axis=0)
    best_r = strength.argmax(axis=0)

    # candidates: local maxima of the best-over-radius strength map
    local_max = best == ndimage.maximum_filter(best, size=max(3, int(2 * rmin) | 1), mode="constant")
    cand = np.nonzero(local_max & (best >= threshold))
    order = np.lexsort((dist_center[cand], -best[cand]))
    out: list[CircleEstimate] = []
    for idx in order:
        y, x = cand[0][idx], cand[1][idx]
        c = (x + 0.5, y + 0.5)
        if any(np.hypot(c[0] - o.center[0], c[1] - o.center[1]) < rmin for o in out):
            continue
        est = CircleEstimate(c, float(radii[best_r[y, x]]), float(best[y, x]))
        if refine:
            est = refine_center(img, est)
        out.append(est)
        if len(out) >= max_count:
            break
    return out


def refine_center(img: np.ndarray, coarse: CircleEstimate) -> CircleEstimate:
    """Intensity-weighted centroid over the disk support, iterated to a fixed point.

    The background level is the median of a ring outside the disk. The radius
    is re-estimated from the background-subtracted mass and the plateau level.
    If the analysis window leaves the image, the coarse estimate is returned
    with ``refined=False``.
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    cx, cy = coarse.center
    r = float(coarse.radius)
    outer = 1.5 * r + 3.0
    for _ in range(REFINE_MAX_ITER):
        if cx - outer - 1 < 0 or cy - outer - 1 < 0 or cx + outer + 1 > w or cy + outer + 1 > h:
            return replace(coarse, refined=False)
        c0, c1 = int(np.floor(cx - outer - 1)), int(np.ceil(cx + outer + 1))
        r0, r1 = int(np.floor(cy - outer - 1)), int(np.ceil(cy + outer + 1))
        patch = img[r0:r1, c0:c1]
        xs = np.arange(c0, c1) + 0.5
        ys = np.arange(r0, r1) + 0.5
        d = np.hypot(xs[None, :] - cx, ys[:, None] - cy)

        ring = (d > 1.25 * r + 1.0) & (d <= outer)
        bg = float(np.median(patch[ring])) if ring.any() else 0.0
        sig = patch - bg
        plateau = float(np.median(sig[d <= 0.5 * r])) if np.any(d <= 0.5 * r) else 0.0
        # soft inclusion approximates the pixel area inside the circle
        full = np.clip(1.25 * r + 1.5 - d, 0.0, 1.0)
        support = np.clip(SUPPORT_SCALE * r + SUPPORT_PAD + 0.5 - d, 0.0, 1.0)
        mass = float(np.sum(sig * support))
        total = float(np.sum(sig * full))
        if mass <= 0 or total <= 0 or plateau <= 0:
            return replace(coarse, refined=False)
        nx = float(np.sum(sig * support * xs[None, :]) / mass)
        ny = float(np.sum(sig * support * ys[:, None]) / mass)
        r_new = float(np.sqrt(total / (np.pi * plateau)))
        moved = np.hypot(nx - cx, ny - cy)
        cx, cy = nx, ny
        r = r_new
        if moved < REFINE_TOL:
            break
    return CircleEstimate((cx, cy), r, coarse.strength, True)


def locate_marker(img: np.ndarray, radius_range=None) -> CircleEstimate | None:
    """Strongest refined circle, or ``None`` if nothing passes the threshold."""
    img = np.asarray(img, dtype=float)
    if radius_range is None:
        radius_range = (2.0, min(img.shape) / 4)
    found = detect_circles(img, radius_range, max_count=1)
    return found[0] if found else None
