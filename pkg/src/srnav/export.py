"""Image and table writers: 8-bit binary PGM, float CSV and simple record CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image


def write_pgm(path, img: np.ndarray) -> Path:
    """Write ``img`` (intensities in [0, 1]) as an 8-bit binary PGM (P5)."""
    path = Path(path)
    data = np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")
    return path


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit PGM back into floats in [0, 1]."""
    with open(path, "rb") as fh, Image.open(fh) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected an 8-bit grayscale PGM, got mode {im.mode}")
        return np.asarray(im, dtype=float) / 255.0


def write_image_csv(path, img: np.ndarray) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(img, dtype=float), delimiter=",", fmt="%.10g")
    return path


def frame_name(trial: int, frame: int) -> str:
    return f"trial{trial}_frame{frame}.pgm"


def write_rows(path, header: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_residuals(path, history) -> Path:
    return write_rows(path, ["iteration", "mse"], ((i, repr(float(m))) for i, m in enumerate(history)))


def write_detections(path, circles) -> Path:
    return write_rows(
        path, ["cx", "cy", "r", "strength"],
        ((repr(c.center[0]), repr(c.center[1]), repr(c.radius), repr(c.strength)) for c in circles),
    )


def write_accumulator(path, acc: np.ndarray, radii, radius: float) -> Path:
    """Dump the Hough accumulator slice nearest ``radius`` as a max-normalised PGM."""
    k = int(np.argmin(np.abs(np.asarray(radii, dtype=float) - radius)))
    layer = acc[k]
    peak = layer.max()
    return write_pgm(path, layer / peak if peak > 0 else layer)
