"""Summary statistics for puncture precision and the two-tailed variance F-test."""

from __future__ import annotations

import numpy as np
from scipy.special import betainc


class ZeroVarianceError(ValueError):
    pass


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F(d1, d2) distribution via the regularized incomplete beta function."""
    if x <= 0:
        return 0.0
    return float(betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail of F(d1, d2); evaluated directly to keep small p-values accurate."""
    if x <= 0:
        return 1.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)))


def f_test_two_tailed(a, b) -> float:
    """Two-tailed F-test for equal variances of two samples.

    ``F`` is the larger sample variance over the smaller one, and the p-value is
    ``2 * min(P(F' <= F), P(F' >= F))`` under ``F(n1 - 1, n2 - 1)``, capped at 1.
    The result does not depend on argument order.
    """
    samples = []
    for name, s in (("a", a), ("b", b)):
        s = np.asarray(s, dtype=float).ravel()
        if s.size < 2:
            raise ValueError(f"sample {name} needs at least 2 values, got {s.size}")
        v = float(np.var(s, ddof=1))
        if v <= 0:
            raise ZeroVarianceError(f"sample {name} has zero variance; the F ratio is undefined")
        samples.append((v, s.size))
    (v1, n1), (v2, n2) = sorted(samples, reverse=True)
    F = v1 / v2
    d1, d2 = n1 - 1, n2 - 1
    p = 2.0 * min(f_cdf(F, d1, d2), f_sf(F, d1, d2))
    return min(p, 1.0)


def summarize(points) -> tuple[np.ndarray, float, np.ndarray]:
    """Centroid, sample std of distances to the centroid, and those distances."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("cannot summarize an empty set of points")
    pts = pts.reshape(len(pts), -1)
    mean = pts.mean(axis=0)
    dist = np.linalg.norm(pts - mean, axis=1)
    std = float(np.std(dist, ddof=1)) if len(dist) > 1 else 0.0
    return mean, std, dist
