import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srnav.detect import (
    CircleEstimate, detect_circles, estimate_noise, hough_accumulator, locate_marker, refine_center,
)
from srnav.scene import DegradationParams, GroundTruthCircle, HighResImage, degrade, render_disk

CLEAN = DegradationParams(blur_sigma=0.5, noise_sigma=0.0)


def disk_image(center, r=8.0, size=64, params=CLEAN, rng=None):
    return degrade(render_disk(GroundTruthCircle(center, r), (size, size), 8), params, rng=rng)


@settings(max_examples=25, deadline=None)
@given(st.floats(24, 40), st.floats(24, 40), st.floats(5, 12))
def test_noiseless_center_is_subpixel(cx, cy, r):
    est = locate_marker(disk_image((cx, cy), r))
    assert est is not None and est.refined
    assert np.hypot(est.center[0] - cx, est.center[1] - cy) < 0.05
    assert est.radius == pytest.approx(r, abs=0.3)


def test_noisy_center_error_is_small():
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(20):
        c = rng.uniform(28, 36, 2)
        est = locate_marker(disk_image(tuple(c), params=DegradationParams(noise_sigma=0.05), rng=rng), (4, 16))
        errs.append(np.hypot(*(np.array(est.center) - c)))
    assert np.mean(errs) < 0.1


def test_hough_peak_near_center():
    acc, radii = hough_accumulator(disk_image((32.0, 30.0)), (6, 10))
    k, y, x = np.unravel_index(acc.argmax(), acc.shape)
    assert abs(x + 0.5 - 32) <= 1.5 and abs(y + 0.5 - 30) <= 1.5
    assert radii[k] == pytest.approx(8, abs=1)


def test_nothing_found_in_blank_or_noise():
    assert locate_marker(np.zeros((64, 64))) is None
    noise = np.clip(np.random.default_rng(1).normal(0.2, 0.02, (64, 64)), 0, 1)
    assert locate_marker(noise, (5, 12)) is None


def test_two_circles_strongest_first():
    hi = render_disk(GroundTruthCircle((20.0, 20.0), 7.0), (64, 64), 4).pixels
    hi += render_disk(GroundTruthCircle((44.0, 42.0), 7.0), (64, 64), 4).pixels
    img = degrade(HighResImage(hi, 4), CLEAN)
    found = detect_circles(img, (5, 10), max_count=3)
    assert len(found) == 2
    centers = sorted(tuple(np.round(c.center)) for c in found)
    assert centers == [(20.0, 20.0), (44.0, 42.0)]
    assert found[0].strength >= found[1].strength
    assert detect_circles(img, (5, 10), max_count=0) == []


def test_invalid_radius_range():
    img = np.zeros((32, 32))
    for rr in [(0, 5), (6, 5), (4, 16)]:
        with pytest.raises(ValueError):
            detect_circles(img, rr)


def test_refine_falls_back_at_border():
    img = disk_image((32.0, 32.0))
    coarse = CircleEstimate((3.0, 32.0), 8.0, 1.0)
    out = refine_center(img, coarse)
    assert out == coarse and not out.refined


def test_upsampled_coordinates_scale():
    from srnav.sr import upsample_bicubic
    c = (31.3, 30.6)
    img = disk_image(c)
    est = locate_marker(upsample_bicubic(img, 2), (8, 32))
    np.testing.assert_allclose(np.array(est.center) / 2, c, atol=0.05)


def test_noise_estimate():
    rng = np.random.default_rng(2)
    img = np.full((128, 128), 0.5) + rng.normal(0, 0.03, (128, 128))
    assert estimate_noise(img) == pytest.approx(0.03, rel=0.1)


def test_reference_disk_example():
    img = disk_image((64.25, 63.75), 8.0, size=128)
    est = detect_circles(img, (4, 16))[0]
    assert abs(est.center[0] - 64.25) <= 0.25 and abs(est.center[1] - 63.75) <= 0.25
    assert est.radius == pytest.approx(8.0, abs=0.5)


def test_refine_symmetry_shift_and_idempotence():
    img = disk_image((32.0, 32.0))
    coarse = CircleEstimate((31.5, 32.5), 8.0, 1.0)
    ref = refine_center(img, coarse)
    np.testing.assert_allclose(ref.center, (32.0, 32.0), atol=1e-3)
    shifted = refine_center(disk_image((32.5, 32.0)), coarse)
    assert shifted.center[0] - ref.center[0] == pytest.approx(0.5, abs=0.05)
    again = refine_center(img, ref)
    assert np.hypot(again.center[0] - ref.center[0], again.center[1] - ref.center[1]) < 1e-3


@pytest.mark.parametrize("shift", [(3, 0), (0, -5), (7, 4)])
def test_integer_translation_equivariance(shift):
    base = disk_image((30.37, 29.81))
    moved = np.roll(base, (shift[1], shift[0]), axis=(0, 1))
    a = locate_marker(base, (4, 16))
    b = locate_marker(moved, (4, 16))
    np.testing.assert_allclose(np.subtract(b.center, a.center), shift, atol=0.05)


@pytest.mark.parametrize("r", [5, 8, 12, 16, 20])
def test_radius_consistency(r):
    est = locate_marker(disk_image((64.4, 63.3), float(r), size=128), (r / 2, 2 * r))
    assert est.radius == pytest.approx(r, rel=0.05)


def test_estimates_respect_contract():
    est = detect_circles(disk_image((30.0, 33.0)), (5, 12), refine=False)[0]
    assert 5 <= est.radius <= 12 and not est.refined
    assert 0 <= est.center[0] <= 64 and 0 <= est.center[1] <= 64


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="bicubic upsampling adds no information: the BICUBIC-vs-BASE error "
                                       "gap is real but not significant at p < 0.01 over 100 trials")
def test_every_detection_gap_is_significant(numerical_report):
    rep, _ = numerical_report
    e = {m: rep["modes"][m]["mean_error_px"] for m in ("base", "bi", "sr")}
    assert e["sr"] < e["bi"] < e["base"]
    assert rep["f_tests"]["bi_vs_sr"] < 0.01
    assert rep["f_tests"]["base_vs_bi"] < 0.01
