import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from srnav.scene import DegradationParams, GroundTruthCircle, degrade, render_disk
from srnav.sr import (
    FrameOperator, ShiftSet, SrOptions, back_project, forward_project, generate_offsets, gradient, objective,
    reconstruct_sr, upsample_bicubic,
)

HALF = [(0, 0), (0.5, 0), (0, 0.5), (0.5, 0.5)]


def interleave(frames_by_offset, shape):
    """Exact factor-2 interleaving: content shifted by +s lands on X[2i - 2s]."""
    h, w = shape
    X = np.zeros((2 * h, 2 * w))
    for (sx, sy), fr in frames_by_offset:
        dx, dy = int(2 * sx), int(2 * sy)
        # a +1 high-res shift moves sample i to index 2i - 1; index -1 falls off the grid
        rows = 2 * np.arange(h) - dy
        cols = 2 * np.arange(w) - dx
        rk, ck = rows >= 0, cols >= 0
        X[np.ix_(rows[rk], cols[ck])] = fr[np.ix_(rk, ck)]
    return X


def test_half_pixel_oracle():
    hi = render_disk(GroundTruthCircle((16.3, 15.6), 7.0), (32, 32), 8)
    p = DegradationParams(blur_sigma=0.0, noise_sigma=0.0)
    frames = [degrade(hi, p, shift=s) for s in HALF]
    opts = SrOptions(blur_sigma=0.0, pixel_aperture=False, mse_stop_fraction=1e-12)
    res = reconstruct_sr(frames, ShiftSet.from_offsets(HALF), opts)
    X = interleave(zip(HALF, frames), (32, 32))
    assert res.iterations_used <= 100
    assert np.mean((res.image - X) ** 2) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1, 1), st.floats(-1, 1), st.sampled_from([0.0, 0.4, 1.0]),
       st.sampled_from([1, 2, 3]), st.booleans())
def test_adjoint_inner_product(seed, dx, dy, sigma, f, aperture):
    rng = np.random.default_rng(seed)
    opts = SrOptions(upscale_factor=f, blur_sigma=sigma, pixel_aperture=aperture)
    op = FrameOperator((8, 9), (dx, dy), opts)
    x = rng.standard_normal(op.hi_shape)
    y = rng.standard_normal(op.base_shape)
    lhs = np.vdot(op.forward(x), y)
    rhs = np.vdot(x, op.adjoint(y))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_functional_wrappers_match_operator():
    rng = np.random.default_rng(0)
    opts = SrOptions()
    x = rng.random((16, 16))
    y = rng.random((8, 8))
    op = FrameOperator((8, 8), (0.3, -0.2), opts)
    np.testing.assert_allclose(forward_project(x, (0.3, -0.2), opts), op.forward(x))
    np.testing.assert_allclose(back_project(y, (0.3, -0.2), opts), op.adjoint(y))


def test_forward_matches_scene_model_on_smooth_content():
    # projecting a supersampled scene by the SR operator equals the degradation at the SR grid
    hi = render_disk(GroundTruthCircle((16.0, 16.0), 6.0), (32, 32), 8)
    p = DegradationParams(blur_sigma=0.5, noise_sigma=0.0)
    x2 = degrade(hi, DegradationParams(blur_sigma=0.0, noise_sigma=0.0, downsample_factor=1), shift=(0, 0))
    x2 = ndimage.zoom(x2, 2, order=0)  # piecewise-constant stand-in for the 2x scene
    y = forward_project(x2, (0.0, 0.0), SrOptions(blur_sigma=0.5))
    assert np.abs(y - degrade(hi, p)).max() < 0.1


@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    opts = SrOptions(blur_sigma=0.5)
    shifts = ShiftSet.from_offsets([(0, 0), *rng.uniform(-1, 1, (3, 2))])
    frames = [rng.random((4, 4)) for _ in range(4)]
    x = rng.random((8, 8))
    g = gradient(x, frames, shifts, opts)
    h = 1e-5
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (objective(x + e, frames, shifts, opts) - objective(x - e, frames, shifts, opts)) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


@pytest.mark.parametrize("seed", range(6))
def test_residual_history_non_increasing(seed):
    rng = np.random.default_rng(seed)
    hi = render_disk(GroundTruthCircle(tuple(rng.uniform(12, 20, 2)), 5.0), (32, 32), 8)
    shifts = generate_offsets(4, seed, np.eye(2))
    p = DegradationParams(noise_sigma=0.02)
    frames = [degrade(hi, p, tuple(s), rng) for s in shifts.offsets]
    res = reconstruct_sr(frames, shifts)
    hist = np.array(res.residual_history)
    assert len(hist) == res.iterations_used + 1
    assert np.all(np.diff(hist) <= 0)


def test_stopping_rule():
    hi = render_disk(GroundTruthCircle((16.0, 16.0), 6.0), (32, 32), 8)
    p = DegradationParams(noise_sigma=0.0)
    shifts = ShiftSet.from_offsets(HALF)
    frames = [degrade(hi, p, s) for s in HALF]
    res = reconstruct_sr(frames, shifts, SrOptions(max_iterations=3))
    assert res.iterations_used == 3
    res = reconstruct_sr(frames, shifts, SrOptions(blur_sigma=0, pixel_aperture=False, mse_stop_fraction=0.5))
    assert res.residual_history[-1] < 0.5 * res.residual_history[0]
    assert all(m >= 0.5 * res.residual_history[0] for m in res.residual_history[:-1])


def test_sr_fits_frames_better_than_bicubic():
    hi = render_disk(GroundTruthCircle((16.2, 15.7), 6.0), (32, 32), 8)
    p = DegradationParams(blur_sigma=0.5, noise_sigma=0.0)
    shifts = generate_offsets(4, 11, np.eye(2))
    frames = [degrade(hi, p, tuple(s)) for s in shifts.offsets]
    res = reconstruct_sr(frames, shifts)
    bi = upsample_bicubic(frames[0], 2)
    assert objective(res.image, frames, shifts, SrOptions()) < 0.1 * objective(bi, frames, shifts, SrOptions())


def test_validation():
    with pytest.raises(ValueError):
        ShiftSet.from_offsets([(0.1, 0), (0.5, 0)])
    with pytest.raises(ValueError):
        ShiftSet.from_offsets([(0, 0), (1.5, 0)])
    with pytest.raises(ValueError):
        reconstruct_sr([np.zeros((4, 4)), np.zeros((4, 5))], ShiftSet.from_offsets([(0, 0), (0.5, 0)]))
    with pytest.raises(ValueError):
        reconstruct_sr([np.zeros((4, 4))], ShiftSet.from_offsets([(0, 0), (0.5, 0)]))
    with pytest.raises(ValueError):
        SrOptions(upscale_factor=0)
    with pytest.raises(ValueError):
        forward_project(np.zeros((5, 5)), (0, 0), SrOptions())


def test_generate_offsets_commands_realise_points():
    J = np.array([[1.2, 0.3], [-0.4, 0.9]])
    s = generate_offsets(5, 3, J)
    assert len(s) == 5
    np.testing.assert_array_equal(s.offsets[0], [0, 0])
    assert np.all(np.abs(s.offsets) <= 1)
    np.testing.assert_allclose(np.cumsum(s.commands, axis=0) @ J.T, s.offsets, atol=1e-12)
    np.testing.assert_array_equal(generate_offsets(5, 3, J).offsets, s.offsets)


def test_bicubic_properties():
    rng = np.random.default_rng(1)
    img = rng.random((9, 7))
    np.testing.assert_array_equal(upsample_bicubic(img, 1), img)
    np.testing.assert_allclose(upsample_bicubic(np.full((5, 6), 0.3), 3), 0.3)
    # linear ramps are reproduced away from the replicated border
    ramp = np.add.outer(np.arange(10.0), 2 * np.arange(10.0))
    up = upsample_bicubic(ramp, 2)
    yy, xx = np.mgrid[0:20, 0:20]
    expect = ((yy + 0.5) / 2 - 0.5) + 2 * ((xx + 0.5) / 2 - 0.5)
    np.testing.assert_allclose(up[4:-4, 4:-4], expect[4:-4, 4:-4], atol=1e-12)
    with pytest.raises(ValueError):
        upsample_bicubic(img, 0)
