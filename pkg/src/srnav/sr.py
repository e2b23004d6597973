"""Multi-frame super-resolution from known sub-pixel shifts.

The imaging model for frame ``k`` is ``I_k = D B M_k X``: translate the
high-resolution estimate ``X`` by the frame offset (bilinear, replicate edge),
blur with a Gaussian PSF and decimate. Every stage is separable, so each frame
operator is stored as a pair of sparse 1-D matrices ``(Ay, Ax)`` and applied as
``Ay @ X @ Ax.T``. The adjoint is the exact transpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .kinematics import check_jacobian
from .scene import GAUSS_TRUNCATE

OFFSET_LIMIT = 1.0


@dataclass(frozen=True)
class ShiftSet:
    offsets: np.ndarray  # (N, 2) image-plane offsets (x, y), base pixels
    commands: np.ndarray  # (N, 2) per-step stage displacements, mm

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 2)
        commands = np.asarray(self.commands, dtype=float).reshape(-1, 2)
        if len(offsets) < 1:
            raise ValueError("a ShiftSet needs at least one offset")
        if len(commands) != len(offsets):
            raise ValueError("offsets and commands must have the same length")
        if np.any(offsets[0] != 0):
            raise ValueError("the first offset must be the origin (0, 0)")
        if np.any(np.abs(offsets) > OFFSET_LIMIT + 1e-12):
            raise ValueError(f"offsets must lie in [-{OFFSET_LIMIT}, {OFFSET_LIMIT}] pixels")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "commands", commands)

    def __len__(self) -> int:
        return len(self.offsets)

    @classmethod
    def from_offsets(cls, offsets) -> "ShiftSet":
        offsets = np.asarray(offsets, dtype=float).reshape(-1, 2)
        return cls(offsets, np.zeros_like(offsets))


@dataclass(frozen=True)
class SrOptions:
    upscale_factor: int = 2
    max_iterations: int = 100
    mse_stop_fraction: float = 1e-4
    step_size: float | None = None  # None: derived from the operator norm
    blur_sigma: float = 0.5  # PSF std in base pixels
    pixel_aperture: bool = True  # area-average decimation; False samples every f-th pixel

    def __post_init__(self):
        if int(self.upscale_factor) != self.upscale_factor or self.upscale_factor < 1:
            raise ValueError("upscale_factor must be a positive integer")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.mse_stop_fraction < 1:
            raise ValueError("mse_stop_fraction must be in (0, 1)")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")


@dataclass
class SrResult:
    image: np.ndarray
    iterations_used: int
    residual_history: list[float] = field(default_factory=list)


def generate_offsets(n: int, rng_seed: int, jacobian) -> ShiftSet:
    """Draw ``n`` sub-pixel offsets and the stage steps that realise them.

    The first point is the origin; the rest are uniform in ``[-1, 1]^2`` pixels.
    Step ``k`` moves the stage by ``J^-1 (p_k - p_{k-1})``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    jinv = np.linalg.inv(check_jacobian(jacobian))
    rng = np.random.default_rng(rng_seed)
    points = np.zeros((n, 2))
    points[1:] = rng.uniform(-OFFSET_LIMIT, OFFSET_LIMIT, size=(n - 1, 2))
    steps = np.diff(points, axis=0, prepend=points[:1])
    commands = steps @ jinv.T
    return ShiftSet(points, commands)


def _gauss_kernel(sigma: float) -> np.ndarray:
    # same discretisation as scipy.ndimage.gaussian_filter1d
    radius = int(GAUSS_TRUNCATE * sigma + 0.5)
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _axis_operator(n_lo: int, factor: int, shift: float, sigma: float, aperture: bool) -> sparse.csr_matrix:
    """1-D matrix (n_lo x n_lo*factor) for decimate(blur(translate(x)))."""
    n_hi = n_lo * factor
    j = np.arange(n_hi)

    pos = j - shift * factor
    i0 = np.floor(pos).astype(int)
    w = pos - i0
    rows = np.concatenate([j, j])
    cols = np.concatenate([np.clip(i0, 0, n_hi - 1), np.clip(i0 + 1, 0, n_hi - 1)])
    vals = np.concatenate([1.0 - w, w])
    op = sparse.csr_matrix((vals, (rows, cols)), shape=(n_hi, n_hi))

    if sigma > 0:
        k = _gauss_kernel(sigma * factor)
        radius = len(k) // 2
        offs = np.arange(-radius, radius + 1)
        rows = np.repeat(j, len(k))
        cols = np.clip((j[:, None] + offs[None, :]).ravel(), 0, n_hi - 1)
        vals = np.tile(k, n_hi)
        op = sparse.csr_matrix((vals, (rows, cols)), shape=(n_hi, n_hi)) @ op

    i = np.arange(n_lo)
    if aperture:
        rows = np.repeat(i, factor)
        cols = np.arange(n_hi)
        dec = sparse.csr_matrix((np.full(n_hi, 1.0 / factor), (rows, cols)), shape=(n_lo, n_hi))
    else:
        dec = sparse.csr_matrix((np.ones(n_lo), (i, i * factor)), shape=(n_lo, n_hi))
    return sparse.csr_matrix(dec @ op)


class FrameOperator:
    """Linear map from a high-resolution image to one low-resolution frame."""

    def __init__(self, base_shape: tuple[int, int], offset, opts: SrOptions):
        h, w = base_shape
        f = opts.upscale_factor
        dx, dy = float(offset[0]), float(offset[1])
        self.base_shape = (h, w)
        self.hi_shape = (h * f, w * f)
        self.ay = _axis_operator(h, f, dy, opts.blur_sigma, opts.pixel_aperture)
        self.ax = _axis_operator(w, f, dx, opts.blur_sigma, opts.pixel_aperture)
        self._ayt = sparse.csr_matrix(self.ay.T)
        self._axt = sparse.csr_matrix(self.ax.T)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape != self.hi_shape:
            raise ValueError(f"expected high-res shape {self.hi_shape}, got {x.shape}")
        t = self.ay @ x
        return (self.ax @ t.T).T

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        if y.shape != self.base_shape:
            raise ValueError(f"expected base shape {self.base_shape}, got {y.shape}")
        t = self._ayt @ y
        return (self._axt @ t.T).T


def _base_shape(x: np.ndarray, opts: SrOptions) -> tuple[int, int]:
    f = opts.upscale_factor
    h, w = x.shape
    if h % f or w % f:
        raise ValueError(f"high-res shape {x.shape} not divisible by upscale factor {f}")
    return h // f, w // f


def forward_project(x: np.ndarray, offset, opts: SrOptions) -> np.ndarray:
    """Project a high-resolution guess to the base grid of a frame at ``offset``."""
    return FrameOperator(_base_shape(x, opts), offset, opts).forward(x)


def back_project(y: np.ndarray, offset, opts: SrOptions) -> np.ndarray:
    """Exact adjoint of :func:`forward_project`."""
    return FrameOperator(y.shape, offset, opts).adjoint(y)


def _operators(frames, shifts: ShiftSet, opts: SrOptions) -> list[FrameOperator]:
    if len(frames) == 0:
        raise ValueError("no frames to reconstruct from")
    shape = frames[0].shape
    if any(fr.shape != shape for fr in frames):
        raise ValueError("all frames must share the same dimensions")
    if len(frames) != len(shifts):
        raise ValueError(f"{len(frames)} frames but {len(shifts)} offsets")
    return [FrameOperator(shape, off, opts) for off in shifts.offsets]


def objective(x: np.ndarray, frames, shifts: ShiftSet, opts: SrOptions) -> float:
    """Sum over frames of the squared projection residual."""
    return float(sum(np.sum((op.forward(x) - fr) ** 2) for op, fr in zip(_operators(frames, shifts, opts), frames)))


def gradient(x: np.ndarray, frames, shifts: ShiftSet, opts: SrOptions) -> np.ndarray:
    ops = _operators(frames, shifts, opts)
    return 2.0 * sum(op.adjoint(op.forward(x) - fr) for op, fr in zip(ops, frames))


def _normal_norm(ops: list[FrameOperator], iterations: int = 20) -> float:
    rng = np.random.default_rng(0)
    v = rng.standard_normal(ops[0].hi_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        u = sum(op.adjoint(op.forward(v)) for op in ops)
        lam = float(np.linalg.norm(u))
        if lam == 0:
            break
        v = u / lam
    return lam


def reconstruct_sr(frames, shifts: ShiftSet, opts: SrOptions | None = None) -> SrResult:
    """Estimate the high-resolution image by gradient descent on the data misfit.

    Starts from a bicubic upsample of the first (zero-offset) frame and takes
    fixed steps of ``1 / L`` where ``L`` estimates the gradient's Lipschitz
    constant. Stops after ``max_iterations`` or once the residual MSE drops
    below ``mse_stop_fraction`` times its starting value.
    """
    opts = opts or SrOptions()
    frames = [np.asarray(fr, dtype=float) for fr in frames]
    ops = _operators(frames, shifts, opts)
    npix = len(frames) * frames[0].size

    x = upsample_bicubic(frames[0], opts.upscale_factor)
    if opts.step_size is not None:
        step = opts.step_size
    else:
        lam = _normal_norm(ops)
        step = 1.0 / (2.0 * lam) if lam > 0 else 1.0

    residuals = [op.forward(x) - fr for op, fr in zip(ops, frames)]
    mse0 = sum(float(np.sum(r * r)) for r in residuals) / npix
    history = [mse0]
    it = 0
    while it < opts.max_iterations and mse0 > 0:
        grad = 2.0 * sum(op.adjoint(r) for op, r in zip(ops, residuals))
        x = x - step * grad
        residuals = [op.forward(x) - fr for op, fr in zip(ops, frames)]
        mse = sum(float(np.sum(r * r)) for r in residuals) / npix
        history.append(mse)
        it += 1
        if mse < opts.mse_stop_fraction * mse0:
            break
    return SrResult(x, it, history)


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic-convolution weights for the 4 taps around fractional offset ``t``."""
    d = np.stack([1 + t, t, 1 - t, 2 - t], axis=-1)
    d = np.abs(d)
    near = (a + 2) * d**3 - (a + 3) * d**2 + 1
    far = a * d**3 - 5 * a * d**2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def _bicubic_axis(n: int, factor: int) -> sparse.csr_matrix:
    m = n * factor
    src = (np.arange(m) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(int)
    w = _cubic_weights(src - i0)
    cols = np.clip(i0[:, None] + np.arange(-1, 3)[None, :], 0, n - 1)
    rows = np.repeat(np.arange(m), 4)
    return sparse.csr_matrix((w.ravel(), (rows, cols.ravel())), shape=(m, n))


def upsample_bicubic(img: np.ndarray, factor: int) -> np.ndarray:
    """Cubic-convolution upsampling (a = -0.5) with replicated edges."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    img = np.asarray(img, dtype=float)
    if factor == 1:
        return img.copy()
    h, w = img.shape
    ay = _bicubic_axis(h, factor)
    ax = _bicubic_axis(w, factor)
    return (ax @ (ay @ img).T).T
