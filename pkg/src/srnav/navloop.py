"""Closed-loop image-guided positioning on a simulated single-plane rig.

The rig moves the top stage of the parallel-plane guide (bottom stage fixed),
renders the fiducial as seen by an overhead camera, degrades it, and hands the
observation to the detector. Stage moves are open-loop with additive Gaussian
error; the simulator keeps the commanded pose and the true pose separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import kinematics as kin
from .detect import CircleEstimate, locate_marker
from .export import frame_name, write_pgm
from .scene import DegradationParams, GroundTruthCircle, degrade, render_disk
from .sr import SrOptions, generate_offsets, reconstruct_sr, upsample_bicubic


class Mode(str, Enum):
    BASE = "base"
    BICUBIC = "bi"
    SR = "sr"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        aliases = {"base": cls.BASE, "bi": cls.BICUBIC, "bicubic": cls.BICUBIC, "sr": cls.SR}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown mode {value!r}; expected base, bi or sr") from None


class DetectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Camera:
    """Affine overhead camera: ``px = offset + scale * R(rotation) @ xy_mm``."""

    scale: float = 1.0  # px per mm
    rotation: float = 0.0  # rad
    offset: tuple[float, float] = (64.0, 64.0)
    fov: tuple[int, int] = (128, 128)  # (height, width) px

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("camera scale must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return self.scale * kin.rotation2(self.rotation)

    def project(self, xy_mm) -> np.ndarray:
        return np.asarray(self.offset, dtype=float) + self.matrix @ np.asarray(xy_mm, dtype=float)


@dataclass(frozen=True)
class RigConfig:
    camera: Camera = field(default_factory=Camera)
    marker_radius_mm: float = 5.0
    marker_offset: tuple[float, float] = (0.0, 0.0)  # stage ball -> marker center, mm
    supersample_factor: int = 8
    degradation: DegradationParams = field(default_factory=DegradationParams)
    actuator_noise_sigma: float = 0.02  # mm per commanded move, per axis
    actuator_gain_sigma: float = 0.0  # relative step-size error per move, per axis
    puncture_noise_sigma: float = 0.0  # mm
    target_depth_mm: float = 50.0  # puncture plane below the bottom stage
    start_range_mm: float = 10.0
    jacobian_step_mm: float = 15.0
    max_iterations: int = 20
    converge_px: float = 1.0
    sr_frames: int = 4
    frame_time_min: float = 0.05

    def __post_init__(self):
        if min(self.actuator_noise_sigma, self.actuator_gain_sigma, self.puncture_noise_sigma) < 0:
            raise ValueError("noise levels must be non-negative")
        if self.marker_radius_mm <= 0:
            raise ValueError("marker radius must be positive")


class SimulatedRig:
    """Stateful rig: robot pose, camera, and a private random stream."""

    def __init__(self, config: RigConfig | None = None, rng_seed: int = 0, robot: kin.RobotState | None = None,
                 dump_dir: Path | None = None):
        self.config = config or RigConfig()
        self.robot = robot or kin.RobotState(top_ball=(0.0, 0.0), bottom_ball=(0.0, 0.0))
        self.rng = np.random.default_rng(rng_seed)
        self.commanded = self.robot.top_ball.copy()
        self._error = np.zeros(2)  # true pose minus commanded pose
        self.frames_acquired = 0
        self.dump_dir = Path(dump_dir) if dump_dir else None
        self.trial_index = 0

    # -- motion -------------------------------------------------------------
    def _sync(self):
        self.robot.top_ball = self.commanded + self._error

    def _actuate(self, delta: np.ndarray) -> None:
        cfg = self.config
        if not np.any(delta != 0):
            return
        if cfg.actuator_gain_sigma > 0:
            self._error = self._error + delta * self.rng.normal(0.0, cfg.actuator_gain_sigma, 2)
        if cfg.actuator_noise_sigma > 0:
            self._error = self._error + self.rng.normal(0.0, cfg.actuator_noise_sigma, 2)

    def move(self, command_mm) -> None:
        """Relative open-loop move; the true pose picks up actuator error."""
        command_mm = np.asarray(command_mm, dtype=float)
        self.commanded = self.commanded + command_mm
        self._actuate(command_mm)
        self._sync()

    def move_to(self, commanded_mm) -> None:
        """Drive to an absolute commanded stage position."""
        target = np.asarray(commanded_mm, dtype=float).copy()
        delta = target - self.commanded
        self.commanded = target
        self._actuate(delta)
        self._sync()

    # -- sensing ------------------------------------------------------------
    def marker_world(self) -> np.ndarray:
        top, _ = kin.forward_ball_positions(self.robot)
        return top[:2] + np.asarray(self.config.marker_offset, dtype=float)

    def marker_pixel(self) -> np.ndarray:
        return self.config.camera.project(self.marker_world())

    @property
    def marker_radius_px(self) -> float:
        return self.config.marker_radius_mm * self.config.camera.scale

    def capture(self) -> np.ndarray:
        cfg = self.config
        h, w = cfg.camera.fov
        c = self.marker_pixel()
        try:
            hi = render_disk(GroundTruthCircle((float(c[0]), float(c[1])), self.marker_radius_px),
                             (h, w), cfg.supersample_factor)
        except ValueError as exc:
            raise DetectionError(f"marker at {c.round(3).tolist()} px is outside the field of view") from exc
        frame = degrade(hi, cfg.degradation, rng=self.rng)
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            write_pgm(self.dump_dir / frame_name(self.trial_index, self.frames_acquired), frame)
        self.frames_acquired += 1
        return frame

    def tip_position(self) -> np.ndarray:
        """Where the needle line meets the puncture plane, in base-frame mm."""
        top, bottom = kin.forward_ball_positions(self.robot)
        line = kin.needle_line(top, bottom)
        return kin.intersect_line_plane(line, self.robot.z_bottom - self.config.target_depth_mm)


@dataclass
class Observation:
    image: np.ndarray
    estimate: CircleEstimate
    scale: int  # observation pixels per base pixel
    frames: int


def _radius_range(rig: SimulatedRig, scale: int) -> tuple[float, float]:
    r = rig.marker_radius_px * scale
    return max(1.0, 0.5 * r), 2.0 * r


def acquire_observation(rig: SimulatedRig, mode, sr_opts: SrOptions | None = None, jac=None) -> Observation:
    """Take the image(s) for one observation and detect the marker.

    BASE uses one frame; BICUBIC upsamples one frame by the SR factor; SR
    commands ``sr_frames`` open-loop sub-pixel moves, returns the stage to the
    first point, and reconstructs from the frames with the planned offsets.
    ``jac`` is the base-resolution Jacobian (px/mm), needed for SR.
    """
    mode = Mode.parse(mode)
    sr_opts = sr_opts or SrOptions()
    before = rig.frames_acquired
    if mode is Mode.BASE:
        scale = 1
        img = rig.capture()
    elif mode is Mode.BICUBIC:
        scale = sr_opts.upscale_factor
        img = upsample_bicubic(rig.capture(), scale)
    else:
        if jac is None:
            raise ValueError("SR acquisition needs the image Jacobian to plan sub-pixel moves")
        scale = sr_opts.upscale_factor
        shifts = generate_offsets(rig.config.sr_frames, int(rig.rng.integers(2**32)), jac)
        origin = rig.commanded.copy()
        frames = []
        for cmd in shifts.commands:
            if np.any(cmd != 0):
                rig.move(cmd)
            frames.append(rig.capture())
        rig.move_to(origin)
        img = reconstruct_sr(frames, shifts, sr_opts).image
    est = locate_marker(img, _radius_range(rig, scale))
    if est is None:
        dump = rig.dump_dir or Path.cwd()
        dump.mkdir(parents=True, exist_ok=True)
        path = write_pgm(dump / f"failed_{mode.value}_trial{rig.trial_index}_frame{rig.frames_acquired}.pgm",
                         np.clip(img, 0, 1))
        raise DetectionError(f"no marker found in {mode.value} observation; frame dumped to {path}")
    return Observation(img, est, scale, rig.frames_acquired - before)


def record_puncture(rig: SimulatedRig) -> np.ndarray:
    """Ground-truth needle tip on the puncture plane (mm), plus optional puncture scatter."""
    tip = rig.tip_position()
    if rig.config.puncture_noise_sigma > 0:
        tip = tip + rig.rng.normal(0.0, rig.config.puncture_noise_sigma, 2)
    return tip


@dataclass
class TrialRecord:
    mode: Mode
    punctures: list = field(default_factory=list)
    iterations_per_puncture: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    frames_per_puncture: list = field(default_factory=list)
    frames_acquired: int = 0
    jacobian_frames: int = 0
    wall_time: float = 0.0  # simulated acquisition time, s
    jacobian: np.ndarray | None = None

    @property
    def all_converged(self) -> bool:
        return all(self.converged)

    def rows(self):
        for i, (p, it, fr) in enumerate(zip(self.punctures, self.iterations_per_puncture, self.frames_per_puncture)):
            yield self.mode.value, i, repr(float(p[0])), repr(float(p[1])), it, fr


def estimate_rig_jacobian(rig: SimulatedRig) -> np.ndarray:
    """Three-pose forward-difference Jacobian from base-resolution images."""
    step = rig.config.jacobian_step_mm
    origin = rig.commanded.copy()
    radius = _radius_range(rig, 1)
    images = [rig.capture()]
    rig.move_to(origin + (step, 0.0))
    images.append(rig.capture())
    rig.move_to(origin + (0.0, step))
    images.append(rig.capture())
    rig.move_to(origin)
    return kin.estimate_image_jacobian(*images, step_mm=step, detector=lambda im: locate_marker(im, radius))


def run_positioning_trial(rig: SimulatedRig, mode, n_punctures: int = 14, sr_opts: SrOptions | None = None,
                          jac=None) -> TrialRecord:
    """Run one targeting trial and record the ground-truth puncture points.

    The first puncture defines the target (the marker position observed at the
    starting pose). Every later puncture starts from a random pose and iterates
    observe / correct until the pixel error, measured in the observation's own
    grid, drops below ``converge_px``.
    """
    mode = Mode.parse(mode)
    sr_opts = sr_opts or SrOptions()
    cfg = rig.config
    rec = TrialRecord(mode)

    start_frames = rig.frames_acquired
    if jac is None:
        jac = estimate_rig_jacobian(rig)
    rec.jacobian = np.asarray(jac, dtype=float)
    rec.jacobian_frames = rig.frames_acquired - start_frames
    scale = 1 if mode is Mode.BASE else sr_opts.upscale_factor
    jac_obs = scale * rec.jacobian

    home = rig.commanded.copy()
    n0 = rig.frames_acquired
    target = np.asarray(acquire_observation(rig, mode, sr_opts, rec.jacobian).estimate.center)
    rec.punctures.append(record_puncture(rig))
    rec.iterations_per_puncture.append(0)
    rec.converged.append(True)
    rec.frames_per_puncture.append(rig.frames_acquired - n0)

    for _ in range(1, n_punctures):
        n0 = rig.frames_acquired
        rig.move_to(home + rig.rng.uniform(-cfg.start_range_mm, cfg.start_range_mm, 2))
        obs = acquire_observation(rig, mode, sr_opts, rec.jacobian)
        iterations = 0
        error = target - np.asarray(obs.estimate.center)
        while np.hypot(*error) >= cfg.converge_px and iterations < cfg.max_iterations:
            rig.move(kin.command_from_pixel_error(error, jac_obs))
            iterations += 1
            obs = acquire_observation(rig, mode, sr_opts, rec.jacobian)
            error = target - np.asarray(obs.estimate.center)
        rec.converged.append(bool(np.hypot(*error) < cfg.converge_px))
        rec.punctures.append(record_puncture(rig))
        rec.iterations_per_puncture.append(iterations)
        rec.frames_per_puncture.append(rig.frames_acquired - n0)

    rec.frames_acquired = rig.frames_acquired - start_frames
    rec.wall_time = rec.frames_acquired * cfg.frame_time_min * 60.0
    return rec
