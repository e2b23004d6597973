"""Parallel-plane needle guide geometry and image-Jacobian servoing math."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

JACOBIAN_DET_MIN = 1e-6
TRAVEL_LIMIT_MM = 20.0


class DegenerateGeometryError(ValueError):
    pass


class SingularJacobianError(np.linalg.LinAlgError):
    pass


def stage_transform(z: float, theta: float = 0.0, tx: float = 0.0, ty: float = 0.0) -> np.ndarray:
    """Homogeneous transform of a stage frame whose x-y plane sits at height ``z``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([
        [c, -s, 0.0, tx],
        [s, c, 0.0, ty],
        [0.0, 0.0, 1.0, z],
        [0.0, 0.0, 0.0, 1.0],
    ])


@dataclass
class RobotState:
    top_ball: np.ndarray  # (x_t, y_t) in the top stage frame, mm
    bottom_ball: np.ndarray  # (x_b, y_b) in the bottom stage frame, mm
    T_top: np.ndarray = field(default_factory=lambda: stage_transform(0.0))
    T_bottom: np.ndarray = field(default_factory=lambda: stage_transform(-50.0))
    travel_limit: float = TRAVEL_LIMIT_MM

    def __post_init__(self):
        self.top_ball = np.asarray(self.top_ball, dtype=float).reshape(2)
        self.bottom_ball = np.asarray(self.bottom_ball, dtype=float).reshape(2)
        self.T_top = np.asarray(self.T_top, dtype=float)
        self.T_bottom = np.asarray(self.T_bottom, dtype=float)
        for name, T in (("T_top", self.T_top), ("T_bottom", self.T_bottom)):
            if T.shape != (4, 4):
                raise ValueError(f"{name} must be 4x4")
            if not np.allclose(T[2, :3], [0, 0, 1]) or not np.allclose(T[:2, 2], 0):
                raise ValueError(f"{name} must keep the stage plane parallel to the base x-y plane")
        if abs(self.z_top - self.z_bottom) <= 0:
            raise DegenerateGeometryError("stage planes must be separated in z")

    @property
    def z_top(self) -> float:
        return float(self.T_top[2, 3])

    @property
    def z_bottom(self) -> float:
        return float(self.T_bottom[2, 3])

    def within_travel(self) -> bool:
        return bool(np.all(np.abs(self.top_ball) <= self.travel_limit)
                    and np.all(np.abs(self.bottom_ball) <= self.travel_limit))

    def to_dict(self) -> dict:
        return {
            "top_ball": self.top_ball.tolist(),
            "bottom_ball": self.bottom_ball.tolist(),
            "T_top": self.T_top.tolist(),
            "T_bottom": self.T_bottom.tolist(),
            "travel_limit": self.travel_limit,
        }


@dataclass(frozen=True)
class NeedleLine:
    point: np.ndarray
    direction: np.ndarray


def _homogeneous(p2: np.ndarray) -> np.ndarray:
    return np.array([p2[0], p2[1], 0.0, 1.0])


def forward_ball_positions(state: RobotState) -> tuple[np.ndarray, np.ndarray]:
    """Ball joint positions in the base frame, ``(top, bottom)``."""
    top = state.T_top @ _homogeneous(state.top_ball)
    bottom = state.T_bottom @ _homogeneous(state.bottom_ball)
    return top[:3], bottom[:3]


def needle_line(upper_fiducial, lower_fiducial) -> NeedleLine:
    """Line through two fiducial centers, directed toward decreasing z."""
    a = np.asarray(upper_fiducial, dtype=float)
    b = np.asarray(lower_fiducial, dtype=float)
    d = b - a
    norm = np.linalg.norm(d)
    if norm <= 1e-6:
        raise DegenerateGeometryError(f"fiducials {a} and {b} coincide; the needle line is undefined")
    d = d / norm
    if d[2] > 0 or (d[2] == 0 and tuple(-d) > tuple(d)):
        d = -d
    return NeedleLine(a, d)


def intersect_line_plane(line: NeedleLine, plane_z: float) -> np.ndarray:
    """``(x, y)`` where the needle line crosses the plane ``z = plane_z``."""
    dz = line.direction[2]
    if abs(dz) <= 1e-9:
        raise DegenerateGeometryError("needle line is parallel to the stage planes; no intersection")
    t = (plane_z - line.point[2]) / dz
    return (line.point + t * line.direction)[:2]


def inverse_ball_positions(line: NeedleLine, state: RobotState) -> tuple[np.ndarray, np.ndarray]:
    """Stage-frame ball coordinates that place both joints on ``line``.

    The two stages are solved independently: intersect with each plane, then
    map the base-frame point back into the stage frame.
    """
    out = []
    for T, z in ((state.T_top, state.z_top), (state.T_bottom, state.z_bottom)):
        p = intersect_line_plane(line, z)
        local = np.linalg.solve(T, np.array([p[0], p[1], z, 1.0]))
        out.append(local[:2])
    return out[0], out[1]


def check_jacobian(jac) -> np.ndarray:
    """Validate a 2x2 image Jacobian (px per mm) and return it as an array."""
    J = np.asarray(jac, dtype=float)
    if J.shape != (2, 2) or not np.all(np.isfinite(J)):
        raise ValueError(f"image Jacobian must be a finite 2x2 matrix, got {J!r}")
    if abs(np.linalg.det(J)) <= JACOBIAN_DET_MIN:
        raise SingularJacobianError(
            f"image Jacobian is singular (|det| = {abs(np.linalg.det(J)):.3g}, condition number {np.linalg.cond(J):.3g})"
        )
    return J


def rotation2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def estimate_image_jacobian(center_img, plus_x_img, plus_y_img, step_mm: float = 15.0, detector=None) -> np.ndarray:
    """Forward-difference Jacobian from images at the origin and +x / +y stage steps.

    ``detector`` maps an image to a marker center ``(x, y)`` in pixels, or ``None``
    when nothing is found. Defaults to the strongest circle from
    :func:`srnav.detect.locate_marker`.
    """
    if step_mm <= 0:
        raise ValueError("step_mm must be positive")
    if detector is None:
        from .detect import locate_marker as detector
    centers = {}
    for pose, img in (("origin", center_img), ("+x", plus_x_img), ("+y", plus_y_img)):
        c = detector(img)
        if c is None:
            raise RuntimeError(f"marker detection failed in the {pose} pose image")
        centers[pose] = np.asarray(getattr(c, "center", c), dtype=float)
    col_x = (centers["+x"] - centers["origin"]) / step_mm
    col_y = (centers["+y"] - centers["origin"]) / step_mm
    return np.column_stack([col_x, col_y])


def command_from_pixel_error(error_px, jac) -> np.ndarray:
    """Stage displacement (mm) that cancels ``error_px`` under the linear model."""
    J = check_jacobian(jac)
    return np.linalg.solve(J, np.asarray(error_px, dtype=float))
