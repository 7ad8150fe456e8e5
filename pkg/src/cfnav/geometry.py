"""Planar rigid transforms, unicycle kinematics and distance clamping.

Poses are (x, y, theta) with theta kept in (-pi, pi].  Scalar helpers work on
:class:`Pose2` objects; the ``*_batch`` helpers work on numpy arrays and are
what the training objectives use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DT = 0.33  # seconds per control tick


def wrap_angle(theta):
    """Map angles onto (-pi, pi]. Works on floats and arrays."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return compose(self, other)


@dataclass(frozen=True)
class Twist:
    v: float
    omega: float


@dataclass
class Track:
    """Uniformly sampled 2D positions of one agent."""

    points: np.ndarray
    dt: float = DT
    frame: str = "world"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(self.points) < 1:
            raise ValueError("track needs at least one point")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("track points must be finite")

    def __len__(self) -> int:
        return len(self.points)


def compose(a: Pose2, b: Pose2) -> Pose2:
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def relative(a: Pose2, b: Pose2) -> Pose2:
    """Pose of ``b`` expressed in the frame of ``a``."""
    return compose(inverse(a), b)


def to_frame(track: Track, frame: Pose2, frame_id: str = "local") -> Track:
    return Track(points_to_frame(track.points, frame.as_array()), dt=track.dt, frame=frame_id)


def from_frame(track: Track, frame: Pose2, frame_id: str = "world") -> Track:
    return Track(points_from_frame(track.points, frame.as_array()), dt=track.dt, frame=frame_id)


def _frame_parts(points, frame):
    points = np.asarray(points, dtype=float)
    frame = np.asarray(frame, dtype=float)
    c, s = np.cos(frame[..., 2]), np.sin(frame[..., 2])
    fx, fy = frame[..., 0], frame[..., 1]
    if points.ndim > frame.ndim:
        # several points per frame
        c, s, fx, fy = c[..., None], s[..., None], fx[..., None], fy[..., None]
    return points, c, s, fx, fy


def points_to_frame(points, frame) -> np.ndarray:
    """Express world points (..., [K,] 2) in frame(s) (..., 3)."""
    points, c, s, fx, fy = _frame_parts(points, frame)
    dx, dy = points[..., 0] - fx, points[..., 1] - fy
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def points_from_frame(points, frame) -> np.ndarray:
    points, c, s, fx, fy = _frame_parts(points, frame)
    px, py = points[..., 0], points[..., 1]
    return np.stack([fx + c * px - s * py, fy + s * px + c * py], axis=-1)


def poses_to_frame(poses, frame) -> np.ndarray:
    """Express world poses (..., 3) in a single frame (3,)."""
    poses = np.asarray(poses, dtype=float)
    xy = points_to_frame(poses[..., :2], frame)
    th = wrap_angle(poses[..., 2] - frame[2])
    return np.concatenate([xy, th[..., None]], axis=-1)


def integrate_unicycle(start: Pose2, twists: Sequence[Twist], dt: float = DT) -> list[Pose2]:
    """Forward-Euler unicycle rollout, one pose per twist."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, y, th = start.x, start.y, start.theta
    out = []
    for tw in twists:
        x += tw.v * math.cos(th) * dt
        y += tw.v * math.sin(th) * dt
        th = float(wrap_angle(th + tw.omega * dt))
        out.append(Pose2(x, y, th))
    return out


def clamp_distance(d, bound):
    if not bound > 0:
        raise ValueError("bound must be positive")
    return np.minimum(np.maximum(d, 0.0), bound)


# --- batched, differentiable rollout used by the objectives -----------------


@dataclass
class Rollout:
    """Cached forward pass of :func:`rollout_batch`."""

    v: np.ndarray
    w: np.ndarray
    dt: float
    theta_prev: np.ndarray  # heading used for each increment, (B, N)
    pos: np.ndarray  # (B, N, 2)
    theta: np.ndarray = field(repr=False)  # heading after each step, unwrapped (B, N)


def rollout_batch(twists: np.ndarray, dt: float = DT) -> Rollout:
    """Integrate twists (B, N, 2) from the identity pose.

    Headings are left unwrapped so the map stays smooth for gradients.
    """
    twists = np.asarray(twists, dtype=float)
    v, w = twists[..., 0], twists[..., 1]
    theta = np.cumsum(w * dt, axis=-1)
    theta_prev = np.concatenate([np.zeros_like(theta[..., :1]), theta[..., :-1]], axis=-1)
    step = np.stack([v * np.cos(theta_prev), v * np.sin(theta_prev)], axis=-1) * dt
    pos = np.cumsum(step, axis=-2)
    return Rollout(v, w, dt, theta_prev, pos, theta)


def rollout_backward(ro: Rollout, dpos: np.ndarray, dtheta: np.ndarray | None = None) -> np.ndarray:
    """Chain dL/dpos (B, N, 2) and dL/dtheta (B, N) back to dL/dtwists (B, N, 2)."""
    dt = ro.dt
    # position k collects increments 1..k, so increment k sees grads of steps >= k
    g = np.flip(np.cumsum(np.flip(dpos, -2), axis=-2), -2)
    c, s = np.cos(ro.theta_prev), np.sin(ro.theta_prev)
    dv = dt * (g[..., 0] * c + g[..., 1] * s)
    # heading feeding increment k is theta_{k-1}
    dth_prev = dt * ro.v * (-g[..., 0] * s + g[..., 1] * c)
    # theta_{k-1} depends on omega_1..omega_{k-1}; theta_k on omega_1..omega_k
    a = np.zeros_like(ro.v)
    a[..., :-1] += dth_prev[..., 1:]
    if dtheta is not None:
        a += dtheta
    dw = dt * np.flip(np.cumsum(np.flip(a, -1), axis=-1), -1)
    return np.stack([dv, dw], axis=-1)
