"""Quaternion / rigid-transform algebra, pinhole projection and 2D line tools.

Conventions used throughout the package:

* quaternions are Hamilton quaternions stored scalar-first as (w, x, y, z);
* ``Rigid3`` maps points of its source frame into its target frame via
  ``p' = R p + t``; the extrinsic transform maps camera-frame points into
  the lidar frame, and the lidar frame doubles as the world frame;
* the world vertical axis is +Y;
* camera frame is the usual computer-vision one (x right, y down, z forward),
  pixel coordinates are continuous floats.
"""

import math
from dataclasses import dataclass

import numpy as np

# Tolerance for accepting a quaternion as unit in operation preconditions.
# Constructors that normalize land far below this; grossly non-unit inputs
# are rejected.
_UNIT_SQ_TOL = 1e-9


class BehindCameraError(ValueError):
    """Raised when a projected point has non-positive depth."""


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class Quat:
    """Hamilton quaternion, scalar-first (w, x, y, z)."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))

    @classmethod
    def identity(cls) -> "Quat":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quat":
        """Unit quaternion rotating by ``angle`` (radians) about ``axis``."""
        a = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(a))
        if n < 1e-12:
            raise ValueError("rotation axis must be non-zero")
        a = a / n
        h = 0.5 * angle
        s = math.sin(h)
        return cls(math.cos(h), s * a[0], s * a[1], s * a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def norm_sq(self) -> float:
        return self.w**2 + self.x**2 + self.y**2 + self.z**2

    def is_unit(self, tol: float = 1e-12) -> bool:
        return abs(self.norm_sq() - 1.0) <= tol

    def normalized(self) -> "Quat":
        n = self.norm()
        if n < 1e-300:
            raise ValueError("cannot normalize a zero-norm quaternion")
        return Quat(self.w / n, self.x / n, self.y / n, self.z / n)

    def canonical(self) -> "Quat":
        """Fix the sign ambiguity: largest-magnitude component non-negative."""
        comps = (self.w, self.x, self.y, self.z)
        i = max(range(4), key=lambda k: abs(comps[k]))
        if comps[i] < 0.0:
            return self.negated()
        return self

    def negated(self) -> "Quat":
        return Quat(-self.w, -self.x, -self.y, -self.z)

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def dot(self, other: "Quat") -> float:
        return (
            self.w * other.w
            + self.x * other.x
            + self.y * other.y
            + self.z * other.z
        )

    def multiply(self, other: "Quat") -> "Quat":
        """Hamilton product self * other (apply ``other`` first)."""
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotation_matrix(self) -> np.ndarray:
        """3x3 rotation matrix of this unit quaternion."""
        _require_unit(self, "quaternion")
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=float,
        )

    def rotate(self, v) -> np.ndarray:
        return self.rotation_matrix() @ np.asarray(v, dtype=float)

    def rotation_axis(self) -> np.ndarray:
        """Unit rotation axis, sign-fixed so the angle lies in [0, pi].

        Undefined for the identity rotation; callers are expected to have
        screened out near-zero rotation angles first.
        """
        v = np.array([self.x, self.y, self.z], dtype=float)
        if self.w < 0.0:
            v = -v
        n = float(np.linalg.norm(v))
        if n < 1e-12:
            raise ValueError("rotation axis undefined for a near-identity rotation")
        return v / n


def _require_unit(q: Quat, what: str) -> None:
    if abs(q.norm_sq() - 1.0) > _UNIT_SQ_TOL:
        raise ValueError(f"{what} must be a unit quaternion, |q| = {q.norm():.6g}")


def left_quat_matrix(q: Quat) -> np.ndarray:
    """4x4 matrix L(q) with L(q) @ p.as_array() == (q * p).as_array()."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ],
        dtype=float,
    )


def right_quat_matrix(q: Quat) -> np.ndarray:
    """4x4 matrix R(q) with R(q) @ p.as_array() == (p * q).as_array()."""
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ],
        dtype=float,
    )


def rotation_angle(q: Quat) -> float:
    """Rotation angle in [0, pi] of a unit quaternion."""
    _require_unit(q, "rotation")
    return 2.0 * math.acos(_clamp(abs(q.w), 0.0, 1.0))


def rotation_error(q1: Quat, q2: Quat) -> float:
    """Sign-insensitive rotation discrepancy, normalized to [0, 1].

    Defined as acos(|<q1, q2>|) / (pi / 2); 0 for identical rotations
    (either sign), 1 for a half-turn discrepancy.
    """
    _require_unit(q1, "rotation")
    _require_unit(q2, "rotation")
    d = _clamp(abs(q1.dot(q2)), 0.0, 1.0)
    return math.acos(d) / (math.pi / 2.0)


@dataclass(frozen=True)
class Rigid3:
    """Rigid transform p' = R p + t (rotation stored as a unit quaternion)."""

    rotation: Quat
    translation: np.ndarray

    def __post_init__(self):
        _require_unit(self.rotation, "Rigid3 rotation")
        t = np.array(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Rigid3":
        return cls(Quat.identity(), np.zeros(3))

    def compose(self, other: "Rigid3") -> "Rigid3":
        """self after other: (self.compose(other))(p) == self(other(p))."""
        q = self.rotation.multiply(other.rotation).normalized()
        t = self.rotation.rotate(other.translation) + self.translation
        return Rigid3(q, t)

    def inverse(self) -> "Rigid3":
        qinv = self.rotation.conjugate()
        return Rigid3(qinv, -qinv.rotate(self.translation))

    def apply(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.rotation_matrix()
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=float,
        )


def project_point(K: CameraIntrinsics, T: Rigid3, p) -> tuple[float, float, float]:
    """Project a lidar/world-frame point through extrinsic T into pixels.

    T maps camera-frame points into the lidar frame, so the camera-frame
    point is R^-1 (p - t).  Returns (u, v, depth); raises BehindCameraError
    when depth is not positive.
    """
    p = np.asarray(p, dtype=float)
    p_cam = T.rotation.rotation_matrix().T @ (p - T.translation)
    depth = float(p_cam[2])
    if depth <= 1e-9:
        raise BehindCameraError(f"point at depth {depth:.3g} is behind the camera")
    u = K.fx * p_cam[0] / depth + K.cx
    v = K.fy * p_cam[1] / depth + K.cy
    return float(u), float(v), depth


@dataclass(frozen=True)
class Line2D:
    """Homogeneous image line w0*u + w1*v + w2 = 0.

    When ``normalized`` is set, (w0, w1) is a unit vector so that evaluating
    the line at a pixel yields the signed distance in pixels, and the sign
    convention w0 > 0 (or w0 == 0 and w1 > 0) holds.
    """

    w0: float
    w1: float
    w2: float
    normalized: bool = False

    def __post_init__(self):
        if self.normalized:
            n = self.w0**2 + self.w1**2
            if abs(n - 1.0) > 1e-12:
                raise ValueError("normalized line must have w0^2 + w1^2 == 1")

    def evaluate(self, u: float, v: float) -> float:
        return self.w0 * u + self.w1 * v + self.w2


@dataclass(frozen=True)
class Segment2D:
    """2D image segment with float-pixel endpoints."""

    p0: tuple[float, float]
    p1: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "p0", (float(self.p0[0]), float(self.p0[1])))
        object.__setattr__(self, "p1", (float(self.p1[0]), float(self.p1[1])))
        if self.length() <= 1e-9:
            raise ValueError("degenerate segment: endpoints coincide")

    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    def direction(self) -> np.ndarray:
        d = np.array(
            [self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]], dtype=float
        )
        return d / np.linalg.norm(d)


def segment_to_line(s: Segment2D) -> Line2D:
    """Normalized homogeneous line through a segment's endpoints.

    (w0, w1) is the unit normal, so Line2D.evaluate gives signed pixel
    distance; the sign is fixed by w0 > 0, or w0 == 0 and w1 > 0.
    """
    du = s.p1[0] - s.p0[0]
    dv = s.p1[1] - s.p0[1]
    n = math.hypot(du, dv)
    if n <= 1e-9:
        raise ValueError("degenerate segment: endpoints coincide")
    w0 = dv / n
    w1 = -du / n
    w2 = -(w0 * s.p0[0] + w1 * s.p0[1])
    if w0 < -1e-12 or (w0 <= 1e-12 and w1 < 0.0):
        w0, w1, w2 = -w0, -w1, -w2
    return Line2D(w0, w1, w2, normalized=True)


@dataclass(frozen=True)
class VerticalLine3D:
    """Vertical 3D line candidate: floor position plus observed height span.

    Coordinates live in the frame of the point cloud that produced the
    candidate (the lidar frame of one pose); the line direction is the +Y
    axis of that frame.
    """

    x: float
    z: float
    y_min: float
    y_max: float
    support: int

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise ValueError("vertical line must have y_max > y_min")
        if self.support < 0:
            raise ValueError("support must be non-negative")

    def point_at(self, y: float) -> np.ndarray:
        return np.array([self.x, y, self.z], dtype=float)
