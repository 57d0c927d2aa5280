"""Synthetic rooms, trajectories, and sensor measurements.

Everything downstream is validated against this module: it builds a room
of vertical poles and walls, walks a rig (lidar + rigidly mounted camera)
through it, and emits exactly what the calibration consumes — noisy
relative-motion pairs, per-pose lidar clouds in the sensor frame, and
projected 2D line segments with ground-truth association labels.

Determinism contract: every random draw comes from a generator seeded by
(seed, namespace[, pose_index]), so identical specs produce bit-identical
output and per-pose observation work could run in parallel without
changing results.

Noise model notes (all tunable through the spec dataclasses):

* Rotation noise is an axis-angle perturbation with per-component sigma;
  lidar translation noise is per-component Gaussian with a configurable
  multiplier on the vertical component (scanners resolve height worse
  than range).
* Camera translation-direction noise is azimuth-dominant: the dominant
  term spins the direction about the rig's vertical axis (the lidar +Y
  axis expressed in the camera frame), modeling heading-drift-dominated
  visual odometry, plus a small isotropic term.  Spinning about the rig
  vertical preserves the direction's vertical component in the lidar
  frame, which is what keeps the initialization's t_y honest.
* Gross corruption composes an own-axis component (shifts the rotation
  angle, so angle filtration can catch it) with a perpendicular component
  (deflects unfiltered estimates) totalling a configured angle range, and
  additionally swings the translation direction for consecutive pairs.
* A fraction of strongly tilted poses is inserted into default
  trajectories.  Their pair rotations have non-vertical axes, which is
  the only thing that makes the extrinsic's vertical translation
  observable to the initialization; their lidar clouds smear across grid
  cells and are rejected wholesale by the line extractor's back-checks
  (tilt >= 36 degrees guarantees the within-cell height span stays under
  the gate), so the refinement stage never sees them.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    Quat,
    Rigid3,
    Segment2D,
    VerticalLine3D,
    project_point,
    rotation_error,
)
from .handeye import build_pairs
from .lines import PointCloud
from .refine import error_ratio


class SceneError(ValueError):
    """Scene generation cannot satisfy the spec (e.g. pole packing)."""


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _rotvec_quat(rng: np.random.Generator, sigma: float) -> Quat:
    """Random small rotation with per-component tangent sigma."""
    if sigma <= 0.0:
        return Quat.identity()
    w = rng.normal(0.0, sigma, 3)
    theta = float(np.linalg.norm(w))
    if theta < 1e-15:
        return Quat.identity()
    return Quat.from_axis_angle(w / theta, theta)


def _perp_axis(axis, rng: np.random.Generator) -> np.ndarray:
    """A unit vector orthogonal to axis, uniformly spun around it."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    seed = np.array([1.0, 0.0, 0.0])
    if abs(float(n @ seed)) > 0.9:
        seed = np.array([0.0, 0.0, 1.0])
    m = seed - float(seed @ n) * n
    m /= np.linalg.norm(m)
    spin = Quat.from_axis_angle(n, float(rng.uniform(0.0, 2.0 * math.pi)))
    return spin.rotate(m)


def _yaw(angle: float) -> Quat:
    return Quat.from_axis_angle([0.0, 1.0, 0.0], angle)


def _heading_vec(psi: float) -> np.ndarray:
    # the camera mounted per the default extrinsic looks along the lidar
    # -Z axis, so "forward" for a pose with yaw psi is yaw(psi) @ (0,0,-1)
    return np.array([-math.sin(psi), 0.0, -math.cos(psi)])


# ---------------------------------------------------------------------------
# scene


def rectangle_walls(x_range, z_range) -> tuple:
    """Four wall segments closing the room boundary."""
    x0, x1 = x_range
    z0, z1 = z_range
    return (((x0, z0), (x1, z0)), ((x1, z0), (x1, z1)),
            ((x1, z1), (x0, z1)), ((x0, z1), (x0, z0)))


@dataclass(frozen=True)
class SceneSpec:
    """Room layout and sampling densities.

    Walls are floor-plane segments ((x0, z0), (x1, z1)) extruded to
    ``wall_height``; every wall-wall intersection contributes a vertical
    corner line to the ground truth, alongside the poles.
    """

    x_range: tuple = (0.0, 10.0)
    z_range: tuple = (0.0, 10.0)
    n_poles: int = 8
    wall_segments: tuple = rectangle_walls((0.0, 10.0), (0.0, 10.0))
    pole_height_range: tuple = (2.0, 3.0)
    wall_height: float = 2.5
    min_pole_separation: float = 1.0
    points_per_meter: float = 200.0
    wall_points_per_meter: float = 60.0
    floor_points_per_m2: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.x_range[1] > self.x_range[0]
                and self.z_range[1] > self.z_range[0]):
            raise ValueError("room extent must be non-degenerate")
        if self.n_poles < 0:
            raise ValueError("n_poles must be >= 0")
        if self.points_per_meter <= 0:
            raise ValueError("points_per_meter must be > 0")
        if self.wall_points_per_meter < 0 or self.floor_points_per_m2 < 0:
            raise ValueError("densities must be >= 0")
        if not (self.pole_height_range[1] >= self.pole_height_range[0] > 0):
            raise ValueError("pole_height_range must be positive and ordered")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be >= 0")
        object.__setattr__(
            self, "wall_segments",
            tuple((((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))))
                  for a, b in self.wall_segments))


@dataclass(frozen=True)
class Scene:
    """Generated room: ground-truth vertical lines plus wall geometry.

    ``lines[:n_poles]`` are the poles; the remainder are wall-corner
    lines.  All coordinates are world frame, vertical is +Y, floor at 0.
    """

    spec: SceneSpec
    lines: tuple
    n_poles: int

    @property
    def pole_lines(self) -> tuple:
        return self.lines[:self.n_poles]

    @property
    def corner_lines(self) -> tuple:
        return self.lines[self.n_poles:]


def _segment_intersections(segments) -> list:
    """Pairwise intersection points of floor-plane segments (incl. shared
    endpoints), deduplicated."""
    pts: list = []
    segs = [(np.array(a, dtype=float), np.array(b, dtype=float))
            for a, b in segments]
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            p, p2 = segs[i]
            q, q2 = segs[j]
            r = p2 - p
            s = q2 - q
            denom = float(r[0] * s[1] - r[1] * s[0])
            if abs(denom) < 1e-12:
                continue
            t = float((q - p)[0] * s[1] - (q - p)[1] * s[0]) / denom
            u = float((q - p)[0] * r[1] - (q - p)[1] * r[0]) / denom
            if -1e-9 <= t <= 1 + 1e-9 and -1e-9 <= u <= 1 + 1e-9:
                pts.append(p + t * r)
    out: list = []
    for c in pts:
        if not any(np.hypot(c[0] - o[0], c[1] - o[1]) < 1e-6 for o in out):
            out.append(c)
    return out


def generate_scene(spec: SceneSpec) -> Scene:
    """Place poles at random (respecting min separation) and record every
    vertical structure as a ground-truth line."""
    rng = _rng(spec.rng_seed, 0)
    x0, x1 = spec.x_range
    z0, z1 = spec.z_range
    inset = 0.75
    if x1 - x0 <= 2 * inset or z1 - z0 <= 2 * inset:
        raise SceneError("room too small for the pole placement inset")

    positions: list = []
    attempts = 0
    max_attempts = 300 * max(spec.n_poles, 1)
    while len(positions) < spec.n_poles:
        if attempts >= max_attempts:
            raise SceneError(
                f"cannot place {spec.n_poles} poles at min separation "
                f"{spec.min_pole_separation} in the given extent")
        attempts += 1
        cand = (rng.uniform(x0 + inset, x1 - inset),
                rng.uniform(z0 + inset, z1 - inset))
        if all(math.hypot(cand[0] - p[0], cand[1] - p[1])
               >= spec.min_pole_separation for p in positions):
            positions.append(cand)

    lines = []
    for (px, pz) in positions:
        h = float(rng.uniform(*spec.pole_height_range))
        lines.append(VerticalLine3D(x=px, z=pz, y_min=0.0, y_max=h,
                                    support=0))
    for (cx, cz) in _segment_intersections(spec.wall_segments):
        lines.append(VerticalLine3D(x=float(cx), z=float(cz), y_min=0.0,
                                    y_max=spec.wall_height, support=0))
    return Scene(spec=spec, lines=tuple(lines), n_poles=spec.n_poles)


# ---------------------------------------------------------------------------
# trajectory and motion pairs


_DEGENERATE_MODES = (None, "pure_translation", "single_axis")


@dataclass(frozen=True)
class TrajectorySpec:
    """Random-walk trajectory plus the relative-motion noise model."""

    n_poses: int = 12
    rotation_magnitude_range: tuple = (math.radians(8.0), math.radians(25.0))
    translation_magnitude_range: tuple = (0.2, 0.5)
    walk_bounds_x: tuple = (1.5, 8.5)
    walk_bounds_z: tuple = (1.5, 8.5)
    base_height: float = 1.2
    n_tilted: int = 3
    tilt_range: tuple = (math.radians(36.0), math.radians(42.0))
    degenerate_mode: str | None = None
    lidar_rot_noise: float = 0.0
    lidar_trans_noise: float = 0.0
    lidar_vertical_noise_multiplier: float = 2.0
    cam_rot_noise: float = 0.0
    cam_dir_azimuth_noise: float = 0.0
    cam_dir_elevation_noise: float = 0.0
    cam_corrupt_fraction: float = 0.0
    corrupt_rotation_range: tuple = (math.radians(3.0), math.radians(7.0))
    corrupt_direction_range: tuple = (math.radians(15.0), math.radians(45.0))
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_poses < 3:
            raise ValueError(
                f"n_poses must be >= 3, got {self.n_poses} (two poses give "
                "a single motion, which cannot constrain the extrinsic)")
        for name in ("lidar_rot_noise", "lidar_trans_noise", "cam_rot_noise",
                     "cam_dir_azimuth_noise", "cam_dir_elevation_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.cam_corrupt_fraction <= 1.0:
            raise ValueError("cam_corrupt_fraction must be in [0, 1]")
        if self.degenerate_mode not in _DEGENERATE_MODES:
            raise ValueError(
                f"degenerate_mode must be one of {_DEGENERATE_MODES}")
        if self.n_tilted < 0:
            raise ValueError("n_tilted must be >= 0")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be >= 0")


def _tilted_indices(n_poses: int, n_tilted: int) -> set:
    if n_tilted <= 0 or n_poses < 4:
        return set()
    picks = set()
    for k in range(n_tilted):
        idx = round((k + 1) * (n_poses - 1) / (n_tilted + 1))
        idx = min(max(idx, 1), n_poses - 2)
        picks.add(idx)
    return picks


def generate_trajectory(spec: TrajectorySpec):
    """Random yaw-walk through the room; returns (poses, step_motions).

    ``step_motions[k]`` is the exact relative motion taking pose k to
    pose k+1 (expressed in pose k's frame).  Default mode inserts
    ``n_tilted`` strongly tilted poses so rotation axes vary; degenerate
    modes suppress exactly the variation their name says.
    """
    rng = _rng(spec.rng_seed, 1)
    xlo, xhi = spec.walk_bounds_x
    zlo, zhi = spec.walk_bounds_z
    pos = np.array([rng.uniform(xlo + 0.25 * (xhi - xlo),
                                xhi - 0.25 * (xhi - xlo)),
                    spec.base_height,
                    rng.uniform(zlo + 0.25 * (zhi - zlo),
                                zhi - 0.25 * (zhi - zlo))])
    psi = float(rng.uniform(0.0, 2.0 * math.pi))
    psi0 = psi
    tilted = (set() if spec.degenerate_mode is not None
              else _tilted_indices(spec.n_poses, spec.n_tilted))

    def pose_rotation(index: int, heading: float) -> Quat:
        if spec.degenerate_mode == "pure_translation":
            return _yaw(psi0)
        q = _yaw(heading)
        if index in tilted:
            axis_angle = float(rng.uniform(0.0, 2.0 * math.pi))
            axis = np.array([math.cos(axis_angle), 0.0,
                             math.sin(axis_angle)])
            tilt = float(rng.uniform(*spec.tilt_range))
            q = q.multiply(Quat.from_axis_angle(axis, tilt))
        return q

    center = np.array([0.5 * (xlo + xhi), spec.base_height,
                       0.5 * (zlo + zhi)])

    def wrap(a: float) -> float:
        return math.atan2(math.sin(a), math.cos(a))

    poses = [Rigid3(pose_rotation(0, psi), pos.copy())]
    for k in range(1, spec.n_poses):
        turn = float(rng.uniform(*spec.rotation_magnitude_range))
        # steer the turn toward facing the room interior when the heading
        # has wandered off it, so the camera keeps the pole field in view;
        # otherwise pick the sign at random
        to_center = center - pos
        face_center = math.atan2(-to_center[0], -to_center[2])
        off = wrap(face_center - psi)
        if abs(off) > 0.45:
            turn *= math.copysign(1.0, off)
        else:
            turn *= 1.0 if rng.uniform() < 0.5 else -1.0
        psi = psi + turn
        step = float(rng.uniform(*spec.translation_magnitude_range))
        proposal = pos + step * _heading_vec(psi)
        guard = 0
        while not (xlo <= proposal[0] <= xhi and zlo <= proposal[2] <= zhi):
            to_center = center - pos
            psi = math.atan2(-to_center[0], -to_center[2]) + float(
                rng.uniform(-0.3, 0.3))
            proposal = pos + step * _heading_vec(psi)
            guard += 1
            if guard > 16:
                proposal = np.clip(proposal, [xlo, 0.0, zlo],
                                   [xhi, 10.0, zhi])
                break
        pos = proposal
        poses.append(Rigid3(pose_rotation(k, psi), pos.copy()))

    steps = [poses[k].inverse().compose(poses[k + 1])
             for k in range(spec.n_poses - 1)]
    return poses, steps


def make_motion_pairs(poses, extrinsic_gt: Rigid3, spec: TrajectorySpec):
    """Noisy measured motion pairs for a trajectory.

    Lidar steps get rotation/translation noise; camera steps are the
    conjugated motions with rotation noise and a normalized translation
    direction perturbed by azimuth-dominant noise.  A
    ``cam_corrupt_fraction`` sample of the built pairs then receives
    gross corruption.  Returns (pairs, corrupt_pair_ids).
    """
    poses = list(poses)
    x_inv = extrinsic_gt.inverse()
    rng = _rng(spec.rng_seed, 4)
    rig_vertical_in_cam = x_inv.rotation.rotate([0.0, 1.0, 0.0])

    lidar_steps = []
    cam_steps = []
    for k in range(len(poses) - 1):
        exact = poses[k].inverse().compose(poses[k + 1])
        noisy_rot = _rotvec_quat(rng, spec.lidar_rot_noise).multiply(
            exact.rotation).normalized()
        tn = rng.normal(0.0, 1.0, 3) * spec.lidar_trans_noise
        tn[1] *= spec.lidar_vertical_noise_multiplier
        lidar_steps.append(Rigid3(noisy_rot, exact.translation + tn))

        cam_exact = x_inv.compose(exact).compose(extrinsic_gt)
        cam_rot = _rotvec_quat(rng, spec.cam_rot_noise).multiply(
            cam_exact.rotation).normalized()
        d = np.array(cam_exact.translation, dtype=float)
        norm = float(np.linalg.norm(d))
        if norm <= 1e-12:
            direction = np.zeros(3)
        else:
            direction = d / norm
            if spec.cam_dir_elevation_noise > 0:
                direction = _rotvec_quat(
                    rng, spec.cam_dir_elevation_noise).rotate(direction)
            if spec.cam_dir_azimuth_noise > 0:
                alpha = float(rng.normal(0.0, spec.cam_dir_azimuth_noise))
                direction = Quat.from_axis_angle(
                    rig_vertical_in_cam, alpha).rotate(direction)
            direction /= np.linalg.norm(direction)
        cam_steps.append((cam_rot, direction))

    pairs = build_pairs(lidar_steps, cam_steps)

    n_corrupt = int(round(spec.cam_corrupt_fraction * len(pairs)))
    corrupt_ids: tuple = ()
    if n_corrupt > 0:
        chosen = sorted(rng.choice(len(pairs), size=n_corrupt,
                                   replace=False).tolist())
        for pid in chosen:
            pair = pairs[pid]
            total = float(rng.uniform(*spec.corrupt_rotation_range))
            split = float(rng.uniform(math.radians(20.0), math.radians(65.0)))
            own = total * math.cos(split)
            perp = total * math.sin(split)
            angle = 2.0 * math.acos(min(1.0, abs(pair.cam_rotation.w)))
            if angle > 1e-6:
                axis = pair.cam_rotation.rotation_axis()
            else:
                axis = np.array([0.0, 1.0, 0.0])
            q = Quat.from_axis_angle(axis, own).multiply(pair.cam_rotation)
            q = Quat.from_axis_angle(_perp_axis(axis, rng), perp).multiply(q)
            direction = pair.cam_translation_dir
            if float(np.linalg.norm(direction)) > 1e-9:
                swing = float(rng.uniform(*spec.corrupt_direction_range))
                direction = Quat.from_axis_angle(
                    _perp_axis(direction, rng), swing).rotate(direction)
                direction = direction / np.linalg.norm(direction)
            pairs[pid] = dataclasses.replace(
                pair, cam_rotation=q.normalized(),
                cam_translation_dir=direction)
        corrupt_ids = tuple(chosen)
    return pairs, corrupt_ids


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class ObservationSpec:
    """Per-pose sensing model: lidar point jitter, segment endpoint noise,
    detector dropout, and injected outlier segments.

    Outlier segments are placed as near-vertical edges offset sideways
    from a real line's projection (think doorframes and shadow edges next
    to a pole) — far enough to be wrong, close enough that association
    has to work to reject them.

    ``glitch_fraction`` models heavy-tailed detector localization: that
    fraction of kept real segments is shifted sideways by a uniform draw
    from ``glitch_px_range`` on top of the Gaussian endpoint noise, so
    endpoint errors are a contaminated Gaussian rather than a clean one.
    """

    point_jitter: float = 0.0
    noise_px: float = 0.0
    outliers_per_pose: int = 0
    dropout: float = 0.0
    outlier_offset_range: tuple = (4.0, 14.0)
    outlier_tilt: float = math.radians(10.0)
    glitch_fraction: float = 0.0
    glitch_px_range: tuple = (4.0, 10.0)
    min_segment_px: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.point_jitter < 0 or self.noise_px < 0:
            raise ValueError("noise magnitudes must be >= 0")
        if self.outliers_per_pose < 0:
            raise ValueError("outliers_per_pose must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.glitch_fraction <= 1.0:
            raise ValueError("glitch_fraction must be in [0, 1]")
        lo, hi = self.glitch_px_range
        if not 0.0 < lo <= hi:
            raise ValueError("glitch_px_range must be positive ascending")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be >= 0")


def observe_lidar(scene: Scene, pose: Rigid3, *, point_jitter: float = 0.0,
                  rng: np.random.Generator | None = None) -> PointCloud:
    """Sample the scene's poles, walls, and floor into the sensor frame.

    Pole counts are exactly ceil(height * points_per_meter) each, so a
    scene with zero wall/floor density yields a cloud of exactly the sum
    of pole samples.
    """
    if rng is None:
        rng = _rng(scene.spec.rng_seed, 2)
    spec = scene.spec
    chunks = []

    for line in scene.pole_lines:
        h = line.y_max - line.y_min
        n = int(math.ceil(h * spec.points_per_meter))
        ys = rng.uniform(line.y_min, line.y_max, n)
        xs = np.full(n, line.x)
        zs = np.full(n, line.z)
        if point_jitter > 0:
            xs = xs + rng.normal(0.0, point_jitter, n)
            zs = zs + rng.normal(0.0, point_jitter, n)
        chunks.append(np.column_stack([xs, ys, zs]))

    for (a, b) in spec.wall_segments:
        a = np.array(a, dtype=float)
        b = np.array(b, dtype=float)
        length = float(np.linalg.norm(b - a))
        n = int(math.ceil(length * spec.wall_points_per_meter))
        if n == 0 or length < 1e-12:
            continue
        s = rng.uniform(0.0, 1.0, n)
        xz = a[None, :] + s[:, None] * (b - a)[None, :]
        ys = rng.uniform(0.0, spec.wall_height, n)
        if point_jitter > 0:
            tang = (b - a) / length
            normal = np.array([-tang[1], tang[0]])
            xz = xz + rng.normal(0.0, point_jitter, n)[:, None] * normal
        chunks.append(np.column_stack([xz[:, 0], ys, xz[:, 1]]))

    area = ((spec.x_range[1] - spec.x_range[0])
            * (spec.z_range[1] - spec.z_range[0]))
    n_floor = int(math.ceil(area * spec.floor_points_per_m2))
    if n_floor > 0 and spec.floor_points_per_m2 > 0:
        xs = rng.uniform(*spec.x_range, n_floor)
        zs = rng.uniform(*spec.z_range, n_floor)
        ys = (rng.normal(0.0, point_jitter, n_floor) if point_jitter > 0
              else np.zeros(n_floor))
        chunks.append(np.column_stack([xs, ys, zs]))

    world = (np.vstack(chunks) if chunks
             else np.zeros((0, 3)))
    inv = pose.inverse()
    sensor = world @ inv.rotation.rotation_matrix().T + inv.translation
    return PointCloud(sensor)


def _clip_to_image(p0, p1, width: float, height: float):
    """Liang-Barsky clip of a pixel-space segment to [0,w]x[0,h]."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    t0, t1 = 0.0, 1.0
    # each border contributes a half-plane constraint p*t <= q
    for p, q in ((-d[0], p0[0]), (d[0], width - p0[0]),
                 (-d[1], p0[1]), (d[1], height - p0[1])):
        if abs(p) < 1e-15:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return None
    return p0 + t0 * d, p0 + t1 * d


def observe_camera(scene: Scene, cam_pose: Rigid3, K: CameraIntrinsics,
                   noise_px: float = 0.0, outlier_count: int = 0, *,
                   dropout: float = 0.0,
                   outlier_offset_range=(4.0, 14.0),
                   outlier_tilt: float = math.radians(10.0),
                   glitch_fraction: float = 0.0,
                   glitch_px_range=(4.0, 10.0),
                   min_segment_px: float = 10.0,
                   rng: np.random.Generator | None = None):
    """Project the scene's vertical lines into one camera image.

    ``cam_pose`` is the camera's pose in the world (lidar pose composed
    with the extrinsic).  Returns (segments, labels) where labels[i] is
    the scene line index behind segment i, or None for an injected
    outlier.  Lines behind the camera or clipped below ``min_segment_px``
    emit nothing; ``dropout`` simulates detector misses.  Exactly
    ``outlier_count`` outlier segments are emitted.
    """
    if rng is None:
        rng = _rng(scene.spec.rng_seed, 3)
    segments: list = []
    labels: list = []
    visible: list = []  # clean projected segments, for outlier placement

    for idx, line in enumerate(scene.lines):
        try:
            u0, v0, _ = project_point(K, cam_pose, line.point_at(line.y_min))
            u1, v1, _ = project_point(K, cam_pose, line.point_at(line.y_max))
        except BehindCameraError:
            continue
        clipped = _clip_to_image((u0, v0), (u1, v1), K.width, K.height)
        if clipped is None:
            continue
        q0, q1 = clipped
        if float(np.linalg.norm(q1 - q0)) < min_segment_px:
            continue
        visible.append((q0, q1))
        if dropout > 0 and rng.uniform() < dropout:
            continue
        if noise_px > 0:
            q0 = q0 + rng.normal(0.0, noise_px, 2)
            q1 = q1 + rng.normal(0.0, noise_px, 2)
        if glitch_fraction > 0 and rng.uniform() < glitch_fraction:
            # heavy-tail localization slip: slide the whole segment sideways
            d = q1 - q0
            n = np.array([-d[1], d[0]]) / max(float(np.linalg.norm(d)), 1e-9)
            shift = rng.uniform(*glitch_px_range) * (1.0 if rng.uniform() < 0.5
                                                     else -1.0)
            q0 = q0 + shift * n
            q1 = q1 + shift * n
        segments.append(Segment2D((float(q0[0]), float(q0[1])),
                                  (float(q1[0]), float(q1[1]))))
        labels.append(idx)

    for _ in range(outlier_count):
        seg = _place_outlier(visible, K, rng, outlier_offset_range,
                             outlier_tilt, min_segment_px)
        segments.append(seg)
        labels.append(None)
    return segments, labels


def _place_outlier(visible, K, rng, offset_range, tilt, min_segment_px):
    """A near-vertical spurious segment, preferably shadowing a real one."""
    for _ in range(50):
        if visible:
            base_idx = int(rng.integers(0, len(visible)))
            q0, q1 = visible[base_idx]
            direction = q1 - q0
            length = float(np.linalg.norm(direction))
            direction = direction / length
            normal = np.array([-direction[1], direction[0]])
            offset = float(rng.uniform(*offset_range))
            offset *= 1.0 if rng.uniform() < 0.5 else -1.0
            center = 0.5 * (q0 + q1) + offset * normal
            half = 0.5 * min(length, float(rng.uniform(60.0, 200.0)))
        else:
            center = np.array([rng.uniform(0.15 * K.width, 0.85 * K.width),
                               rng.uniform(0.3 * K.height, 0.7 * K.height)])
            direction = np.array([0.0, 1.0])
            half = float(rng.uniform(30.0, 100.0))
        theta = float(rng.uniform(-tilt, tilt))
        c, s = math.cos(theta), math.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        d = rot @ direction
        p0 = center - half * d
        p1 = center + half * d
        clipped = _clip_to_image(p0, p1, K.width, K.height)
        if clipped is None:
            continue
        q0, q1 = clipped
        if float(np.linalg.norm(q1 - q0)) < min_segment_px:
            continue
        return Segment2D((float(q0[0]), float(q0[1])),
                         (float(q1[0]), float(q1[1])))
    # deterministic fallback keeps the emitted count exact
    return Segment2D((0.5 * K.width, 0.2 * K.height),
                     (0.5 * K.width, 0.8 * K.height))


# ---------------------------------------------------------------------------
# whole sessions and evaluation


@dataclass(frozen=True)
class SimOutput:
    """Everything one simulated session produced, ground truth included."""

    ground_truth_extrinsic: Rigid3
    intrinsics: CameraIntrinsics
    scene: Scene
    poses: tuple
    step_motions: tuple
    motion_pairs: tuple
    corrupt_pair_ids: tuple
    clouds: tuple
    segments: tuple
    labels: tuple


def simulate_session(scene_spec: SceneSpec, traj_spec: TrajectorySpec,
                     obs_spec: ObservationSpec, K: CameraIntrinsics,
                     extrinsic: Rigid3) -> SimOutput:
    """Generate one full calibration session, bit-reproducible per seeds."""
    scene = generate_scene(scene_spec)
    poses, steps = generate_trajectory(traj_spec)
    pairs, corrupt_ids = make_motion_pairs(poses, extrinsic, traj_spec)

    clouds = []
    all_segments = []
    all_labels = []
    for i, pose in enumerate(poses):
        clouds.append(observe_lidar(
            scene, pose, point_jitter=obs_spec.point_jitter,
            rng=_rng(obs_spec.rng_seed, 2, i)))
        cam_pose = pose.compose(extrinsic)
        segs, labels = observe_camera(
            scene, cam_pose, K, obs_spec.noise_px,
            obs_spec.outliers_per_pose, dropout=obs_spec.dropout,
            outlier_offset_range=obs_spec.outlier_offset_range,
            outlier_tilt=obs_spec.outlier_tilt,
            glitch_fraction=obs_spec.glitch_fraction,
            glitch_px_range=obs_spec.glitch_px_range,
            min_segment_px=obs_spec.min_segment_px,
            rng=_rng(obs_spec.rng_seed, 3, i))
        all_segments.append(tuple(segs))
        all_labels.append(tuple(labels))

    return SimOutput(
        ground_truth_extrinsic=extrinsic,
        intrinsics=K,
        scene=scene,
        poses=tuple(poses),
        step_motions=tuple(steps),
        motion_pairs=tuple(pairs),
        corrupt_pair_ids=tuple(corrupt_ids),
        clouds=tuple(clouds),
        segments=tuple(all_segments),
        labels=tuple(all_labels),
    )


@dataclass(frozen=True)
class EvalMetrics:
    """Errors of an estimate against ground truth."""

    rotation_error: float        # normalized [0, 1] quaternion metric
    rotation_error_deg: float    # the same, scaled to degrees
    translation_error_m: float
    translation_ratio: float     # error / ||t_gt||


def evaluate(estimate: Rigid3, gt: Rigid3) -> EvalMetrics:
    rot = rotation_error(estimate.rotation, gt.rotation)
    err_m, ratio = error_ratio(estimate.translation, gt.translation)
    return EvalMetrics(
        rotation_error=rot,
        rotation_error_deg=rot * 90.0,
        translation_error_m=err_m,
        translation_ratio=ratio,
    )
