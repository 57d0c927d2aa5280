"""Initial extrinsic estimation from paired lidar/camera ego-motions.

Each motion pair relates one lidar displacement L to the camera displacement
C observed over the same interval; the extrinsic X satisfies L X = X C.  The
rotation part is solved globally by stacking, per pair, the 4x4 block
``left_quat_matrix(q_lidar) - right_quat_matrix(q_cam)`` and taking the
right singular vector of the smallest singular value.  Translation and the
unknown per-pair camera translation scales are then solved jointly by linear
least squares:

    (I - rot(L_k)) t + lambda_k * R d_k = trans(L_k)

where d_k is the unit camera translation direction of pair k and R the
solved extrinsic rotation.

Camera rotations are usable for any pair composed from consecutive motions,
but camera translations are direction-only (monocular scale is unknown), so
composing them across more than one step would mix distinct unknown scales.
Pairs therefore carry a ``valid`` flag: rotation rows use every pair, while
translation rows use only consecutive (i, i+1) pairs.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Quat,
    Rigid3,
    left_quat_matrix,
    right_quat_matrix,
    rotation_angle,
)


class HandEyeError(Exception):
    """Base class for initialization failures."""


class DegenerateMotionError(HandEyeError):
    """Motion set cannot determine the extrinsic rotation."""

    def __init__(self, report: "DegeneracyReport"):
        self.report = report
        if report.pure_translation:
            kind = "pure translation (no usable rotation)"
        else:
            kind = "rotation axes do not span two directions"
        super().__init__(f"degenerate motion set: {kind}")


class InsufficientPairsError(HandEyeError):
    """Fewer usable motion pairs than the solver needs."""


class TranslationRankError(HandEyeError):
    """Translation/scale system is rank deficient."""


@dataclass(frozen=True)
class HandEyeConfig:
    """Thresholds for filtration and degeneracy screening (radians)."""

    angle_tolerance: float = math.radians(1.0)
    rotation_floor: float = math.radians(1.0)
    spread_floor: float = 0.1
    filter_enabled: bool = True


@dataclass(frozen=True)
class MotionPair:
    """One lidar/camera motion correspondence.

    ``lidar_motion`` is the full measured lidar displacement; the camera
    contributes a rotation and a unit translation direction (or the zero
    vector for a pure rotation).  ``valid`` marks pairs whose translation
    direction is physically meaningful, i.e. consecutive-pose pairs.
    """

    id: int
    pose_i: int
    pose_j: int
    lidar_motion: Rigid3
    cam_rotation: Quat
    cam_translation_dir: np.ndarray
    valid: bool

    def __post_init__(self):
        d = np.array(self.cam_translation_dir, dtype=float).reshape(3)
        n = float(np.linalg.norm(d))
        if n > 1e-9 and abs(n - 1.0) > 1e-9:
            raise ValueError("cam_translation_dir must be unit or zero")
        d.flags.writeable = False
        object.__setattr__(self, "cam_translation_dir", d)
        if abs(self.cam_rotation.norm_sq() - 1.0) > 1e-9:
            raise ValueError("cam_rotation must be a unit quaternion")


@dataclass(frozen=True)
class DegeneracyReport:
    pure_translation: bool
    single_axis: bool
    max_pair_angle: float
    axis_spread: float

    @property
    def degenerate(self) -> bool:
        return self.pure_translation or self.single_axis


@dataclass(frozen=True)
class InitResult:
    """Output of init_calibrate.

    ``retained_pair_ids`` lists the pairs whose translation rows entered the
    final solve (filtered, consecutive pairs); ``scales`` holds their
    recovered camera translation norms in the same order.
    """

    extrinsic: Rigid3
    scales: tuple[float, ...]
    retained_pair_ids: tuple[int, ...]
    rotation_residual: float
    translation_rms: float


def build_pairs(lidar_motions, cam_motions) -> list[MotionPair]:
    """Compose consecutive per-sensor motions into all C(N, 2) pose pairs.

    ``lidar_motions`` is a sequence of Rigid3 between consecutive poses;
    ``cam_motions`` is a matching sequence of (Quat, unit direction or zero).
    Pairs are emitted by increasing pose gap, then start pose, with ids
    following emission order.  Multi-step pairs renormalize the composed
    camera translation but are flagged valid=False, since composing
    direction-only translations across steps mixes unknown scales.
    """
    lidar_motions = list(lidar_motions)
    cam_motions = list(cam_motions)
    if len(lidar_motions) != len(cam_motions):
        raise ValueError("lidar and camera motion sequences differ in length")
    n_steps = len(lidar_motions)
    if n_steps == 0:
        raise ValueError("need at least one motion")

    pairs: list[MotionPair] = []
    pair_id = 0
    for gap in range(1, n_steps + 1):
        for i in range(0, n_steps - gap + 1):
            j = i + gap
            lidar = lidar_motions[i]
            cam_q, cam_d = cam_motions[i]
            cam_q = cam_q.normalized()
            cam_t = np.array(cam_d, dtype=float).reshape(3)
            for k in range(i + 1, j):
                step_q, step_d = cam_motions[k]
                lidar = lidar.compose(lidar_motions[k])
                # Accumulate the direction-only camera translation as if
                # each step had unit scale; the result is only a placeholder
                # and the pair is flagged invalid below.
                cam_t = cam_q.rotate(np.asarray(step_d, dtype=float)) + cam_t
                cam_q = cam_q.multiply(step_q).normalized()
            norm = float(np.linalg.norm(cam_t))
            direction = cam_t / norm if norm > 1e-9 else np.zeros(3)
            valid = gap == 1 and norm > 1e-9
            pairs.append(
                MotionPair(
                    id=pair_id,
                    pose_i=i,
                    pose_j=j,
                    lidar_motion=lidar,
                    cam_rotation=cam_q,
                    cam_translation_dir=direction,
                    valid=valid,
                )
            )
            pair_id += 1
    return pairs


def rotation_design_matrix(pairs) -> np.ndarray:
    """Stacked (4P x 4) system whose null space is the extrinsic rotation.

    Block k is left_quat_matrix(q_lidar_k) - right_quat_matrix(q_cam_k).
    The two motion quaternions of a pair share their scalar part up to
    measurement noise, so the camera quaternion is sign-aligned to the lidar
    one before stacking; without this, an inconsistent sign choice would
    flip the block's null space.
    """
    pairs = list(pairs)
    if not pairs:
        raise InsufficientPairsError("no motion pairs")
    blocks = []
    for p in pairs:
        ql = p.lidar_motion.rotation
        qc = p.cam_rotation
        if ql.w * qc.w < 0.0:
            qc = qc.negated()
        blocks.append(left_quat_matrix(ql) - right_quat_matrix(qc))
    return np.vstack(blocks)


def check_degeneracy(
    pairs,
    rotation_floor: float = math.radians(1.0),
    spread_floor: float = 0.1,
) -> DegeneracyReport:
    """Screen a pair set for the two unobservable-motion regimes.

    pure_translation: every lidar rotation angle sits below rotation_floor.
    single_axis: the unit rotation axes of the pairs above the floor have a
    second singular value below spread_floor (all axes near-collinear, which
    leaves one extrinsic rotation degree of freedom free).
    """
    pairs = list(pairs)
    if not pairs:
        raise InsufficientPairsError("no motion pairs")
    angles = [rotation_angle(p.lidar_motion.rotation) for p in pairs]
    max_angle = max(angles)
    pure_translation = all(a < rotation_floor for a in angles)

    axes = [
        p.lidar_motion.rotation.rotation_axis()
        for p, a in zip(pairs, angles)
        if a >= rotation_floor
    ]
    if len(axes) >= 2:
        s = np.linalg.svd(np.vstack(axes), compute_uv=False)
        axis_spread = float(s[1])
    else:
        axis_spread = 0.0
    single_axis = (not pure_translation) and axis_spread < spread_floor
    return DegeneracyReport(
        pure_translation=pure_translation,
        single_axis=single_axis,
        max_pair_angle=float(max_angle),
        axis_spread=axis_spread,
    )


def filter_pairs(pairs, angle_tolerance: float = math.radians(1.0)) -> list:
    """Keep pairs whose lidar/camera rotation angles agree within tolerance.

    The two rotations of a consistent pair are conjugate, hence share their
    angle exactly; a large angle gap means at least one motion estimate is
    unreliable, so the pair is dropped.  Order is preserved.
    """
    kept = []
    for p in pairs:
        da = abs(
            rotation_angle(p.lidar_motion.rotation)
            - rotation_angle(p.cam_rotation)
        )
        if da <= angle_tolerance:
            kept.append(p)
    return kept


def solve_rotation(
    pairs,
    rotation_floor: float = math.radians(1.0),
    spread_floor: float = 0.1,
) -> tuple[Quat, float]:
    """Extrinsic rotation via SVD of the stacked design matrix.

    Returns the canonical-signed unit quaternion and the smallest singular
    value (the rotation residual).  Raises DegenerateMotionError when the
    pair set cannot pin the rotation down.
    """
    pairs = list(pairs)
    if not pairs:
        raise InsufficientPairsError("no motion pairs")
    report = check_degeneracy(pairs, rotation_floor, spread_floor)
    if report.degenerate:
        raise DegenerateMotionError(report)
    a = rotation_design_matrix(pairs)
    _, s, vt = np.linalg.svd(a)
    q = Quat(*vt[-1]).normalized().canonical()
    return q, float(s[-1])


def solve_translation_scale(pairs, rotation: Quat):
    """Joint least squares for extrinsic translation and per-pair scales.

    Every supplied pair must carry a usable unit camera translation
    direction.  Unknowns are (t, lambda_0 .. lambda_{P-1}); pair k
    contributes rows (I - rot(L_k)) t + lambda_k R d_k = trans(L_k).
    Returns (t, scales, rms) where rms is the RMS of the per-pair residual
    norms.  Raises TranslationRankError when the stacked system cannot
    determine all unknowns.
    """
    pairs = list(pairs)
    n = len(pairs)
    if n < 2:
        raise InsufficientPairsError(
            "translation/scale solve needs at least two pairs (three poses)"
        )
    for p in pairs:
        if float(np.linalg.norm(p.cam_translation_dir)) <= 1e-9:
            raise ValueError(
                f"pair {p.id} has no camera translation direction"
            )
    r_mat = rotation.rotation_matrix()
    a = np.zeros((3 * n, 3 + n))
    b = np.zeros(3 * n)
    eye = np.eye(3)
    for k, p in enumerate(pairs):
        rows = slice(3 * k, 3 * k + 3)
        a[rows, 0:3] = eye - p.lidar_motion.rotation.rotation_matrix()
        a[rows, 3 + k] = r_mat @ p.cam_translation_dir
        b[rows] = p.lidar_motion.translation
    if np.linalg.matrix_rank(a) < 3 + n:
        raise TranslationRankError(
            "translation/scale system is rank deficient "
            "(motion set leaves translation unobservable)"
        )
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    t = x[:3]
    scales = x[3:]
    res = (a @ x - b).reshape(n, 3)
    rms = float(np.sqrt(np.mean(np.sum(res**2, axis=1))))
    return t, scales, rms


def init_calibrate(pairs, config: HandEyeConfig = HandEyeConfig()) -> InitResult:
    """Full initialization: filtration, degeneracy screen, rotation, translation.

    Rotation uses every retained pair; translation uses the retained
    consecutive pairs (valid translation directions).  Raises
    DegenerateMotionError / InsufficientPairsError / TranslationRankError on
    the corresponding failure.
    """
    pairs = list(pairs)
    if config.filter_enabled:
        working = filter_pairs(pairs, config.angle_tolerance)
    else:
        working = pairs
    if len(working) < 2:
        raise InsufficientPairsError(
            f"only {len(working)} pairs retained, need at least 2"
        )
    rotation, rot_residual = solve_rotation(
        working, config.rotation_floor, config.spread_floor
    )
    trans_pairs = [p for p in working if p.valid]
    if len(trans_pairs) < 2:
        raise InsufficientPairsError(
            f"only {len(trans_pairs)} translation-usable pairs retained, need 2"
        )
    t, scales, rms = solve_translation_scale(trans_pairs, rotation)
    return InitResult(
        extrinsic=Rigid3(rotation, t),
        scales=tuple(float(s) for s in scales),
        retained_pair_ids=tuple(p.id for p in trans_pairs),
        rotation_residual=rot_residual,
        translation_rms=rms,
    )
