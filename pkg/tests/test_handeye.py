"""Hand-eye initialization against synthetically generated motion sets.

Oracle: pick a ground-truth extrinsic X, generate random lidar motions
L_k, and derive camera motions as C_k = X^-1 L_k X with translation norms
stripped.  The solver must recover X and the stripped norms.
"""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lidarcam.geometry import Quat, Rigid3, rotation_angle, rotation_error
from lidarcam.handeye import (
    DegenerateMotionError,
    HandEyeConfig,
    InsufficientPairsError,
    MotionPair,
    TranslationRankError,
    build_pairs,
    check_degeneracy,
    filter_pairs,
    init_calibrate,
    rotation_design_matrix,
    solve_rotation,
    solve_translation_scale,
)


def random_extrinsic(rng) -> Rigid3:
    axis = rng.normal(size=3)
    q = Quat.from_axis_angle(axis, rng.uniform(0.3, 2.0))
    return Rigid3(q, rng.uniform(-1.0, 1.0, size=3))


def make_motion_set(rng, n_poses=6, gt=None):
    """Random walk of poses plus the exactly consistent camera motions."""
    if gt is None:
        gt = random_extrinsic(rng)
    poses = [Rigid3.identity()]
    for _ in range(n_poses - 1):
        axis = rng.normal(size=3)
        q = Quat.from_axis_angle(axis,
                                 rng.uniform(math.radians(5), math.radians(25)))
        step = Rigid3(q, rng.uniform(-0.5, 0.5, size=3))
        poses.append(poses[-1].compose(step))
    lidar_motions = [poses[i].inverse().compose(poses[i + 1])
                     for i in range(n_poses - 1)]
    cam_motions = []
    true_scales = []
    for lm in lidar_motions:
        cm = gt.inverse().compose(lm).compose(gt)
        norm = float(np.linalg.norm(cm.translation))
        true_scales.append(norm)
        d = cm.translation / norm if norm > 1e-12 else np.zeros(3)
        cam_motions.append((cm.rotation, d))
    return gt, lidar_motions, cam_motions, true_scales


# --- pair construction ----------------------------------------------------


def test_build_pairs_emission_order():
    rng = np.random.default_rng(0)
    _, lidar, cam, _ = make_motion_set(rng, n_poses=4)
    pairs = build_pairs(lidar, cam)
    # 3 consecutive motions -> C(4,2) = 6 pairs, gap-major order
    assert [(p.pose_i, p.pose_j) for p in pairs] == [
        (0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)]
    assert [p.id for p in pairs] == list(range(6))
    assert [p.valid for p in pairs] == [True, True, True, False, False, False]


def test_build_pairs_composes_lidar_motion():
    rng = np.random.default_rng(1)
    _, lidar, cam, _ = make_motion_set(rng, n_poses=4)
    pairs = build_pairs(lidar, cam)
    span = lidar[0].compose(lidar[1]).compose(lidar[2])
    wide = [p for p in pairs if (p.pose_i, p.pose_j) == (0, 3)][0]
    assert np.allclose(wide.lidar_motion.matrix(), span.matrix(), atol=1e-9)


def test_build_pairs_composed_camera_rotation_is_conjugate():
    # Even for multi-step pairs the composed camera rotation must equal the
    # conjugated lidar rotation; only the translation direction is suspect.
    rng = np.random.default_rng(2)
    gt, lidar, cam, _ = make_motion_set(rng, n_poses=5)
    for p in build_pairs(lidar, cam):
        expect = gt.rotation.conjugate().multiply(
            p.lidar_motion.rotation).multiply(gt.rotation)
        assert rotation_error(p.cam_rotation, expect) < 1e-6


def test_build_pairs_length_mismatch():
    with pytest.raises(ValueError):
        build_pairs([Rigid3.identity()], [])


def test_motion_pair_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        MotionPair(0, 0, 1, Rigid3.identity(), Quat.identity(),
                   np.array([0.0, 0.0, 2.0]), True)


# --- rotation solve -------------------------------------------------------


def test_design_matrix_annihilates_true_rotation():
    rng = np.random.default_rng(3)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)  # 6 poses -> C(6,2) = 15 pairs
    a = rotation_design_matrix(pairs)
    assert a.shape == (4 * 15, 4)
    assert np.linalg.norm(a @ gt.rotation.as_array()) < 1e-9


def test_design_matrix_handles_sign_flipped_camera_quats():
    # Quaternion estimates carry an arbitrary global sign per motion; the
    # stacked system must not change its null space because of it.
    rng = np.random.default_rng(4)
    gt, lidar, cam, _ = make_motion_set(rng)
    flipped = [(q.negated() if i % 2 else q, d)
               for i, (q, d) in enumerate(cam)]
    a = rotation_design_matrix(build_pairs(lidar, flipped))
    assert np.linalg.norm(a @ gt.rotation.as_array()) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_rotation_exact_recovery(seed):
    rng = np.random.default_rng(seed)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    assume(not check_degeneracy(pairs).degenerate)
    q, residual = solve_rotation(pairs)
    assert residual < 1e-9
    # rotation_error has an acos precision floor near 1e-8; 1e-6 of the
    # normalizer (90 deg) is still under a ten-thousandth of a degree
    assert rotation_error(q, gt.rotation) < 1e-6
    # returned quaternion is canonical
    arr = q.as_array()
    assert arr[np.argmax(np.abs(arr))] >= 0.0


# --- degeneracy -----------------------------------------------------------


def pure_translation_pairs(n=4):
    pairs = []
    for k in range(n):
        lm = Rigid3(Quat.identity(), np.array([0.3 * (k + 1), 0.0, 0.1]))
        d = lm.translation / np.linalg.norm(lm.translation)
        pairs.append(MotionPair(k, k, k + 1, lm, Quat.identity(), d, True))
    return pairs


def single_axis_pairs(n=4):
    pairs = []
    for k in range(n):
        q = Quat.from_axis_angle([0, 1, 0], math.radians(10 + 3 * k))
        lm = Rigid3(q, np.array([0.2, 0.0, 0.3 * k + 0.1]))
        pairs.append(MotionPair(k, k, k + 1, lm, q,
                                np.array([1.0, 0.0, 0.0]), True))
    return pairs


def test_check_degeneracy_pure_translation():
    report = check_degeneracy(pure_translation_pairs())
    assert report.pure_translation
    assert not report.single_axis
    assert report.degenerate
    assert report.max_pair_angle < math.radians(1.0)


def test_check_degeneracy_single_axis():
    report = check_degeneracy(single_axis_pairs())
    assert report.single_axis
    assert not report.pure_translation
    assert report.max_pair_angle > math.radians(5)
    assert report.axis_spread < 0.1


def test_check_degeneracy_healthy_set():
    rng = np.random.default_rng(5)
    _, lidar, cam, _ = make_motion_set(rng)
    report = check_degeneracy(build_pairs(lidar, cam))
    assert not report.degenerate
    assert report.axis_spread > 0.1


def test_solve_rotation_raises_on_degenerate():
    with pytest.raises(DegenerateMotionError) as info:
        solve_rotation(pure_translation_pairs())
    assert info.value.report.pure_translation
    with pytest.raises(DegenerateMotionError) as info:
        solve_rotation(single_axis_pairs())
    assert info.value.report.single_axis


# --- filtration -----------------------------------------------------------


def corrupt_camera_rotation(pair: MotionPair, delta: float,
                            delta_perp: float = 0.0) -> MotionPair:
    """Compose extra error onto the camera rotation.

    ``delta`` acts about the pair's own rotation axis and shifts the
    rotation angle by exactly that amount (so the angle filter sees it);
    ``delta_perp`` acts about a perpendicular axis.  The perpendicular part
    matters for the no-filter tests: an own-axis error commutes with the
    pair's rotation, which leaves the true extrinsic an exact eigenvector
    of the corrupt block's normal matrix -- it raises the solver residual
    without deflecting the solution at all.
    """
    axis = pair.cam_rotation.rotation_axis()
    q = pair.cam_rotation.multiply(Quat.from_axis_angle(axis, delta))
    if delta_perp:
        helper = np.array([1.0, 0.0, 0.0])
        if abs(axis @ helper) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        perp = np.cross(axis, helper)
        q = q.multiply(Quat.from_axis_angle(perp, delta_perp))
    return MotionPair(pair.id, pair.pose_i, pair.pose_j, pair.lidar_motion,
                      q, pair.cam_translation_dir, pair.valid)


def test_own_axis_corruption_does_not_deflect_rotation():
    # Documents the commuting-error blind spot: a pure own-axis error is
    # invisible to the least-squares rotation (only the residual grows), so
    # detecting it is entirely the angle filter's job.
    rng = np.random.default_rng(40)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    clean_q, clean_res = solve_rotation(pairs)
    pairs[3] = corrupt_camera_rotation(pairs[3], math.radians(5))
    q, res = solve_rotation(pairs)
    assert rotation_error(q, clean_q) < 1e-6
    assert res > clean_res + 0.01


def test_filter_pairs_drops_angle_mismatch():
    rng = np.random.default_rng(6)
    _, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    pairs[2] = corrupt_camera_rotation(pairs[2], math.radians(5))
    kept = filter_pairs(pairs, angle_tolerance=math.radians(1))
    assert [p.id for p in kept] == [p.id for p in pairs if p.id != 2]


def test_filter_pairs_keeps_within_tolerance():
    rng = np.random.default_rng(7)
    _, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    pairs[0] = corrupt_camera_rotation(pairs[0], math.radians(0.5))
    kept = filter_pairs(pairs, angle_tolerance=math.radians(1))
    assert len(kept) == len(pairs)


# --- translation / scale --------------------------------------------------


def test_solve_translation_scale_exact():
    rng = np.random.default_rng(8)
    gt, lidar, cam, scales = make_motion_set(rng)
    pairs = [p for p in build_pairs(lidar, cam) if p.valid]
    t, got_scales, rms = solve_translation_scale(pairs, gt.rotation)
    assert rms < 1e-9
    assert np.allclose(t, gt.translation, atol=1e-8)
    assert np.allclose(got_scales, scales, atol=1e-8)
    assert np.all(np.asarray(got_scales) > 0)


def test_solve_translation_scale_rank_deficient():
    # Rotation-free motions zero out the (I - R) columns entirely.
    with pytest.raises(TranslationRankError):
        solve_translation_scale(pure_translation_pairs(), Quat.identity())


def test_solve_translation_scale_needs_two_pairs():
    rng = np.random.default_rng(9)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = [p for p in build_pairs(lidar, cam) if p.valid]
    with pytest.raises(InsufficientPairsError):
        solve_translation_scale(pairs[:1], gt.rotation)


def test_solve_translation_scale_rejects_directionless_pair():
    rng = np.random.default_rng(10)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = [p for p in build_pairs(lidar, cam) if p.valid]
    bad = MotionPair(99, 0, 1, pairs[0].lidar_motion, pairs[0].cam_rotation,
                     np.zeros(3), False)
    with pytest.raises(ValueError):
        solve_translation_scale([bad] + pairs[1:], gt.rotation)


# --- end-to-end initialization --------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_init_calibrate_exact_recovery(seed):
    rng = np.random.default_rng(seed)
    gt, lidar, cam, scales = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    assume(not check_degeneracy(pairs).degenerate)
    result = init_calibrate(pairs)
    assert rotation_error(result.extrinsic.rotation, gt.rotation) < 1e-6
    assert np.allclose(result.extrinsic.translation, gt.translation, atol=1e-7)
    assert result.rotation_residual < 1e-9
    assert result.translation_rms < 1e-8
    # translation stage keeps exactly the consecutive pairs
    assert result.retained_pair_ids == tuple(
        p.id for p in pairs if p.valid)
    assert np.allclose(result.scales, scales, atol=1e-7)


def test_init_calibrate_filters_corrupt_pair():
    rng = np.random.default_rng(11)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    pairs[1] = corrupt_camera_rotation(pairs[1], math.radians(4),
                                       delta_perp=math.radians(4))
    result = init_calibrate(pairs)
    assert 1 not in result.retained_pair_ids
    assert rotation_error(result.extrinsic.rotation, gt.rotation) < 1e-6
    assert np.allclose(result.extrinsic.translation, gt.translation, atol=1e-7)


def test_init_calibrate_no_filter_keeps_corrupt_pair():
    rng = np.random.default_rng(12)
    gt, lidar, cam, _ = make_motion_set(rng)
    pairs = build_pairs(lidar, cam)
    pairs[1] = corrupt_camera_rotation(pairs[1], math.radians(4),
                                       delta_perp=math.radians(4))
    cfg = HandEyeConfig(filter_enabled=False)
    result = init_calibrate(pairs, cfg)
    assert 1 in result.retained_pair_ids
    # the perpendicular error component degrades the estimate measurably
    assert rotation_error(result.extrinsic.rotation, gt.rotation) > 1e-4


def test_init_calibrate_insufficient_after_filter():
    rng = np.random.default_rng(13)
    _, lidar, cam, _ = make_motion_set(rng, n_poses=3)
    pairs = build_pairs(lidar, cam)
    pairs = [corrupt_camera_rotation(p, math.radians(5)) for p in pairs]
    with pytest.raises(InsufficientPairsError):
        init_calibrate(pairs)


def test_init_calibrate_degenerate_motion():
    with pytest.raises(DegenerateMotionError):
        init_calibrate(single_axis_pairs())
