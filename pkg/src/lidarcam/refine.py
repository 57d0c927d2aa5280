"""3D/2D line association and translation refinement.

Matching projects each vertical-line candidate through the current
extrinsic and pairs it with the image segment that explains it best; the
residual is the algebraic point-line value w0*u + w1*v + w2, which for
normalized line coefficients is the signed distance in pixels.

Refinement then minimizes those residuals over the translation alone, the
rotation staying at its initialized value.  The residual

    r(t) = c . K R^-1 (p - t) / depth(t)

is linear-fractional in t; freezing each match's depth at the current
iterate makes it affine, so each IRLS step is a small weighted least
squares.  The Huber weight caps the influence of mismatched lines; ``ols``
mode (all weights 1) exists as the non-robust baseline.

A structural caveat drives the solver shape: an infinite vertical line is
invariant under vertical translation, so point-to-line residuals carry no
information about the world-vertical translation component — every
correctly matched image of a vertical 3D line passes through the common
vertical vanishing point, leaving the row space rank 2 no matter how the
camera is oriented.  What little energy shows up in the third singular
direction comes from pixel noise and mismatches, and chasing it is
actively harmful: mismatched lines are the only rows with any leverage
there, so both penalty modes would walk the estimate meters along it.

Each IRLS update therefore solves for the minimum-norm *step* with an
explicit observability floor: singular directions below
``observability_floor`` times the dominant singular value are treated as
unobservable and keep their initialized value.  In practice the refined
horizontal components improve on the initialization while the vertical
component rides through unchanged from the motion-based initializer, which
does observe it.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    Line2D,
    Quat,
    Rigid3,
    VerticalLine3D,
    project_point,
    segment_to_line,
)
from .lines import filter_segments_2d, fov_filter, vertical_direction_in_image


class RefineError(Exception):
    """Base class for matching/refinement failures."""


class InsufficientMatchesError(RefineError):
    """Not enough line matches to attempt refinement."""


class DegenerateGeometryError(RefineError):
    """Match geometry leaves a translation direction unobservable."""


@dataclass(frozen=True)
class LineMatch:
    """One accepted candidate/segment pairing.

    ``residual`` is the signed mean of the point-line residuals at the
    candidate's two sample heights under the extrinsic used for matching;
    its magnitude is bounded by the matcher's distance threshold.
    """

    candidate: VerticalLine3D
    line: Line2D
    residual: float
    pose_id: int


@dataclass(frozen=True)
class RefineConfig:
    """``observability_floor`` is the relative singular-value cutoff below
    which a translation direction is held at its initialized value instead
    of being estimated (see the module docstring for why this exists)."""

    huber_m: float = 3.0
    max_iterations: int = 50
    step_tolerance: float = 1e-8
    penalty_mode: str = "huber"
    observability_floor: float = 0.02

    def __post_init__(self):
        if self.huber_m <= 0:
            raise ValueError("huber_m must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.penalty_mode not in ("ols", "huber"):
            raise ValueError("penalty_mode must be 'ols' or 'huber'")
        if not 0.0 <= self.observability_floor < 1.0:
            raise ValueError("observability_floor must be in [0, 1)")


@dataclass(frozen=True)
class RefineResult:
    """``inlier_fraction`` is the share of residual rows whose Huber weight
    at the final iterate is >= 0.5 (i.e. |residual| <= 2M), reported in both
    penalty modes as a data-quality diagnostic.  ``objective_history`` holds
    the summed Huber penalty after each iteration."""

    translation: np.ndarray
    iterations: int
    final_weighted_rms: float
    inlier_fraction: float
    objective_history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)


def point_line_residual(line: Line2D, candidate: VerticalLine3D,
                        sample_height: float, T: Rigid3,
                        K: CameraIntrinsics) -> float:
    """Signed pixel distance between a projected line sample and a 2D line."""
    u, v, _ = project_point(K, T, candidate.point_at(sample_height))
    return line.evaluate(u, v)


def huber_weight(residual: float, m: float) -> float:
    """IRLS weight: 1 inside the threshold, M/|u| outside.

    Reweighting by M/|u| turns the quadratic penalty linear beyond M, which
    is what caps an outlier's pull on the solution.
    """
    if m <= 0:
        raise ValueError("huber threshold must be positive")
    a = abs(residual)
    return 1.0 if a <= m else m / a


def _huber_penalty(residual: float, m: float) -> float:
    a = abs(residual)
    if a <= m:
        return 0.5 * a * a
    return m * a - 0.5 * m * m


def match_lines(candidates, segments, T0: Rigid3, K: CameraIntrinsics,
                angle_tol: float = math.radians(5.0), dist_tol: float = 25.0,
                fov_margin: float = 5.0, pose_id: int = 0) -> list:
    """Associate 3D candidates with 2D segments under an initial extrinsic.

    Per candidate: reject if outside the camera FoV, predict the local
    image direction of the vertical line, keep only segments aligned with
    it, and score the survivors by the point-line residuals at the
    candidate's two sample heights.  A pairing is admissible when both
    samples sit within ``dist_tol`` pixels; admissible pairings are then
    committed greedily by ascending mean |residual| (ties by candidate
    order), each segment consumed at most once.
    """
    visible = fov_filter(candidates, K, T0, margin=fov_margin)
    seg_lines = [(i, seg, segment_to_line(seg)) for i, seg in
                 enumerate(segments)]

    admissible = []  # (score, cand_rank, seg_index, signed_mean, candidate, line)
    for rank, cand in enumerate(visible):
        try:
            expected = vertical_direction_in_image(K, T0, cand)
        except (BehindCameraError, ValueError):
            continue
        aligned = {id(s) for s in
                   filter_segments_2d([s for _, s, _ in seg_lines],
                                      expected, angle_tol)}
        for seg_idx, seg, line in seg_lines:
            if id(seg) not in aligned:
                continue
            try:
                r0 = point_line_residual(line, cand, cand.y_min, T0, K)
                r1 = point_line_residual(line, cand, cand.y_max, T0, K)
            except BehindCameraError:
                continue
            if abs(r0) <= dist_tol and abs(r1) <= dist_tol:
                score = 0.5 * (abs(r0) + abs(r1))
                admissible.append(
                    (score, rank, seg_idx, 0.5 * (r0 + r1), cand, line))

    admissible.sort(key=lambda a: (a[0], a[1], a[2]))
    matches = []
    used_candidates: set = set()
    used_segments: set = set()
    for score, rank, seg_idx, signed, cand, line in admissible:
        if rank in used_candidates or seg_idx in used_segments:
            continue
        used_candidates.add(rank)
        used_segments.add(seg_idx)
        matches.append(LineMatch(candidate=cand, line=line,
                                 residual=signed, pose_id=pose_id))
    return matches


def linearized_rows(matches, rotation: Quat, K: CameraIntrinsics,
                    t: np.ndarray):
    """Affine residual model at frozen depths: rows (A, b) with r = A t - b.

    Each match contributes one row per sample height.  With the depth d
    frozen at the current translation, the residual c.KR^-1(p - t)/d
    becomes b_row - a_row . t where a_row = (c.M)/d and b_row = (c.M p)/d,
    M = K R^-1.  Also returns the exact residuals at t (equal to
    b - A t by construction, returned for weighting convenience).
    """
    t = np.asarray(t, dtype=float).reshape(3)
    r_inv = rotation.rotation_matrix().T
    m = K.matrix() @ r_inv
    rows_a = []
    rows_b = []
    for match in matches:
        c = np.array([match.line.w0, match.line.w1, match.line.w2])
        cm = c @ m
        for y in (match.candidate.y_min, match.candidate.y_max):
            p = match.candidate.point_at(y)
            d = float(r_inv[2] @ (p - t))
            if d <= 1e-9:
                raise DegenerateGeometryError(
                    "a matched line sample fell behind the camera during "
                    "refinement")
            rows_a.append(cm / d)
            rows_b.append(float(cm @ p) / d)
    a = np.vstack(rows_a)
    b = np.asarray(rows_b)
    return a, b, b - a @ t


def _samples_in_front(matches, rotation: Quat, t):
    """Matches whose both sample points have positive depth at t."""
    r_inv = rotation.rotation_matrix().T
    keep = []
    for match in matches:
        d0 = float(r_inv[2] @ (match.candidate.point_at(match.candidate.y_min) - t))
        d1 = float(r_inv[2] @ (match.candidate.point_at(match.candidate.y_max) - t))
        if d0 > 1e-9 and d1 > 1e-9:
            keep.append(match)
    return keep


def refine_translation(matches, rotation: Quat, t0, K: CameraIntrinsics,
                       config: RefineConfig = RefineConfig()) -> RefineResult:
    """IRLS translation refinement at fixed rotation.

    Iterates: freeze depths at the current t, assemble the affine residual
    rows, weight them (Huber on the current residuals, or uniformly in ols
    mode), solve the weighted least squares for the minimum-norm *step*,
    apply it.  Translation directions the rows do not constrain keep their
    initialized value (see the module docstring).  Stops when the step norm
    drops below ``step_tolerance`` or on the iteration cap; hitting the cap
    is reported via ``iterations == max_iterations``, not an error.

    Matches whose sample points fall behind the camera at the current
    estimate are left out of that iteration's solve (they re-enter if a
    later step brings them back in front); the refinement only fails when
    fewer than three matches remain usable.

    Raises DegenerateGeometryError when fewer than two translation
    directions are observable at all (e.g. a single line matched several
    times over).
    """
    matches = list(matches)
    if len(matches) == 0:
        raise InsufficientMatchesError("no line matches to refine from")
    if len(matches) < 3:
        raise InsufficientMatchesError(
            f"{len(matches)} matches is not enough to pin down translation")
    t = np.array(t0, dtype=float).reshape(3)
    floor = max(config.observability_floor, 1e-12)

    def active_rows(t_now):
        active = _samples_in_front(matches, rotation, t_now)
        if len(active) < 3:
            raise InsufficientMatchesError(
                "fewer than three matched lines remain in front of the "
                "camera during refinement")
        return linearized_rows(active, rotation, K, t_now)

    a0, _, _ = active_rows(t)
    sv = np.linalg.svd(a0, compute_uv=False)
    if sv[1] < floor * sv[0]:
        raise DegenerateGeometryError(
            "line geometry observes fewer than two translation directions "
            f"(singular values {sv})")

    history = []
    residuals = None
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        a, b, residuals = active_rows(t)
        if config.penalty_mode == "huber":
            weights = np.array([huber_weight(r, config.huber_m)
                                for r in residuals])
        else:
            weights = np.ones_like(residuals)
        sw = np.sqrt(weights)
        delta, _, _, _ = np.linalg.lstsq(a * sw[:, None], residuals * sw,
                                         rcond=floor)
        step = float(np.linalg.norm(delta))
        t = t + delta
        _, _, residuals = active_rows(t)
        history.append(float(sum(_huber_penalty(r, config.huber_m)
                                 for r in residuals)))
        if step < config.step_tolerance:
            break

    if config.penalty_mode == "huber":
        weights = np.array([huber_weight(r, config.huber_m)
                            for r in residuals])
    else:
        weights = np.ones_like(residuals)
    wrms = float(np.sqrt(np.sum(weights * residuals**2) / np.sum(weights)))
    final_huber_w = np.array([huber_weight(r, config.huber_m)
                              for r in residuals])
    inlier_fraction = float(np.mean(final_huber_w >= 0.5))
    return RefineResult(
        translation=t,
        iterations=iterations,
        final_weighted_rms=wrms,
        inlier_fraction=inlier_fraction,
        objective_history=tuple(history),
    )


def error_ratio(t_est, t_gt) -> tuple[float, float]:
    """Absolute translation error and its ratio to the ground-truth norm."""
    t_est = np.asarray(t_est, dtype=float).reshape(3)
    t_gt = np.asarray(t_gt, dtype=float).reshape(3)
    gt_norm = float(np.linalg.norm(t_gt))
    if gt_norm <= 0.0:
        raise ValueError("ground-truth translation must be non-zero")
    err = float(np.linalg.norm(t_est - t_gt))
    return err, err / gt_norm
