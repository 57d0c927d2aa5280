"""End-to-end calibration runs and their machine-readable reports.

``run_calibration`` drives the full chain — pair filtration, hand-eye
initialization, per-pose vertical-line extraction, 2D/3D association,
and IRLS translation refinement — and always records the four comparison
stages (unfiltered init, filtered init, OLS refinement, Huber
refinement) so a single run supports the whole accuracy story.  Ground
truth, when present, adds per-stage error metrics; it never influences
the estimate.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .config import CalibrationConfig, rigid_from_dict, rigid_to_dict
from .geometry import CameraIntrinsics, Rigid3
from .handeye import (
    DegenerateMotionError,
    HandEyeError,
    check_degeneracy,
    init_calibrate,
)
from .lines import detect_vertical_lines, project_to_floor
from .refine import (
    DegenerateGeometryError,
    InsufficientMatchesError,
    match_lines,
    refine_translation,
)
from .simulate import evaluate

STATUS_OK = "ok"
STATUS_DEGENERATE = "degenerate"
STATUS_INSUFFICIENT_MATCHES = "insufficient_matches"


@dataclass(frozen=True)
class Report:
    """Outcome of one calibration run.

    ``stages`` maps stage name -> stage dict (estimate plus stage
    diagnostics, plus ``metrics`` when ground truth was available — the
    key is absent otherwise); ``estimate`` is the stage selected by the
    run's flags.  ``status`` is "ok", "degenerate" (motion cannot
    constrain rotation), or "insufficient_matches" (refinement had
    nothing to work with; the initialization stages are still reported).
    ``ground_truth`` carries the reference extrinsic along so a report
    file is self-contained for later evaluation.
    """

    status: str
    estimate: Rigid3 | None
    stages: dict
    degeneracy: dict | None
    match_count: int | None
    retained_pair_count: int | None
    timing_s: float
    ground_truth: Rigid3 | None = None
    failure: str | None = None


def _metrics_dict(estimate: Rigid3, gt: Rigid3) -> dict:
    m = evaluate(estimate, gt)
    return {
        "rotation_error": m.rotation_error,
        "rotation_error_deg": m.rotation_error_deg,
        "translation_error_m": m.translation_error_m,
        "translation_ratio": m.translation_ratio,
    }


def _init_stage(pairs, config, filter_enabled: bool, gt) -> dict:
    res = init_calibrate(pairs, dataclasses.replace(
        config.handeye, filter_enabled=filter_enabled))
    stage = {
        "extrinsic": rigid_to_dict(res.extrinsic),
        "_extrinsic_obj": res.extrinsic,
        "retained_pair_ids": list(res.retained_pair_ids),
        "rotation_residual": res.rotation_residual,
        "translation_rms": res.translation_rms,
    }
    if gt is not None:
        stage["metrics"] = _metrics_dict(res.extrinsic, gt)
    return stage


def trim_matches(matches, exact_px: float = 1e-3,
                 dominance: float = 1e-3, min_consensus: int = 3) -> list:
    """Keep only the numerically-exact consensus when one exists.

    A candidate whose centroid sits off its physical line (a corner cell
    averages two wall faces, a pole cell may catch a stray floor return)
    still matches its own segment, just with a small structural bias.  On
    noisy data that bias drowns in the measurement noise and the rows are
    ordinary.  On exact data it is the *only* error left, and it would
    drag an otherwise exact refinement off ground truth — floating-point
    projection of a correct candidate lands within ~1e-9 px of its
    segment, biased candidates land 0.1 px and up, with nothing between.

    So: when at least ``min_consensus`` matches are numerically exact
    (below ``exact_px`` and a ``dominance`` fraction of the worst
    residual) the rest are bias by elimination and are dropped.  Any
    realistic noise level leaves no such consensus and the input passes
    through unchanged.
    """
    if not matches:
        return list(matches)
    r = np.array([abs(m.residual) for m in matches])
    threshold = dominance * min(exact_px / dominance, float(r.max()))
    exact = [m for m, ri in zip(matches, r) if ri <= threshold]
    if len(exact) >= min_consensus:
        return exact
    return list(matches)


def extract_candidates(clouds, config: CalibrationConfig):
    """Per-pose vertical-line candidates from raw clouds."""
    out = []
    for cloud in clouds:
        if len(cloud) == 0:
            out.append([])
            continue
        grid = project_to_floor(cloud, config.extraction.cell_size)
        out.append(detect_vertical_lines(grid, cloud, config.extraction))
    return out


def run_calibration(pairs, clouds, segments, K: CameraIntrinsics,
                    config: CalibrationConfig = CalibrationConfig(),
                    ground_truth: Rigid3 | None = None) -> Report:
    """Run every stage and assemble the report.

    ``pairs`` are MotionPair measurements; ``clouds``/``segments`` are
    per-pose lidar clouds and 2D segments (parallel sequences).  Flags
    live in ``config``: ``handeye.filter_enabled`` picks which init
    feeds refinement, ``refine.penalty_mode`` picks the headline
    refined estimate, ``refine_enabled=False`` stops after init.
    """
    t_start = time.perf_counter()
    pairs = list(pairs)
    gt = ground_truth
    stages: dict = {}

    degeneracy = check_degeneracy(pairs, config.handeye.rotation_floor,
                                  config.handeye.spread_floor)
    degeneracy_dict = {
        "pure_translation": degeneracy.pure_translation,
        "single_axis": degeneracy.single_axis,
        "max_pair_angle": degeneracy.max_pair_angle,
        "axis_spread": degeneracy.axis_spread,
    }

    try:
        stages["init_no_filter"] = _init_stage(pairs, config, False, gt)
        stages["init_filtered"] = _init_stage(pairs, config, True, gt)
    except DegenerateMotionError as exc:
        rep = exc.report
        return Report(
            status=STATUS_DEGENERATE,
            estimate=None,
            stages=_strip_private(stages),
            degeneracy={
                "pure_translation": rep.pure_translation,
                "single_axis": rep.single_axis,
                "max_pair_angle": rep.max_pair_angle,
                "axis_spread": rep.axis_spread,
            },
            match_count=None,
            retained_pair_count=None,
            timing_s=time.perf_counter() - t_start,
            ground_truth=gt,
            failure=str(exc),
        )
    except HandEyeError as exc:
        # not enough pairs / rank-deficient translation: initialization
        # failure, reported with the degeneracy diagnostics
        return Report(
            status=STATUS_DEGENERATE,
            estimate=None,
            stages=_strip_private(stages),
            degeneracy=degeneracy_dict,
            match_count=None,
            retained_pair_count=None,
            timing_s=time.perf_counter() - t_start,
            ground_truth=gt,
            failure=str(exc),
        )

    primary_init = ("init_filtered" if config.handeye.filter_enabled
                    else "init_no_filter")
    t0: Rigid3 = stages[primary_init]["_extrinsic_obj"]
    retained = len(stages[primary_init]["retained_pair_ids"])

    if not config.refine_enabled:
        return Report(
            status=STATUS_OK,
            estimate=t0,
            stages=_strip_private(stages),
            degeneracy=degeneracy_dict,
            match_count=None,
            retained_pair_count=retained,
            timing_s=time.perf_counter() - t_start,
            ground_truth=gt,
        )

    candidates = extract_candidates(clouds, config)
    matches = []
    for pose_id, (cands, segs) in enumerate(zip(candidates, segments)):
        if not cands or not segs:
            continue
        matches.extend(match_lines(
            cands, list(segs), t0, K,
            angle_tol=config.match.angle_tolerance,
            dist_tol=config.match.dist_tolerance,
            fov_margin=config.match.fov_margin,
            pose_id=pose_id))
    kept_matches = trim_matches(matches)

    refine_cfg = config.refine
    try:
        for mode in ("ols", "huber"):
            cfg = dataclasses.replace(refine_cfg, penalty_mode=mode)
            res = refine_translation(kept_matches, t0.rotation,
                                     t0.translation, K, cfg)
            est = Rigid3(t0.rotation, res.translation)
            stages[f"refined_{mode}"] = {
                "extrinsic": rigid_to_dict(est),
                "_extrinsic_obj": est,
                "iterations": res.iterations,
                "final_weighted_rms": res.final_weighted_rms,
                "inlier_fraction": res.inlier_fraction,
            }
            if gt is not None:
                stages[f"refined_{mode}"]["metrics"] = _metrics_dict(est, gt)
    except (InsufficientMatchesError, DegenerateGeometryError) as exc:
        return Report(
            status=STATUS_INSUFFICIENT_MATCHES,
            estimate=t0,
            stages=_strip_private(stages),
            degeneracy=degeneracy_dict,
            match_count=len(matches),
            retained_pair_count=retained,
            timing_s=time.perf_counter() - t_start,
            ground_truth=gt,
            failure=str(exc),
        )

    final = stages[f"refined_{refine_cfg.penalty_mode}"]["_extrinsic_obj"]
    return Report(
        status=STATUS_OK,
        estimate=final,
        stages=_strip_private(stages),
        degeneracy=degeneracy_dict,
        match_count=len(matches),
        retained_pair_count=retained,
        timing_s=time.perf_counter() - t_start,
        ground_truth=gt,
    )


def _strip_private(stages: dict) -> dict:
    return {name: {k: v for k, v in stage.items() if not k.startswith("_")}
            for name, stage in stages.items()}


def report_to_dict(report: Report) -> dict:
    return {
        "schema_version": "1",
        "status": report.status,
        "estimate": (rigid_to_dict(report.estimate)
                     if report.estimate is not None else None),
        "stages": report.stages,
        "degeneracy": report.degeneracy,
        "match_count": report.match_count,
        "retained_pair_count": report.retained_pair_count,
        "timing_s": report.timing_s,
        "ground_truth": (rigid_to_dict(report.ground_truth)
                         if report.ground_truth is not None else None),
        "failure": report.failure,
    }


def report_from_dict(d: dict) -> Report:
    est = d.get("estimate")
    gt = d.get("ground_truth")
    return Report(
        status=d["status"],
        estimate=rigid_from_dict(est) if est else None,
        stages=d.get("stages", {}),
        degeneracy=d.get("degeneracy"),
        match_count=d.get("match_count"),
        retained_pair_count=d.get("retained_pair_count"),
        timing_s=float(d.get("timing_s", 0.0)),
        ground_truth=rigid_from_dict(gt) if gt else None,
        failure=d.get("failure"),
    )
