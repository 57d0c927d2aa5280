"""Command line: ``simulate`` -> session file, ``calibrate`` -> report
file, ``evaluate`` -> metrics on stdout.

Exit codes are part of the interface: 0 success, 2 configuration or
input-file problem (argparse uses 2 for usage errors as well), 3 the
motion set is degenerate (a report with the degeneracy diagnosis is
still written), 4 refinement had too few usable line matches (the
initialization result is still reported).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import (
    CalibrationConfig,
    ConfigError,
    apply_overrides,
    calibration_config_from_dict,
    calibration_config_to_dict,
    preset_sim_config,
    rigid_from_dict,
    simulation_config_from_dict,
    simulation_config_to_dict,
)
from .pipeline import (
    STATUS_DEGENERATE,
    STATUS_INSUFFICIENT_MATCHES,
    report_from_dict,
    report_to_dict,
    run_calibration,
)
from .session import (
    SessionError,
    atomic_write_text,
    load_session,
    save_session,
    session_from_sim_output,
)
from .simulate import evaluate, simulate_session

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_INSUFFICIENT_MATCHES = 4

# Bare names accepted by --thresholds, mapped into the config tree.
# Dotted paths pass through untouched, so every threshold stays reachable
# even where bare names would collide (pair filtration vs. 2D/3D matching
# both have an angle tolerance).
_THRESHOLD_ALIASES = {
    "pair_angle_tolerance": "handeye.angle_tolerance",
    "angle_tolerance": "match.angle_tolerance",
    "dist_tolerance": "match.dist_tolerance",
    "fov_margin": "match.fov_margin",
    "huber_m": "refine.huber_m",
    "cell_size": "extraction.cell_size",
    "min_support": "extraction.min_support",
    "min_height_extent": "extraction.min_height_extent",
}


def _fail(message: str, code: int = EXIT_CONFIG) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _threshold_overrides(spec: str) -> list:
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigError(f"threshold {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        out.append(f"{_THRESHOLD_ALIASES.get(key, key)}={value.strip()}")
    return out


def cmd_simulate(args) -> int:
    try:
        if args.config is not None:
            try:
                doc = json.loads(Path(args.config).read_text("utf-8"))
            except OSError as exc:
                return _fail(f"cannot read config file: {exc}")
            except json.JSONDecodeError as exc:
                return _fail(f"config file is not valid JSON: {exc}")
        else:
            doc = simulation_config_to_dict(
                preset_sim_config(args.preset, args.seed or 0))
        if args.seed is not None:
            for section in ("scene", "trajectory", "observation"):
                doc.setdefault(section, {})["rng_seed"] = args.seed
        doc = apply_overrides(doc, args.set)
        cfg = simulation_config_from_dict(doc)
    except ConfigError as exc:
        return _fail(str(exc))

    out = simulate_session(cfg.scene, cfg.trajectory, cfg.observation,
                           cfg.intrinsics, cfg.extrinsic)
    session = session_from_sim_output(out, simulation_config_to_dict(cfg))
    save_session(session, args.out)
    n_segments = sum(len(s) for s in session.segments)
    print(f"wrote {args.out}: {session.n_poses} poses, "
          f"{len(session.motion_pairs)} motion pairs, "
          f"{n_segments} 2D segments")
    return EXIT_OK


def _stage_results_dict(report) -> dict:
    """Report content worth keeping in the session: everything except
    wall-clock timing (sessions stay byte-deterministic) and the ground
    truth (already a session field)."""
    d = report_to_dict(report)
    for key in ("timing_s", "ground_truth", "schema_version"):
        d.pop(key, None)
    return d


def cmd_calibrate(args) -> int:
    try:
        session = load_session(args.session)
    except SessionError as exc:
        return _fail(str(exc))

    try:
        doc = calibration_config_to_dict(CalibrationConfig())
        doc = apply_overrides(doc, args.set)
        if args.thresholds:
            doc = apply_overrides(doc, _threshold_overrides(args.thresholds))
        if args.no_filter:
            doc["handeye"]["filter_enabled"] = False
        if args.no_refine:
            doc["refine_enabled"] = False
        if args.penalty:
            doc["refine"]["penalty_mode"] = args.penalty
        config = calibration_config_from_dict(doc)
    except ConfigError as exc:
        return _fail(str(exc))

    report = run_calibration(session.motion_pairs, session.clouds,
                             session.segments, session.intrinsics,
                             config, ground_truth=session.ground_truth)

    out_path = args.out or str(Path(args.session).with_suffix("")) + \
        "_report.json"
    atomic_write_text(Path(out_path),
                      json.dumps(report_to_dict(report), indent=1,
                                 sort_keys=True) + "\n")

    updated = _session_with_results(session, config, report)
    save_session(updated, args.session)

    print(f"status: {report.status}")
    if report.retained_pair_count is not None:
        print(f"retained pairs: {report.retained_pair_count}"
              f"/{len(session.motion_pairs)}")
    if report.match_count is not None:
        print(f"line matches: {report.match_count}")
    for name, stage in report.stages.items():
        line = f"  {name}"
        metrics = stage.get("metrics")
        if metrics:
            line += (f": rotation {metrics['rotation_error_deg']:.4g} deg, "
                     f"translation {metrics['translation_error_m']:.4g} m "
                     f"({100 * metrics['translation_ratio']:.4g}%)")
        print(line)
    if report.failure:
        print(f"failure: {report.failure}")
    print(f"report: {out_path}")

    if report.status == STATUS_DEGENERATE:
        return EXIT_DEGENERATE
    if report.status == STATUS_INSUFFICIENT_MATCHES:
        return EXIT_INSUFFICIENT_MATCHES
    return EXIT_OK


def _session_with_results(session, config: CalibrationConfig, report):
    """Session with this run's config snapshot and stage results."""
    return dataclasses.replace(
        session,
        calibration_config=calibration_config_to_dict(config),
        stage_results=_stage_results_dict(report),
    )


def cmd_evaluate(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text("utf-8"))
    except OSError as exc:
        return _fail(f"cannot read report file: {exc}")
    except json.JSONDecodeError as exc:
        return _fail(f"report file is not valid JSON: {exc}")
    try:
        report = report_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        return _fail(f"malformed report: {exc!r}")

    gt = report.ground_truth
    if args.gt is not None:
        try:
            gt = rigid_from_dict(json.loads(Path(args.gt).read_text("utf-8")))
        except OSError as exc:
            return _fail(f"cannot read ground-truth file: {exc}")
        except (json.JSONDecodeError, ConfigError) as exc:
            return _fail(f"bad ground-truth file: {exc}")
    if gt is None:
        return _fail("report carries no ground truth; pass --gt FILE "
                     "with rotation_wxyz + translation")
    if report.estimate is None:
        return _fail("report carries no estimate to evaluate")

    m = evaluate(report.estimate, gt)
    payload = {
        "rotation_error_deg": m.rotation_error_deg,
        "translation_error_m": m.translation_error_m,
        "translation_ratio": m.translation_ratio,
        "stages": {},
    }
    for name, stage in (report.stages or {}).items():
        ext = stage.get("extrinsic")
        if not ext:
            continue
        sm = evaluate(rigid_from_dict(ext), gt)
        payload["stages"][name] = {
            "rotation_error_deg": sm.rotation_error_deg,
            "translation_error_m": sm.translation_error_m,
            "translation_ratio": sm.translation_ratio,
        }

    if args.format == "json":
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(f"rotation error: {m.rotation_error_deg:.6g} deg")
        print(f"translation error: {m.translation_error_m:.6g} m")
        print(f"ratio: {100 * m.translation_ratio:.6g}%")
        for name, sm in payload["stages"].items():
            print(f"  {name}: {sm['rotation_error_deg']:.6g} deg, "
                  f"{sm['translation_error_m']:.6g} m, "
                  f"{100 * sm['translation_ratio']:.6g}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarcam",
        description="Targetless lidar-camera extrinsic calibration "
                    "(motion-based initialization + vertical-line "
                    "translation refinement) with a synthetic-session "
                    "simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser(
        "simulate", help="generate a synthetic calibration session")
    p_sim.add_argument("--config", help="simulation config JSON file")
    p_sim.add_argument("--preset", default="noisy",
                       choices=("clean", "noisy"),
                       help="built-in config when no --config is given")
    p_sim.add_argument("--seed", type=int, default=None,
                       help="override every rng_seed in the config")
    p_sim.add_argument("--set", action="append", default=[],
                       metavar="KEY.PATH=VALUE",
                       help="override one config field (repeatable)")
    p_sim.add_argument("-o", "--out", required=True,
                       help="session file to write")
    p_sim.set_defaults(func=cmd_simulate)

    p_cal = sub.add_parser(
        "calibrate", help="run the calibration pipeline on a session")
    p_cal.add_argument("session", help="session file from simulate")
    p_cal.add_argument("-o", "--out", default=None,
                       help="report file (default: <session>_report.json)")
    p_cal.add_argument("--no-filter", action="store_true",
                       help="skip rotation-consistency pair filtration")
    p_cal.add_argument("--no-refine", action="store_true",
                       help="stop after hand-eye initialization")
    p_cal.add_argument("--penalty", choices=("ols", "huber"), default=None,
                       help="refinement penalty for the headline estimate")
    p_cal.add_argument("--thresholds", default=None,
                       metavar="NAME=VALUE[,NAME=VALUE...]",
                       help="threshold overrides; bare names "
                            f"({', '.join(sorted(_THRESHOLD_ALIASES))}) "
                            "or dotted config paths")
    p_cal.add_argument("--set", action="append", default=[],
                       metavar="KEY.PATH=VALUE",
                       help="override one config field (repeatable)")
    p_cal.set_defaults(func=cmd_calibrate)

    p_eval = sub.add_parser(
        "evaluate", help="print error metrics for a report")
    p_eval.add_argument("report", help="report file from calibrate")
    p_eval.add_argument("--gt", default=None,
                        help="ground-truth extrinsic JSON "
                             "(rotation_wxyz + translation); defaults to "
                             "the ground truth embedded in the report")
    p_eval.add_argument("--format", choices=("text", "json"),
                        default="text")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def entry(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(entry())
