"""Calibration session files: one JSON document plus CSV cloud sidecars.

A session is everything a calibration run consumes — camera intrinsics,
motion pairs, per-pose observations — plus whatever a simulated origin
can add (ground-truth extrinsic, correspondence labels, corrupt-pair
ids) and whatever previous runs left behind (config snapshots, stage
results).  The document is UTF-8 JSON; point clouds live next to it as
``<stem>_clouds/pose_NNN.csv`` files, one ``x,y,z`` row per point,
referenced by relative path so a session directory can be moved as a
unit.  All numbers serialize at full precision (shortest round-trip repr
for JSON, 17 significant digits for the CSVs), so save -> load is exact
field for field.  Writes go through a temp file and an atomic rename.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import (
    CameraIntrinsics,
    _build,
    _plain_to_dict,
    rigid_to_dict,
)
from .geometry import Quat, Rigid3, Segment2D
from .handeye import MotionPair
from .lines import PointCloud

SCHEMA_VERSION = "1"


class SessionError(Exception):
    """Base class for session-file failures."""


class MalformedSessionError(SessionError):
    """The document is not valid JSON or lacks required structure."""


class UnsupportedSchemaError(SessionError):
    """The document declares a schema_version this code cannot read."""


class MissingCloudError(SessionError):
    """A referenced point-cloud file does not exist."""


@dataclass(frozen=True, eq=False)
class CalibrationSession:
    """In-memory session: inputs, optional ground truth, run leftovers.

    ``segments[i]`` and ``labels[i]`` are parallel per-pose tuples;
    a label is the scene-line index behind the segment or None for an
    injected outlier (all None for sessions without correspondence
    ground truth).  ``stage_results`` holds stage dictionaries only for
    stages a calibration run has actually produced — a freshly simulated
    session carries an empty dict.
    """

    intrinsics: CameraIntrinsics
    motion_pairs: tuple
    clouds: tuple
    segments: tuple
    labels: tuple
    schema_version: str = SCHEMA_VERSION
    ground_truth: Rigid3 | None = None
    corrupt_pair_ids: tuple = ()
    simulation_config: dict | None = None
    calibration_config: dict | None = None
    stage_results: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.clouds)
        if len(self.segments) != n or len(self.labels) != n:
            raise ValueError("clouds, segments, labels must be per-pose "
                             "parallel sequences")
        for segs, labs in zip(self.segments, self.labels):
            if len(segs) != len(labs):
                raise ValueError("each pose needs one label per segment")
        for p in self.motion_pairs:
            if not (0 <= p.pose_i < n and 0 <= p.pose_j < n):
                raise ValueError(
                    f"motion pair {p.id} references poses "
                    f"({p.pose_i}, {p.pose_j}) outside 0..{n - 1}")

    @property
    def n_poses(self) -> int:
        return len(self.clouds)


def session_from_sim_output(out, sim_config_dict: dict | None = None
                            ) -> CalibrationSession:
    """Wrap a simulator result as a saveable session."""
    return CalibrationSession(
        intrinsics=out.intrinsics,
        motion_pairs=tuple(out.motion_pairs),
        clouds=tuple(out.clouds),
        segments=tuple(tuple(s) for s in out.segments),
        labels=tuple(tuple(l) for l in out.labels),
        ground_truth=out.ground_truth_extrinsic,
        corrupt_pair_ids=tuple(out.corrupt_pair_ids),
        simulation_config=sim_config_dict,
    )


def _rigid_from_doc(d: dict) -> Rigid3:
    """Exact rigid-transform reconstruction — no renormalization, so the
    loaded quaternion is bit-identical to the saved one."""
    q = Quat(*[float(v) for v in d["rotation_wxyz"]])
    return Rigid3(q, [float(v) for v in d["translation"]])


def _pair_to_dict(p: MotionPair) -> dict:
    q = p.lidar_motion.rotation
    c = p.cam_rotation
    return {
        "id": p.id,
        "pose_i": p.pose_i,
        "pose_j": p.pose_j,
        "lidar_rotation_wxyz": [q.w, q.x, q.y, q.z],
        "lidar_translation": [float(v) for v in p.lidar_motion.translation],
        "cam_rotation_wxyz": [c.w, c.x, c.y, c.z],
        "cam_translation_dir": [float(v) for v in p.cam_translation_dir],
        "valid": p.valid,
    }


def _pair_from_dict(d: dict) -> MotionPair:
    lq = Quat(*[float(v) for v in d["lidar_rotation_wxyz"]])
    cq = Quat(*[float(v) for v in d["cam_rotation_wxyz"]])
    return MotionPair(
        id=int(d["id"]),
        pose_i=int(d["pose_i"]),
        pose_j=int(d["pose_j"]),
        lidar_motion=Rigid3(lq, [float(v) for v in d["lidar_translation"]]),
        cam_rotation=cq,
        cam_translation_dir=[float(v) for v in d["cam_translation_dir"]],
        valid=bool(d["valid"]),
    )


def _segment_to_dict(seg: Segment2D, label) -> dict:
    return {"p0": [seg.p0[0], seg.p0[1]], "p1": [seg.p1[0], seg.p1[1]],
            "label": label}


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _cloud_rel_path(session_path: Path, pose_index: int) -> str:
    return f"{session_path.stem}_clouds/pose_{pose_index:03d}.csv"


def save_session(session: CalibrationSession, path) -> None:
    """Write the session document and its cloud files under ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    observations = []
    for i, (cloud, segs, labs) in enumerate(
            zip(session.clouds, session.segments, session.labels)):
        rel = _cloud_rel_path(path, i)
        cloud_path = path.parent / rel
        cloud_path.parent.mkdir(parents=True, exist_ok=True)
        rows = "".join(f"{x:.17g},{y:.17g},{z:.17g}\n"
                       for x, y, z in np.asarray(cloud.points))
        atomic_write_text(cloud_path, rows)
        observations.append({
            "cloud": rel,
            "segments": [_segment_to_dict(s, l) for s, l in zip(segs, labs)],
        })

    doc = {
        "schema_version": session.schema_version,
        "intrinsics": _plain_to_dict(session.intrinsics),
        "n_poses": session.n_poses,
        "ground_truth_extrinsic": (
            rigid_to_dict(session.ground_truth)
            if session.ground_truth is not None else None),
        "corrupt_pair_ids": [int(i) for i in session.corrupt_pair_ids],
        "simulation_config": session.simulation_config,
        "calibration_config": session.calibration_config,
        "motion_pairs": [_pair_to_dict(p) for p in session.motion_pairs],
        "observations": observations,
        "stage_results": session.stage_results,
    }
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_cloud(path: Path) -> PointCloud:
    if not path.exists():
        raise MissingCloudError(f"referenced point-cloud file not found: "
                                f"{path}")
    text = path.read_text(encoding="utf-8")
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedSessionError(
                f"{path}:{lineno}: expected 'x,y,z', got {line!r}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise MalformedSessionError(f"{path}:{lineno}: {exc}") from exc
    pts = np.array(rows, dtype=float) if rows else np.empty((0, 3))
    return PointCloud(pts)


def load_session(path) -> CalibrationSession:
    """Read a session document; raises on schema/reference/shape problems."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedSessionError(f"cannot read session file: {exc}") \
            from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedSessionError(
            f"session file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedSessionError("session document must be a JSON object")

    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise UnsupportedSchemaError(
            f"unsupported schema_version {version!r} "
            f"(this build reads {SCHEMA_VERSION!r})")

    try:
        intrinsics = _build(CameraIntrinsics, doc["intrinsics"])
        pairs = tuple(_pair_from_dict(p) for p in doc["motion_pairs"])
        gt_doc = doc.get("ground_truth_extrinsic")
        gt = _rigid_from_doc(gt_doc) if gt_doc else None
        obs = doc["observations"]
        n_poses = int(doc["n_poses"])
        clouds = []
        segments = []
        labels = []
        for entry in obs:
            clouds.append(_load_cloud(path.parent / entry["cloud"]))
            segs = []
            labs = []
            for s in entry["segments"]:
                segs.append(Segment2D((s["p0"][0], s["p0"][1]),
                                      (s["p1"][0], s["p1"][1])))
                labs.append(s.get("label"))
            segments.append(tuple(segs))
            labels.append(tuple(labs))
        session = CalibrationSession(
            intrinsics=intrinsics,
            motion_pairs=pairs,
            clouds=tuple(clouds),
            segments=tuple(segments),
            labels=tuple(labels),
            ground_truth=gt,
            corrupt_pair_ids=tuple(int(i) for i in
                                   doc.get("corrupt_pair_ids", [])),
            simulation_config=doc.get("simulation_config"),
            calibration_config=doc.get("calibration_config"),
            stage_results=doc.get("stage_results", {}),
        )
    except SessionError:
        raise
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise MalformedSessionError(
            f"session document is missing or mis-typed: {exc!r}") from exc
    if session.n_poses != n_poses:
        raise MalformedSessionError(
            f"n_poses says {n_poses} but {session.n_poses} observations "
            "are present")
    return session
