"""Configuration bundles: presets, (de)serialization, dotted overrides.

Two bundles cover the toolkit: SimulationConfig describes how a synthetic
session is produced; CalibrationConfig describes how one is solved.  Both
round-trip through plain dicts (JSON-compatible) so runs can snapshot
their exact configuration, and both accept ``key.path=value`` overrides
from the command line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .geometry import CameraIntrinsics, Quat, Rigid3
from .handeye import HandEyeConfig
from .lines import LineExtractionConfig
from .refine import RefineConfig
from .simulate import ObservationSpec, SceneSpec, TrajectorySpec


class ConfigError(ValueError):
    """A configuration document or override could not be applied."""


@dataclass(frozen=True)
class MatchConfig:
    """Candidate/segment association thresholds (pixels, radians)."""

    angle_tolerance: float = math.radians(5.0)
    dist_tolerance: float = 25.0
    fov_margin: float = 5.0

    def __post_init__(self):
        if self.angle_tolerance <= 0 or self.dist_tolerance <= 0:
            raise ValueError("match tolerances must be positive")


@dataclass(frozen=True)
class CalibrationConfig:
    """Everything the calibrate command needs, stage by stage."""

    handeye: HandEyeConfig = field(default_factory=HandEyeConfig)
    extraction: LineExtractionConfig = field(
        default_factory=LineExtractionConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    refine_enabled: bool = True


@dataclass(frozen=True)
class SimulationConfig:
    """Everything the simulate command needs."""

    scene: SceneSpec = field(default_factory=SceneSpec)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    observation: ObservationSpec = field(default_factory=ObservationSpec)
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: default_intrinsics())
    extrinsic: Rigid3 = field(default_factory=lambda: default_extrinsic())


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                            width=640, height=480)


def default_extrinsic() -> Rigid3:
    """Camera mounted ahead/above the lidar, pitched 20 degrees down."""
    upright = Quat(0.0, 1.0, 0.0, 0.0)
    pitch = Quat.from_axis_angle([1.0, 0.0, 0.0], -math.radians(20.0))
    return Rigid3(pitch.multiply(upright).normalized(),
                  [0.4224, 0.6745, -0.4616])


def clean_sim_config(seed: int = 0) -> SimulationConfig:
    """Noise-free session: every stage should be exact on this."""
    return SimulationConfig(
        scene=SceneSpec(rng_seed=seed),
        trajectory=TrajectorySpec(rng_seed=seed),
        observation=ObservationSpec(rng_seed=seed),
    )


def noisy_sim_config(seed: int = 0) -> SimulationConfig:
    """Default realistic session: odometry noise, heading-drift-dominated
    camera directions, gross corrupt pairs, segment outliers/dropout."""
    return SimulationConfig(
        scene=SceneSpec(n_poles=24, rng_seed=seed),
        trajectory=TrajectorySpec(
            n_poses=20,
            n_tilted=8,
            lidar_rot_noise=5e-4,
            lidar_trans_noise=2e-3,
            cam_rot_noise=6e-4,
            cam_dir_azimuth_noise=0.06,
            cam_dir_elevation_noise=0.005,
            cam_corrupt_fraction=0.2,
            rng_seed=seed,
        ),
        observation=ObservationSpec(
            point_jitter=0.01,
            noise_px=0.3,
            outliers_per_pose=1,
            dropout=0.18,
            outlier_offset_range=(8.0, 20.0),
            outlier_tilt=math.radians(4.0),
            glitch_fraction=0.10,
            glitch_px_range=(8.0, 20.0),
            rng_seed=seed,
        ),
    )


_PRESETS = {"clean": clean_sim_config, "noisy": noisy_sim_config}


def preset_sim_config(name: str, seed: int = 0) -> SimulationConfig:
    try:
        return _PRESETS[name](seed)
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")


# ---------------------------------------------------------------------------
# dict round-trips


def rigid_to_dict(t: Rigid3) -> dict:
    q = t.rotation
    return {"rotation_wxyz": [q.w, q.x, q.y, q.z],
            "translation": [float(v) for v in t.translation]}


def rigid_from_dict(d) -> Rigid3:
    try:
        q = Quat(*[float(v) for v in d["rotation_wxyz"]])
        return Rigid3(q.normalized(), [float(v) for v in d["translation"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad rigid-transform document: {exc}") from exc


def _jsonify(v):
    if isinstance(v, tuple):
        return [_jsonify(e) for e in v]
    return v


def _plain_to_dict(obj) -> dict:
    """Dataclass -> dict with tuples widened to lists, at any depth, so the
    result is shape-identical to its own JSON round-trip."""
    return {f.name: _jsonify(getattr(obj, f.name)) for f in fields(obj)}


def _build(cls, d: dict, tuple_fields=(), nested_tuple_fields=()):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(
            f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = dict(d)
    for name in tuple_fields:
        if name in kwargs and kwargs[name] is not None:
            kwargs[name] = tuple(kwargs[name])
    for name in nested_tuple_fields:
        if name in kwargs and kwargs[name] is not None:
            kwargs[name] = tuple(tuple(e) for e in kwargs[name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__}: {exc}") from exc


def simulation_config_to_dict(cfg: SimulationConfig) -> dict:
    return {
        "scene": _plain_to_dict(cfg.scene),
        "trajectory": _plain_to_dict(cfg.trajectory),
        "observation": _plain_to_dict(cfg.observation),
        "intrinsics": _plain_to_dict(cfg.intrinsics),
        "extrinsic": rigid_to_dict(cfg.extrinsic),
    }


def simulation_config_from_dict(d: dict) -> SimulationConfig:
    if not isinstance(d, dict):
        raise ConfigError("simulation config must be a mapping")
    base = simulation_config_to_dict(SimulationConfig())
    merged = {k: {**base[k], **v} if isinstance(v, dict) else v
              for k, v in {**base, **d}.items()}
    scene = _build(SceneSpec, merged["scene"],
                   tuple_fields=("x_range", "z_range", "pole_height_range"),
                   nested_tuple_fields=("wall_segments",))
    traj = _build(TrajectorySpec, merged["trajectory"],
                  tuple_fields=("rotation_magnitude_range",
                                "translation_magnitude_range",
                                "walk_bounds_x", "walk_bounds_z",
                                "tilt_range", "corrupt_rotation_range",
                                "corrupt_direction_range"))
    obs = _build(ObservationSpec, merged["observation"],
                 tuple_fields=("outlier_offset_range", "glitch_px_range"))
    intr = _build(CameraIntrinsics, merged["intrinsics"])
    extr = rigid_from_dict(merged["extrinsic"])
    return SimulationConfig(scene=scene, trajectory=traj, observation=obs,
                            intrinsics=intr, extrinsic=extr)


def calibration_config_to_dict(cfg: CalibrationConfig) -> dict:
    return {
        "handeye": _plain_to_dict(cfg.handeye),
        "extraction": _plain_to_dict(cfg.extraction),
        "match": _plain_to_dict(cfg.match),
        "refine": _plain_to_dict(cfg.refine),
        "refine_enabled": cfg.refine_enabled,
    }


def calibration_config_from_dict(d: dict) -> CalibrationConfig:
    if not isinstance(d, dict):
        raise ConfigError("calibration config must be a mapping")
    base = calibration_config_to_dict(CalibrationConfig())
    merged = {k: {**base[k], **v} if isinstance(v, dict) else v
              for k, v in {**base, **d}.items()}
    unknown = set(merged) - set(base)
    if unknown:
        raise ConfigError(f"unknown calibration sections: {sorted(unknown)}")
    return CalibrationConfig(
        handeye=_build(HandEyeConfig, merged["handeye"]),
        extraction=_build(LineExtractionConfig, merged["extraction"]),
        match=_build(MatchConfig, merged["match"]),
        refine=_build(RefineConfig, merged["refine"]),
        refine_enabled=bool(merged["refine_enabled"]),
    )


# ---------------------------------------------------------------------------
# overrides


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"expected an integer, got {raw!r}") from exc
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"expected a number, got {raw!r}") from exc
    if isinstance(current, (list, tuple)):
        parts = [p for p in raw.split(",") if p != ""]
        if current and isinstance(current[0], (int, float)):
            return [float(p) for p in parts]
        return parts
    if current is None or isinstance(current, str):
        return raw
    raise ConfigError(f"cannot override field of type {type(current)}")


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.field=value`` strings to a config dict."""
    import copy

    out = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = out
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config path {path!r}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node[leaf] = _coerce(raw.strip(), node[leaf])
    return out
