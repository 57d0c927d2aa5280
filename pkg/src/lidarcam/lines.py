"""Vertical 3D line candidates from point clouds, plus matching pre-filters.

Pole-like structure (posts, door frames, wall corners) shows up as small
high-count blobs when a cloud is projected onto the floor plane, so
detection happens on a 2D occupancy-count grid over (x, z):

  * ``peaks``: isolated local maxima of the count grid — free-standing
    poles.
  * ``segment-endpoints``: endpoints of straight high-count runs — wall
    corners and door frames.  Runs are found by an angular sweep: occupied
    cells are projected onto a handful of directions and chained into
    collinear sequences.

Every candidate cell is then back-checked against the raw cloud: enough
supporting points, enough vertical extent, and the (x, z) position refined
to the support centroid.  False candidates are tolerated by design — the
2D/3D matching stage discards what it cannot explain.

The filters at the bottom (`fov_filter`, `filter_segments_2d`,
`vertical_direction_in_image`) prepare candidates and detected image
segments for that matching stage.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    BehindCameraError,
    CameraIntrinsics,
    Rigid3,
    VerticalLine3D,
    project_point,
)

# Run detector internals.  The sweep quantizes run directions to 8 angles;
# chaining is gated locally (next cell vs. previous cell) so runs up to
# ~11 deg off a sweep direction still chain while parallel structures a
# cell apart stay separate.
_SWEEP_ANGLE_COUNT = 8
_RUN_GAP_CELLS = 1.9        # max along-run spacing, in cells
_RUN_LATERAL_CELLS = 0.75   # max across-run offset, in cells
_MIN_RUN_CELLS = 5
# A peak must dominate its 8-neighborhood: strictly higher than every
# neighbor and at least twice the neighbor count, so cells inside walls
# (whose neighbors are comparably full) do not qualify.
_PEAK_ISOLATION = 0.5

_DETECTOR_MODES = ("segment-endpoints", "peaks", "both")


@dataclass(frozen=True)
class PointCloud:
    """Points in the lidar frame, meters, shape (N, 3)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class IntensityGrid:
    """Floor-projection count grid over (x, z).

    ``counts[ix, iz]`` is the number of points binned into the cell whose
    lower corner is ``origin + (ix, iz) * cell_size``.
    """

    origin: tuple[float, float]
    cell_size: float
    counts: np.ndarray

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        c = np.asarray(self.counts)
        if c.ndim != 2 or np.any(c < 0):
            raise ValueError("counts must be a 2D non-negative array")
        c = c.astype(np.int64)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "origin",
                           (float(self.origin[0]), float(self.origin[1])))

    def cell_center(self, ix: int, iz: int) -> tuple[float, float]:
        return (self.origin[0] + (ix + 0.5) * self.cell_size,
                self.origin[1] + (iz + 0.5) * self.cell_size)

    def cell_index(self, x: float, z: float) -> tuple[int, int]:
        """Bin (x, z); out-of-bounds positions clip to the border cells."""
        nx, nz = self.counts.shape
        ix = int(np.clip(math.floor((x - self.origin[0]) / self.cell_size),
                         0, nx - 1))
        iz = int(np.clip(math.floor((z - self.origin[1]) / self.cell_size),
                         0, nz - 1))
        return ix, iz


@dataclass(frozen=True)
class LineExtractionConfig:
    cell_size: float = 0.25
    min_support: int = 15
    min_height_extent: float = 0.5
    detector_mode: str = "both"

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.min_support < 1:
            raise ValueError("min_support must be >= 1")
        if self.min_height_extent < 0:
            raise ValueError("min_height_extent must be >= 0")
        if self.detector_mode not in _DETECTOR_MODES:
            raise ValueError(
                f"detector_mode must be one of {_DETECTOR_MODES}, "
                f"got {self.detector_mode!r}")


def project_to_floor(cloud: PointCloud, cell_size: float) -> IntensityGrid:
    """Bin cloud points by (x, z) into a count grid covering their extent."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if len(cloud) == 0:
        raise ValueError("cannot project an empty cloud")
    xz = cloud.points[:, [0, 2]]
    lo = xz.min(axis=0)
    hi = xz.max(axis=0)
    n = np.maximum(np.floor((hi - lo) / cell_size).astype(int) + 1, 1)
    idx = np.clip(np.floor((xz - lo) / cell_size).astype(int), 0, n - 1)
    counts = np.zeros(n, dtype=np.int64)
    np.add.at(counts, (idx[:, 0], idx[:, 1]), 1)
    return IntensityGrid(origin=(lo[0], lo[1]), cell_size=cell_size,
                         counts=counts)


def _peak_cells(grid: IntensityGrid, min_support: int) -> list:
    """Cells that dominate their 8-neighborhood (free-standing poles)."""
    c = grid.counts
    nx, nz = c.shape
    out = []
    hits = np.argwhere(c >= min_support)
    for ix, iz in hits:
        center = c[ix, iz]
        is_peak = True
        for dx in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == 0 and dz == 0:
                    continue
                jx, jz = ix + dx, iz + dz
                if 0 <= jx < nx and 0 <= jz < nz:
                    nb = c[jx, jz]
                    if nb >= center or nb > _PEAK_ISOLATION * center:
                        is_peak = False
                        break
            if not is_peak:
                break
        if is_peak:
            out.append((int(ix), int(iz)))
    return out


def _run_endpoint_cells(grid: IntensityGrid, min_support: int) -> list:
    """Endpoints of straight occupied runs, via an angular sweep.

    Occupied cell centers are projected onto each sweep direction as
    (along, across) = (s, r); cells sorted by s chain onto an open run when
    the step from the run's last cell stays within the gap/lateral gates.
    Runs long enough to be believable walls emit their two extreme cells.
    """
    occupied = np.argwhere(grid.counts >= min_support)
    if occupied.shape[0] < _MIN_RUN_CELLS:
        return []
    centers = (occupied + 0.5) * grid.cell_size
    max_gap = _RUN_GAP_CELLS * grid.cell_size
    max_lat = _RUN_LATERAL_CELLS * grid.cell_size

    endpoints: set = set()
    for k in range(_SWEEP_ANGLE_COUNT):
        theta = math.pi * k / _SWEEP_ANGLE_COUNT
        u = np.array([math.cos(theta), math.sin(theta)])
        s = centers @ u
        r = centers @ np.array([-u[1], u[0]])
        order = np.lexsort((r, s))
        # open runs: list of [last_s, last_r, first_cell, last_cell, size]
        runs = []
        for i in order:
            si, ri = s[i], r[i]
            cell = (int(occupied[i, 0]), int(occupied[i, 1]))
            best = None
            best_dr = None
            for run in runs:
                if si - run[0] > max_gap:
                    continue
                dr = abs(ri - run[1])
                if dr <= max_lat and (best is None or dr < best_dr):
                    best, best_dr = run, dr
            if best is None:
                runs.append([si, ri, cell, cell, 1])
            else:
                best[0], best[1] = si, ri
                best[3] = cell
                best[4] += 1
        for run in runs:
            if run[4] >= _MIN_RUN_CELLS:
                endpoints.add(run[2])
                endpoints.add(run[3])
    return sorted(endpoints)


def detect_vertical_lines(grid: IntensityGrid, cloud: PointCloud,
                          config: LineExtractionConfig) -> list:
    """Vertical line candidates from a floor-projection grid and its cloud.

    Candidate cells come from the configured detectors; each must then
    survive a back-check against the raw points of its own cell: at least
    ``min_support`` points spanning at least ``min_height_extent``
    vertically.  The vertical span is measured between the 10th and 90th
    height percentiles rather than min/max, so a handful of stray points
    sharing the cell (floor returns, clutter from oblique surfaces) cannot
    stretch a short structure past the gate.  The reported (x, z) is the
    support centroid, which for a clean pole recovers the true position
    well below cell resolution.  Candidates are returned sorted by cell
    index.
    """
    cells: set = set()
    if config.detector_mode in ("segment-endpoints", "both"):
        # Run *continuity* uses a softer occupancy threshold than candidate
        # acceptance: wall cells hover right around min_support, and at the
        # full threshold sampling fluctuation shatters a wall into short
        # fragments whose endpoints land mid-wall (junk candidates) while
        # the true corner endpoints are lost.  Emitted endpoint cells still
        # face the full min_support back-check below.
        cells.update(_run_endpoint_cells(grid, max(1, config.min_support // 2)))
    if config.detector_mode in ("peaks", "both"):
        cells.update(_peak_cells(grid, config.min_support))
    if not cells:
        return []

    pts = cloud.points
    nx, nz = grid.counts.shape
    ix = np.clip(np.floor(
        (pts[:, 0] - grid.origin[0]) / grid.cell_size).astype(int), 0, nx - 1)
    iz = np.clip(np.floor(
        (pts[:, 2] - grid.origin[1]) / grid.cell_size).astype(int), 0, nz - 1)

    out = []
    for cx, cz in sorted(cells):
        mask = (ix == cx) & (iz == cz)
        support = int(np.count_nonzero(mask))
        if support < config.min_support:
            continue
        sel = pts[mask]
        y_min = float(sel[:, 1].min())
        y_max = float(sel[:, 1].max())
        y_lo, y_hi = np.percentile(sel[:, 1], [10.0, 90.0])
        if y_hi - y_lo < config.min_height_extent:
            continue
        out.append(VerticalLine3D(
            x=float(sel[:, 0].mean()),
            z=float(sel[:, 2].mean()),
            y_min=y_min,
            y_max=y_max,
            support=support,
        ))
    return out


def vertical_direction_in_image(K: CameraIntrinsics, T: Rigid3,
                                candidate: VerticalLine3D) -> np.ndarray:
    """Exact local image direction of a vertical line, by two-point projection.

    Projects the candidate at its detected bottom and top heights and
    returns the normalized pixel-space difference (bottom -> top).  Under
    perspective this direction varies with image position, so it is
    computed per candidate rather than once per frame.  Raises
    BehindCameraError when either sample is behind the camera.
    """
    u0, v0, _ = project_point(K, T, candidate.point_at(candidate.y_min))
    u1, v1, _ = project_point(K, T, candidate.point_at(candidate.y_max))
    d = np.array([u1 - u0, v1 - v0])
    n = float(np.linalg.norm(d))
    if n < 1e-12:
        raise ValueError("candidate projects to a single pixel")
    return d / n


def vertical_direction_axis_approx(K: CameraIntrinsics,
                                   T: Rigid3) -> np.ndarray:
    """Far-field image direction of the world vertical axis.

    Maps +Y into the camera frame and scales by the focal lengths,
    ignoring where in the image the line sits.  This is the limit of
    `vertical_direction_in_image` for distant, near-axis candidates; kept
    as a cheap whole-frame approximation and for comparison in tests.
    """
    d = T.rotation.rotation_matrix().T @ np.array([0.0, 1.0, 0.0])
    v = np.array([K.fx * d[0], K.fy * d[1]])
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise ValueError("vertical axis is parallel to the optical axis")
    return v / n


def filter_segments_2d(segments, expected_dir, angle_tol: float) -> list:
    """Keep segments within an acute angle of the expected direction."""
    e = np.asarray(expected_dir, dtype=float)
    e = e / np.linalg.norm(e)
    cos_tol = math.cos(angle_tol)
    kept = []
    for seg in segments:
        d = seg.direction()
        if abs(float(d @ e)) >= cos_tol - 1e-12:
            kept.append(seg)
    return kept


def fov_filter(candidates, K: CameraIntrinsics, T: Rigid3,
               margin: float = 5.0) -> list:
    """Keep candidates whose mid-height sample lands on (or near) the image.

    A candidate survives when the sample at (y_min + y_max) / 2 projects
    with positive depth and within the image rectangle grown by ``margin``
    pixels on every side.  Order-preserving and idempotent.
    """
    kept = []
    for c in candidates:
        p = c.point_at(0.5 * (c.y_min + c.y_max))
        try:
            u, v, _ = project_point(K, T, p)
        except BehindCameraError:
            continue
        if (-margin <= u <= K.width + margin
                and -margin <= v <= K.height + margin):
            kept.append(c)
    return kept
