"""Polyline geometry over artery centerlines.

A centerline is an ordered 3D point sequence for one artery segment.
Everything here is a pure function over immutable inputs: unit
conversion, arc length, discrete mean curvature, key points (start,
arc-length midpoint, end), whole-tree centroid, and nearest-point arc
projection used by the post-processor.

Coordinates follow the Right-Anterior-Superior patient frame: +x is
patient-left, so the left coronary tree sits at larger x.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, UnitsError

log = logging.getLogger(__name__)

UNITS_VOXEL = "voxel"
UNITS_MM = "mm"

# A Point3 is a length-3 float array (x, y, z); mm after unit conversion.
Point3 = np.ndarray


def as_points(points) -> np.ndarray:
    """Coerce to an (n, 3) float64 array and check finiteness."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DegenerateInputError(f"expected (n, 3) points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError("non-finite coordinates in point array")
    return arr


@dataclass(frozen=True)
class Centerline:
    """Ordered 3D point sequence for one artery segment.

    Invariants: >=2 points, consecutive points distinct, one consistent
    unit tag for all points.
    """

    segment_id: str
    points: np.ndarray
    units: str = UNITS_MM

    def __post_init__(self):
        pts = as_points(self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise DegenerateInputError(
                f"segment {self.segment_id!r}: needs >=2 points, got {len(pts)}"
            )
        if self.units not in (UNITS_VOXEL, UNITS_MM):
            raise UnitsError(f"unknown units {self.units!r}")
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(steps == 0.0):
            raise DegenerateInputError(
                f"segment {self.segment_id!r}: consecutive duplicate points"
            )

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ScanFrame:
    """CT scan sampling geometry: mm-per-voxel spacing and scan origin (mm)."""

    spacing: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        spacing = np.asarray(self.spacing, dtype=np.float64).reshape(3)
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(spacing)) and np.all(spacing > 0)):
            raise ValueError(f"spacing must be positive and finite, got {spacing}")
        if not np.all(np.isfinite(origin)):
            raise ValueError("origin must be finite")
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)


@dataclass(frozen=True)
class CoronaryTree:
    """One patient's centerline segments plus scan frame and optional truth labels."""

    patient_id: str
    segments: tuple
    frame: ScanFrame
    labels: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        ids = [s.segment_id for s in self.segments]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate segment ids in tree {self.patient_id!r}")

    def segment(self, segment_id: str) -> Centerline:
        for s in self.segments:
            if s.segment_id == segment_id:
                return s
        raise KeyError(segment_id)


def to_physical(cl: Centerline, frame: ScanFrame) -> Centerline:
    """Convert voxel indices to mm, with the scan origin mapping to (0,0,0).

    Each point becomes p * spacing componentwise; the origin offset is
    deliberately not added, which makes the output invariant to where the
    anatomy sits inside the scan volume.
    """
    if cl.units != UNITS_VOXEL:
        raise UnitsError(
            f"segment {cl.segment_id!r}: to_physical expects voxel units, got {cl.units!r}"
        )
    return Centerline(cl.segment_id, cl.points * frame.spacing, units=UNITS_MM)


def tree_to_physical(tree: CoronaryTree) -> CoronaryTree:
    """Convert every segment of a tree to mm (no-op for mm trees)."""
    if all(s.units == UNITS_MM for s in tree.segments):
        return tree
    segs = tuple(to_physical(s, tree.frame) for s in tree.segments)
    return CoronaryTree(tree.patient_id, segs, tree.frame, tree.labels)


def _require_mm(cl: Centerline, op: str):
    if cl.units != UNITS_MM:
        raise UnitsError(f"{op}: segment {cl.segment_id!r} is in {cl.units!r}, expected mm")


def polyline_length(points: np.ndarray) -> float:
    """Sum of Euclidean distances between consecutive points."""
    pts = as_points(points)
    if len(pts) < 2:
        raise DegenerateInputError("arc length needs >=2 points")
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def arc_length(cl: Centerline) -> float:
    _require_mm(cl, "arc_length")
    return polyline_length(cl.points)


def polyline_mean_curvature(points: np.ndarray) -> float:
    """Mean Menger curvature over interior point triplets, in 1/mm.

    For each consecutive triplet (a, b, c) the curvature is the inverse
    radius of the circumscribed circle, 4*Area / (|ab| |bc| |ca|).
    Collinear or coincident triplets contribute 0.
    """
    pts = as_points(points)
    if len(pts) < 3:
        log.warning("mean curvature of %d-point polyline is degenerate; returning 0", len(pts))
        return 0.0
    a, b, c = pts[:-2], pts[1:-1], pts[2:]
    cross = np.cross(b - a, c - a)
    twice_area = np.linalg.norm(cross, axis=1)
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    denom = ab * bc * ca
    kappa = np.zeros(len(denom))
    ok = denom > 0
    kappa[ok] = 2.0 * twice_area[ok] / denom[ok]
    return float(kappa.mean())


def mean_curvature(cl: Centerline) -> float:
    _require_mm(cl, "mean_curvature")
    return polyline_mean_curvature(cl.points)


def _cumulative_lengths(pts: np.ndarray) -> np.ndarray:
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def polyline_point_at(points: np.ndarray, target: float) -> Point3:
    """Point at a given arc-length coordinate, linearly interpolated."""
    pts = as_points(points)
    cum = _cumulative_lengths(pts)
    total = cum[-1]
    target = min(max(target, 0.0), total)
    i = int(np.searchsorted(cum, target, side="right"))
    if i >= len(pts):
        return pts[-1].copy()
    i = max(i, 1)
    seg_len = cum[i] - cum[i - 1]
    t = (target - cum[i - 1]) / seg_len
    return pts[i - 1] + t * (pts[i] - pts[i - 1])


def key_points(cl: Centerline):
    """(start, mid, end) of a segment; mid is the point at half arc length."""
    _require_mm(cl, "key_points")
    pts = cl.points
    if len(pts) < 2:
        raise DegenerateInputError("key_points needs >=2 points")
    half = polyline_length(pts) / 2.0
    return pts[0].copy(), polyline_point_at(pts, half), pts[-1].copy()


def tree_centroid(tree: CoronaryTree) -> Point3:
    """Arithmetic mean of all centerline points across all segments."""
    if not tree.segments:
        raise DegenerateInputError("centroid of an empty tree")
    for s in tree.segments:
        _require_mm(s, "tree_centroid")
    allpts = np.concatenate([s.points for s in tree.segments], axis=0)
    return allpts.mean(axis=0)


def project_arc_position(points: np.ndarray, q) -> tuple[float, float]:
    """Arc-length coordinate of the polyline point nearest to q.

    Returns (position, distance). Each polyline edge is scanned with a
    clamped orthogonal projection; exact distance ties keep the smallest
    arc position (first edge scanned from the start).
    """
    pts = as_points(points)
    q = np.asarray(q, dtype=np.float64).reshape(3)
    cum = _cumulative_lengths(pts)
    best_dist = np.inf
    best_pos = 0.0
    for i in range(len(pts) - 1):
        d = pts[i + 1] - pts[i]
        dd = float(d @ d)
        t = float((q - pts[i]) @ d) / dd
        t = min(max(t, 0.0), 1.0)
        proj = pts[i] + t * d
        dist = float(np.linalg.norm(q - proj))
        if dist < best_dist:
            best_dist = dist
            best_pos = float(cum[i] + t * np.sqrt(dd))
    return best_pos, best_dist
