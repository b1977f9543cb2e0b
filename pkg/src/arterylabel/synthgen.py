"""Deterministic synthetic coronary trees with ground-truth labels.

Each tree is built from smooth circular-arc branches with bounded point
jitter, wired with the usual topology: LAD, LCx and RI leave the LM end;
diagonal branches and the septal branch leave the LAD; obtuse marginals
leave the LCx; the acute marginal leaves the RCA. The left tree sits at
larger x than the whole-tree centroid and the right tree below it (RAS
convention), the RI origin stays within the 3 mm gate of the LM end, and
series branches attach in increasing arc order, so every generated tree
is a fixed point of the topological post-processor under its own truth.

Main branches are always present; smaller ones appear with configurable
probabilities, which makes class frequencies imbalanced on purpose.
Trees are emitted in voxel units with a randomized scan frame so the
physical-unit conversion path is exercised downstream.

Same (seed, index) always yields the bitwise-identical tree.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import Centerline, CoronaryTree, ScanFrame, polyline_length

_POINT_STEP_MM = 1.5
_SIDE_MARGIN_MM = 0.75

_RIGHT_TRUTH = ("RCA", "AM")


@dataclass(frozen=True)
class GenConfig:
    """Presence probabilities and geometric ranges for tree synthesis."""

    seed: int = 0
    # Optional-branch presence; D3 requires D2 and OM3 requires OM2 so
    # ground-truth series labels stay consecutive in connection order.
    p_ri: float = 0.7
    p_d2: float = 0.7
    p_d3: float = 0.45
    p_om2: float = 0.7
    p_om3: float = 0.45
    p_sep: float = 0.8
    p_am: float = 0.85
    length_scale: float = 1.0
    curvature_scale: float = 1.0
    jitter_mm: float = 0.25
    side_offset_mm: float = 18.0
    global_jitter_mm: float = 4.0

    def __post_init__(self):
        for name in ("p_ri", "p_d2", "p_d3", "p_om2", "p_om3", "p_sep", "p_am"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("length_scale", "curvature_scale", "side_offset_mm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.jitter_mm < 0 or self.global_jitter_mm < 0:
            raise ValueError("jitter amplitudes must be >= 0")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(**d)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _arc_branch(rng, start, direction, length, radius, jitter):
    """Circular-arc polyline from start along direction, curving toward a
    random in-plane normal; interior points get bounded jitter, the start
    point stays exact so attachments hold."""
    t = _unit(direction + rng.normal(0.0, 0.06, 3))
    raw_n = rng.normal(0.0, 1.0, 3)
    n = raw_n - (raw_n @ t) * t
    while np.linalg.norm(n) < 1e-6:
        raw_n = rng.normal(0.0, 1.0, 3)
        n = raw_n - (raw_n @ t) * t
    n = _unit(n)
    theta = length / radius
    n_pts = max(8, int(round(length / _POINT_STEP_MM)) + 1)
    s = np.linspace(0.0, 1.0, n_pts)[:, None] * theta
    pts = start + radius * (np.sin(s) * t + (1.0 - np.cos(s)) * n)
    if jitter > 0:
        noise = np.clip(rng.normal(0.0, jitter, (n_pts, 3)), -0.6, 0.6)
        noise[0] = 0.0
        pts = pts + noise
    return pts


# Canonical branch table: direction, length range (mm), bend radius range
# (mm), and attachment (parent id + arc-fraction range; None = LM end).
_BRANCH_SPECS = {
    "LAD": {"dir": (0.55, 0.75, -0.90), "length": (65, 95), "radius": (45, 75)},
    "LCx": {"dir": (0.80, -0.70, -0.55), "length": (45, 70), "radius": (35, 60)},
    "RI": {"dir": (0.85, 0.10, -0.75), "length": (20, 38), "radius": (50, 90)},
    "D1": {"dir": (0.75, -0.10, -0.90), "length": (24, 40), "radius": (40, 80),
           "attach": ("LAD", 0.16, 0.30)},
    "D2": {"dir": (0.75, -0.05, -0.90), "length": (17, 28), "radius": (40, 80),
           "attach": ("LAD", 0.38, 0.52)},
    "D3": {"dir": (0.70, 0.00, -0.90), "length": (12, 20), "radius": (40, 80),
           "attach": ("LAD", 0.60, 0.74)},
    "Sep": {"dir": (-0.10, -0.25, -0.95), "length": (10, 18), "radius": (45, 70),
            "attach": ("LAD", 0.08, 0.18)},
    "OM1": {"dir": (0.60, -0.35, -0.95), "length": (22, 38), "radius": (40, 80),
            "attach": ("LCx", 0.18, 0.34)},
    "OM2": {"dir": (0.62, -0.30, -0.95), "length": (16, 27), "radius": (40, 80),
            "attach": ("LCx", 0.44, 0.58)},
    "OM3": {"dir": (0.65, -0.25, -0.95), "length": (12, 20), "radius": (40, 80),
            "attach": ("LCx", 0.66, 0.80)},
    "AM": {"dir": (-0.35, 0.80, -0.60), "length": (16, 30), "radius": (45, 75),
           "attach": ("RCA", 0.45, 0.62)},
}


def _presence(rng, config):
    draws = {name: rng.random() for name in
             ("ri", "d2", "d3", "om2", "om3", "sep", "am")}
    present = {"LM", "LAD", "LCx", "D1", "OM1", "RCA"}
    if draws["ri"] < config.p_ri:
        present.add("RI")
    if draws["d2"] < config.p_d2:
        present.add("D2")
        if draws["d3"] < config.p_d3:
            present.add("D3")
    if draws["om2"] < config.p_om2:
        present.add("OM2")
        if draws["om3"] < config.p_om3:
            present.add("OM3")
    if draws["sep"] < config.p_sep:
        present.add("Sep")
    if draws["am"] < config.p_am:
        present.add("AM")
    return present


def _segment_mid_x(pts):
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    half = cum[-1] / 2.0
    i = max(1, int(np.searchsorted(cum, half, side="right")))
    i = min(i, len(pts) - 1)
    t = (half - cum[i - 1]) / (cum[i] - cum[i - 1])
    return float(pts[i - 1, 0] + t * (pts[i, 0] - pts[i - 1, 0]))


def generate_tree(config: GenConfig, index: int) -> CoronaryTree:
    """Build tree number ``index`` of the stream seeded by ``config.seed``."""
    rng = np.random.default_rng([config.seed, int(index)])
    present = _presence(rng, config)

    anchor = np.array([76.0, 64.0, 86.0])
    anchor = anchor + rng.uniform(-config.global_jitter_mm, config.global_jitter_mm, 3)

    def ranged(lo, hi):
        return float(rng.uniform(lo, hi))

    def build(spec, start):
        length = ranged(*spec["length"]) * config.length_scale
        radius = ranged(*spec["radius"]) / config.curvature_scale
        return _arc_branch(rng, start, np.asarray(spec["dir"], dtype=float),
                           length, radius, config.jitter_mm)

    points = {}
    # LM first: a short, gently bent stem everything left hangs off.
    lm_len = ranged(9, 14) * config.length_scale
    lm_radius = ranged(45, 80) / config.curvature_scale
    points["LM"] = _arc_branch(rng, anchor, np.array([1.0, 0.55, -0.45]),
                               lm_len, lm_radius, config.jitter_mm)
    lm_end = points["LM"][-1]

    # Build order is fixed for rng determinism; absent branches still cost
    # no draws because presence was decided up front.
    for name in ("LAD", "LCx", "RI"):
        if name in present:
            start = lm_end.copy()
            if name == "RI":
                offset = rng.normal(0.0, 1.0, 3)
                offset = _unit(offset) * rng.uniform(0.0, 0.7)
                start = start + offset
            points[name] = build(_BRANCH_SPECS[name], start)

    rca_start = anchor + np.array([-config.side_offset_mm, 4.0, 2.0])
    rca_len = ranged(75, 110) * config.length_scale
    rca_radius = ranged(30, 48) / config.curvature_scale
    points["RCA"] = _arc_branch(rng, rca_start, np.array([-0.50, 0.75, -0.50]),
                                rca_len, rca_radius, config.jitter_mm)

    for name in ("D1", "D2", "D3", "Sep", "OM1", "OM2", "OM3", "AM"):
        if name not in present:
            continue
        spec = _BRANCH_SPECS[name]
        parent, flo, fhi = spec["attach"]
        ppts = points[parent]
        frac = ranged(flo, fhi)
        start = ppts[int(round(frac * (len(ppts) - 1)))].copy()
        points[name] = build(spec, start)

    # Enforce the side convention: every left-tree midpoint at least a
    # margin above the centroid x, every right-tree midpoint below it.
    left_names = [n for n in points if n not in _RIGHT_TRUTH]
    right_names = [n for n in points if n in _RIGHT_TRUTH]
    for _ in range(60):
        all_pts = np.concatenate(list(points.values()), axis=0)
        c_x = float(all_pts[:, 0].mean())
        left_min = min(_segment_mid_x(points[n]) for n in left_names)
        right_max = max(_segment_mid_x(points[n]) for n in right_names)
        ok_left = left_min >= c_x + _SIDE_MARGIN_MM
        ok_right = right_max <= c_x - _SIDE_MARGIN_MM
        if ok_left and ok_right:
            break
        if not ok_left:
            for n in left_names:
                points[n] = points[n] + np.array([2.0, 0.0, 0.0])
        if not ok_right:
            for n in right_names:
                points[n] = points[n] + np.array([-2.0, 0.0, 0.0])
    else:
        raise RuntimeError("side separation did not converge")

    spacing = rng.uniform(0.35, 0.75, 3)
    origin = rng.uniform(-120.0, 20.0, 3)
    frame = ScanFrame(spacing=spacing, origin=origin)

    order = ("LM", "LAD", "LCx", "RI", "D1", "D2", "D3", "Sep",
             "OM1", "OM2", "OM3", "RCA", "AM")
    segments = []
    labels = {}
    k = 0
    for name in order:
        if name not in points:
            continue
        seg_id = f"s{k:02d}"
        segments.append(Centerline(seg_id, points[name] / spacing, units="voxel"))
        labels[seg_id] = name
        k += 1
    return CoronaryTree(
        patient_id=f"synth-{config.seed}-{index:05d}",
        segments=tuple(segments),
        frame=frame,
        labels=labels,
    )


def tree_total_length(tree: CoronaryTree) -> float:
    """Summed mm arc length over all segments (diagnostic helper)."""
    from .geometry import tree_to_physical

    phys = tree_to_physical(tree)
    return float(sum(polyline_length(s.points) for s in phys.segments))
