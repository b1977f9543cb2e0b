"""Per-segment feature vectors: 2 geometric + 4x3 spatial components.

Component order is fixed as [length, mean_curvature, start.xyz, mid.xyz,
end.xyz, centroid.xyz]; the centroid is shared by all segments of a tree.
The order is a contract between training and inference, nothing more.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ShapeError
from .labels import ArteryLabel

N_FEATURES = 14

FEATURE_NAMES = (
    "length",
    "mean_curvature",
    "start_x", "start_y", "start_z",
    "mid_x", "mid_y", "mid_z",
    "end_x", "end_y", "end_z",
    "centroid_x", "centroid_y", "centroid_z",
)


@dataclass(frozen=True)
class FeatureVector:
    """14 reals describing one segment in the origin-zero mm frame."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.shape != (N_FEATURES,):
            raise ShapeError(f"feature vector must have {N_FEATURES} components, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ShapeError("non-finite feature component")
        if vals[0] < 0 or vals[1] < 0:
            raise ShapeError("length and mean curvature must be >= 0")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_parts(cls, length, curvature, start, mid, end, centroid) -> "FeatureVector":
        return cls(np.concatenate([[length, curvature], start, mid, end, centroid]))

    @property
    def length(self) -> float:
        return float(self.values[0])

    @property
    def mean_curvature(self) -> float:
        return float(self.values[1])

    @property
    def start(self) -> np.ndarray:
        return self.values[2:5]

    @property
    def mid(self) -> np.ndarray:
        return self.values[5:8]

    @property
    def end(self) -> np.ndarray:
        return self.values[8:11]

    @property
    def centroid(self) -> np.ndarray:
        return self.values[11:14]

    def as_array(self) -> np.ndarray:
        return self.values.copy()


@dataclass(frozen=True)
class LabelledExample:
    features: FeatureVector
    label: ArteryLabel
    patient_id: str

    def __post_init__(self):
        object.__setattr__(self, "label", ArteryLabel(self.label))


def extract_features(tree: geometry.CoronaryTree) -> list[tuple[str, FeatureVector]]:
    """One (segment_id, FeatureVector) per segment of an mm-frame tree.

    Deterministic; degenerate-segment errors from the geometry layer
    propagate unchanged.
    """
    centroid = geometry.tree_centroid(tree)
    out = []
    for seg in tree.segments:
        start, mid, end = geometry.key_points(seg)
        fv = FeatureVector.from_parts(
            geometry.arc_length(seg),
            geometry.mean_curvature(seg),
            start, mid, end, centroid,
        )
        out.append((seg.segment_id, fv))
    return out


def stack_features(batch) -> np.ndarray:
    """Stack FeatureVectors (or raw rows) into an (n, 14) float64 matrix."""
    rows = []
    for item in batch:
        if isinstance(item, FeatureVector):
            rows.append(item.values)
        else:
            arr = np.asarray(item, dtype=np.float64).reshape(-1)
            if arr.shape != (N_FEATURES,):
                raise ShapeError(f"expected {N_FEATURES} features per row, got {arr.shape}")
            rows.append(arr)
    if not rows:
        return np.empty((0, N_FEATURES))
    return np.stack(rows)
