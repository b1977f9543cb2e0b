"""Coronary-artery segment labelling from centerline geometry.

Pipeline: per-segment geometric/spatial features -> feed-forward
classifier trained with focal loss -> rule-based topological
post-processing for an anatomically consistent labelling.
"""

__version__ = "0.1.0"

from .features import FeatureVector, LabelledExample, extract_features
from .geometry import Centerline, CoronaryTree, ScanFrame, to_physical, tree_to_physical
from .labels import LABELS, N_CLASSES, UNASSIGNED, ArteryLabel
from .network import (
    Mlp,
    TrainConfig,
    focal_loss,
    forward,
    load_model,
    param_count,
    predict,
    save_model,
    train,
)
from .postprocess import LabelAssignment, PostConfig, apply_constraints
from .synthgen import GenConfig, generate_tree

__all__ = [
    "ArteryLabel",
    "Centerline",
    "CoronaryTree",
    "FeatureVector",
    "GenConfig",
    "LABELS",
    "LabelAssignment",
    "LabelledExample",
    "Mlp",
    "N_CLASSES",
    "PostConfig",
    "ScanFrame",
    "TrainConfig",
    "UNASSIGNED",
    "apply_constraints",
    "extract_features",
    "focal_loss",
    "forward",
    "generate_tree",
    "load_model",
    "param_count",
    "predict",
    "save_model",
    "to_physical",
    "train",
    "tree_to_physical",
]
