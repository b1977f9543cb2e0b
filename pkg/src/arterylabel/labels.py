"""The 13 coronary artery categories and their fixed class indices.

The index order is the order of the per-segment probability vector used
throughout the pipeline; it must never change between training and
inference.
"""

from enum import IntEnum


class ArteryLabel(IntEnum):
    LM = 0
    LAD = 1
    LCx = 2
    RI = 3
    D1 = 4
    D2 = 5
    D3 = 6
    OM1 = 7
    OM2 = 8
    OM3 = 9
    Sep = 10
    RCA = 11
    AM = 12


LABELS = tuple(lbl.name for lbl in ArteryLabel)
N_CLASSES = len(LABELS)

# Sentinel for segments the post-processor could not place anywhere.
# Counts as a false negative for the true class in evaluation.
UNASSIGNED = "unassigned"

RIGHT_LABELS = (ArteryLabel.RCA.name, ArteryLabel.AM.name)
LEFT_LABELS = tuple(name for name in LABELS if name not in RIGHT_LABELS)

# Per-label display colors for external viewers (emitted in label files).
LABEL_COLORS = {
    "LM": "#e41a1c",
    "LAD": "#377eb8",
    "LCx": "#4daf4a",
    "RI": "#984ea3",
    "D1": "#ff7f00",
    "D2": "#ffb366",
    "D3": "#ffe0c2",
    "OM1": "#a65628",
    "OM2": "#c98c5a",
    "OM3": "#e6c3a1",
    "Sep": "#f781bf",
    "RCA": "#17becf",
    "AM": "#999933",
    UNASSIGNED: "#7f7f7f",
}


def to_index(label) -> int:
    """Class index of a label given as ArteryLabel, name string, or int."""
    if isinstance(label, ArteryLabel):
        return int(label)
    if isinstance(label, str):
        return int(ArteryLabel[label])
    return int(ArteryLabel(label))


def to_name(label) -> str:
    if isinstance(label, str):
        if label == UNASSIGNED:
            return label
        return ArteryLabel[label].name
    return ArteryLabel(label).name
