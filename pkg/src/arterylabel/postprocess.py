"""Rule-based topological constraints over raw per-segment predictions.

Seven steps applied to the argmax labels and probability vectors of one
coronary tree:

1. split segments into right/left sets by midpoint x vs. tree centroid x
   (midpoint x below the centroid is the right tree);
2. assign RCA and AM inside the right set, each to the single candidate
   or the probability argmax among duplicates;
3. assign LM, LAD and LCx inside the left set the same way;
4. keep an RI candidate only if its start lies within a distance gate of
   the LM end (3 mm default); rejected candidates are re-predicted as D1
   or OM1, whichever is more probable, and flow into steps 5-6;
5. relabel the diagonal series D1..D3 by connection order along the LAD;
6. relabel the obtuse-marginal series OM1..OM3 likewise along the LCx;
7. assign the septal branch from the left set.

Segments displaced by uniqueness or side rules are relabelled to their
best still-free side-compatible label that keeps the distance-gate and
series-order guarantees intact; when nothing fits they carry the
"unassigned" sentinel. Every decision is recorded in an audit trail.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import ShapeError
from .labels import LABELS, LEFT_LABELS, N_CLASSES, RIGHT_LABELS, UNASSIGNED, to_index, to_name

log = logging.getLogger(__name__)

_SERIES = {"D": ("D1", "D2", "D3"), "OM": ("OM1", "OM2", "OM3")}


@dataclass(frozen=True)
class PostConfig:
    """ri_threshold: maximum LM-end to RI-start distance, mm."""

    ri_threshold: float = 3.0

    def __post_init__(self):
        if not self.ri_threshold > 0:
            raise ValueError("ri_threshold must be > 0")


@dataclass
class LabelAssignment:
    """Final labels plus, per segment, the step that fixed its label."""

    labels: dict
    audit: dict
    warnings: list = field(default_factory=list)

    def final(self, segment_id: str) -> str:
        return self.labels[segment_id]


def _dist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def split_left_right(tree: geometry.CoronaryTree, centroid) -> tuple[set, set]:
    """(right_ids, left_ids): midpoint x < centroid x goes right, else left."""
    x_c = float(np.asarray(centroid).reshape(3)[0])
    right, left = set(), set()
    for seg in tree.segments:
        _, mid, _ = geometry.key_points(seg)
        (right if mid[0] < x_c else left).add(seg.segment_id)
    return right, left


def assign_unique_max(candidates, probs, label: str):
    """The single candidate, or the argmax of P[label]; ties pick the lowest id."""
    ids = sorted(candidates)
    if not ids:
        return None
    if len(ids) == 1:
        return ids[0]
    col = to_index(label)
    return min(ids, key=lambda i: (-probs[i][col], i))


def resolve_ri(left_set, predictions, probs, starts, lm_end, config: PostConfig):
    """Step 4: distance-gate the RI candidates.

    Candidates within ri_threshold of the LM end survive and the winner
    is picked by assign_unique_max; every gate-rejected candidate (all of
    them when LM is absent) has its prediction replaced by D1 or OM1,
    whichever is more probable, and feeds the series steps.

    Returns (ri_segment_or_None, updated_predictions, rejected_ids).
    """
    preds = dict(predictions)
    cands = sorted(i for i in left_set if preds[i] == "RI")
    survivors, rejected = [], []
    for i in cands:
        if lm_end is not None and _dist(starts[i], lm_end) < config.ri_threshold:
            survivors.append(i)
        else:
            rejected.append(i)
    for i in rejected:
        p = probs[i]
        preds[i] = "D1" if p[to_index("D1")] >= p[to_index("OM1")] else "OM1"
    return assign_unique_max(survivors, probs, "RI"), preds, rejected


def order_branch_series(branch_ids, parent: geometry.Centerline, series: str,
                        probs, starts, lm_end=None):
    """Steps 5-6: relabel a branch series by connection order on its parent.

    Position key is the arc-length coordinate of the parent point nearest
    to the branch start; ties break by distance of the branch start to
    the LM end, then by segment id. With more than three branches the
    three with the highest series probability mass are kept and the rest
    are flagged unassigned.

    Returns (assignments {label: segment_id}, positions {segment_id: arc},
    extras beyond three).
    """
    labels3 = _SERIES[series]
    ids = sorted(branch_ids)
    if not ids:
        return {}, {}, []
    if len(ids) > 3:
        cols = [to_index(lbl) for lbl in labels3]
        mass = {i: float(sum(probs[i][c] for c in cols)) for i in ids}
        kept = sorted(ids, key=lambda i: (-mass[i], i))[:3]
        extras = [i for i in ids if i not in kept]
    else:
        kept, extras = ids, []
    keyed = []
    for i in kept:
        pos, _ = geometry.project_arc_position(parent.points, starts[i])
        tie = _dist(starts[i], lm_end) if lm_end is not None else 0.0
        keyed.append((pos, tie, i))
    keyed.sort()
    assignments = {labels3[k]: seg for k, (_, _, seg) in enumerate(keyed)}
    positions = {seg: pos for pos, _, seg in keyed}
    return assignments, positions, extras


def _normalize_probs(tree, probs):
    out = {}
    for seg in tree.segments:
        sid = seg.segment_id
        if sid not in probs:
            raise ValueError(f"no probability vector for segment {sid!r}")
        vec = np.asarray(probs[sid], dtype=np.float64).reshape(-1)
        if vec.shape != (N_CLASSES,):
            raise ShapeError(f"segment {sid!r}: probability vector must have "
                             f"{N_CLASSES} entries, got {vec.shape}")
        out[sid] = vec
    return out


def apply_constraints(tree: geometry.CoronaryTree, predictions, probs,
                      config: PostConfig | None = None) -> LabelAssignment:
    """Run steps 1-7 over one tree's raw predictions.

    ``predictions`` maps segment id to the raw argmax label, ``probs`` to
    the 13-entry probability vector. Structural oddities (missing main
    arteries, missing series parents) produce warnings, never aborts.
    """
    config = config or PostConfig()
    probs = _normalize_probs(tree, probs)
    preds = {}
    for seg in tree.segments:
        sid = seg.segment_id
        if sid not in predictions:
            raise ValueError(f"no prediction for segment {sid!r}")
        preds[sid] = to_name(predictions[sid])

    starts, ends = {}, {}
    for seg in tree.segments:
        s, _, e = geometry.key_points(seg)
        starts[seg.segment_id] = s
        ends[seg.segment_id] = e

    centroid = geometry.tree_centroid(tree)
    right, left = split_left_right(tree, centroid)

    final: dict = {}
    audit: dict = {}
    taken: set = set()
    warnings: list = []

    def commit(sid, label, step):
        final[sid] = label
        taken.add(label)
        audit[sid] = step

    # Step 2: right-set main artery and acute marginal.
    rca = assign_unique_max([i for i in right if preds[i] == "RCA"], probs, "RCA")
    if rca is None:
        warnings.append({"code": "missing_main_artery", "label": "RCA"})
    else:
        commit(rca, "RCA", "step2_rca")
    am = assign_unique_max([i for i in right if preds[i] == "AM"], probs, "AM")
    if am is not None:
        commit(am, "AM", "step2_am")

    # Step 3: left-set main arteries.
    for lbl, step in (("LM", "step3_lm"), ("LAD", "step3_lad"), ("LCx", "step3_lcx")):
        winner = assign_unique_max([i for i in left if preds[i] == lbl], probs, lbl)
        if winner is None:
            warnings.append({"code": "missing_main_artery", "label": lbl})
        else:
            commit(winner, lbl, step)

    lm_seg = next((i for i, lbl in final.items() if lbl == "LM"), None)
    lm_end = ends[lm_seg] if lm_seg is not None else None

    # Step 4: RI distance gate.
    ri, preds, ri_rejected = resolve_ri(left, preds, probs, starts, lm_end, config)
    if ri is not None:
        commit(ri, "RI", "step4_ri")
    rejected_set = set(ri_rejected)

    def reject_tag(sid, step):
        return f"step4_ri_reject+{step}" if sid in rejected_set else step

    # Steps 5-6: branch series ordered along their parents.
    series_positions = {"D": {}, "OM": {}}
    for series, parent_lbl, step_no in (("D", "LAD", 5), ("OM", "LCx", 6)):
        labels3 = _SERIES[series]
        members = [i for i in (left - set(final)) if preds[i] in labels3]
        parent_seg = next((i for i, lbl in final.items() if lbl == parent_lbl), None)
        if parent_seg is None:
            if members:
                warnings.append({"code": "missing_parent", "series": series,
                                 "parent": parent_lbl})
            # Parent gone: keep raw series labels but deduplicate; losers
            # fall through to the relabelling pass below.
            for lbl in labels3:
                winner = assign_unique_max([i for i in members if preds[i] == lbl],
                                           probs, lbl)
                if winner is not None:
                    commit(winner, lbl, reject_tag(winner, f"step{step_no}_{series.lower()}_raw"))
            continue
        assignments, positions, extras = order_branch_series(
            members, tree.segment(parent_seg), series, probs, starts, lm_end)
        for lbl, sid in assignments.items():
            commit(sid, lbl, reject_tag(sid, f"step{step_no}_{series.lower()}_order"))
            series_positions[series][int(lbl[-1])] = positions[sid]
        for sid in extras:
            final[sid] = UNASSIGNED
            audit[sid] = f"step{step_no}_{series.lower()}_overflow"

    # Step 7: septal branch.
    sep = assign_unique_max([i for i in (left - set(final)) if preds[i] == "Sep"],
                            probs, "Sep")
    if sep is not None:
        commit(sep, "Sep", "step7_sep")

    _relabel_leftovers(tree, preds, probs, starts, final, audit, taken,
                       right, lm_end, config, series_positions, rejected_set)

    uniqueness = [lbl for lbl in LABELS
                  if sum(1 for v in final.values() if v == lbl) > 1]
    assert not uniqueness, f"duplicate labels {uniqueness} survived post-processing"
    return LabelAssignment(labels=final, audit=audit, warnings=warnings)


def _relabel_leftovers(tree, preds, probs, starts, final, audit, taken,
                       right, lm_end, config, series_positions, rejected_set):
    """Give displaced or side-incompatible segments their best legal label."""
    parent_points = {}
    for series, parent_lbl in (("D", "LAD"), ("OM", "LCx")):
        pseg = next((i for i, lbl in final.items() if lbl == parent_lbl), None)
        parent_points[series] = tree.segment(pseg).points if pseg is not None else None

    def series_ok(series, rank, sid):
        """(allowed, position). Order checks only apply when the parent exists."""
        pts = parent_points[series]
        if pts is None:
            return True, None
        pos, _ = geometry.project_arc_position(pts, starts[sid])
        for other_rank, other_pos in series_positions[series].items():
            if other_rank < rank and not other_pos < pos:
                return False, None
            if other_rank > rank and not other_pos > pos:
                return False, None
        return True, pos

    for sid in sorted(i for i in preds if i not in final):
        side_labels = RIGHT_LABELS if sid in right else LEFT_LABELS
        ranked = sorted((lbl for lbl in side_labels if lbl not in taken),
                        key=lambda lbl: (-probs[sid][to_index(lbl)], to_index(lbl)))
        chosen = None
        chosen_pos = None
        chosen_series = None
        for lbl in ranked:
            if lbl == "RI":
                if lm_end is None or not _dist(starts[sid], lm_end) < config.ri_threshold:
                    continue
            elif lbl in _SERIES["D"] or lbl in _SERIES["OM"]:
                series = "D" if lbl in _SERIES["D"] else "OM"
                allowed, pos = series_ok(series, int(lbl[-1]), sid)
                if not allowed:
                    continue
                chosen_pos = pos
                chosen_series = series
            chosen = lbl
            break
        if chosen is None:
            final[sid] = UNASSIGNED
            audit[sid] = "unassigned" if sid not in rejected_set else "step4_ri_reject+unassigned"
            continue
        final[sid] = chosen
        taken.add(chosen)
        tag = "fallback"
        if sid in rejected_set:
            tag = "step4_ri_reject+fallback"
        audit[sid] = tag
        if chosen_series is not None and chosen_pos is not None:
            series_positions[chosen_series][int(chosen[-1])] = chosen_pos
