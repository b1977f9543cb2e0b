"""Metrics, confusion matrices, patient-level k-fold splits, and the
fold-ensemble inference pipeline.

Averages are support-weighted (per-class values are always reported too,
so macro numbers can be recomputed). A predicted "unassigned" sentinel
counts as a false negative for the true class and as a false positive
for nothing.
"""

from dataclasses import dataclass

import numpy as np

from . import geometry, network, postprocess
from .errors import ArchitectureMismatchError, ShapeError
from .features import extract_features
from .labels import LABELS, N_CLASSES, UNASSIGNED, to_name


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    recall: float
    precision: float
    f1: float
    support: int
    absent: bool


def _norm_labels(seq):
    return [to_name(v) for v in seq]


def per_class_metrics(truth, predicted) -> dict:
    """Per-label recall, precision and F1 over aligned label lists.

    Labels absent from both sides get support 0, metrics 0, and an
    absent flag.
    """
    truth = _norm_labels(truth)
    predicted = _norm_labels(predicted)
    if len(truth) != len(predicted):
        raise ShapeError(f"{len(truth)} truth labels vs {len(predicted)} predictions")
    out = {}
    for lbl in LABELS:
        tp = sum(1 for t, p in zip(truth, predicted) if t == lbl and p == lbl)
        fn = sum(1 for t, p in zip(truth, predicted) if t == lbl and p != lbl)
        fp = sum(1 for t, p in zip(truth, predicted) if t != lbl and p == lbl)
        support = tp + fn
        recall = tp / (tp + fn) if tp + fn else 0.0
        precision = tp / (tp + fp) if tp + fp else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[lbl] = ClassMetrics(lbl, recall, precision, f1, support,
                                absent=(support == 0 and fp == 0))
    return out


def weighted_average(metrics: dict) -> tuple[float, float, float]:
    """Support-weighted (recall, precision, f1) over labels with support."""
    rows = [m for m in metrics.values() if m.support > 0]
    total = sum(m.support for m in rows)
    if total == 0:
        raise ValueError("weighted average needs at least one supported label")
    rec = sum(m.recall * m.support for m in rows) / total
    pre = sum(m.precision * m.support for m in rows) / total
    f1 = sum(m.f1 * m.support for m in rows) / total
    return rec, pre, f1


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true][pred] over the 13 labels; sentinel predictions sit in
    a separate per-row column so nonempty row percentages still total 100."""

    counts: np.ndarray
    unassigned: np.ndarray
    row_percent: np.ndarray
    unassigned_percent: np.ndarray


def confusion(truth, predicted) -> ConfusionMatrix:
    truth = _norm_labels(truth)
    predicted = _norm_labels(predicted)
    if len(truth) != len(predicted):
        raise ShapeError(f"{len(truth)} truth labels vs {len(predicted)} predictions")
    idx = {lbl: i for i, lbl in enumerate(LABELS)}
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    unassigned = np.zeros(N_CLASSES, dtype=np.int64)
    for t, p in zip(truth, predicted):
        if p == UNASSIGNED:
            unassigned[idx[t]] += 1
        else:
            counts[idx[t], idx[p]] += 1
    row_tot = counts.sum(axis=1) + unassigned
    denom = np.where(row_tot > 0, row_tot, 1)
    row_percent = 100.0 * counts / denom[:, None]
    unassigned_percent = 100.0 * unassigned / denom
    return ConfusionMatrix(counts, unassigned, row_percent, unassigned_percent)


def kfold(patients, k: int = 5, seed: int = 0) -> list[list]:
    """Seeded shuffle of the patient ids, split into k near-equal folds."""
    ids = sorted(set(patients))
    if len(ids) < k:
        raise ValueError(f"need at least {k} patients for {k} folds, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return [list(chunk) for chunk in np.array_split(shuffled, k)]


def ensemble_predict(models: list, feature_rows, backend=None) -> np.ndarray:
    """Mean of the models' probability outputs, renormalized per row."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    dims = models[0].dims
    for m in models[1:]:
        if m.dims != dims:
            raise ArchitectureMismatchError(f"mixed architectures {dims} vs {m.dims}")
    acc = None
    for m in models:
        probs = network.forward(m, feature_rows, backend=backend)
        acc = probs if acc is None else acc + probs
    acc /= len(models)
    return acc / acc.sum(axis=1, keepdims=True)


def label_tree(tree, models, post_config=None, apply_post=True, backend=None):
    """Features -> ensemble probabilities -> (optionally) constraints.

    Returns (assignment, raw_predictions, prob_map) for one tree; the
    assignment is raw argmax labels when post-processing is skipped.
    """
    phys = geometry.tree_to_physical(tree)
    feats = extract_features(phys)
    ids = [sid for sid, _ in feats]
    x = np.stack([fv.values for _, fv in feats])
    probs = ensemble_predict(models, x, backend=backend)
    prob_map = {sid: probs[i] for i, sid in enumerate(ids)}
    raw = {sid: LABELS[int(np.argmax(prob_map[sid]))] for sid in ids}
    if not apply_post:
        assignment = postprocess.LabelAssignment(
            labels=dict(raw), audit={sid: "raw_argmax" for sid in ids})
        return assignment, raw, prob_map
    assignment = postprocess.apply_constraints(phys, raw, prob_map,
                                               post_config or postprocess.PostConfig())
    return assignment, raw, prob_map


def evaluate_pipeline(test_trees, models, post_config=None, backend=None) -> dict:
    """Label every tree and score against its ground truth.

    Report layout: 13 per-class rows, support-weighted averages, and the
    row-normalized confusion matrix. Deterministic for fixed inputs.
    """
    truths, finals = [], []
    per_tree = {}
    for tree in sorted(test_trees, key=lambda t: t.patient_id):
        if not tree.labels:
            raise ValueError(f"tree {tree.patient_id!r} has no ground-truth labels")
        assignment, raw, _ = label_tree(tree, models, post_config, backend=backend)
        tree_truth, tree_final = [], []
        for seg in tree.segments:
            truths.append(to_name(tree.labels[seg.segment_id]))
            finals.append(assignment.labels[seg.segment_id])
            tree_truth.append(truths[-1])
            tree_final.append(finals[-1])
        per_tree[tree.patient_id] = {
            "n_segments": len(tree.segments),
            "n_correct": sum(1 for t, p in zip(tree_truth, tree_final) if t == p),
        }
    return build_report(truths, finals, per_tree=per_tree)


def build_report(truths, finals, per_tree=None) -> dict:
    metrics = per_class_metrics(truths, finals)
    rec, pre, f1 = weighted_average(metrics)
    conf = confusion(truths, finals)
    report = {
        "n_segments": len(truths),
        "per_class": [
            {
                "label": m.label,
                "recall": m.recall,
                "precision": m.precision,
                "f1": m.f1,
                "support": m.support,
                "absent": m.absent,
            }
            for m in metrics.values()
        ],
        "weighted": {"recall": rec, "precision": pre, "f1": f1},
        "confusion": {
            "labels": list(LABELS),
            "counts": conf.counts.tolist(),
            "row_percent": conf.row_percent.tolist(),
            "unassigned_counts": conf.unassigned.tolist(),
            "unassigned_percent": conf.unassigned_percent.tolist(),
        },
        "unassigned_predictions": int(conf.unassigned.sum()),
    }
    if per_tree is not None:
        report["per_tree"] = per_tree
    return report


def format_report_table(report: dict) -> str:
    """Plain-text table mirroring the per-class layout, values in percent."""
    lines = []
    header = f"{'Label':<6} {'Recall':>8} {'Precision':>10} {'F1 score':>9} {'Support':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report["per_class"]:
        if row["absent"]:
            lines.append(f"{row['label']:<6} {'-':>8} {'-':>10} {'-':>9} {row['support']:>8}")
        else:
            lines.append(
                f"{row['label']:<6} {100 * row['recall']:>8.2f} "
                f"{100 * row['precision']:>10.2f} {100 * row['f1']:>9.2f} "
                f"{row['support']:>8}"
            )
    w = report["weighted"]
    lines.append("-" * len(header))
    lines.append(
        f"{'Avg.':<6} {100 * w['recall']:>8.2f} {100 * w['precision']:>10.2f} "
        f"{100 * w['f1']:>9.2f} {report['n_segments']:>8}"
    )
    return "\n".join(lines) + "\n"


def format_confusion_table(report: dict) -> str:
    """Row-normalized confusion percentages as text."""
    conf = report["confusion"]
    labels = conf["labels"]
    has_unassigned = any(conf["unassigned_counts"])
    cols = labels + (["none"] if has_unassigned else [])
    lines = ["true\\pred " + " ".join(f"{c:>6}" for c in cols)]
    for i, lbl in enumerate(labels):
        row = [f"{conf['row_percent'][i][j]:>6.1f}" for j in range(len(labels))]
        if has_unassigned:
            row.append(f"{conf['unassigned_percent'][i]:>6.1f}")
        lines.append(f"{lbl:<9} " + " ".join(row))
    return "\n".join(lines) + "\n"
