"""Graph-constrained triplet matching and recall / mean-recall / zero-shot metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .graphs import (
    DebiasedGraph,
    DebiasedTriplet,
    GroundTruthGraph,
    ValidationError,
    iou,
)


def apply_graph_constraint(triplets: Sequence[DebiasedTriplet]) -> list[DebiasedTriplet]:
    """Keep only the first (highest-scoring) triplet per ordered subject/object pair.

    Expects triplets already sorted by descending score; order is preserved.
    """
    kept: list[DebiasedTriplet] = []
    seen: set[tuple[int, int]] = set()
    for t in triplets:
        key = (t.subject_index, t.object_index)
        if key not in seen:
            seen.add(key)
            kept.append(t)
    return kept


def match_triplets(
    pred: DebiasedGraph,
    gt: GroundTruthGraph,
    iou_threshold: float = 0.5,
    top_k: int | None = None,
) -> set[int]:
    """Greedy rank-order matching of predicted triplets against ground truth.

    A ground-truth relation is matched when a prediction carries identical
    (subject, relationship, object) labels and both boxes overlap at IoU >=
    the threshold.  Each prediction consumes at most one ground-truth relation
    (the first still-unmatched one in annotation order) and vice versa.
    Returns the set of matched ground-truth relation indices.
    """
    by_labels: dict[tuple[int, int, int], list[int]] = {}
    for gi, grel in enumerate(gt.relations):
        key = (gt.entities[grel.subject_index].label, grel.rel, gt.entities[grel.object_index].label)
        by_labels.setdefault(key, []).append(gi)

    matched: set[int] = set()
    triplets = pred.triplets if top_k is None else pred.triplets[:top_k]
    for t in triplets:
        candidates = by_labels.get((t.subject_label, t.rel_label, t.object_label))
        if not candidates:
            continue
        sbox = pred.entity_boxes[t.subject_index]
        obox = pred.entity_boxes[t.object_index]
        for gi in candidates:
            if gi in matched:
                continue
            grel = gt.relations[gi]
            if (
                iou(sbox, gt.entities[grel.subject_index].box) >= iou_threshold
                and iou(obox, gt.entities[grel.object_index].box) >= iou_threshold
            ):
                matched.add(gi)
                break
    return matched


@dataclass(frozen=True)
class EvalReport:
    """Recall metrics for a prediction/ground-truth set, per cutoff K.

    ``per_predicate_recall[k]`` has one entry per predicate, ``None`` where the
    predicate never occurs in the ground truth.  Zero-shot fields are ``None``
    when no seen-triplet set was supplied.
    """

    ks: tuple[int, ...]
    image_count: int
    recall: dict[int, float]
    mean_recall: dict[int, float]
    per_predicate_recall: dict[int, tuple[float | None, ...]]
    zero_shot_recall: dict[int, float] | None
    zero_shot_mean_recall: dict[int, float] | None

    def to_record(self) -> dict:
        return {
            "ks": list(self.ks),
            "image_count": self.image_count,
            "recall": {str(k): v for k, v in self.recall.items()},
            "mean_recall": {str(k): v for k, v in self.mean_recall.items()},
            "per_predicate_recall": {str(k): list(v) for k, v in self.per_predicate_recall.items()},
            "zero_shot_recall": None
            if self.zero_shot_recall is None
            else {str(k): v for k, v in self.zero_shot_recall.items()},
            "zero_shot_mean_recall": None
            if self.zero_shot_mean_recall is None
            else {str(k): v for k, v in self.zero_shot_mean_recall.items()},
        }

    def format_table(self) -> str:
        headers = ["metric"] + [f"@{k}" for k in self.ks]
        rows = [
            ["R"] + [_fmt(self.recall[k]) for k in self.ks],
            ["mR"] + [_fmt(self.mean_recall[k]) for k in self.ks],
        ]
        if self.zero_shot_recall is not None:
            rows.append(["zs-R"] + [_fmt(self.zero_shot_recall[k]) for k in self.ks])
        if self.zero_shot_mean_recall is not None:
            rows.append(["zs-mR"] + [_fmt(self.zero_shot_mean_recall[k]) for k in self.ks])
        rows.append(["images", str(self.image_count)] + [""] * (len(self.ks) - 1))
        widths = [max(len(row[i]) for row in [headers] + rows) for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
        for row in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        return "\n".join(lines)


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def evaluate(
    predictions: Iterable[DebiasedGraph],
    ground_truths: Iterable[GroundTruthGraph],
    *,
    ks: Sequence[int] = (50, 100),
    iou_threshold: float = 0.5,
    n_predicates: int,
    seen_triplets: frozenset[tuple[int, int, int]] | None = None,
) -> EvalReport:
    """Macro-averaged R@K, mR@K and zero-shot variants over aligned images.

    Per image: apply the graph constraint, truncate to the top K, match
    greedily, and average per-image recalls.  Mean recall averages the
    per-predicate recalls over predicates that occur in the ground truth;
    zero-shot variants restrict the ground truth to label combinations
    absent from ``seen_triplets``.
    """
    ks = tuple(ks)
    if not ks or list(ks) != sorted(set(ks)) or ks[0] < 1:
        raise ValidationError(f"K list must be non-empty, ascending, and positive: {ks!r}")
    preds = {g.image_id: g for g in predictions}
    gts = list(ground_truths)
    gt_ids = {g.image_id for g in gts}
    missing = sorted(gt_ids - preds.keys()) + sorted(preds.keys() - gt_ids)
    if missing or len(gts) != len(gt_ids):
        dupes = len(gts) != len(gt_ids)
        raise ValidationError(
            "prediction/ground-truth image ids do not align"
            + (f": unmatched {missing}" if missing else "")
            + (": duplicate ground-truth ids" if dupes else "")
        )

    recalls: dict[int, list[float]] = {k: [] for k in ks}
    per_pred: dict[int, list[list[float]]] = {k: [[] for _ in range(n_predicates)] for k in ks}
    zs_recalls: dict[int, list[float]] = {k: [] for k in ks}
    zs_per_pred: dict[int, list[list[float]]] = {k: [[] for _ in range(n_predicates)] for k in ks}

    for gt in gts:
        for grel in gt.relations:
            if grel.rel >= n_predicates:
                raise ValidationError(
                    f"image {gt.image_id}: relationship index {grel.rel} out of range (N_r={n_predicates})"
                )
        pred = preds[gt.image_id]
        ranked = sorted(pred.triplets, key=lambda t: (-t.score, t.subject_index, t.object_index))
        constrained_graph = DebiasedGraph(
            image_id=pred.image_id,
            entity_labels=pred.entity_labels,
            entity_boxes=pred.entity_boxes,
            triplets=tuple(apply_graph_constraint(ranked)),
        )
        zs_indices: set[int] | None = None
        if seen_triplets is not None:
            zs_indices = {
                gi
                for gi, grel in enumerate(gt.relations)
                if (gt.entities[grel.subject_index].label, grel.rel, gt.entities[grel.object_index].label)
                not in seen_triplets
            }
        for k in ks:
            matched = match_triplets(constrained_graph, gt, iou_threshold=iou_threshold, top_k=k)
            if gt.relations:
                recalls[k].append(len(matched) / len(gt.relations))
            totals: dict[int, int] = {}
            hits: dict[int, int] = {}
            for gi, grel in enumerate(gt.relations):
                totals[grel.rel] = totals.get(grel.rel, 0) + 1
                if gi in matched:
                    hits[grel.rel] = hits.get(grel.rel, 0) + 1
            for r, total in totals.items():
                per_pred[k][r].append(hits.get(r, 0) / total)
            if zs_indices is not None and zs_indices:
                zs_recalls[k].append(len(matched & zs_indices) / len(zs_indices))
                zs_totals: dict[int, int] = {}
                zs_hits: dict[int, int] = {}
                for gi in zs_indices:
                    r = gt.relations[gi].rel
                    zs_totals[r] = zs_totals.get(r, 0) + 1
                    if gi in matched:
                        zs_hits[r] = zs_hits.get(r, 0) + 1
                for r, total in zs_totals.items():
                    zs_per_pred[k][r].append(zs_hits.get(r, 0) / total)

    per_predicate_recall = {
        k: tuple(_mean(v) if v else None for v in per_pred[k]) for k in ks
    }
    report = EvalReport(
        ks=ks,
        image_count=len(gts),
        recall={k: _mean(recalls[k]) if recalls[k] else 0.0 for k in ks},
        mean_recall={
            k: _mean([v for v in per_predicate_recall[k] if v is not None])
            if any(v is not None for v in per_predicate_recall[k])
            else 0.0
            for k in ks
        },
        per_predicate_recall=per_predicate_recall,
        zero_shot_recall=None
        if seen_triplets is None
        else {k: _mean(zs_recalls[k]) if zs_recalls[k] else 0.0 for k in ks},
        zero_shot_mean_recall=None
        if seen_triplets is None
        else {
            k: _mean([_mean(v) for v in zs_per_pred[k] if v])
            if any(zs_per_pred[k])
            else 0.0
            for k in ks
        },
    )
    return report


def write_per_predicate_csv(sink: IO[str], report: EvalReport, labels: Sequence[str] | None = None) -> None:
    """Per-predicate recall table for plotting recall-improvement charts."""
    n = len(next(iter(report.per_predicate_recall.values())))
    if labels is not None and len(labels) != n:
        raise ValidationError(f"got {len(labels)} labels for {n} predicates")
    header = ["predicate_index", "predicate"] + [f"recall@{k}" for k in report.ks]
    sink.write(",".join(header) + "\n")
    for r in range(n):
        name = labels[r] if labels is not None else str(r)
        cells = [str(r), name]
        for k in report.ks:
            value = report.per_predicate_recall[k][r]
            cells.append("" if value is None else repr(value))
        sink.write(",".join(cells) + "\n")


def write_report_json(sink: IO[str], report: EvalReport) -> None:
    json.dump(report.to_record(), sink, ensure_ascii=False, indent=2)
    sink.write("\n")
