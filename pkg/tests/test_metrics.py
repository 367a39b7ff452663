"""Graph constraint, greedy matching, and recall metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triplet_debias.graphs import (
    BoundingBox,
    DebiasedGraph,
    DebiasedTriplet,
    GroundTruthEntity,
    GroundTruthGraph,
    GroundTruthRelation,
    ValidationError,
)
from triplet_debias.metrics import apply_graph_constraint, evaluate, match_triplets

from conftest import grid_box
from oracles import quadratic_evaluate, summarize_quadratic


def triplet(si, oi, s_label, o_label, rel, score):
    return DebiasedTriplet(
        subject_index=si,
        object_index=oi,
        subject_label=s_label,
        object_label=o_label,
        rel_label=rel,
        score=score,
    )


def prediction(image_id, entity_labels, triplets, boxes=None):
    boxes = boxes or tuple(grid_box(i) for i in range(len(entity_labels)))
    return DebiasedGraph(
        image_id=image_id, entity_labels=tuple(entity_labels), entity_boxes=tuple(boxes), triplets=tuple(triplets)
    )


def gt_graph(image_id, labels, relations, boxes=None):
    boxes = boxes or tuple(grid_box(i) for i in range(len(labels)))
    return GroundTruthGraph(
        image_id=image_id,
        entities=tuple(GroundTruthEntity(box=b, label=l) for b, l in zip(boxes, labels)),
        relations=tuple(GroundTruthRelation(subject_index=s, object_index=o, rel=r) for s, o, r in relations),
    )


class TestGraphConstraint:
    def test_keeps_best_per_ordered_pair(self):
        # DebiasedTriplet forbids same-pair duplicates inside one graph, so feed raw lists.
        t1 = triplet(0, 1, 2, 3, 0, 0.9)
        t2 = triplet(0, 1, 2, 3, 1, 0.5)
        assert apply_graph_constraint([t1, t2]) == [t1]

    def test_ordered_pairs_are_distinct(self):
        t1 = triplet(1, 2, 0, 0, 0, 0.9)
        t2 = triplet(2, 1, 0, 0, 0, 0.5)
        assert apply_graph_constraint([t1, t2]) == [t1, t2]

    def test_idempotent(self):
        ts = [triplet(0, 1, 0, 0, 0, 0.9), triplet(0, 1, 0, 0, 1, 0.8), triplet(1, 0, 0, 0, 0, 0.7)]
        once = apply_graph_constraint(ts)
        assert apply_graph_constraint(once) == once

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0, 1)), max_size=12))
    def test_never_increases_count(self, raw):
        ts = [
            triplet(s, o, 0, 0, 0, score)
            for s, o, score in raw
            if s != o
        ]
        ts.sort(key=lambda t: -t.score)
        assert len(apply_graph_constraint(ts)) <= len(ts)


class TestMatching:
    def test_perfect_prediction_matches_everything(self):
        gt = gt_graph("im", [5, 7], [(0, 1, 3)])
        pred = prediction("im", [5, 7], [triplet(0, 1, 5, 7, 3, 1.0)])
        assert match_triplets(pred, gt) == {0}

    def test_low_subject_iou_unmatched(self):
        gt = gt_graph("im", [5, 7], [(0, 1, 3)], boxes=(BoundingBox(0, 0, 10, 10), grid_box(1)))
        # prediction subject box shares only 40% IoU with the annotation
        pred_boxes = (BoundingBox(0, 0, 10, 4.0), grid_box(1))
        pred = prediction("im", [5, 7], [triplet(0, 1, 5, 7, 3, 1.0)], boxes=pred_boxes)
        from triplet_debias.graphs import iou

        assert iou(pred_boxes[0], BoundingBox(0, 0, 10, 10)) == pytest.approx(0.4, abs=1e-9)
        assert match_triplets(pred, gt) == set()
        assert match_triplets(pred, gt, iou_threshold=0.4) == {0}

    def test_one_prediction_consumes_one_gt(self):
        gt = gt_graph("im", [5, 7], [(0, 1, 3), (0, 1, 3)])
        pred = prediction("im", [5, 7], [triplet(0, 1, 5, 7, 3, 1.0)])
        assert match_triplets(pred, gt) == {0}

    def test_top_k_truncation(self):
        gt = gt_graph("im", [5, 7, 9], [(0, 1, 3), (1, 2, 2)])
        pred = prediction(
            "im",
            [5, 7, 9],
            [triplet(0, 1, 5, 7, 3, 0.9), triplet(1, 2, 7, 9, 2, 0.8)],
        )
        assert match_triplets(pred, gt, top_k=1) == {0}
        assert match_triplets(pred, gt, top_k=2) == {0, 1}


class TestEvaluate:
    def test_perfect_predictions_reach_full_recall(self):
        gt = gt_graph("im", [5, 7, 9], [(0, 1, 3), (1, 2, 2)])
        pred = prediction(
            "im",
            [5, 7, 9],
            [triplet(0, 1, 5, 7, 3, 0.9), triplet(1, 2, 7, 9, 2, 0.8)],
        )
        report = evaluate([pred], [gt], ks=(50,), n_predicates=4)
        assert report.recall[50] == 1.0
        assert report.mean_recall[50] == 1.0
        assert report.image_count == 1

    def test_mean_recall_averages_defined_predicates(self):
        # predicate 0 fully recovered, predicate 1 missed, predicate 2 half recovered
        gt = gt_graph(
            "im",
            [1, 1, 1, 1],
            [(0, 1, 0), (1, 2, 1), (2, 3, 2), (3, 0, 2)],
        )
        pred = prediction(
            "im",
            [1, 1, 1, 1],
            [
                triplet(0, 1, 1, 1, 0, 0.9),
                triplet(1, 2, 1, 1, 0, 0.8),  # wrong predicate
                triplet(2, 3, 1, 1, 2, 0.7),
                triplet(3, 0, 1, 1, 1, 0.6),  # wrong predicate
            ],
        )
        report = evaluate([pred], [gt], ks=(50,), n_predicates=4)
        assert report.per_predicate_recall[50] == (1.0, 0.0, 0.5, None)
        assert report.mean_recall[50] == pytest.approx(0.5)
        assert report.recall[50] == pytest.approx(0.5)

    def test_id_mismatch_lists_unmatched(self):
        gt = gt_graph("im-a", [1], [])
        pred = prediction("im-b", [1], [])
        with pytest.raises(ValidationError, match="im-a.*im-b"):
            evaluate([pred], [gt], ks=(50,), n_predicates=2)

    def test_k_list_validated(self):
        gt = gt_graph("im", [1], [])
        pred = prediction("im", [1], [])
        with pytest.raises(ValidationError, match="K list"):
            evaluate([pred], [gt], ks=(), n_predicates=2)
        with pytest.raises(ValidationError, match="K list"):
            evaluate([pred], [gt], ks=(100, 50), n_predicates=2)

    def test_zero_shot_restriction(self):
        gt = gt_graph("im", [5, 7], [(0, 1, 3), (1, 0, 2)])
        pred = prediction(
            "im",
            [5, 7],
            [triplet(0, 1, 5, 7, 3, 0.9), triplet(1, 0, 7, 5, 2, 0.8)],
        )
        seen = frozenset({(5, 3, 7)})  # first GT combination was seen in training
        report = evaluate([pred], [gt], ks=(50,), n_predicates=4, seen_triplets=seen)
        assert report.recall[50] == 1.0
        assert report.zero_shot_recall[50] == 1.0
        report_missed = evaluate(
            [prediction("im", [5, 7], [triplet(0, 1, 5, 7, 3, 0.9)])],
            [gt],
            ks=(50,),
            n_predicates=4,
            seen_triplets=seen,
        )
        assert report_missed.recall[50] == 0.5
        assert report_missed.zero_shot_recall[50] == 0.0

    def test_rel_index_out_of_range_rejected(self):
        gt = gt_graph("im", [5, 7], [(0, 1, 9)])
        pred = prediction("im", [5, 7], [])
        with pytest.raises(ValidationError, match="out of range"):
            evaluate([pred], [gt], ks=(50,), n_predicates=4)


def random_eval_instance(rng: np.random.Generator, image_id: str):
    n_entities = int(rng.integers(2, 6))
    n_labels, n_predicates = 4, 3
    labels_gt = [int(rng.integers(n_labels)) for _ in range(n_entities)]
    boxes_gt = []
    for i in range(n_entities):
        x = float(rng.uniform(0, 40))
        y = float(rng.uniform(0, 40))
        boxes_gt.append(BoundingBox(x, y, x + float(rng.uniform(4, 12)), y + float(rng.uniform(4, 12))))
    pairs = [(s, o) for s in range(n_entities) for o in range(n_entities) if s != o]
    rng.shuffle(pairs)
    relations = [(s, o, int(rng.integers(n_predicates))) for s, o in pairs[: int(rng.integers(0, 5))]]
    # some GT duplicates to exercise one-to-one consumption
    if relations and rng.random() < 0.4:
        relations.append(relations[0])
    gt = gt_graph(image_id, labels_gt, relations, boxes=tuple(boxes_gt))

    labels_pred = [
        label if rng.random() < 0.7 else int(rng.integers(n_labels)) for label in labels_gt
    ]
    boxes_pred = []
    for box in boxes_gt:
        if rng.random() < 0.7:
            boxes_pred.append(box)
        else:
            dx = float(rng.uniform(-3, 3))
            boxes_pred.append(BoundingBox(box.x1 + dx, box.y1, box.x2 + dx, box.y2))
    triplets = []
    used = set()
    for s, o in pairs:
        if rng.random() < 0.6 and (s, o) not in used:
            used.add((s, o))
            triplets.append(
                triplet(s, o, labels_pred[s], labels_pred[o], int(rng.integers(n_predicates)), float(rng.uniform(0, 1)))
            )
    triplets.sort(key=lambda t: (-t.score, t.subject_index, t.object_index))
    pred = prediction(image_id, labels_pred, triplets, boxes=tuple(boxes_pred))
    return pred, gt


class TestOracleEquivalence:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_quadratic_reimplementation(self, seed):
        rng = np.random.default_rng(seed)
        preds, gts = [], []
        for i in range(int(rng.integers(1, 4))):
            pred, gt = random_eval_instance(rng, f"im-{i}")
            preds.append(pred)
            gts.append(gt)
        ks = (1, 2, 50)
        seen = frozenset({(0, 0, 0), (1, 1, 1), (2, 0, 3)})
        report = evaluate(preds, gts, ks=ks, n_predicates=3, seen_triplets=seen)
        oracle = summarize_quadratic(
            quadratic_evaluate(preds, gts, ks, 0.5, 3, seen_triplets=seen), ks
        )
        for k in ks:
            assert report.recall[k] == pytest.approx(oracle[k]["recall"], abs=0)
            assert report.mean_recall[k] == pytest.approx(oracle[k]["mean_recall"], abs=0)
            assert report.zero_shot_recall[k] == pytest.approx(oracle[k]["zs_recall"], abs=0)
            assert report.zero_shot_mean_recall[k] == pytest.approx(oracle[k]["zs_mean_recall"], abs=0)
            for mine, theirs in zip(report.per_predicate_recall[k], oracle[k]["per_predicate"]):
                if theirs is None:
                    assert mine is None
                else:
                    assert mine == pytest.approx(theirs, abs=0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_recall_monotone_in_k(self, seed):
        rng = np.random.default_rng(seed)
        preds, gts = [], []
        for i in range(2):
            pred, gt = random_eval_instance(rng, f"im-{i}")
            preds.append(pred)
            gts.append(gt)
        ks = (1, 2, 3, 10)
        report = evaluate(preds, gts, ks=ks, n_predicates=3, seen_triplets=frozenset())
        for lo, hi in zip(ks, ks[1:]):
            assert report.recall[lo] <= report.recall[hi] + 1e-12
            assert report.mean_recall[lo] <= report.mean_recall[hi] + 1e-12
            assert report.zero_shot_recall[lo] <= report.zero_shot_recall[hi] + 1e-12
