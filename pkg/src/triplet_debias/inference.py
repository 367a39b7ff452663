"""Per-triplet posterior inference and cross-triplet conflict resolution.

The measurement model's probability vectors enter the within-triplet network
as soft evidence.  After marginalizing the evidence nodes, the joint posterior
of one triplet is proportional to

    subj_probs[s] * obj_probs[o] * (rel_probs[r] / p_rel[r]) * P(r | s, o)

so the relationship measurement is divided by its training marginal (the
debiasing step) and re-weighted by the pair-conditional prior.  Entities
shared by several triplets are then resolved by a synchronous object-updating
pass followed by relationship re-inference with the final entity labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graphs import DebiasedGraph, DebiasedTriplet, MeasurementGraph, ValidationError, as_distribution
from .prior import PriorModel

CONFLICT_STRATEGIES = ("two_step", "mode", "none")
TASK_MODES = ("predcls", "sgcls", "sgdet")


@dataclass(frozen=True, eq=False)
class TripletEvidence:
    """Measurement probability vectors for one subject/object/relationship proposal."""

    subj_probs: np.ndarray
    obj_probs: np.ndarray
    rel_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subj_probs", as_distribution(self.subj_probs, context="subj_probs"))
        object.__setattr__(self, "obj_probs", as_distribution(self.obj_probs, context="obj_probs"))
        object.__setattr__(self, "rel_probs", as_distribution(self.rel_probs, context="rel_probs"))


@dataclass(frozen=True, eq=False)
class PosteriorTable:
    """Normalized joint posterior over (subject, relationship, object)."""

    table: np.ndarray  # shape (N_e, N_r, N_e)
    normalizer: float

    def map_labels(self) -> tuple[int, int, int]:
        """Argmax cell; exact ties resolve to the smallest (s, r, o) in that order."""
        flat = int(np.argmax(self.table))
        s, r, o = np.unravel_index(flat, self.table.shape)
        return int(s), int(r), int(o)


@dataclass(frozen=True)
class InferenceConfig:
    """Knobs for one debiasing run.

    ``entropy_threshold`` is in nats: pairs whose relationship measurement has
    entropy strictly above it are left at their measurement argmax.  The
    default (+inf) refines everything.  In ``predcls`` task mode entity labels
    are pinned to the evidence argmax regardless of ``conflict_strategy``.
    """

    entropy_threshold: float = math.inf
    conflict_strategy: str = "two_step"
    task_mode: str = "sgcls"

    def __post_init__(self):
        if not (isinstance(self.entropy_threshold, (int, float)) and self.entropy_threshold >= 0.0):
            raise ValidationError(f"entropy_threshold must be >= 0, got {self.entropy_threshold!r}")
        if self.conflict_strategy not in CONFLICT_STRATEGIES:
            raise ValidationError(f"unknown conflict strategy {self.conflict_strategy!r}")
        if self.task_mode not in TASK_MODES:
            raise ValidationError(f"unknown task mode {self.task_mode!r}")


def _check_dims(ev: TripletEvidence, prior: PriorModel) -> None:
    if ev.subj_probs.size != prior.n_objects or ev.obj_probs.size != prior.n_objects:
        raise ValidationError(
            f"entity evidence has {ev.subj_probs.size} classes, prior expects {prior.n_objects}"
        )
    if ev.rel_probs.size != prior.n_predicates:
        raise ValidationError(
            f"relationship evidence has {ev.rel_probs.size} classes, prior expects {prior.n_predicates}"
        )


def posterior_joint(ev: TripletEvidence, prior: PriorModel) -> PosteriorTable:
    """Full joint posterior table of one triplet under soft evidence."""
    _check_dims(ev, prior)
    n_e, n_r = prior.n_objects, prior.n_predicates
    ratio = prior.evidence_ratio(ev.rel_probs)
    rows = np.broadcast_to(prior.p_rel, (n_e, n_e, n_r)).copy()
    for (s, o), row in prior.cond.items():
        rows[s, o] = row
    weighted = rows * ratio  # (s, o, r)
    table = (ev.subj_probs[:, None, None] * ev.obj_probs[None, :, None]) * weighted
    table = np.ascontiguousarray(np.transpose(table, (0, 2, 1)))  # (s, r, o)
    normalizer = float(table.sum())
    if normalizer <= 0.0:
        raise ValidationError("evidence incompatible with prior support")
    table = table / normalizer
    table.setflags(write=False)
    return PosteriorTable(table=table, normalizer=normalizer)


def wti_map(ev: TripletEvidence, prior: PriorModel) -> tuple[int, int, int, float]:
    """MAP labels of one triplet plus the unnormalized posterior value there.

    Searches pair-by-pair instead of materializing the full joint, which keeps
    per-triplet cost at O(seen pairs * N_r + N_e^2).  Exact ties break to the
    smallest (subject, relationship, object), in that order.
    """
    _check_dims(ev, prior)
    ratio = prior.evidence_ratio(ev.rel_probs)
    fallback_scores = ratio * prior.p_rel
    fallback_r = int(np.argmax(fallback_scores))
    fallback_best = float(fallback_scores[fallback_r])

    pair_outer = ev.subj_probs[:, None] * ev.obj_probs[None, :]
    best_per_pair = pair_outer * fallback_best
    rows = prior._pair_rows  # type: ignore[attr-defined]
    rows_s = prior._rows_s  # type: ignore[attr-defined]
    rows_o = prior._rows_o  # type: ignore[attr-defined]
    if rows.shape[0]:
        stored_scores = rows * ratio
        best_per_pair[rows_s, rows_o] = pair_outer[rows_s, rows_o] * stored_scores.max(axis=1)

    best = float(best_per_pair.max())
    if best <= 0.0:
        raise ValidationError("evidence incompatible with prior support")

    s_star = int(np.argmax(np.any(best_per_pair == best, axis=1)))
    r_star, o_star = None, None
    for o in np.flatnonzero(best_per_pair[s_star] == best):
        o = int(o)
        row = prior.cond.get((s_star, o))
        r = fallback_r if row is None else int(np.argmax(row * ratio))
        if r_star is None or (r, o) < (r_star, o_star):
            r_star, o_star = r, o
    return s_star, r_star, o_star, best


def relationship_entropy(rel_probs) -> float:
    """Shannon entropy in nats, with 0 * ln 0 taken as 0."""
    p = np.asarray(rel_probs, dtype=np.float64)
    positive = p[p > 0.0]
    return float(-(positive * np.log(positive)).sum())


def object_update(
    entity_index: int,
    graph: MeasurementGraph,
    wti_results: Mapping[int, tuple[int, int, int]],
    prior: PriorModel,
) -> int:
    """Resolve one entity label against all triplets it participates in.

    Each candidate label is scored by its measurement probability times the
    summed conditional prior of the connected triplets' frozen labels (the
    entity substituted into its own slot, the partner slots held fixed).
    Entities in no covered triplet, or with an all-zero score, keep their
    measurement argmax.
    """
    ent = graph.entities[entity_index]
    if ent.class_probs.size != prior.n_objects:
        raise ValidationError(
            f"entity evidence has {ent.class_probs.size} classes, prior expects {prior.n_objects}"
        )
    terms = np.zeros(prior.n_objects)
    touched = False
    for pair_index, (s_label, r_label, o_label) in wti_results.items():
        pair = graph.pairs[pair_index]
        if pair.subject_index == entity_index:
            terms += prior.conditional_over_subjects(o_label, r_label)
            touched = True
        if pair.object_index == entity_index:
            terms += prior.conditional_over_objects(s_label, r_label)
            touched = True
    measurement_argmax = int(np.argmax(ent.class_probs))
    if not touched:
        return measurement_argmax
    scores = ent.class_probs * terms
    if float(scores.max()) <= 0.0:
        return measurement_argmax
    return int(np.argmax(scores))


def relationship_update(rel_probs, s: int, o: int, prior: PriorModel) -> int:
    """Re-infer a relationship label conditioned on final subject/object labels."""
    rel_probs = np.asarray(rel_probs, dtype=np.float64)
    if rel_probs.size != prior.n_predicates:
        raise ValidationError(
            f"relationship evidence has {rel_probs.size} classes, prior expects {prior.n_predicates}"
        )
    scores = prior.evidence_ratio(rel_probs) * prior.conditional(s, o)
    return int(np.argmax(scores))


def measurement_argmax_graph(graph: MeasurementGraph) -> DebiasedGraph:
    """Baseline graph: every label at its measurement argmax, score = product of maxima."""
    entity_labels = tuple(int(np.argmax(e.class_probs)) for e in graph.entities)
    triplets = []
    for pair in graph.pairs:
        r = int(np.argmax(pair.rel_probs))
        s_label = entity_labels[pair.subject_index]
        o_label = entity_labels[pair.object_index]
        score = float(
            graph.entities[pair.subject_index].class_probs[s_label]
            * graph.entities[pair.object_index].class_probs[o_label]
            * pair.rel_probs[r]
        )
        triplets.append(
            DebiasedTriplet(
                subject_index=pair.subject_index,
                object_index=pair.object_index,
                subject_label=s_label,
                object_label=o_label,
                rel_label=r,
                score=score,
            )
        )
    triplets.sort(key=lambda t: (-t.score, t.subject_index, t.object_index))
    return DebiasedGraph(
        image_id=graph.image_id,
        entity_labels=entity_labels,
        entity_boxes=tuple(e.box for e in graph.entities),
        triplets=tuple(triplets),
    )


def _mode_label(labels: Sequence[int]) -> int:
    counts: dict[int, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    best = max(counts.values())
    return min(label for label, count in counts.items() if count == best)


def debias_graph(graph: MeasurementGraph, prior: PriorModel, config: InferenceConfig) -> DebiasedGraph:
    """Debias one image: gate, per-triplet MAP, conflict resolution, re-inference.

    Pairs whose relationship entropy exceeds the threshold stay frozen at their
    measurement argmax and do not drive entity resolution, so a threshold of 0
    reproduces the measurement baseline exactly.
    """
    if graph.entities:
        if graph.n_entity_classes != prior.n_objects:
            raise ValidationError(
                f"image {graph.image_id}: entity evidence has {graph.n_entity_classes} classes, "
                f"prior expects {prior.n_objects}"
            )
    if graph.pairs and graph.n_rel_classes != prior.n_predicates:
        raise ValidationError(
            f"image {graph.image_id}: relationship evidence has {graph.n_rel_classes} classes, "
            f"prior expects {prior.n_predicates}"
        )

    ent_argmax = [int(np.argmax(e.class_probs)) for e in graph.entities]
    refined = [relationship_entropy(p.rel_probs) <= config.entropy_threshold for p in graph.pairs]

    resolve_entities = config.task_mode != "predcls" and config.conflict_strategy != "none"
    wti_results: dict[int, tuple[int, int, int]] = {}
    if resolve_entities:
        for idx, pair in enumerate(graph.pairs):
            if not refined[idx]:
                continue
            ev = TripletEvidence(
                subj_probs=graph.entities[pair.subject_index].class_probs,
                obj_probs=graph.entities[pair.object_index].class_probs,
                rel_probs=pair.rel_probs,
            )
            s, r, o, _ = wti_map(ev, prior)
            wti_results[idx] = (s, r, o)

    if not resolve_entities or not wti_results:
        entity_labels = list(ent_argmax)
    elif config.conflict_strategy == "two_step":
        entity_labels = [object_update(i, graph, wti_results, prior) for i in range(len(graph.entities))]
    else:  # mode
        occurrences: dict[int, list[int]] = {}
        for idx, (s, _, o) in wti_results.items():
            pair = graph.pairs[idx]
            occurrences.setdefault(pair.subject_index, []).append(s)
            occurrences.setdefault(pair.object_index, []).append(o)
        entity_labels = [
            _mode_label(occurrences[i]) if i in occurrences else ent_argmax[i]
            for i in range(len(graph.entities))
        ]

    triplets = []
    for idx, pair in enumerate(graph.pairs):
        s_label = entity_labels[pair.subject_index]
        o_label = entity_labels[pair.object_index]
        subj_probs = graph.entities[pair.subject_index].class_probs
        obj_probs = graph.entities[pair.object_index].class_probs
        if refined[idx]:
            r_label = relationship_update(pair.rel_probs, s_label, o_label, prior)
            ratio = prior.evidence_ratio(pair.rel_probs)
            score = float(
                (subj_probs[s_label] * obj_probs[o_label])
                * (ratio[r_label] * prior.conditional(s_label, o_label)[r_label])
            )
        else:
            r_label = int(np.argmax(pair.rel_probs))
            score = float(subj_probs[s_label] * obj_probs[o_label] * pair.rel_probs[r_label])
        triplets.append(
            DebiasedTriplet(
                subject_index=pair.subject_index,
                object_index=pair.object_index,
                subject_label=s_label,
                object_label=o_label,
                rel_label=r_label,
                score=score,
            )
        )
    triplets.sort(key=lambda t: (-t.score, t.subject_index, t.object_index))
    return DebiasedGraph(
        image_id=graph.image_id,
        entity_labels=tuple(entity_labels),
        entity_boxes=tuple(e.box for e in graph.entities),
        triplets=tuple(triplets),
    )
