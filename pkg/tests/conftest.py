"""Shared randomized builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from triplet_debias.graphs import (
    BoundingBox,
    EntityMeasurement,
    GroundTruthEntity,
    GroundTruthGraph,
    GroundTruthRelation,
    MeasurementGraph,
    PairMeasurement,
)
from triplet_debias.inference import TripletEvidence
from triplet_debias.prior import PriorModel, TripletCounts, estimate_prior


def random_distribution(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n))


def one_hot(n: int, index: int) -> np.ndarray:
    vec = np.zeros(n)
    vec[index] = 1.0
    return vec


def random_counts(rng: np.random.Generator, n_objects: int, n_predicates: int, n_pairs: int) -> TripletCounts:
    valid: dict[tuple[int, int, int], float] = {}
    for _ in range(n_pairs):
        s = int(rng.integers(n_objects))
        o = int(rng.integers(n_objects))
        for r in range(n_predicates):
            if rng.random() < 0.7:
                key = (s, r, o)
                valid[key] = valid.get(key, 0) + int(rng.integers(1, 20))
    if not valid:
        valid[(0, 0, 0)] = 1
    return TripletCounts(n_objects=n_objects, n_predicates=n_predicates, valid=valid, invalid={})


def random_prior(rng: np.random.Generator, n_objects: int, n_predicates: int, n_pairs: int = 4) -> PriorModel:
    return estimate_prior(random_counts(rng, n_objects, n_predicates, n_pairs))


def random_evidence(rng: np.random.Generator, n_objects: int, n_predicates: int) -> TripletEvidence:
    return TripletEvidence(
        subj_probs=random_distribution(rng, n_objects),
        obj_probs=random_distribution(rng, n_objects),
        rel_probs=random_distribution(rng, n_predicates),
    )


def grid_box(slot: int) -> BoundingBox:
    return BoundingBox(10.0 * slot, 0.0, 10.0 * slot + 9.0, 9.0)


def random_measurement_graph(
    rng: np.random.Generator,
    n_objects: int,
    n_predicates: int,
    n_entities: int = 4,
    max_pairs: int = 4,
    image_id: str = "img-0",
    one_hot_entities: bool = False,
) -> MeasurementGraph:
    entities = []
    for i in range(n_entities):
        probs = (
            one_hot(n_objects, int(rng.integers(n_objects)))
            if one_hot_entities
            else random_distribution(rng, n_objects)
        )
        entities.append(EntityMeasurement(box=grid_box(i), class_probs=probs))
    candidates = [(s, o) for s in range(n_entities) for o in range(n_entities) if s != o]
    rng.shuffle(candidates)
    pairs = tuple(
        PairMeasurement(subject_index=s, object_index=o, rel_probs=random_distribution(rng, n_predicates))
        for s, o in candidates[: min(max_pairs, len(candidates))]
    )
    return MeasurementGraph(image_id=image_id, entities=tuple(entities), pairs=pairs)


def ground_truth_for(graph: MeasurementGraph, rng: np.random.Generator, n_predicates: int) -> GroundTruthGraph:
    entities = tuple(
        GroundTruthEntity(box=e.box, label=int(np.argmax(e.class_probs))) for e in graph.entities
    )
    relations = tuple(
        GroundTruthRelation(
            subject_index=p.subject_index,
            object_index=p.object_index,
            rel=int(rng.integers(n_predicates)),
        )
        for p in graph.pairs
    )
    return GroundTruthGraph(image_id=graph.image_id, entities=entities, relations=relations)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
