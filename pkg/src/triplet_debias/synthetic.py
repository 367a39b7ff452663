"""Deterministic synthetic long-tailed corpus with a biased measurement simulator.

The training distribution concentrates most triplets on one head pair whose
dominant predicate also dominates the global marginal; four tail pairs each
prefer a different predicate.  The simulated measurement model mixes the true
relationship with a marginal-shaped bias vector, mimicking an upstream model
trained on the skewed data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import (
    BoundingBox,
    EntityMeasurement,
    GroundTruthEntity,
    GroundTruthGraph,
    GroundTruthRelation,
    MeasurementGraph,
    PairMeasurement,
    Vocabulary,
    vocabulary_hash,
)
from .prior import TripletCounts

OBJECTS = ("block", "table", "lamp", "desk", "cup", "shelf", "book", "chair", "bottle", "rack")
PREDICATES = ("on", "holding", "under", "near", "attached_to")

HEAD_PAIR = (0, 1)  # block-table, dominated by "on"
TAIL_PAIRS = ((2, 3), (4, 5), (6, 7), (8, 9))  # each dominated by predicate k+1

# Out-of-vocabulary aliases for fixture embeddings: predicate text -> vocab index.
INVALID_ALIASES = {"resting_on": 0, "gripping": 1, "beneath": 2}


@dataclass(frozen=True)
class SyntheticSpec:
    total_triplets: int = 20000
    head_share: float = 0.9
    head_dominance: float = 0.85
    tail_dominance: float = 0.8
    n_images: int = 60
    alpha_range: tuple[float, float] = (0.25, 0.55)
    bias_on_head_predicate: float = 0.8
    # 1.0 keeps entity evidence one-hot (known-label tasks); below 1.0 the true
    # label is mixed with uniform class noise (detection-style tasks).
    entity_alpha: float = 1.0
    seed: int = 7


def make_vocabulary() -> Vocabulary:
    return Vocabulary(OBJECTS, PREDICATES)


def pair_predicate_weights(pair: tuple[int, int], spec: SyntheticSpec) -> np.ndarray:
    """Ground-truth predicate distribution of one subject/object pair."""
    n_r = len(PREDICATES)
    if pair == HEAD_PAIR:
        dominant, share = 0, spec.head_dominance
    else:
        dominant, share = TAIL_PAIRS.index(pair) + 1, spec.tail_dominance
    weights = np.full(n_r, (1.0 - share) / (n_r - 1))
    weights[dominant] = share
    return weights


def make_training_counts(spec: SyntheticSpec, vocab: Vocabulary) -> TripletCounts:
    """Exact (unsampled) training counts following the head/tail layout."""
    valid: dict[tuple[int, int, int], float] = {}
    head_total = spec.total_triplets * spec.head_share
    tail_total = spec.total_triplets * (1.0 - spec.head_share) / len(TAIL_PAIRS)
    for pair in (HEAD_PAIR, *TAIL_PAIRS):
        total = head_total if pair == HEAD_PAIR else tail_total
        weights = pair_predicate_weights(pair, spec)
        for r, w in enumerate(weights):
            count = int(round(total * w))
            if count > 0:
                valid[(pair[0], r, pair[1])] = count
    return TripletCounts(
        n_objects=vocab.n_objects,
        n_predicates=vocab.n_predicates,
        valid=valid,
        invalid={},
        vocab_hash=vocabulary_hash(vocab),
    )


def bias_vector(spec: SyntheticSpec) -> np.ndarray:
    """Measurement bias: most mass on the head predicate, the rest uniform."""
    n_r = len(PREDICATES)
    bias = np.full(n_r, (1.0 - spec.bias_on_head_predicate) / (n_r - 1))
    bias[0] = spec.bias_on_head_predicate
    return bias


def biased_rel_probs(true_rel: int, alpha: float, spec: SyntheticSpec) -> np.ndarray:
    one_hot = np.zeros(len(PREDICATES))
    one_hot[true_rel] = 1.0
    probs = alpha * one_hot + (1.0 - alpha) * bias_vector(spec)
    return probs / probs.sum()


def _one_hot(n: int, index: int) -> np.ndarray:
    vec = np.zeros(n)
    vec[index] = 1.0
    return vec


def _grid_box(slot: int) -> BoundingBox:
    x = float(10 * slot)
    return BoundingBox(x, 0.0, x + 8.0, 8.0)


def make_test_images(
    spec: SyntheticSpec, vocab: Vocabulary, rng: np.random.Generator
) -> tuple[list[MeasurementGraph], list[GroundTruthGraph]]:
    """Paired measurement/ground-truth images in known-entity (one-hot) form.

    Each image holds two head-pair instances and one instance of every tail
    pair; ground-truth relationships are sampled from the pair distributions
    and the measurement relationship vectors are biased toward the head
    predicate with a per-pair mixing weight drawn from ``alpha_range``.
    """
    pair_layout = [HEAD_PAIR, HEAD_PAIR, *TAIL_PAIRS]
    measurements, ground_truths = [], []
    for i in range(spec.n_images):
        entity_labels: list[int] = []
        pair_slots: list[tuple[int, int]] = []
        for s_label, o_label in pair_layout:
            base = len(entity_labels)
            entity_labels.extend((s_label, o_label))
            pair_slots.append((base, base + 1))
        boxes = [_grid_box(slot) for slot in range(len(entity_labels))]
        entity_probs = []
        for label in entity_labels:
            probs = _one_hot(vocab.n_objects, label)
            if spec.entity_alpha < 1.0:
                noise = rng.dirichlet(np.ones(vocab.n_objects))
                probs = spec.entity_alpha * probs + (1.0 - spec.entity_alpha) * noise
                probs = probs / probs.sum()
            entity_probs.append(probs)
        entities_m = tuple(
            EntityMeasurement(box=box, class_probs=probs)
            for box, probs in zip(boxes, entity_probs)
        )
        entities_gt = tuple(
            GroundTruthEntity(box=box, label=label) for box, label in zip(boxes, entity_labels)
        )
        pairs, relations = [], []
        for (si, oi), pair in zip(pair_slots, pair_layout):
            weights = pair_predicate_weights(pair, spec)
            true_rel = int(rng.choice(len(PREDICATES), p=weights))
            alpha = float(rng.uniform(*spec.alpha_range))
            pairs.append(
                PairMeasurement(
                    subject_index=si,
                    object_index=oi,
                    rel_probs=biased_rel_probs(true_rel, alpha, spec),
                )
            )
            relations.append(GroundTruthRelation(subject_index=si, object_index=oi, rel=true_rel))
        image_id = f"synthetic-{i:04d}"
        measurements.append(MeasurementGraph(image_id=image_id, entities=entities_m, pairs=tuple(pairs)))
        ground_truths.append(
            GroundTruthGraph(image_id=image_id, entities=entities_gt, relations=tuple(relations))
        )
    return measurements, ground_truths


def make_corpus(spec: SyntheticSpec):
    """Vocabulary, training counts, and paired test images for one seed."""
    vocab = make_vocabulary()
    counts = make_training_counts(spec, vocab)
    rng = np.random.default_rng(spec.seed)
    measurements, ground_truths = make_test_images(spec, vocab, rng)
    return vocab, counts, measurements, ground_truths


def make_alias_counts(spec: SyntheticSpec, vocab: Vocabulary) -> TripletCounts:
    """Training counts plus out-of-vocabulary alias triplets for augmentation demos."""
    counts = make_training_counts(spec, vocab)
    invalid: dict[tuple[int, str, int], float] = {}
    for alias, target in INVALID_ALIASES.items():
        for pair in (HEAD_PAIR, *TAIL_PAIRS):
            base = counts.valid.get((pair[0], target, pair[1]), 0)
            if base:
                invalid[(pair[0], alias, pair[1])] = max(1, int(base * 0.1))
    return TripletCounts(
        n_objects=counts.n_objects,
        n_predicates=counts.n_predicates,
        valid=dict(counts.valid),
        invalid=invalid,
        vocab_hash=counts.vocab_hash,
    )


CHAIN_OBJECTS = ("anchor", "bridge", "cap")
CHAIN_PREDICATES = ("joins", "caps")


def make_chain_vocabulary() -> Vocabulary:
    return Vocabulary(CHAIN_OBJECTS, CHAIN_PREDICATES)


def make_chain_counts(vocab: Vocabulary) -> TripletCounts:
    """Long-tailed chain corpus: the head predicate dominates the marginal."""
    valid = {
        (0, 0, 1): 800,  # anchor -joins-> bridge (head)
        (1, 0, 2): 60,  # bridge -joins-> cap
        (2, 1, 2): 40,  # cap -caps-> cap (tail predicate)
        (0, 1, 2): 10,  # anchor -caps-> cap
    }
    return TripletCounts(
        n_objects=vocab.n_objects,
        n_predicates=vocab.n_predicates,
        valid=valid,
        invalid={},
        vocab_hash=vocabulary_hash(vocab),
    )


def make_chain_images(
    n_images: int, rng: np.random.Generator
) -> tuple[list[MeasurementGraph], list[GroundTruthGraph]]:
    """Two-triplet chains sharing an ambiguous middle entity.

    Half the images are easy (middle truly "bridge", both relationships the
    head predicate).  The other half are hard: the middle is truly "cap" and
    the first pair's relationship measurement is an overconfident head-predicate
    artifact, so the two per-triplet inferences vote differently on the shared
    entity and conflict resolution decides the outcome.
    """
    head_bias = np.array([0.85, 0.15])
    measurements, ground_truths = [], []
    for i in range(n_images):
        hard = bool(rng.random() < 0.5)
        true_mid = 2 if hard else 1
        true_rel = 1 if hard else 0
        tilt = float(rng.uniform(0.01, 0.05))
        mid_probs = np.array([0.06, 0.47, 0.47])
        mid_probs[true_mid] += tilt
        mid_probs[3 - true_mid] -= tilt
        mid_probs = mid_probs / mid_probs.sum()
        if hard:
            confident = float(rng.uniform(0.9, 0.96))
            rel_1 = np.array([confident, 1.0 - confident])
            weight = float(rng.uniform(0.6, 0.8))
            rel_2 = weight * _one_hot(2, 1) + (1.0 - weight) * head_bias
        else:
            w1, w2 = float(rng.uniform(0.5, 0.8)), float(rng.uniform(0.5, 0.8))
            rel_1 = w1 * _one_hot(2, 0) + (1.0 - w1) * head_bias
            rel_2 = w2 * _one_hot(2, 0) + (1.0 - w2) * head_bias
        boxes = [_grid_box(slot) for slot in range(3)]
        entities_m = (
            EntityMeasurement(box=boxes[0], class_probs=np.array([0.9, 0.05, 0.05])),
            EntityMeasurement(box=boxes[1], class_probs=mid_probs),
            EntityMeasurement(box=boxes[2], class_probs=np.array([0.08, 0.12, 0.8])),
        )
        image_id = f"chain-{i:04d}"
        measurements.append(
            MeasurementGraph(
                image_id=image_id,
                entities=entities_m,
                pairs=(
                    PairMeasurement(subject_index=0, object_index=1, rel_probs=rel_1 / rel_1.sum()),
                    PairMeasurement(subject_index=1, object_index=2, rel_probs=rel_2 / rel_2.sum()),
                ),
            )
        )
        ground_truths.append(
            GroundTruthGraph(
                image_id=image_id,
                entities=(
                    GroundTruthEntity(box=boxes[0], label=0),
                    GroundTruthEntity(box=boxes[1], label=true_mid),
                    GroundTruthEntity(box=boxes[2], label=2),
                ),
                relations=(
                    GroundTruthRelation(subject_index=0, object_index=1, rel=true_rel),
                    GroundTruthRelation(subject_index=1, object_index=2, rel=true_rel),
                ),
            )
        )
    return measurements, ground_truths


def make_fixture_embeddings(vocab: Vocabulary, counts: TripletCounts, dim: int = 16, seed: int = 11):
    """Deterministic pseudo-embeddings: alias triplets sit close to their targets.

    Valid triplet texts get independent random unit vectors; each invalid
    alias text is rotated a small angle away from its target triplet's vector
    (cosine distance 0.03), everything else stays far apart.
    """
    from .augment import EmbeddingTable, render_triplet_text

    rng = np.random.default_rng(seed)
    vectors: dict[str, np.ndarray] = {}

    def unit(v: np.ndarray) -> np.ndarray:
        return v / np.linalg.norm(v)

    def text_of(s: int, r_text: str, o: int) -> str:
        return render_triplet_text(vocab.object_labels[s], r_text, vocab.object_labels[o])

    for (s, r, o) in sorted(counts.valid):
        text = text_of(s, vocab.relationship_labels[r], o)
        if text not in vectors:
            vectors[text] = unit(rng.normal(size=dim))
    for (s, r_text, o) in sorted(counts.invalid):
        text = text_of(s, r_text, o)
        if text in vectors:
            continue
        target = INVALID_ALIASES.get(r_text)
        anchor_text = text_of(s, vocab.relationship_labels[target], o) if target is not None else None
        if anchor_text is not None and anchor_text in vectors:
            anchor = vectors[anchor_text]
            ortho = rng.normal(size=dim)
            ortho = unit(ortho - np.dot(ortho, anchor) * anchor)
            cos_theta = 1.0 - 0.03
            sin_theta = float(np.sqrt(max(0.0, 1.0 - cos_theta**2)))
            vectors[text] = unit(cos_theta * anchor + sin_theta * ortho)
        else:
            vectors[text] = unit(rng.normal(size=dim))
    return EmbeddingTable(dim=dim, vectors=vectors)
