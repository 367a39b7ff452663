"""Embedding-neighborhood augmentation of triplet counts.

Out-of-vocabulary triplets lend their counts to in-vocabulary triplets over
the same subject/object pair whenever their sentence embeddings lie within a
cosine-distance radius of each other.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .graphs import ValidationError, Vocabulary, iter_records
from .prior import InvalidKey, TripletCounts, ValidKey

EMBEDDINGS_FORMAT = "triplet-debias/embeddings"
NORM_TOL = 1e-6


def render_triplet_text(subject: str, predicate: str, obj: str) -> str:
    """Canonical sentence form of a triplet for embedding lookup.

    Lowercased, underscores treated as spaces, single spaces between words.
    Must stay in lockstep with the embedding exporter.
    """
    words: list[str] = []
    for piece in (subject, predicate, obj):
        words.extend(piece.lower().replace("_", " ").split())
    return " ".join(words)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Unit-norm embedding vectors keyed by rendered triplet text."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"embedding dimension must be positive, got {self.dim}")
        checked: dict[str, np.ndarray] = {}
        for text, vec in self.vectors.items():
            if not isinstance(text, str) or not text:
                raise ValidationError(f"invalid embedding key {text!r}")
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise ValidationError(
                    f"embedding for {text!r} has dimension {arr.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"embedding for {text!r} has non-finite entries")
            norm = float(np.linalg.norm(arr))
            if abs(norm - 1.0) > NORM_TOL:
                raise ValidationError(f"embedding for {text!r} is not unit-norm (|v|={norm!r})")
            arr = arr / norm
            arr.setflags(write=False)
            checked[text] = arr
        object.__setattr__(self, "vectors", checked)

    def __contains__(self, text: str) -> bool:
        return text in self.vectors

    def vector(self, text: str) -> np.ndarray:
        try:
            return self.vectors[text]
        except KeyError:
            raise ValidationError(f"missing embedding for triplet text {text!r}") from None


@dataclass(frozen=True)
class AugmentationConfig:
    epsilon: float = 0.05
    nearest_only: bool = False

    def __post_init__(self):
        if not (isinstance(self.epsilon, (int, float)) and 0.0 <= self.epsilon <= 2.0):
            raise ValidationError(f"epsilon must lie in [0, 2], got {self.epsilon!r}")


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - <u, v> for unit vectors, clipped to [0, 2] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"embedding dimension mismatch: {u.shape} vs {v.shape}")
    return min(2.0, max(0.0, 1.0 - float(np.dot(u, v))))


def epsilon_neighborhood(
    valid: ValidKey,
    invalid_candidates: Sequence[InvalidKey],
    table: EmbeddingTable,
    eps: float,
    vocab: Vocabulary,
) -> list[InvalidKey]:
    """Candidates whose rendered text lies strictly within ``eps`` of the valid triplet."""
    s, r, o = valid
    anchor = table.vector(
        render_triplet_text(vocab.object_labels[s], vocab.relationship_labels[r], vocab.object_labels[o])
    )
    inside = []
    for cand in invalid_candidates:
        cs, r_text, co = cand
        if (cs, co) != (s, o):
            raise ValidationError(f"candidate {cand} does not share the subject/object pair of {valid}")
        vec = table.vector(render_triplet_text(vocab.object_labels[cs], r_text, vocab.object_labels[co]))
        if cosine_distance(anchor, vec) < eps:
            inside.append(cand)
    return inside


def augment_counts(
    counts: TripletCounts,
    table: EmbeddingTable,
    config: AugmentationConfig,
    vocab: Vocabulary,
) -> TripletCounts:
    """Add neighborhood-borrowed invalid counts to each valid triplet.

    By default an invalid triplet inside the radius of several valid triplets
    over the same pair contributes to each of them; with ``nearest_only`` it
    contributes solely to its closest valid triplet.  Invalid counts are kept
    unmodified in the result for audit.
    """
    if vocab.n_objects != counts.n_objects or vocab.n_predicates != counts.n_predicates:
        raise ValidationError("vocabulary does not match the counts index space")

    invalid_by_pair: dict[tuple[int, int], list[InvalidKey]] = {}
    for key in counts.invalid:
        invalid_by_pair.setdefault((key[0], key[2]), []).append(key)
    valid_by_pair: dict[tuple[int, int], list[ValidKey]] = {}
    for key in counts.valid:
        valid_by_pair.setdefault((key[0], key[2]), []).append(key)

    augmented = dict(counts.valid)
    for pair, valid_keys in sorted(valid_by_pair.items()):
        candidates = invalid_by_pair.get(pair)
        if not candidates:
            continue
        valid_keys = sorted(valid_keys)
        candidates = sorted(candidates)
        if config.nearest_only:
            anchors = {
                key: table.vector(_triplet_text(key, vocab)) for key in valid_keys
            }
            for cand in candidates:
                vec = table.vector(_invalid_text(cand, vocab))
                best_key, best_dist = None, math.inf
                for key in valid_keys:
                    dist = cosine_distance(anchors[key], vec)
                    if dist < best_dist:
                        best_key, best_dist = key, dist
                if best_key is not None and best_dist < config.epsilon:
                    augmented[best_key] += counts.invalid[cand]
        else:
            for key in valid_keys:
                inside = epsilon_neighborhood(key, candidates, table, config.epsilon, vocab)
                if inside:
                    augmented[key] += sum(counts.invalid[c] for c in inside)
    return TripletCounts(
        n_objects=counts.n_objects,
        n_predicates=counts.n_predicates,
        valid=augmented,
        invalid=dict(counts.invalid),
        vocab_hash=counts.vocab_hash,
    )


def _triplet_text(key: ValidKey, vocab: Vocabulary) -> str:
    s, r, o = key
    return render_triplet_text(vocab.object_labels[s], vocab.relationship_labels[r], vocab.object_labels[o])


def _invalid_text(key: InvalidKey, vocab: Vocabulary) -> str:
    s, r_text, o = key
    return render_triplet_text(vocab.object_labels[s], r_text, vocab.object_labels[o])


# ---------------------------------------------------------------------------
# Embedding file I/O (header record declares the dimension)


def load_embeddings(stream: IO[str]) -> EmbeddingTable:
    dim: int | None = None
    vectors: dict[str, np.ndarray] = {}
    for line_no, record in iter_records(stream):
        if "format" in record or "dim" in record:
            if dim is not None or vectors:
                raise ValidationError(f"line {line_no}: header record allowed only as the first line")
            if record.get("format", EMBEDDINGS_FORMAT) != EMBEDDINGS_FORMAT:
                raise ValidationError(f"line {line_no}: unexpected file format {record.get('format')!r}")
            if "dim" not in record:
                raise ValidationError(f"line {line_no}: embedding header must declare 'dim'")
            dim = int(record["dim"])
            continue
        if dim is None:
            raise ValidationError(f"line {line_no}: embedding file must start with a header record")
        try:
            text, vector = record["text"], record["vector"]
        except KeyError as exc:
            raise ValidationError(f"line {line_no}: embedding record is missing {exc.args[0]!r}") from None
        if text in vectors:
            raise ValidationError(f"line {line_no}: duplicate embedding text {text!r}")
        vectors[text] = np.asarray(vector, dtype=np.float64)
    if dim is None:
        raise ValidationError("embedding file has no header record")
    try:
        return EmbeddingTable(dim=dim, vectors=vectors)
    except ValidationError as exc:
        raise ValidationError(f"invalid embedding file: {exc}") from None


def save_embeddings(sink: IO[str], table: EmbeddingTable) -> None:
    header = {"format": EMBEDDINGS_FORMAT, "version": 1, "dim": table.dim}
    sink.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")) + "\n")
    for text in sorted(table.vectors):
        record = {"text": text, "vector": table.vectors[text].tolist()}
        sink.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
