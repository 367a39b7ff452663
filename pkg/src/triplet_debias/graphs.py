"""Core scene-graph domain types, line-delimited file formats, and box geometry.

All types are immutable after construction; probability vectors are validated
(non-negative, sum within ``PROB_SUM_TOL`` of one) and renormalized on load.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

import numpy as np

PROB_SUM_TOL = 1e-6
FORMAT_VERSION = 1

MEASUREMENTS_FORMAT = "triplet-debias/measurements"
GROUND_TRUTH_FORMAT = "triplet-debias/ground-truth"
DEBIASED_FORMAT = "triplet-debias/debiased"


class ValidationError(ValueError):
    """An input value or record violates a format or type contract."""


def as_distribution(values, *, tol: float = PROB_SUM_TOL, context: str = "probability vector") -> np.ndarray:
    """Validate a discrete distribution and return it as a read-only array.

    Vectors whose sum is within ``tol`` of 1 are renormalized; anything
    further off is rejected.
    """
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ValidationError(f"{context}: expected a non-empty 1-D vector")
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{context}: entries must be finite")
    if np.any(vec < 0.0):
        raise ValidationError(f"{context}: entries must be non-negative")
    total = math.fsum(vec.tolist())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"{context}: unnormalized distribution (sum={total!r})")
    # Renormalize to an exact-sum fixpoint (largest element absorbs the ulp
    # residual) so that save/load cycles are byte-stable.
    if total != 1.0:
        vec = vec / total
        total = math.fsum(vec.tolist())
        for _ in range(4):
            if total == 1.0:
                break
            vec = np.array(vec, dtype=np.float64)
            vec[int(np.argmax(vec))] -= total - 1.0
            total = math.fsum(vec.tolist())
    vec = np.array(vec, dtype=np.float64)
    vec.setflags(write=False)
    return vec


def _require_index(value, *, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{context}: expected an integer, got {value!r}")
    if value < 0:
        raise ValidationError(f"{context}: index must be non-negative, got {value}")
    return value


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass(frozen=True)
class Vocabulary:
    """Dense label/index maps for object categories and relationship predicates."""

    object_labels: tuple[str, ...]
    relationship_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "object_labels", tuple(self.object_labels))
        object.__setattr__(self, "relationship_labels", tuple(self.relationship_labels))
        for kind, labels in (("object", self.object_labels), ("predicate", self.relationship_labels)):
            if not labels:
                raise ValidationError(f"vocabulary has no {kind} labels")
            seen: set[str] = set()
            for label in labels:
                if not isinstance(label, str) or not label:
                    raise ValidationError(f"invalid {kind} label {label!r}")
                if label in seen:
                    raise ValidationError(f"duplicate {kind} label {label!r}")
                seen.add(label)
        object.__setattr__(self, "_object_index", {l: i for i, l in enumerate(self.object_labels)})
        object.__setattr__(self, "_predicate_index", {l: i for i, l in enumerate(self.relationship_labels)})

    @property
    def n_objects(self) -> int:
        return len(self.object_labels)

    @property
    def n_predicates(self) -> int:
        return len(self.relationship_labels)

    def object_index(self, label: str) -> int | None:
        return self._object_index.get(label)  # type: ignore[attr-defined]

    def predicate_index(self, label: str) -> int | None:
        return self._predicate_index.get(label)  # type: ignore[attr-defined]


def load_vocabulary(source: IO[str]) -> Vocabulary:
    """Parse a vocabulary document with ordered ``objects`` and ``predicates`` arrays."""
    try:
        doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed vocabulary document: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ValidationError("vocabulary document must be an object")
    for key in ("objects", "predicates"):
        if key not in doc or not isinstance(doc[key], list):
            raise ValidationError(f"vocabulary document is missing the {key!r} array")
    return Vocabulary(tuple(doc["objects"]), tuple(doc["predicates"]))


def save_vocabulary(vocab: Vocabulary, sink: IO[str]) -> None:
    json.dump(
        {"objects": list(vocab.object_labels), "predicates": list(vocab.relationship_labels)},
        sink,
        ensure_ascii=False,
        indent=2,
    )
    sink.write("\n")


def vocabulary_hash(vocab: Vocabulary) -> str:
    """Stable content hash used to pair prior models with measurement dumps."""
    payload = json.dumps(
        {"objects": list(vocab.object_labels), "predicates": list(vocab.relationship_labels)},
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Geometry


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in xyxy pixel coordinates with positive extent."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(isinstance(c, (int, float)) and math.isfinite(c) for c in coords):
            raise ValidationError(f"box coordinates must be finite numbers: {coords!r}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValidationError(f"degenerate box {coords!r}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# Per-image graphs


@dataclass(frozen=True, eq=False)
class EntityMeasurement:
    """One detected entity: box plus class-probability vector."""

    box: BoundingBox
    class_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "class_probs", as_distribution(self.class_probs, context="class_probs"))

    def __eq__(self, other):
        return (
            isinstance(other, EntityMeasurement)
            and self.box == other.box
            and np.array_equal(self.class_probs, other.class_probs)
        )


@dataclass(frozen=True, eq=False)
class PairMeasurement:
    """One subject/object proposal with its relationship-probability vector."""

    subject_index: int
    object_index: int
    rel_probs: np.ndarray

    def __post_init__(self):
        _require_index(self.subject_index, context="subject_index")
        _require_index(self.object_index, context="object_index")
        object.__setattr__(self, "rel_probs", as_distribution(self.rel_probs, context="rel_probs"))

    def __eq__(self, other):
        return (
            isinstance(other, PairMeasurement)
            and self.subject_index == other.subject_index
            and self.object_index == other.object_index
            and np.array_equal(self.rel_probs, other.rel_probs)
        )


@dataclass(frozen=True)
class MeasurementGraph:
    """Uncertain per-image evidence: entities with class probabilities and pair proposals."""

    image_id: str
    entities: tuple[EntityMeasurement, ...]
    pairs: tuple[PairMeasurement, ...]

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValidationError(f"invalid image_id {self.image_id!r}")
        n = len(self.entities)
        for ent in self.entities:
            if ent.class_probs.shape != self.entities[0].class_probs.shape:
                raise ValidationError(f"image {self.image_id}: inconsistent class_probs lengths")
        seen_pairs: set[tuple[int, int]] = set()
        for pair in self.pairs:
            if pair.subject_index >= n or pair.object_index >= n:
                raise ValidationError(
                    f"image {self.image_id}: pair ({pair.subject_index}, {pair.object_index}) "
                    f"references a missing entity (have {n})"
                )
            if pair.subject_index == pair.object_index:
                raise ValidationError(f"image {self.image_id}: self-pair on entity {pair.subject_index}")
            key = (pair.subject_index, pair.object_index)
            if key in seen_pairs:
                raise ValidationError(f"image {self.image_id}: duplicate ordered pair {key}")
            seen_pairs.add(key)
            if pair.rel_probs.shape != self.pairs[0].rel_probs.shape:
                raise ValidationError(f"image {self.image_id}: inconsistent rel_probs lengths")

    @property
    def n_entity_classes(self) -> int | None:
        return int(self.entities[0].class_probs.size) if self.entities else None

    @property
    def n_rel_classes(self) -> int | None:
        return int(self.pairs[0].rel_probs.size) if self.pairs else None


@dataclass(frozen=True)
class GroundTruthEntity:
    box: BoundingBox
    label: int

    def __post_init__(self):
        _require_index(self.label, context="entity label")


@dataclass(frozen=True)
class GroundTruthRelation:
    subject_index: int
    object_index: int
    rel: int

    def __post_init__(self):
        _require_index(self.subject_index, context="subject_index")
        _require_index(self.object_index, context="object_index")
        _require_index(self.rel, context="relationship index")


@dataclass(frozen=True)
class GroundTruthGraph:
    """Annotated per-image scene graph: labeled boxes plus relationship triples."""

    image_id: str
    entities: tuple[GroundTruthEntity, ...]
    relations: tuple[GroundTruthRelation, ...]

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValidationError(f"invalid image_id {self.image_id!r}")
        n = len(self.entities)
        for rel in self.relations:
            if rel.subject_index >= n or rel.object_index >= n:
                raise ValidationError(
                    f"image {self.image_id}: relation ({rel.subject_index}, {rel.object_index}) "
                    f"references a missing entity (have {n})"
                )


@dataclass(frozen=True)
class DebiasedTriplet:
    subject_index: int
    object_index: int
    subject_label: int
    object_label: int
    rel_label: int
    score: float

    def __post_init__(self):
        for name in ("subject_index", "object_index", "subject_label", "object_label", "rel_label"):
            _require_index(getattr(self, name), context=name)
        if not (isinstance(self.score, (int, float)) and math.isfinite(self.score) and self.score >= 0.0):
            raise ValidationError(f"triplet score must be a finite non-negative number, got {self.score!r}")


@dataclass(frozen=True)
class DebiasedGraph:
    """Final inferred graph: one label per entity and at most one triplet per ordered pair.

    Every triplet's subject/object labels agree with ``entity_labels`` by
    construction, so shared entities never carry conflicting labels.
    """

    image_id: str
    entity_labels: tuple[int, ...]
    entity_boxes: tuple[BoundingBox, ...]
    triplets: tuple[DebiasedTriplet, ...]

    def __post_init__(self):
        object.__setattr__(self, "entity_labels", tuple(self.entity_labels))
        object.__setattr__(self, "entity_boxes", tuple(self.entity_boxes))
        object.__setattr__(self, "triplets", tuple(self.triplets))
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValidationError(f"invalid image_id {self.image_id!r}")
        if len(self.entity_labels) != len(self.entity_boxes):
            raise ValidationError(f"image {self.image_id}: entity_labels/entity_boxes length mismatch")
        for label in self.entity_labels:
            _require_index(label, context="entity label")
        n = len(self.entity_labels)
        seen_pairs: set[tuple[int, int]] = set()
        for t in self.triplets:
            if t.subject_index >= n or t.object_index >= n:
                raise ValidationError(f"image {self.image_id}: triplet references a missing entity")
            if t.subject_label != self.entity_labels[t.subject_index]:
                raise ValidationError(
                    f"image {self.image_id}: triplet subject_label {t.subject_label} conflicts with "
                    f"entity {t.subject_index} label {self.entity_labels[t.subject_index]}"
                )
            if t.object_label != self.entity_labels[t.object_index]:
                raise ValidationError(
                    f"image {self.image_id}: triplet object_label {t.object_label} conflicts with "
                    f"entity {t.object_index} label {self.entity_labels[t.object_index]}"
                )
            key = (t.subject_index, t.object_index)
            if key in seen_pairs:
                raise ValidationError(f"image {self.image_id}: duplicate triplet on ordered pair {key}")
            seen_pairs.add(key)


# ---------------------------------------------------------------------------
# Line-delimited record I/O

_BOX_KEYS = ("x1", "y1", "x2", "y2")


@dataclass(frozen=True)
class FileHeader:
    """Optional first record of a line-delimited file, used for compatibility checks."""

    format: str
    version: int = FORMAT_VERSION
    vocab_hash: str | None = None
    n_objects: int | None = None
    n_predicates: int | None = None

    def to_record(self) -> dict:
        record: dict = {"format": self.format, "version": self.version}
        if self.vocab_hash is not None:
            record["vocab_hash"] = self.vocab_hash
        if self.n_objects is not None:
            record["n_objects"] = self.n_objects
        if self.n_predicates is not None:
            record["n_predicates"] = self.n_predicates
        return record

    @staticmethod
    def from_record(record: dict) -> "FileHeader":
        return FileHeader(
            format=record["format"],
            version=record.get("version", FORMAT_VERSION),
            vocab_hash=record.get("vocab_hash"),
            n_objects=record.get("n_objects"),
            n_predicates=record.get("n_predicates"),
        )


def iter_records(stream: IO[str]) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) for each non-empty JSON line."""
    for line_no, line in enumerate(stream, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {line_no}: malformed record ({exc.msg})") from None
        if not isinstance(record, dict):
            raise ValidationError(f"line {line_no}: record must be a JSON object")
        yield line_no, record


def read_file_header(path) -> FileHeader | None:
    """Return the header record of a line-delimited file, if it has one."""
    with open(path, "r", encoding="utf-8") as stream:
        for _, record in iter_records(stream):
            return FileHeader.from_record(record) if "format" in record else None
    return None


def _box_from_record(value) -> BoundingBox:
    if not isinstance(value, dict) or any(k not in value for k in _BOX_KEYS):
        raise ValidationError(f"box record must have keys {_BOX_KEYS}, got {value!r}")
    return BoundingBox(*(float(value[k]) for k in _BOX_KEYS))


def _box_to_record(box: BoundingBox) -> dict:
    return {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2}


def measurement_from_record(record: dict) -> MeasurementGraph:
    entities = tuple(
        EntityMeasurement(box=_box_from_record(e["box"]), class_probs=e["class_probs"])
        for e in record.get("entities", ())
    )
    pairs = tuple(
        PairMeasurement(
            subject_index=p["subject_index"],
            object_index=p["object_index"],
            rel_probs=p["rel_probs"],
        )
        for p in record.get("pairs", ())
    )
    return MeasurementGraph(image_id=record.get("image_id", ""), entities=entities, pairs=pairs)


def measurement_to_record(graph: MeasurementGraph) -> dict:
    return {
        "image_id": graph.image_id,
        "entities": [
            {"box": _box_to_record(e.box), "class_probs": e.class_probs.tolist()} for e in graph.entities
        ],
        "pairs": [
            {"subject_index": p.subject_index, "object_index": p.object_index, "rel_probs": p.rel_probs.tolist()}
            for p in graph.pairs
        ],
    }


def ground_truth_from_record(record: dict) -> GroundTruthGraph:
    entities = tuple(
        GroundTruthEntity(box=_box_from_record(e["box"]), label=e["label"]) for e in record.get("entities", ())
    )
    relations = tuple(
        GroundTruthRelation(subject_index=r["subject_index"], object_index=r["object_index"], rel=r["rel"])
        for r in record.get("relations", ())
    )
    return GroundTruthGraph(image_id=record.get("image_id", ""), entities=entities, relations=relations)


def ground_truth_to_record(graph: GroundTruthGraph) -> dict:
    return {
        "image_id": graph.image_id,
        "entities": [{"box": _box_to_record(e.box), "label": e.label} for e in graph.entities],
        "relations": [
            {"subject_index": r.subject_index, "object_index": r.object_index, "rel": r.rel}
            for r in graph.relations
        ],
    }


def debiased_from_record(record: dict) -> DebiasedGraph:
    triplets = tuple(
        DebiasedTriplet(
            subject_index=t["subject_index"],
            object_index=t["object_index"],
            subject_label=t["subject_label"],
            object_label=t["object_label"],
            rel_label=t["rel_label"],
            score=float(t["score"]),
        )
        for t in record.get("triplets", ())
    )
    return DebiasedGraph(
        image_id=record.get("image_id", ""),
        entity_labels=tuple(record.get("entity_labels", ())),
        entity_boxes=tuple(_box_from_record(b) for b in record.get("entity_boxes", ())),
        triplets=triplets,
    )


def debiased_to_record(graph: DebiasedGraph) -> dict:
    return {
        "image_id": graph.image_id,
        "entity_labels": list(graph.entity_labels),
        "entity_boxes": [_box_to_record(b) for b in graph.entity_boxes],
        "triplets": [
            {
                "subject_index": t.subject_index,
                "object_index": t.object_index,
                "subject_label": t.subject_label,
                "object_label": t.object_label,
                "rel_label": t.rel_label,
                "score": t.score,
            }
            for t in graph.triplets
        ],
    }


def _load_stream(stream: IO[str], from_record, expected_format: str):
    first = True
    for line_no, record in iter_records(stream):
        if "format" in record:
            if not first:
                raise ValidationError(f"line {line_no}: header record allowed only as the first line")
            header = FileHeader.from_record(record)
            if header.format != expected_format:
                raise ValidationError(
                    f"line {line_no}: unexpected file format {header.format!r} (wanted {expected_format!r})"
                )
            first = False
            continue
        first = False
        try:
            yield from_record(record)
        except ValidationError as exc:
            raise ValidationError(f"line {line_no}: {exc}") from None
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"line {line_no}: malformed record ({exc!r})") from None


def load_measurements(stream: IO[str]) -> Iterator[MeasurementGraph]:
    """Stream MeasurementGraph records from a line-delimited file."""
    return _load_stream(stream, measurement_from_record, MEASUREMENTS_FORMAT)


def load_ground_truth(stream: IO[str]) -> Iterator[GroundTruthGraph]:
    """Stream GroundTruthGraph records from a line-delimited file."""
    return _load_stream(stream, ground_truth_from_record, GROUND_TRUTH_FORMAT)


def load_debiased(stream: IO[str]) -> Iterator[DebiasedGraph]:
    """Stream DebiasedGraph records from a line-delimited file."""
    return _load_stream(stream, debiased_from_record, DEBIASED_FORMAT)


def dump_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def _save_stream(sink: IO[str], items: Iterable, to_record, header: FileHeader | None) -> int:
    count = 0
    if header is not None:
        sink.write(dump_record(header.to_record()) + "\n")
    for item in items:
        sink.write(dump_record(to_record(item)) + "\n")
        count += 1
    return count


def save_measurements(sink: IO[str], graphs: Iterable[MeasurementGraph], header: FileHeader | None = None) -> int:
    return _save_stream(sink, graphs, measurement_to_record, header)


def save_ground_truth(sink: IO[str], graphs: Iterable[GroundTruthGraph], header: FileHeader | None = None) -> int:
    return _save_stream(sink, graphs, ground_truth_to_record, header)


def save_debiased(sink: IO[str], graphs: Iterable[DebiasedGraph], header: FileHeader | None = None) -> int:
    return _save_stream(sink, graphs, debiased_to_record, header)
