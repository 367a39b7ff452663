"""Within-triplet prior: triplet counting, maximum-likelihood estimation, lookups.

The prior factorizes as P(S) * P(O) * P(R|S,O).  Conditional rows are stored
sparsely for subject/object pairs observed in training; unseen pairs fall back
to the relationship marginal P(R), which makes debiasing a no-op for them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .graphs import ValidationError, Vocabulary, as_distribution, iter_records

PRIOR_FORMAT = "triplet-debias/prior"
PRIOR_SUM_TOL = 1e-9

ValidKey = tuple[int, int, int]
InvalidKey = tuple[int, str, int]


@dataclass(frozen=True)
class TripletCounts:
    """Sparse triplet counts split into in-vocabulary and out-of-vocabulary tables.

    ``valid`` maps (subject, relationship, object) index triples to counts;
    ``invalid`` keeps the raw predicate text of out-of-vocabulary annotations
    so they can later be borrowed by embedding-neighborhood augmentation.
    """

    n_objects: int
    n_predicates: int
    valid: dict[ValidKey, float] = field(default_factory=dict)
    invalid: dict[InvalidKey, float] = field(default_factory=dict)
    vocab_hash: str | None = None

    def __post_init__(self):
        if self.n_objects < 1 or self.n_predicates < 1:
            raise ValidationError("counts need at least one object and one predicate category")
        for (s, r, o), count in self.valid.items():
            if not (0 <= s < self.n_objects and 0 <= o < self.n_objects and 0 <= r < self.n_predicates):
                raise ValidationError(f"valid triplet key {(s, r, o)} out of range")
            _require_count(count, (s, r, o))
        for (s, r_text, o), count in self.invalid.items():
            if not (0 <= s < self.n_objects and 0 <= o < self.n_objects):
                raise ValidationError(f"invalid triplet key {(s, r_text, o)} out of range")
            if not isinstance(r_text, str) or not r_text:
                raise ValidationError(f"invalid triplet predicate text {r_text!r}")
            _require_count(count, (s, r_text, o))

    def total_valid(self) -> float:
        return sum(self.valid.values())

    def total_invalid(self) -> float:
        return sum(self.invalid.values())


def _require_count(count, key) -> None:
    if isinstance(count, bool) or not isinstance(count, (int, float)):
        raise ValidationError(f"count for {key} must be a number, got {count!r}")
    if not math.isfinite(count) or count < 0:
        raise ValidationError(f"count for {key} must be finite and non-negative, got {count!r}")


def accumulate_counts(
    annotations: Iterable[tuple[str, str, str]], vocab: Vocabulary, vocab_hash: str | None = None
) -> TripletCounts:
    """Count (subject, predicate, object) annotations against a vocabulary.

    Annotations whose predicate text is not in the vocabulary land in the
    ``invalid`` table; unknown subject or object labels are rejected.
    The result is independent of annotation order.
    """
    valid: dict[ValidKey, float] = {}
    invalid: dict[InvalidKey, float] = {}
    for s_label, r_text, o_label in annotations:
        s = vocab.object_index(s_label)
        if s is None:
            raise ValidationError(f"unknown object label {s_label!r}")
        o = vocab.object_index(o_label)
        if o is None:
            raise ValidationError(f"unknown object label {o_label!r}")
        r = vocab.predicate_index(r_text)
        if r is None:
            key = (s, str(r_text), o)
            invalid[key] = invalid.get(key, 0) + 1
        else:
            vkey = (s, r, o)
            valid[vkey] = valid.get(vkey, 0) + 1
    return TripletCounts(
        n_objects=vocab.n_objects,
        n_predicates=vocab.n_predicates,
        valid=valid,
        invalid=invalid,
        vocab_hash=vocab_hash,
    )


@dataclass(frozen=True, eq=False)
class PriorModel:
    """Learned within-triplet prior with sparse conditional rows.

    ``cond`` holds P(R|S=s,O=o) for training pairs; ``conditional`` falls back
    to the marginal ``p_rel`` for pairs never seen in training.
    """

    p_subject: np.ndarray
    p_object: np.ndarray
    p_rel: np.ndarray
    cond: dict[tuple[int, int], np.ndarray]
    seen_triplets: frozenset[ValidKey]
    vocab_hash: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "p_subject", as_distribution(self.p_subject, tol=PRIOR_SUM_TOL, context="p_subject"))
        object.__setattr__(self, "p_object", as_distribution(self.p_object, tol=PRIOR_SUM_TOL, context="p_object"))
        object.__setattr__(self, "p_rel", as_distribution(self.p_rel, tol=PRIOR_SUM_TOL, context="p_rel"))
        if self.p_subject.size != self.p_object.size:
            raise ValidationError("p_subject and p_object must share the entity index space")
        rows = {}
        for (s, o), row in self.cond.items():
            if not (0 <= s < self.n_objects and 0 <= o < self.n_objects):
                raise ValidationError(f"conditional row key {(s, o)} out of range")
            row = as_distribution(row, tol=PRIOR_SUM_TOL, context=f"cond[{(s, o)}]")
            if row.size != self.p_rel.size:
                raise ValidationError(f"cond[{(s, o)}] has wrong length {row.size}")
            rows[(s, o)] = row
        object.__setattr__(self, "cond", rows)
        object.__setattr__(self, "seen_triplets", frozenset(self.seen_triplets))
        # Dense row matrix for the vectorized MAP search.
        keys = sorted(rows)
        matrix = np.array([rows[k] for k in keys], dtype=np.float64) if keys else np.zeros((0, self.p_rel.size))
        matrix.setflags(write=False)
        object.__setattr__(self, "_pair_keys", keys)
        object.__setattr__(self, "_pair_rows", matrix)
        object.__setattr__(self, "_rows_s", np.array([k[0] for k in keys], dtype=np.intp))
        object.__setattr__(self, "_rows_o", np.array([k[1] for k in keys], dtype=np.intp))

    @property
    def n_objects(self) -> int:
        return int(self.p_subject.size)

    @property
    def n_predicates(self) -> int:
        return int(self.p_rel.size)

    def conditional(self, s: int, o: int) -> np.ndarray:
        """P(R | S=s, O=o): the stored training row, or P(R) for unseen pairs."""
        if not (0 <= s < self.n_objects and 0 <= o < self.n_objects):
            raise ValidationError(f"entity index pair {(s, o)} out of range")
        return self.cond.get((s, o), self.p_rel)

    def evidence_ratio(self, rel_probs: np.ndarray) -> np.ndarray:
        """Per-predicate measurement/marginal ratio; zero where the marginal is zero."""
        ratio = np.zeros_like(self.p_rel)
        positive = self.p_rel > 0.0
        np.divide(rel_probs, self.p_rel, out=ratio, where=positive)
        return ratio

    def conditional_over_subjects(self, o: int, r: int) -> np.ndarray:
        """Vector over candidate subjects s of P(R=r | S=s, O=o), with marginal fallback."""
        col = np.full(self.n_objects, self.p_rel[r])
        mask = self._rows_o == o  # type: ignore[attr-defined]
        if mask.any():
            col[self._rows_s[mask]] = self._pair_rows[mask, r]  # type: ignore[attr-defined]
        return col

    def conditional_over_objects(self, s: int, r: int) -> np.ndarray:
        """Vector over candidate objects o of P(R=r | S=s, O=o), with marginal fallback."""
        col = np.full(self.n_objects, self.p_rel[r])
        mask = self._rows_s == s  # type: ignore[attr-defined]
        if mask.any():
            col[self._rows_o[mask]] = self._pair_rows[mask, r]  # type: ignore[attr-defined]
        return col


def estimate_prior(counts: TripletCounts, smoothing_k: float = 0.0) -> PriorModel:
    """Maximum-likelihood prior from valid triplet counts.

    Conditional rows are normalized per (subject, object) pair; P(S) and P(O)
    are the relative frequencies of the subject/object slots; P(R) marginalizes
    the conditionals over the pair prior, with unseen pairs contributing
    through the marginal fallback itself (closed form: restrict the sum to
    stored pairs and renormalize by their total prior mass).
    """
    if smoothing_k < 0:
        raise ValidationError("smoothing constant must be non-negative")
    n_e, n_r = counts.n_objects, counts.n_predicates
    subject_mass = np.zeros(n_e)
    object_mass = np.zeros(n_e)
    row_counts: dict[tuple[int, int], np.ndarray] = {}
    for (s, r, o), count in counts.valid.items():
        if count <= 0:
            continue
        subject_mass[s] += count
        object_mass[o] += count
        row = row_counts.get((s, o))
        if row is None:
            row = row_counts[(s, o)] = np.zeros(n_r)
        row[r] += count
    total = subject_mass.sum()
    if total <= 0:
        raise ValidationError("no training triplets")
    p_subject = subject_mass / total
    p_object = object_mass / total

    cond: dict[tuple[int, int], np.ndarray] = {}
    marginal = np.zeros(n_r)
    pair_mass = 0.0
    for (s, o), row in row_counts.items():
        smoothed = row + smoothing_k
        cond_row = smoothed / smoothed.sum()
        cond[(s, o)] = cond_row
        weight = p_subject[s] * p_object[o]
        marginal += cond_row * weight
        pair_mass += weight
    p_rel = marginal / pair_mass

    seen = frozenset(key for key, count in counts.valid.items() if count > 0)
    return PriorModel(
        p_subject=p_subject,
        p_object=p_object,
        p_rel=p_rel,
        cond=cond,
        seen_triplets=seen,
        vocab_hash=counts.vocab_hash,
    )


# ---------------------------------------------------------------------------
# Counts file I/O (one labeled record per line)


def load_counts(stream: IO[str], vocab: Vocabulary, vocab_hash: str | None = None) -> TripletCounts:
    """Read a counts file of {subject, predicate, object, count} records."""
    valid: dict[ValidKey, float] = {}
    invalid: dict[InvalidKey, float] = {}
    for line_no, record in iter_records(stream):
        try:
            s_label, r_text, o_label = record["subject"], record["predicate"], record["object"]
            count = record["count"]
        except KeyError as exc:
            raise ValidationError(f"line {line_no}: counts record is missing {exc.args[0]!r}") from None
        try:
            _require_count(count, (s_label, r_text, o_label))
            s = vocab.object_index(s_label)
            if s is None:
                raise ValidationError(f"unknown object label {s_label!r}")
            o = vocab.object_index(o_label)
            if o is None:
                raise ValidationError(f"unknown object label {o_label!r}")
        except ValidationError as exc:
            raise ValidationError(f"line {line_no}: {exc}") from None
        r = vocab.predicate_index(r_text)
        if r is None:
            key = (s, str(r_text), o)
            invalid[key] = invalid.get(key, 0) + count
        else:
            vkey = (s, r, o)
            valid[vkey] = valid.get(vkey, 0) + count
    return TripletCounts(
        n_objects=vocab.n_objects,
        n_predicates=vocab.n_predicates,
        valid=valid,
        invalid=invalid,
        vocab_hash=vocab_hash,
    )


def save_counts(sink: IO[str], counts: TripletCounts, vocab: Vocabulary) -> None:
    """Write valid then invalid counts as labeled records, in sorted key order."""
    if vocab.n_objects != counts.n_objects or vocab.n_predicates != counts.n_predicates:
        raise ValidationError("vocabulary does not match the counts index space")
    for (s, r, o) in sorted(counts.valid):
        record = {
            "subject": vocab.object_labels[s],
            "predicate": vocab.relationship_labels[r],
            "object": vocab.object_labels[o],
            "count": counts.valid[(s, r, o)],
        }
        sink.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
    for (s, r_text, o) in sorted(counts.invalid):
        record = {
            "subject": vocab.object_labels[s],
            "predicate": r_text,
            "object": vocab.object_labels[o],
            "count": counts.invalid[(s, r_text, o)],
        }
        sink.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# Prior model file I/O (single JSON document)


def save_prior(sink: IO[str], prior: PriorModel) -> None:
    doc = {
        "format": PRIOR_FORMAT,
        "version": 1,
        "vocab_hash": prior.vocab_hash,
        "n_objects": prior.n_objects,
        "n_predicates": prior.n_predicates,
        "p_subject": prior.p_subject.tolist(),
        "p_object": prior.p_object.tolist(),
        "p_rel": prior.p_rel.tolist(),
        "cond": [
            {"s": s, "o": o, "row": prior.cond[(s, o)].tolist()} for (s, o) in sorted(prior.cond)
        ],
        "seen_triplets": sorted(list(key) for key in prior.seen_triplets),
    }
    json.dump(doc, sink, ensure_ascii=False)
    sink.write("\n")


def load_prior(stream: IO[str]) -> PriorModel:
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed prior document: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("format") != PRIOR_FORMAT:
        raise ValidationError("not a prior model document")
    try:
        cond = {(entry["s"], entry["o"]): np.asarray(entry["row"], dtype=np.float64) for entry in doc["cond"]}
        seen = frozenset((s, r, o) for s, r, o in doc["seen_triplets"])
        prior = PriorModel(
            p_subject=np.asarray(doc["p_subject"], dtype=np.float64),
            p_object=np.asarray(doc["p_object"], dtype=np.float64),
            p_rel=np.asarray(doc["p_rel"], dtype=np.float64),
            cond=cond,
            seen_triplets=seen,
            vocab_hash=doc.get("vocab_hash"),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed prior document ({exc!r})") from None
    if doc.get("n_objects") not in (None, prior.n_objects) or doc.get("n_predicates") not in (None, prior.n_predicates):
        raise ValidationError("prior document dimensions disagree with its vectors")
    return prior
