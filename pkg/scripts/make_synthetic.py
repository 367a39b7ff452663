#!/usr/bin/env python3
"""Write a synthetic long-tailed corpus (plus a ready pipeline config) to a directory.

Usage:
    python scripts/make_synthetic.py --out data/synthetic [--images 60] [--seed 7]

The directory then works directly with the CLI:
    triplet-debias pipeline --config data/synthetic/pipeline.json
"""

import argparse
import json
from pathlib import Path

from triplet_debias.augment import save_embeddings
from triplet_debias.graphs import (
    FileHeader,
    GROUND_TRUTH_FORMAT,
    MEASUREMENTS_FORMAT,
    save_ground_truth,
    save_measurements,
    vocabulary_hash,
)
from triplet_debias.prior import save_counts
from triplet_debias.synthetic import (
    SyntheticSpec,
    make_alias_counts,
    make_corpus,
    make_fixture_embeddings,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--images", type=int, default=60)
    parser.add_argument("--triplets", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument(
        "--entity-alpha",
        type=float,
        default=1.0,
        help="1.0 = known entity labels; lower values add class noise",
    )
    args = parser.parse_args()

    spec = SyntheticSpec(
        total_triplets=args.triplets,
        n_images=args.images,
        seed=args.seed,
        entity_alpha=args.entity_alpha,
    )
    vocab, _, measurements, ground_truths = make_corpus(spec)
    counts = make_alias_counts(spec, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    (out / "vocab.json").write_text(
        json.dumps(
            {"objects": list(vocab.object_labels), "predicates": list(vocab.relationship_labels)},
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    with open(out / "counts.jsonl", "w", encoding="utf-8") as sink:
        save_counts(sink, counts, vocab)
    with open(out / "embeddings.jsonl", "w", encoding="utf-8") as sink:
        save_embeddings(sink, make_fixture_embeddings(vocab, counts))
    header_kwargs = dict(
        vocab_hash=vocabulary_hash(vocab),
        n_objects=vocab.n_objects,
        n_predicates=vocab.n_predicates,
    )
    with open(out / "measurements.jsonl", "w", encoding="utf-8") as sink:
        save_measurements(sink, measurements, FileHeader(MEASUREMENTS_FORMAT, **header_kwargs))
    with open(out / "ground_truth.jsonl", "w", encoding="utf-8") as sink:
        save_ground_truth(sink, ground_truths, FileHeader(GROUND_TRUTH_FORMAT, **header_kwargs))

    config = {
        "vocabulary": str(out / "vocab.json"),
        "counts": str(out / "counts.jsonl"),
        "embeddings": str(out / "embeddings.jsonl"),
        "augmented_counts": str(out / "counts_augmented.jsonl"),
        "prior": str(out / "prior.json"),
        "measurements": str(out / "measurements.jsonl"),
        "ground_truth": str(out / "ground_truth.jsonl"),
        "output": str(out / "debiased.jsonl"),
        "report_json": str(out / "report.json"),
        "epsilon": 0.05,
        "task": "predcls" if args.entity_alpha >= 1.0 else "sgcls",
        "k": [20, 50],
        "workers": 1,
        "zero_shot": True,
    }
    (out / "pipeline.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote synthetic corpus ({args.images} images, seed {args.seed}) to {out}")
    print(f"run: triplet-debias pipeline --config {out / 'pipeline.json'}")


if __name__ == "__main__":
    main()
