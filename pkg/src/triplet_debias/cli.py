"""Command-line surface: learn, augment, infer, eval, and an end-to-end pipeline.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import IO, Iterator

from . import __version__
from .augment import AugmentationConfig, augment_counts, load_embeddings
from .graphs import (
    DEBIASED_FORMAT,
    FORMAT_VERSION,
    MEASUREMENTS_FORMAT,
    FileHeader,
    ValidationError,
    debiased_to_record,
    dump_record,
    iter_records,
    load_debiased,
    load_ground_truth,
    load_vocabulary,
    measurement_from_record,
    read_file_header,
    vocabulary_hash,
)
from .inference import CONFLICT_STRATEGIES, TASK_MODES, InferenceConfig, debias_graph
from .metrics import evaluate, write_per_predicate_csv, write_report_json
from .prior import estimate_prior, load_counts, load_prior, save_counts, save_prior

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _open_read(path) -> IO[str]:
    return open(path, "r", encoding="utf-8")


def _open_write(path) -> IO[str]:
    return open(path, "w", encoding="utf-8")


# ---------------------------------------------------------------------------
# learn


def cmd_learn(args) -> int:
    with _open_read(args.vocab) as stream:
        vocab = load_vocabulary(stream)
    with _open_read(args.counts) as stream:
        counts = load_counts(stream, vocab, vocab_hash=vocabulary_hash(vocab))
    prior = estimate_prior(counts, smoothing_k=args.smoothing)
    with _open_write(args.out) as sink:
        save_prior(sink, prior)
    print(
        f"learned prior from {counts.total_valid():g} valid triplets "
        f"({counts.total_invalid():g} out-of-vocabulary ignored); "
        f"{len(prior.cond)} distinct subject/object pairs -> {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment


def cmd_augment(args) -> int:
    with _open_read(args.vocab) as stream:
        vocab = load_vocabulary(stream)
    with _open_read(args.counts) as stream:
        counts = load_counts(stream, vocab, vocab_hash=vocabulary_hash(vocab))
    with _open_read(args.embeddings) as stream:
        table = load_embeddings(stream)
    config = AugmentationConfig(epsilon=args.epsilon, nearest_only=args.nearest_only)
    augmented = augment_counts(counts, table, config, vocab)
    with _open_write(args.out) as sink:
        save_counts(sink, augmented, vocab)
    print(
        f"augmented valid counts: {counts.total_valid():g} -> {augmented.total_valid():g} "
        f"(epsilon={args.epsilon}, nearest_only={args.nearest_only}) -> {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer

_WORKER_STATE: dict = {}


def _init_worker(prior, config) -> None:
    _WORKER_STATE["prior"] = prior
    _WORKER_STATE["config"] = config


def _debias_payload(payload: tuple[int, dict]) -> str:
    line_no, record = payload
    try:
        graph = measurement_from_record(record)
    except ValidationError as exc:
        raise ValidationError(f"line {line_no}: {exc}") from None
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"line {line_no}: malformed record ({exc!r})") from None
    result = debias_graph(graph, _WORKER_STATE["prior"], _WORKER_STATE["config"])
    return dump_record(debiased_to_record(result))


def _measurement_payloads(stream: IO[str]) -> Iterator[tuple[int, dict]]:
    first = True
    for line_no, record in iter_records(stream):
        if "format" in record:
            if not first:
                raise ValidationError(f"line {line_no}: header record allowed only as the first line")
            if record["format"] != MEASUREMENTS_FORMAT:
                raise ValidationError(f"line {line_no}: unexpected file format {record['format']!r}")
            first = False
            continue
        first = False
        yield line_no, record


def cmd_infer(args) -> int:
    with _open_read(args.prior) as stream:
        prior = load_prior(stream)
    header = read_file_header(args.measurements)
    if (
        header is not None
        and header.vocab_hash is not None
        and prior.vocab_hash is not None
        and header.vocab_hash != prior.vocab_hash
    ):
        raise ValidationError("vocabulary hash mismatch between prior model and measurements")
    threshold = math.inf if args.entropy_threshold is None else args.entropy_threshold
    config = InferenceConfig(
        entropy_threshold=threshold,
        conflict_strategy=args.conflict,
        task_mode=args.task,
    )
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    out_header = FileHeader(
        DEBIASED_FORMAT,
        vocab_hash=prior.vocab_hash,
        n_objects=prior.n_objects,
        n_predicates=prior.n_predicates,
    )
    started = time.perf_counter()
    count = 0
    with _open_read(args.measurements) as stream, _open_write(args.out) as sink:
        sink.write(dump_record(out_header.to_record()) + "\n")
        payloads = _measurement_payloads(stream)
        if workers <= 1:
            _init_worker(prior, config)
            lines: Iterator[str] = map(_debias_payload, payloads)
            for line in lines:
                sink.write(line + "\n")
                count += 1
        else:
            with ProcessPoolExecutor(
                max_workers=workers, initializer=_init_worker, initargs=(prior, config)
            ) as pool:
                for line in pool.map(_debias_payload, payloads, chunksize=8):
                    sink.write(line + "\n")
                    count += 1
    elapsed = time.perf_counter() - started
    per_image = f" ({elapsed / count:.4f} s/image)" if count else ""
    print(f"debiased {count} images in {elapsed:.2f}s{per_image} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    prior = None
    if args.prior is not None:
        with _open_read(args.prior) as stream:
            prior = load_prior(stream)
    elif args.zero_shot:
        raise ValidationError("zero-shot recall requires --prior (seen-triplet set unavailable)")
    with _open_read(args.pred) as stream:
        predictions = list(load_debiased(stream))
    with _open_read(args.gt) as stream:
        ground_truths = list(load_ground_truth(stream))
    if prior is not None:
        n_predicates = prior.n_predicates
    else:
        header = read_file_header(args.gt)
        if header is not None and header.n_predicates:
            n_predicates = header.n_predicates
        else:
            observed = [r.rel for g in ground_truths for r in g.relations]
            observed += [t.rel_label for g in predictions for t in g.triplets]
            n_predicates = max(observed, default=0) + 1
    report = evaluate(
        predictions,
        ground_truths,
        ks=args.k,
        iou_threshold=args.iou,
        n_predicates=n_predicates,
        seen_triplets=prior.seen_triplets if prior is not None else None,
    )
    print(report.format_table())
    if args.report_json:
        with _open_write(args.report_json) as sink:
            write_report_json(sink, report)
    if args.per_predicate_csv:
        labels = None
        if args.vocab:
            with _open_read(args.vocab) as stream:
                labels = list(load_vocabulary(stream).relationship_labels)
        with _open_write(args.per_predicate_csv) as sink:
            write_per_predicate_csv(sink, report, labels)
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class RunConfig:
    """End-to-end run description; flags override file values."""

    vocabulary: str
    counts: str
    measurements: str
    ground_truth: str
    prior: str
    output: str
    embeddings: str | None = None
    augmented_counts: str | None = None
    report_json: str | None = None
    per_predicate_csv: str | None = None
    epsilon: float = 0.05
    nearest_only: bool = False
    smoothing: float = 0.0
    entropy_threshold: float | None = None
    conflict: str = "two_step"
    task: str = "sgcls"
    k: tuple[int, ...] = (50, 100)
    iou: float = 0.5
    workers: int | None = None
    zero_shot: bool = False

    def validate(self) -> None:
        for name in ("vocabulary", "counts", "measurements", "ground_truth"):
            path = getattr(self, name)
            if not Path(path).exists():
                raise ValidationError(f"configured {name} path does not exist: {path}")
        if self.embeddings is not None:
            if not Path(self.embeddings).exists():
                raise ValidationError(f"configured embeddings path does not exist: {self.embeddings}")
            if self.augmented_counts is None:
                raise ValidationError("config with embeddings must set 'augmented_counts'")
        ks = list(self.k)
        if not ks or ks != sorted(set(ks)) or ks[0] < 1:
            raise ValidationError(f"K list must be non-empty, ascending, and positive: {ks!r}")


def _load_run_config(path, overrides: dict) -> RunConfig:
    with _open_read(path) as stream:
        try:
            doc = json.load(stream)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed config file: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    if "k" in doc:
        doc["k"] = tuple(doc["k"])
    try:
        config = RunConfig(**doc)
    except TypeError as exc:
        raise ValidationError(f"incomplete config: {exc}") from None
    config = replace(config, **overrides)
    config.validate()
    return config


def cmd_pipeline(args) -> int:
    overrides = {
        name: getattr(args, name)
        for name in ("epsilon", "smoothing", "entropy_threshold", "conflict", "task", "iou", "workers")
        if getattr(args, name) is not None
    }
    if args.k is not None:
        overrides["k"] = tuple(args.k)
    if args.nearest_only:
        overrides["nearest_only"] = True
    config = _load_run_config(args.config, overrides)

    counts_path = config.counts
    if config.embeddings is not None:
        status = cmd_augment(
            argparse.Namespace(
                counts=config.counts,
                embeddings=config.embeddings,
                vocab=config.vocabulary,
                out=config.augmented_counts,
                epsilon=config.epsilon,
                nearest_only=config.nearest_only,
            )
        )
        if status != EXIT_OK:
            return status
        counts_path = config.augmented_counts
    status = cmd_learn(
        argparse.Namespace(counts=counts_path, vocab=config.vocabulary, out=config.prior, smoothing=config.smoothing)
    )
    if status != EXIT_OK:
        return status
    status = cmd_infer(
        argparse.Namespace(
            prior=config.prior,
            measurements=config.measurements,
            out=config.output,
            entropy_threshold=config.entropy_threshold,
            conflict=config.conflict,
            task=config.task,
            workers=config.workers,
        )
    )
    if status != EXIT_OK:
        return status
    return cmd_eval(
        argparse.Namespace(
            pred=config.output,
            gt=config.ground_truth,
            prior=config.prior,
            k=list(config.k),
            iou=config.iou,
            zero_shot=config.zero_shot,
            report_json=config.report_json,
            per_predicate_csv=config.per_predicate_csv,
            vocab=config.vocabulary,
        )
    )


# ---------------------------------------------------------------------------
# parser


def _parse_k_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}; expected e.g. 50,100") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triplet-debias",
        description="Debias long-tailed scene-graph relationship predictions.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"triplet-debias {__version__} (file formats v{FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_learn = sub.add_parser("learn", help="estimate the within-triplet prior from counts")
    p_learn.add_argument("counts", help="triplet counts file (one labeled record per line)")
    p_learn.add_argument("vocab", help="vocabulary document")
    p_learn.add_argument("-o", "--out", required=True, help="output prior model path")
    p_learn.add_argument("--smoothing", type=float, default=0.0, help="add-k smoothing constant")
    p_learn.set_defaults(func=cmd_learn)

    p_aug = sub.add_parser("augment", help="borrow out-of-vocabulary counts via embedding neighborhoods")
    p_aug.add_argument("counts", help="triplet counts file")
    p_aug.add_argument("embeddings", help="embedding file with header-declared dimension")
    p_aug.add_argument("--vocab", required=True, help="vocabulary document")
    p_aug.add_argument("-o", "--out", required=True, help="output counts path")
    p_aug.add_argument("--epsilon", type=float, default=0.05, help="cosine-distance radius")
    p_aug.add_argument(
        "--nearest-only",
        action="store_true",
        help="assign each invalid triplet only to its nearest valid triplet",
    )
    p_aug.set_defaults(func=cmd_augment)

    p_infer = sub.add_parser("infer", help="debias measurement graphs with a learned prior")
    p_infer.add_argument("prior", help="prior model file")
    p_infer.add_argument("measurements", help="measurement graphs, one record per image")
    p_infer.add_argument("-o", "--out", required=True, help="output debiased-graph path")
    p_infer.add_argument(
        "--entropy-threshold",
        type=float,
        default=None,
        dest="entropy_threshold",
        help="leave pairs with relationship entropy above this many nats unrefined (default: refine all)",
    )
    p_infer.add_argument("--conflict", choices=CONFLICT_STRATEGIES, default="two_step")
    p_infer.add_argument("--task", choices=TASK_MODES, default="sgcls")
    p_infer.add_argument("--workers", type=int, default=None, help="parallel image workers (default: all cores)")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="score debiased graphs against ground truth")
    p_eval.add_argument("pred", help="debiased graph file")
    p_eval.add_argument("gt", help="ground-truth graph file")
    p_eval.add_argument("--prior", default=None, help="prior model (enables zero-shot recall)")
    p_eval.add_argument("--k", type=_parse_k_list, default=[50, 100], help="comma-separated cutoffs")
    p_eval.add_argument("--iou", type=float, default=0.5, help="box overlap threshold")
    p_eval.add_argument("--zero-shot", action="store_true", dest="zero_shot", help="require zero-shot metrics")
    p_eval.add_argument("--report-json", default=None, help="also write the report as JSON")
    p_eval.add_argument("--per-predicate-csv", default=None, help="also write per-predicate recalls as CSV")
    p_eval.add_argument("--vocab", default=None, help="vocabulary document (labels the CSV)")
    p_eval.set_defaults(func=cmd_eval)

    p_pipe = sub.add_parser("pipeline", help="run learn/augment/infer/eval from a config file")
    p_pipe.add_argument("--config", required=True, help="JSON run configuration")
    p_pipe.add_argument("--epsilon", type=float, default=None)
    p_pipe.add_argument("--nearest-only", action="store_true", dest="nearest_only")
    p_pipe.add_argument("--smoothing", type=float, default=None)
    p_pipe.add_argument("--entropy-threshold", type=float, default=None, dest="entropy_threshold")
    p_pipe.add_argument("--conflict", choices=CONFLICT_STRATEGIES, default=None)
    p_pipe.add_argument("--task", choices=TASK_MODES, default=None)
    p_pipe.add_argument("--k", type=_parse_k_list, default=None)
    p_pipe.add_argument("--iou", type=float, default=None)
    p_pipe.add_argument("--workers", type=int, default=None)
    p_pipe.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
