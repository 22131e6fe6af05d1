"""Command line interface.

Exit codes: 0 success, 2 argument or validation errors, 3 model/pipeline
load failures, 4 input/output failures, 5 non-finite loss during training,
6 tokenization alignment failures in evaluate.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .annotators import assemble_document
from .assertion import AssertionTrainingError
from .core import (
    Annotation,
    AnnotationKind,
    DocumentRecord,
    Frame,
    PipelineError,
    UnknownStageType,
    build_pipeline,
    record_from_json,
    record_to_json,
    record_to_obj,
)
from .embeddings import EmbeddingError, load_glove
from .evaluation import (
    ConllError,
    merge_datasets,
    micro_f1,
    read_conll,
    report_to_json,
    token_f1,
)
from .ner import NerConfig, NerError, NerExample, NerTrainingError, train_ner
from .parallel import (
    BenchmarkParams,
    ParallelError,
    benchmark,
    effective_workers,
    report_to_csv,
    run_parallel_jsonl,
)
from .parallel import report_to_json as bench_to_json
from .presets import assemble_ner_pipeline, rule_specs
from .store import StoreError, load_pipeline, registry_list
from .synth import CorpusParams

ENV_REGISTRY = "ANNOFLOW_REGISTRY"


class AlignmentError(Exception):
    def __init__(self, sentence: int, detail: str):
        super().__init__(f"sentence {sentence}: {detail}")
        self.sentence = sentence


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annoflow", description="Annotation pipeline engine"
    )
    parser.add_argument("--version", action="version", version=f"annoflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="run a saved pipeline over JSONL records")
    p.add_argument("--pipeline", required=True, help="saved pipeline directory")
    p.add_argument("--input", required=True, help="input JSONL file, '-' for stdin")
    p.add_argument("--output", required=True, help="output JSONL file, '-' for stdout")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: ANNOFLOW_WORKERS or 1)")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train-ner", help="train the tagger and save a full pipeline")
    p.add_argument("--train", required=True, help="CoNLL training file")
    p.add_argument("--dev", default=None,
                   help="CoNLL validation file; merged into training for the final run")
    p.add_argument("--embeddings", required=True, help="embedding table, text format")
    p.add_argument("--output", required=True, help="pipeline directory to create")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--char-dim", type=int, default=16)
    p.add_argument("--conv-width", type=int, default=3)
    p.add_argument("--conv-filters", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_train_ner)

    p = sub.add_parser("evaluate", help="score a pipeline against CoNLL data")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--data", required=True, help="CoNLL file with gold labels")
    p.add_argument("--output", default=None, help="write the JSON report here")
    p.add_argument("--token-level", action="store_true",
                   help="also report token-level scores excluding O")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="measure per-stage throughput and scaling")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pipeline", help="saved pipeline directory")
    group.add_argument("--preset", choices=("tokenize",),
                       help="built-in rule-only pipeline")
    p.add_argument("--docs", type=int, default=1000)
    p.add_argument("--workers", default="1,2,4", help="comma-separated worker counts")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--output", default=None, help="write the JSON report here")
    p.add_argument("--csv", default=None, help="also write a CSV report here")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("serve-stdio", help="serve annotate requests over stdin/stdout")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_serve_stdio)

    p = sub.add_parser("registry", help="list saved pipelines under a directory")
    p.add_argument("--registry", default=None,
                   help=f"registry root (default: ${ENV_REGISTRY} or '.')")
    p.set_defaults(func=cmd_registry)

    return parser


def _read_jsonl_records(path: str) -> Frame:
    if path == "-":
        lines = sys.stdin.read().splitlines()
    else:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    records = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(record_from_json(line))
        except (ValueError, KeyError) as exc:
            records.append(
                DocumentRecord(id="", text="", error=f"input line {i}: {exc}")
            )
    return Frame(records)


def cmd_annotate(args: argparse.Namespace) -> int:
    pipeline = load_pipeline(args.pipeline)
    workers = effective_workers(args.workers)
    if workers < 1:
        print(f"error: workers must be >= 1, got {workers}", file=sys.stderr)
        return 2
    frame = _read_jsonl_records(args.input)
    t0 = time.perf_counter()
    lines = run_parallel_jsonl(pipeline, frame, workers)
    elapsed = time.perf_counter() - t0
    payload = "".join(line + "\n" for line in lines)
    if args.output == "-":
        sys.stdout.write(payload)
    else:
        Path(args.output).write_text(payload, encoding="utf-8")
    rate = len(frame.records) / elapsed if elapsed > 0 else float("inf")
    print(
        f"annotated {len(frame.records)} records in {elapsed:.2f}s "
        f"({rate:.1f} docs/s), workers={workers}, seed={args.seed}",
        file=sys.stderr,
    )
    return 0


def _conll_to_examples(dataset, table) -> list[NerExample]:
    examples = []
    for tokens, labels in dataset.sentences:
        vectors = np.stack([table.lookup(tok)[0] for tok in tokens]).astype(np.float64)
        examples.append(NerExample(tokens, vectors, labels))
    return examples


def cmd_train_ner(args: argparse.Namespace) -> int:
    from .store import save_pipeline

    dataset = read_conll(args.train)
    if args.dev:
        dataset = merge_datasets(dataset, read_conll(args.dev))
    if not dataset.sentences:
        print("error: training data has no sentences", file=sys.stderr)
        return 2
    table = load_glove(args.embeddings)
    config = NerConfig(
        char_dim=args.char_dim,
        conv_width=args.conv_width,
        conv_filters=args.conv_filters,
        hidden=args.hidden,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        clip_norm=args.clip_norm,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    examples = _conll_to_examples(dataset, table)
    model, trace = train_ner(examples, config, labels=dataset.labels)
    pipeline = assemble_ner_pipeline(table, model)
    save_pipeline(pipeline, args.output, force=args.force)
    found = sum(
        1 for tokens, _ in dataset.sentences for tok in tokens if table.lookup(tok)[1]
    )
    total = sum(len(tokens) for tokens, _ in dataset.sentences)
    summary = {
        "seed": args.seed,
        "epochs": config.epochs,
        "sentences": len(dataset.sentences),
        "labels": list(dataset.labels),
        "iob1_rewrites": dataset.iob1_rewrites,
        "embedding_coverage": (found / total) if total else 0.0,
        "loss_trace": trace,
        "final_loss": trace[-1] if trace else None,
        "pipeline": str(args.output),
    }
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def _prefilled_conll_frame(dataset, pipeline) -> tuple[Frame, str, str, str]:
    """One record per CoNLL sentence with document, sentence and token
    columns already populated, trusting the file's tokenization."""
    kinds = {
        AnnotationKind.DOCUMENT: None,
        AnnotationKind.SENTENCE: None,
        AnnotationKind.TOKEN: None,
    }
    for spec, _stage in pipeline.stages:
        kind = pipeline.schema.get(spec.output)
        if kind in kinds and kinds[kind] is None:
            kinds[kind] = spec.output
    doc_col = kinds[AnnotationKind.DOCUMENT] or "document"
    sent_col = kinds[AnnotationKind.SENTENCE] or "sentence"
    tok_col = kinds[AnnotationKind.TOKEN] or "token"
    records = []
    for si, (tokens, _labels) in enumerate(dataset.sentences):
        text = " ".join(tokens)
        anns = []
        pos = 0
        for tok in tokens:
            anns.append(
                Annotation(
                    kind=AnnotationKind.TOKEN.value,
                    begin=pos,
                    end=pos + len(tok) - 1,
                    result=tok,
                )
            )
            pos += len(tok) + 1
        doc = assemble_document(text)
        sent = Annotation(
            kind=AnnotationKind.SENTENCE.value,
            begin=0,
            end=len(text) - 1 if text else 0,
            result=text,
        )
        records.append(
            DocumentRecord(
                id=f"sent-{si:05d}",
                text=text,
                columns={doc_col: [doc], sent_col: [sent], tok_col: anns},
            )
        )
    return Frame(records), doc_col, sent_col, tok_col


def cmd_evaluate(args: argparse.Namespace) -> int:
    pipeline = load_pipeline(args.pipeline)
    dataset = read_conll(args.data)
    if not dataset.sentences:
        print("error: evaluation data has no sentences", file=sys.stderr)
        return 2
    frame, doc_col, sent_col, tok_col = _prefilled_conll_frame(dataset, pipeline)
    prefilled = {doc_col, sent_col, tok_col}
    entity_col = None
    for spec, stage in pipeline.stages:
        if spec.output in prefilled:
            continue
        for rec in frame.records:
            if rec.error is not None:
                continue
            try:
                rec.columns[spec.output] = stage.apply(rec, spec)
            except Exception as exc:
                rec.error = f"{spec.stage_id}: {exc}"
        if pipeline.schema.get(spec.output) == AnnotationKind.NAMED_ENTITY:
            entity_col = spec.output
            break
    if entity_col is None:
        print("error: pipeline has no named_entity stage", file=sys.stderr)
        return 2
    pred: list[list[str]] = []
    for si, (rec, (tokens, _)) in enumerate(zip(frame.records, dataset.sentences)):
        if rec.error is not None:
            raise AlignmentError(si, rec.error)
        tags = rec.columns.get(entity_col, [])
        if len(tags) != len(tokens):
            raise AlignmentError(
                si, f"{len(tags)} predicted labels for {len(tokens)} tokens"
            )
        pred.append([t.result for t in tags])
    gold = [labels for _, labels in dataset.sentences]
    report = micro_f1(pred, gold)
    obj = report.to_json_obj()
    obj["seed"] = args.seed
    obj["iob1_rewrites"] = dataset.iob1_rewrites
    if args.token_level:
        obj["token_level_excluding_o"] = token_f1(pred, gold)
    payload = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    sys.stdout.write(payload)  # machine-readable report on stdout
    print(report.to_table(), file=sys.stderr)
    print(
        f"micro F1 {report.f1:.4f} over {report.sentences} sentences, seed={args.seed}",
        file=sys.stderr,
    )
    if args.output:
        Path(args.output).write_text(payload, encoding="utf-8")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    try:
        worker_counts = tuple(int(w) for w in str(args.workers).split(",") if w)
    except ValueError:
        print(f"error: bad worker list '{args.workers}'", file=sys.stderr)
        return 2
    if args.pipeline:
        pipeline = load_pipeline(args.pipeline)
    else:
        pipeline = build_pipeline(rule_specs())
    params = BenchmarkParams(
        corpus=CorpusParams(docs=args.docs, seed=args.seed),
        worker_counts=worker_counts,
        repetitions=args.repetitions,
        seed=args.seed,
    )
    report = benchmark(pipeline, params)
    payload = bench_to_json(report)
    if args.output:
        Path(args.output).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    if args.csv:
        Path(args.csv).write_text(report_to_csv(report), encoding="utf-8")
    return 0


def cmd_serve_stdio(args: argparse.Namespace) -> int:
    pipeline = load_pipeline(args.pipeline)
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req_id = None
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be a JSON object")
            req_id = req.get("id")
            op = req.get("op")
            if op == "ping":
                resp = {"id": req_id, "result": "pong"}
            elif op == "annotate":
                record = record_from_json(json.dumps(req["record"]))
                resp = {"id": req_id, "result": record_to_obj(pipeline.transform_record(record))}
            else:
                resp = {"id": req_id, "error": f"unknown op {op!r}"}
        except Exception as exc:
            resp = {"id": req_id, "error": str(exc)}
        out.write(json.dumps(resp, ensure_ascii=False, separators=(",", ":")) + "\n")
        out.flush()
    return 0


def cmd_registry(args: argparse.Namespace) -> int:
    import os

    root = args.registry or os.environ.get(ENV_REGISTRY) or "."
    entries = registry_list(root)
    json.dump(entries, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (StoreError, UnknownStageType) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NerTrainingError, AssertionTrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except AlignmentError as exc:
        print(f"error: tokenization alignment failed: {exc}", file=sys.stderr)
        return 6
    except (ConllError, EmbeddingError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (PipelineError, NerError, ParallelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
