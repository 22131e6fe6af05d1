"""Data-parallel execution and the desk-scale benchmark harness.

Annotation is embarrassingly parallel across documents, so the executor
splits a frame into contiguous near-equal partitions and runs each in a
forked worker process.  Fork matters: workers inherit the fitted pipeline
through copy-on-write memory instead of pickling models around, and only
results cross process boundaries.  One worker means plain in-process
execution; results merge in partition order, so output is byte-identical to
serial for every worker count.
"""

from __future__ import annotations

import csv
import io
import json
import multiprocessing
import os
import statistics
import time
from dataclasses import dataclass
from typing import Any

from .core import Frame, FittedPipeline, record_to_json
from .synth import CorpusParams, make_corpus

ENV_WORKERS = "ANNOFLOW_WORKERS"


class ParallelError(Exception):
    pass


def effective_workers(requested: int | None) -> int:
    """CLI worker count: explicit flag wins, then ANNOFLOW_WORKERS, then 1."""
    if requested is not None:
        return requested
    env = os.environ.get(ENV_WORKERS)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ParallelError(f"{ENV_WORKERS} must be an integer, got '{env}'") from None
    return 1


def partition(n: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous half-open ranges with sizes differing by at most one; the
    first ``n % parts`` ranges take the extra element."""
    if parts < 1:
        raise ParallelError(f"parts must be >= 1, got {parts}")
    base, extra = divmod(n, parts)
    ranges = []
    start = 0
    for k in range(parts):
        size = base + (1 if k < extra else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


# Worker state injected before fork; children read it copy-on-write.
_WORK: tuple[FittedPipeline, list, bool] | None = None


def _apply_range(pipeline: FittedPipeline, records: list, rng: tuple[int, int], as_json: bool) -> list:
    lo, hi = rng
    if as_json:
        return [record_to_json(pipeline.transform_record(records[i])) for i in range(lo, hi)]
    return [pipeline.transform_record(records[i]) for i in range(lo, hi)]


def _run_range(rng: tuple[int, int]) -> list:
    pipeline, records, as_json = _WORK  # type: ignore[misc]
    return _apply_range(pipeline, records, rng, as_json)


def _run_partitioned(
    pipeline: FittedPipeline, frame: Frame, workers: int, as_json: bool
) -> list:
    if workers < 1:
        raise ParallelError(f"workers must be >= 1, got {workers}")
    ranges = partition(len(frame.records), workers)
    if workers == 1 or len(frame.records) == 0:
        parts = [_apply_range(pipeline, frame.records, rng, as_json) for rng in ranges]
    else:
        global _WORK
        ctx = multiprocessing.get_context("fork")
        _WORK = (pipeline, frame.records, as_json)
        try:
            with ctx.Pool(processes=workers) as pool:
                parts = pool.map(_run_range, ranges, chunksize=1)
        finally:
            _WORK = None
    merged: list = []
    for part in parts:
        merged.extend(part)
    return merged


def run_parallel(pipeline: FittedPipeline, frame: Frame, workers: int = 1) -> Frame:
    records = _run_partitioned(pipeline, frame, workers, as_json=False)
    schema = dict(frame.schema)
    schema.update(pipeline.schema)
    return Frame(records, schema)


def run_parallel_jsonl(pipeline: FittedPipeline, frame: Frame, workers: int = 1) -> list[str]:
    """Annotate and serialize in the workers; the parent only concatenates.
    This is the path the batch CLI uses, so benchmarks time it too."""
    return _run_partitioned(pipeline, frame, workers, as_json=True)


@dataclass
class BenchmarkParams:
    corpus: CorpusParams
    worker_counts: tuple[int, ...] = (1, 2, 4)
    repetitions: int = 3
    seed: int = 42


def benchmark(pipeline: FittedPipeline, params: BenchmarkParams) -> dict[str, Any]:
    """Per-stage wall time and docs/sec via prefix differencing.

    Timing a stage in isolation would need mid-pipeline frames shipped to
    workers, which measures serialization instead of work; so each prefix
    pipeline (stage 1, stages 1-2, ...) is timed end to end and stage cost
    is the difference between consecutive prefix medians.  Medians are over
    ``repetitions`` runs; speedup(W) is throughput(W) / throughput(1), so
    speedup(1) is 1.0 by construction.
    """
    if params.repetitions < 3:
        raise ParallelError("benchmark needs at least 3 repetitions")
    if 1 not in params.worker_counts:
        raise ParallelError("worker_counts must include 1 (the serial baseline)")
    frame = make_corpus(params.corpus)
    n_docs = len(frame.records)
    n_stages = len(pipeline.stages)
    # times[stage][workers] -> list of per-rep prefix-differenced seconds
    times: list[dict[int, list[float]]] = [
        {w: [] for w in params.worker_counts} for _ in range(n_stages)
    ]
    for _rep in range(params.repetitions):
        for w in params.worker_counts:
            prev = 0.0
            for k in range(1, n_stages + 1):
                prefix = pipeline.prefix(k)
                t0 = time.perf_counter()
                run_parallel_jsonl(prefix, frame, w)
                elapsed = time.perf_counter() - t0
                times[k - 1][w].append(max(elapsed - prev, 0.0))
                prev = elapsed

    stages_out = []
    for k, (spec, _stage) in enumerate(pipeline.stages):
        rows = {}
        base_median = statistics.median(times[k][1])
        for w in params.worker_counts:
            med = statistics.median(times[k][w])
            floor = max(med, 1e-9)
            rows[str(w)] = {
                "median_s": med,
                "min_s": min(times[k][w]),
                "max_s": max(times[k][w]),
                "docs_per_s": n_docs / floor,
                "speedup": max(base_median, 1e-9) / floor if w != 1 else 1.0,
            }
        stages_out.append({"id": spec.stage_id, "type": spec.stage_type, "workers": rows})
    mean_chars = (
        sum(len(r.text) for r in frame.records) / n_docs if n_docs else 0.0
    )
    return {
        "corpus": {
            "docs": n_docs,
            "mean_doc_chars": mean_chars,
            "seed": params.corpus.seed,
        },
        "repetitions": params.repetitions,
        "worker_counts": list(params.worker_counts),
        "seed": params.seed,
        "stages": stages_out,
    }


def report_to_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def report_to_csv(report: dict[str, Any]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["stage_id", "stage_type", "workers", "median_s", "min_s", "max_s", "docs_per_s", "speedup"]
    )
    for stage in report["stages"]:
        for w in sorted(stage["workers"], key=int):
            row = stage["workers"][w]
            writer.writerow(
                [
                    stage["id"],
                    stage["type"],
                    w,
                    f"{row['median_s']:.6f}",
                    f"{row['min_s']:.6f}",
                    f"{row['max_s']:.6f}",
                    f"{row['docs_per_s']:.3f}",
                    f"{row['speedup']:.3f}",
                ]
            )
    return buf.getvalue()
