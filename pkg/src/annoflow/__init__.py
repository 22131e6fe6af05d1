"""annoflow: a data-parallel clinical NLP annotation pipeline engine.

Importing the package registers every built-in stage type; pipelines are
declared as JSON stage lists, fitted against the registry, executed over
document frames (optionally across forked workers) and saved to disk as a
manifest plus checksummed binary blobs.
"""

from ._version import __version__
from . import annotators, assertion, embeddings, ner  # noqa: F401  (stage registration)
from .core import (
    Annotation,
    AnnotationKind,
    DocumentRecord,
    DuplicateOutput,
    FittedPipeline,
    Frame,
    KindMismatch,
    MissingInput,
    PipelineError,
    StageSpec,
    UnknownStageType,
    build_pipeline,
    frame_from_jsonl,
    frame_to_jsonl,
    pipeline_fit,
    record_from_json,
    record_to_json,
    registered_stage_types,
    schema_check,
    specs_from_json,
    specs_to_json,
)
from .parallel import run_parallel, run_parallel_jsonl
from .store import load_pipeline, save_pipeline

__all__ = [
    "Annotation",
    "AnnotationKind",
    "DocumentRecord",
    "DuplicateOutput",
    "FittedPipeline",
    "Frame",
    "KindMismatch",
    "MissingInput",
    "PipelineError",
    "StageSpec",
    "UnknownStageType",
    "build_pipeline",
    "frame_from_jsonl",
    "frame_to_jsonl",
    "load_pipeline",
    "pipeline_fit",
    "record_from_json",
    "record_to_json",
    "registered_stage_types",
    "run_parallel",
    "run_parallel_jsonl",
    "save_pipeline",
    "schema_check",
    "specs_from_json",
    "specs_to_json",
    "__version__",
]
