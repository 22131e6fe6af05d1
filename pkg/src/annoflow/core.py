"""Columnar annotation data model and the stage pipeline contract.

A :class:`Frame` is an ordered collection of document records.  Each record
carries the raw text plus named annotation columns, and every column holds
annotations of exactly one :class:`AnnotationKind`.  Pipelines are declarative
lists of stage specs; fitting resolves each spec against the stage registry
(building rule stages directly, training estimator stages on the frame seen so
far) and yields a :class:`FittedPipeline` of pure, picklable transform stages.

Offsets are 0-based with *inclusive* ends: an annotation spanning characters
``begin .. end`` has ``end - begin + 1`` characters.  For document, sentence
and token annotations the ``result`` string equals that exact slice of the
assembled document text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, NamedTuple


class AnnotationKind(str, Enum):
    """Closed set of annotation kinds a column may hold."""

    DOCUMENT = "document"
    SENTENCE = "sentence"
    TOKEN = "token"
    NORMALIZED_TOKEN = "normalized_token"
    WORD_EMBEDDING = "word_embedding"
    NAMED_ENTITY = "named_entity"
    CHUNK = "chunk"
    ASSERTION = "assertion"


_EMPTY_META: dict[str, str] = {}


class Annotation(NamedTuple):
    """One annotation over a document.

    ``vector``, when present, is the packed little-endian float32 buffer of
    the embedding row (kept as bytes so annotations stay hashable and cheap
    to pickle); :func:`vector_values` unpacks it for the JSON surface.
    """

    kind: str
    begin: int
    end: int
    result: str
    metadata: dict[str, str] = _EMPTY_META
    vector: bytes | None = None


def vector_values(ann: Annotation) -> list[float] | None:
    if ann.vector is None:
        return None
    import struct

    n = len(ann.vector) // 4
    return [float(v) for v in struct.unpack(f"<{n}f", ann.vector)]


def pack_vector(values: Iterable[float]) -> bytes:
    import struct

    vals = [float(v) for v in values]
    return struct.pack(f"<{len(vals)}f", *vals)


@dataclass
class DocumentRecord:
    """One document: stable id, raw text, annotation columns.

    ``error`` is set instead of raising when a stage fails on this record or
    when the input line could not be parsed; downstream stages skip errored
    records so one bad document never aborts the batch.
    """

    id: str
    text: str
    columns: dict[str, list[Annotation]] = field(default_factory=dict)
    error: str | None = None


@dataclass
class Frame:
    records: list[DocumentRecord]
    schema: dict[str, AnnotationKind] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class StageSpec:
    """Declarative description of one pipeline stage."""

    stage_id: str
    stage_type: str
    inputs: tuple[str, ...]
    output: str
    params: dict[str, Any] = field(default_factory=dict)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "id": self.stage_id,
            "type": self.stage_type,
            "inputs": list(self.inputs),
            "output": self.output,
            "params": self.params,
        }

    @staticmethod
    def from_json_obj(obj: dict[str, Any]) -> "StageSpec":
        try:
            return StageSpec(
                stage_id=str(obj["id"]),
                stage_type=str(obj["type"]),
                inputs=tuple(str(c) for c in obj["inputs"]),
                output=str(obj["output"]),
                params=dict(obj.get("params", {})),
            )
        except KeyError as exc:
            raise PipelineError(f"stage spec missing field {exc}") from None


# Pseudo-column every pipeline starts from: the raw text itself.
RAW_TEXT = "text"


class PipelineError(Exception):
    """Base class for pipeline construction and execution errors."""


class MissingInput(PipelineError):
    def __init__(self, stage_id: str, column: str):
        super().__init__(f"stage '{stage_id}': missing input column '{column}'")
        self.stage_id = stage_id
        self.column = column


class KindMismatch(PipelineError):
    def __init__(self, stage_id: str, column: str, expected: str, got: str):
        super().__init__(
            f"stage '{stage_id}': column '{column}' has kind {got}, expected {expected}"
        )
        self.stage_id = stage_id
        self.column = column


class DuplicateOutput(PipelineError):
    def __init__(self, stage_id: str, column: str):
        super().__init__(f"stage '{stage_id}': output column '{column}' already exists")
        self.stage_id = stage_id
        self.column = column


class UnknownStageType(PipelineError):
    def __init__(self, stage_type: str):
        super().__init__(f"unknown stage type '{stage_type}'")
        self.stage_type = stage_type


class FittedStage:
    """A resolved stage: pure function from record to an annotation list.

    Subclasses must be picklable (parallel execution forks workers that
    inherit the fitted pipeline) and must not mutate the record they are
    applied to.  ``store_type`` names the transformer stage type this stage
    round-trips through on save/load; estimators fit into stages whose
    ``store_type`` differs from the estimator's own type name.
    """

    store_type: str = ""

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        raise NotImplementedError

    def store_params(self) -> dict[str, Any]:
        """JSON-safe params for the saved manifest.  No floats allowed here;
        real-valued state belongs in the binary blob."""
        return {}

    def store_blob(self) -> bytes | None:
        return None


@dataclass(frozen=True)
class StageType:
    """Registry entry describing one stage type.

    ``input_kinds`` aligns with a spec's ``inputs``; ``None`` marks the raw
    text pseudo-column.  Exactly one of ``build`` (rule/transformer stages)
    or ``fit`` (estimator stages) is set.  ``restore`` rebuilds a fitted
    stage from its saved params and blob.
    """

    name: str
    input_kinds: tuple[AnnotationKind | None, ...]
    output_kind: AnnotationKind
    build: Callable[[StageSpec], FittedStage] | None = None
    fit: Callable[[StageSpec, Frame], FittedStage] | None = None
    restore: Callable[[StageSpec, bytes | None], FittedStage] | None = None

    @property
    def is_estimator(self) -> bool:
        return self.fit is not None


_REGISTRY: dict[str, StageType] = {}


def register_stage_type(st: StageType) -> None:
    if st.name in _REGISTRY:
        raise ValueError(f"stage type '{st.name}' registered twice")
    _REGISTRY[st.name] = st


def stage_type(name: str) -> StageType:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownStageType(name) from None


def registered_stage_types() -> list[str]:
    return sorted(_REGISTRY)


def schema_check(specs: list[StageSpec]) -> dict[str, AnnotationKind]:
    """Validate a pipeline spec without running it.

    Walks the stages in order, tracking the column -> kind environment, and
    returns the full output schema.  Raises MissingInput / KindMismatch /
    DuplicateOutput / UnknownStageType on the first violation.
    """
    if not specs:
        raise PipelineError("pipeline has no stages")
    seen_ids: set[str] = set()
    available: dict[str, AnnotationKind | None] = {RAW_TEXT: None}
    schema: dict[str, AnnotationKind] = {}
    for spec in specs:
        if spec.stage_id in seen_ids:
            raise PipelineError(f"duplicate stage id '{spec.stage_id}'")
        seen_ids.add(spec.stage_id)
        st = stage_type(spec.stage_type)
        if len(spec.inputs) != len(st.input_kinds):
            raise PipelineError(
                f"stage '{spec.stage_id}': {spec.stage_type} takes "
                f"{len(st.input_kinds)} inputs, got {len(spec.inputs)}"
            )
        for col, need in zip(spec.inputs, st.input_kinds):
            if col not in available:
                raise MissingInput(spec.stage_id, col)
            have = available[col]
            if need is None:
                if have is not None:
                    raise KindMismatch(spec.stage_id, col, "raw text", have.value)
            elif have != need:
                raise KindMismatch(
                    spec.stage_id,
                    col,
                    need.value,
                    "raw text" if have is None else have.value,
                )
        if spec.output in available:
            raise DuplicateOutput(spec.stage_id, spec.output)
        available[spec.output] = st.output_kind
        schema[spec.output] = st.output_kind
    return schema


@dataclass
class FittedPipeline:
    """An ordered list of (spec, fitted stage) pairs, ready to transform."""

    stages: list[tuple[StageSpec, FittedStage]]
    schema: dict[str, AnnotationKind]

    def prefix(self, n_stages: int) -> "FittedPipeline":
        """The sub-pipeline made of the first ``n_stages`` stages."""
        kept = self.stages[:n_stages]
        schema = {s.output: self.schema[s.output] for s, _ in kept}
        return FittedPipeline(kept, schema)

    def transform_record(self, record: DocumentRecord) -> DocumentRecord:
        out = DocumentRecord(
            id=record.id,
            text=record.text,
            columns=dict(record.columns),
            error=record.error,
        )
        if out.error is not None:
            return out
        for spec, stage in self.stages:
            try:
                out.columns[spec.output] = stage.apply(out, spec)
            except Exception as exc:  # capture, never abort the frame
                out.error = f"{spec.stage_id}: {exc}"
                break
        return out

    def transform(self, frame: Frame) -> Frame:
        records = [self.transform_record(r) for r in frame.records]
        schema = dict(frame.schema)
        schema.update(self.schema)
        return Frame(records, schema)


def pipeline_fit(specs: list[StageSpec], frame: Frame) -> FittedPipeline:
    """Resolve stage specs against the registry, training estimators in order.

    Each estimator sees the frame as transformed by all earlier stages, so
    the list order is also the data-dependency order for training.
    """
    schema = schema_check(specs)
    working = [
        DocumentRecord(r.id, r.text, dict(r.columns), r.error) for r in frame.records
    ]
    fitted: list[tuple[StageSpec, FittedStage]] = []
    for spec in specs:
        st = stage_type(spec.stage_type)
        if st.fit is not None:
            stage = st.fit(spec, Frame(working, dict(frame.schema)))
        elif st.build is not None:
            stage = st.build(spec)
        else:
            raise PipelineError(
                f"stage '{spec.stage_id}': type '{spec.stage_type}' can only be "
                "restored from a saved pipeline"
            )
        fitted.append((spec, stage))
        for rec in working:
            if rec.error is not None:
                continue
            try:
                rec.columns[spec.output] = stage.apply(rec, spec)
            except Exception as exc:
                rec.error = f"{spec.stage_id}: {exc}"
    return FittedPipeline(fitted, schema)


def build_pipeline(specs: list[StageSpec]) -> FittedPipeline:
    """pipeline_fit for transformer-only pipelines (no training frame needed)."""
    for spec in specs:
        if stage_type(spec.stage_type).is_estimator:
            raise PipelineError(
                f"stage '{spec.stage_id}' ({spec.stage_type}) needs fitting; "
                "use pipeline_fit with a training frame"
            )
    return pipeline_fit(specs, Frame([]))


def specs_to_json(specs: list[StageSpec]) -> str:
    doc = {"stages": [s.to_json_obj() for s in specs]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def specs_from_json(text: str) -> list[StageSpec]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PipelineError(f"pipeline spec is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "stages" not in doc:
        raise PipelineError("pipeline spec must be an object with a 'stages' list")
    return [StageSpec.from_json_obj(o) for o in doc["stages"]]


def _annotation_to_obj(ann: Annotation) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "kind": str(ann.kind),
        "begin": ann.begin,
        "end": ann.end,
        "result": ann.result,
        "metadata": ann.metadata,
    }
    if ann.vector is not None:
        obj["vector"] = vector_values(ann)
    return obj


def _annotation_from_obj(obj: dict[str, Any]) -> Annotation:
    kind = str(obj["kind"])
    AnnotationKind(kind)  # reject kinds outside the closed set
    vec = obj.get("vector")
    return Annotation(
        kind=kind,
        begin=int(obj["begin"]),
        end=int(obj["end"]),
        result=str(obj["result"]),
        metadata={str(k): str(v) for k, v in obj.get("metadata", {}).items()},
        vector=None if vec is None else pack_vector(vec),
    )


def record_to_obj(record: DocumentRecord) -> dict[str, Any]:
    obj: dict[str, Any] = {"id": record.id, "text": record.text}
    if record.columns:
        obj["columns"] = {
            name: [_annotation_to_obj(a) for a in anns]
            for name, anns in record.columns.items()
        }
    if record.error is not None:
        obj["error"] = record.error
    return obj


def record_to_json(record: DocumentRecord) -> str:
    """One JSONL line for a record.  Key order is fixed so equal records
    serialize byte-for-byte identically."""
    return json.dumps(record_to_obj(record), ensure_ascii=False, separators=(",", ":"))


def record_from_json(line: str) -> DocumentRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
        raise ValueError("record must be an object with 'id' and 'text'")
    columns = {
        str(name): [_annotation_from_obj(a) for a in anns]
        for name, anns in obj.get("columns", {}).items()
    }
    return DocumentRecord(
        id=str(obj["id"]),
        text=str(obj["text"]),
        columns=columns,
        error=obj.get("error"),
    )


def frame_to_jsonl(frame: Frame) -> str:
    return "".join(record_to_json(r) + "\n" for r in frame.records)


def frame_from_jsonl(text: str) -> Frame:
    records = []
    schema: dict[str, AnnotationKind] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = record_from_json(line)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"input line {i}: {exc}") from None
        records.append(rec)
        for name, anns in rec.columns.items():
            if anns and name not in schema:
                schema[name] = AnnotationKind(anns[0].kind)
    return Frame(records, schema)
