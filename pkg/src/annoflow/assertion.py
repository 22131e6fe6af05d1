"""Assertion status over entity chunks, plus the chunker that feeds it.

An assertion classifies a chunk in its sentence context as one of four
statuses (present, absent, conditional, associated_with_someone_else).  The
feature vector is three stacked mean word vectors: up to ``window`` tokens
left of the chunk, the chunk itself, and up to ``window`` tokens right of it.
The classifier is a 4-way multinomial logistic regression trained full-batch
from a zeros start, so training is convex and seed-independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple

import numpy as np

from .core import (
    Annotation,
    AnnotationKind,
    DocumentRecord,
    FittedStage,
    Frame,
    MissingInput,
    StageSpec,
    StageType,
    register_stage_type,
)
from .evaluation import chunk_extract
from .ner import NerDataError, _vectors_from_annotations, sentence_groups


class AssertionLabel(str, Enum):
    PRESENT = "present"
    ABSENT = "absent"
    CONDITIONAL = "conditional"
    ASSOCIATED_WITH_SOMEONE_ELSE = "associated_with_someone_else"


ASSERTION_LABELS = tuple(lab.value for lab in AssertionLabel)


class AssertionError_(Exception):
    """Named with a trailing underscore to avoid shadowing the builtin."""


class SpanError(AssertionError_):
    def __init__(self, begin: int, end: int, n_tokens: int):
        super().__init__(
            f"chunk token span [{begin}, {end}] invalid for {n_tokens} tokens"
        )


class AssertionTrainingError(AssertionError_):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training aborted at epoch {epoch}: {detail}")


@dataclass(frozen=True)
class AssertionConfig:
    window: int = 5
    learning_rate: float = 0.5
    epochs: int = 200

    def validate(self) -> None:
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class AssertionExample(NamedTuple):
    vectors: np.ndarray  # (T, D) sentence word vectors
    span: tuple[int, int]  # inclusive token indices of the chunk
    label: str


@dataclass
class AssertionModel:
    weights: np.ndarray  # (4, 3*D)
    bias: np.ndarray  # (4,)
    window: int
    dim: int


def featurize(vectors: np.ndarray, span: tuple[int, int], window: int) -> np.ndarray:
    """[mean(left window) ; mean(chunk) ; mean(right window)], each of size D.

    Empty left or right segments contribute zero sub-vectors, so chunks at
    sentence edges featurize without special cases.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    T, dim = vectors.shape
    b, e = span
    if not (0 <= b <= e < T):
        raise SpanError(b, e, T)
    lo = max(0, b - window)
    left = vectors[lo:b]
    right = vectors[e + 1 : e + 1 + window]
    parts = [
        left.mean(axis=0) if left.size else np.zeros(dim),
        vectors[b : e + 1].mean(axis=0),
        right.mean(axis=0) if right.size else np.zeros(dim),
    ]
    return np.concatenate(parts)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


def train_assertion(
    dataset: list[AssertionExample], config: AssertionConfig = AssertionConfig()
) -> AssertionModel:
    """Full-batch gradient descent on mean cross entropy from zeros.

    Logs nothing but raises on non-finite loss; emits a warning through the
    module logger when a class has no training examples (its column then
    only moves away from the others).
    """
    config.validate()
    if not dataset:
        raise AssertionError_("training dataset is empty")
    dim = int(np.asarray(dataset[0].vectors).shape[1])
    idx = {lab: k for k, lab in enumerate(ASSERTION_LABELS)}

    X = np.stack([featurize(ex.vectors, ex.span, config.window) for ex in dataset])
    y = np.zeros(len(dataset), dtype=np.intp)
    for n, ex in enumerate(dataset):
        if ex.label not in idx:
            raise AssertionError_(f"example {n}: unknown label '{ex.label}'")
        y[n] = idx[ex.label]

    missing = [lab for k, lab in enumerate(ASSERTION_LABELS) if not (y == k).any()]
    if missing:
        import logging

        logging.getLogger(__name__).warning(
            "assertion classes with no training examples: %s", ", ".join(missing)
        )

    W = np.zeros((4, 3 * dim))
    b = np.zeros(4)
    n = len(dataset)
    onehot = np.zeros((n, 4))
    onehot[np.arange(n), y] = 1.0
    for epoch in range(config.epochs):
        p = _softmax_rows(X @ W.T + b)
        loss = -float(np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean())
        if not math.isfinite(loss):
            raise AssertionTrainingError(epoch, f"loss became {loss}")
        d = (p - onehot) / n
        W -= config.learning_rate * (d.T @ X)
        b -= config.learning_rate * d.sum(axis=0)
    return AssertionModel(weights=W, bias=b, window=config.window, dim=dim)


def predict_assertion(
    model: AssertionModel, vectors: np.ndarray, span: tuple[int, int]
) -> tuple[str, np.ndarray]:
    """Label plus the 4-way probability row (sums to 1 within 1e-9).

    Ties break toward the earlier label in enum order via argmax.
    """
    x = featurize(vectors, span, model.window)
    if x.shape[0] != 3 * model.dim:
        raise AssertionError_(
            f"feature size {x.shape[0]} does not match model dim {model.dim}"
        )
    z = model.weights @ x + model.bias
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return ASSERTION_LABELS[int(p.argmax())], p


def read_assertion_jsonl(path: str) -> list[dict[str, Any]]:
    """Training rows: {"text", "chunk_begin", "chunk_end", "label"} per line,
    chunk offsets in characters, inclusive."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append(
                    {
                        "text": str(obj["text"]),
                        "chunk_begin": int(obj["chunk_begin"]),
                        "chunk_end": int(obj["chunk_end"]),
                        "label": str(obj["label"]),
                    }
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise AssertionError_(f"{path}, line {lineno}: {exc}") from None
    return rows


def char_span_to_token_span(
    tokens: list[Annotation], begin: int, end: int
) -> tuple[int, int]:
    """Indices of the tokens overlapping an inclusive character span."""
    hit = [k for k, t in enumerate(tokens) if t.end >= begin and t.begin <= end]
    if not hit:
        raise SpanError(begin, end, len(tokens))
    return hit[0], hit[-1]


# --- pipeline stages -------------------------------------------------------


class ChunkerStage(FittedStage):
    """Collapse per-token BIO labels into chunk annotations.

    Dangling I-X runs are repaired to chunks and flagged in metadata, so a
    hand-written or third-party label column never derails the pipeline.
    Chunks never cross sentence boundaries.
    """

    store_type = "chunker"

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        sent_col, tok_col, ner_col = spec.inputs
        doc_text = _document_text(record)
        kind = AnnotationKind.CHUNK.value
        out = []
        for _sent, (tokens, tags) in sentence_groups(record, sent_col, [tok_col, ner_col]):
            if not tokens:
                continue
            for ch in chunk_extract([t.result for t in tags], repair=True):
                begin = tokens[ch.begin].begin
                end = tokens[ch.end].end
                meta = {"entity": ch.entity}
                if ch.repaired:
                    meta["repaired"] = "true"
                out.append(
                    Annotation(
                        kind=kind,
                        begin=begin,
                        end=end,
                        result=doc_text[begin : end + 1],
                        metadata=meta,
                    )
                )
        return out


def _document_text(record: DocumentRecord) -> str:
    for anns in record.columns.values():
        for a in anns:
            if a.kind == AnnotationKind.DOCUMENT.value:
                return a.result
    return record.text


class AssertionModelStage(FittedStage):
    store_type = "assertion_model"

    def __init__(self, model: AssertionModel):
        self.model = model

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        sent_col, tok_col, emb_col, chunk_col = spec.inputs
        kind = AnnotationKind.ASSERTION.value
        out = []
        for sent, (tokens, embs, chunks) in _chunk_groups(
            record, sent_col, tok_col, emb_col, chunk_col
        ):
            if not tokens or not chunks:
                continue
            vectors = _vectors_from_annotations(embs, self.model.dim)
            for chunk in chunks:
                span = _chunk_token_span(tokens, chunk)
                label, _ = predict_assertion(self.model, vectors, span)
                out.append(
                    Annotation(
                        kind=kind,
                        begin=chunk.begin,
                        end=chunk.end,
                        result=label,
                        metadata={"entity": chunk.metadata.get("entity", "")},
                    )
                )
        return out

    def store_params(self) -> dict[str, Any]:
        return {"window": self.model.window, "dim": self.model.dim,
                "labels": list(ASSERTION_LABELS)}

    def store_blob(self) -> bytes | None:
        from .store import pack_arrays

        return pack_arrays({"weights": self.model.weights, "bias": self.model.bias})


def _chunk_groups(record, sent_col, tok_col, emb_col, chunk_col):
    """Like sentence_groups but chunks align by containment, not 1:1."""
    chunks = record.columns[chunk_col]
    pos = 0
    for sent, (tokens, embs) in sentence_groups(record, sent_col, [tok_col, emb_col]):
        acc = []
        while pos < len(chunks) and chunks[pos].begin <= sent.end:
            if chunks[pos].begin >= sent.begin:
                acc.append(chunks[pos])
            pos += 1
        yield sent, (tokens, embs, acc)


def _chunk_token_span(tokens: list[Annotation], chunk: Annotation) -> tuple[int, int]:
    lo = hi = None
    for k, t in enumerate(tokens):
        if t.end >= chunk.begin and t.begin <= chunk.end:
            if lo is None:
                lo = k
            hi = k
    if lo is None:
        raise SpanError(chunk.begin, chunk.end, len(tokens))
    return lo, hi


def _restore_assertion_model(spec: StageSpec, blob: bytes | None) -> FittedStage:
    from .store import StoreFormatError, unpack_arrays

    if blob is None:
        raise StoreFormatError("assertion_model stage has no parameter blob")
    arrays = unpack_arrays(blob)
    p = spec.params
    model = AssertionModel(
        weights=arrays["weights"],
        bias=arrays["bias"],
        window=int(p["window"]),
        dim=int(p["dim"]),
    )
    return AssertionModelStage(model)


def _fit_assertion(spec: StageSpec, frame: Frame) -> FittedStage:
    """Train from a frame carrying a gold assertion column aligned to chunks."""
    sent_col, tok_col, emb_col, chunk_col = spec.inputs
    label_col = str(spec.params.get("label_column", "assertion_label"))
    config = AssertionConfig(
        window=int(spec.params.get("window", 5)),
        learning_rate=float(spec.params.get("learning_rate", 0.5)),
        epochs=int(spec.params.get("epochs", 200)),
    )
    dataset: list[AssertionExample] = []
    for record in frame.records:
        if record.error is not None:
            continue
        if label_col not in record.columns:
            raise MissingInput(spec.stage_id, label_col)
        gold = {(a.begin, a.end): a.result for a in record.columns[label_col]}
        for _sent, (tokens, embs, chunks) in _chunk_groups(
            record, sent_col, tok_col, emb_col, chunk_col
        ):
            if not tokens:
                continue
            dim = len(embs[0].vector or b"") // 4 if embs else 0
            vectors = _vectors_from_annotations(embs, dim)
            for chunk in chunks:
                key = (chunk.begin, chunk.end)
                if key not in gold:
                    raise NerDataError(
                        f"record '{record.id}': no gold assertion for chunk at {key}"
                    )
                dataset.append(
                    AssertionExample(vectors, _chunk_token_span(tokens, chunk), gold[key])
                )
    model = train_assertion(dataset, config)
    return AssertionModelStage(model)


register_stage_type(
    StageType(
        name="chunker",
        input_kinds=(
            AnnotationKind.SENTENCE,
            AnnotationKind.TOKEN,
            AnnotationKind.NAMED_ENTITY,
        ),
        output_kind=AnnotationKind.CHUNK,
        build=lambda spec: ChunkerStage(),
        restore=lambda spec, blob: ChunkerStage(),
    )
)
register_stage_type(
    StageType(
        name="assertion_model",
        input_kinds=(
            AnnotationKind.SENTENCE,
            AnnotationKind.TOKEN,
            AnnotationKind.WORD_EMBEDDING,
            AnnotationKind.CHUNK,
        ),
        output_kind=AnnotationKind.ASSERTION,
        restore=_restore_assertion_model,
    )
)
register_stage_type(
    StageType(
        name="assertion_detector",
        input_kinds=(
            AnnotationKind.SENTENCE,
            AnnotationKind.TOKEN,
            AnnotationKind.WORD_EMBEDDING,
            AnnotationKind.CHUNK,
        ),
        output_kind=AnnotationKind.ASSERTION,
        fit=_fit_assertion,
    )
)
