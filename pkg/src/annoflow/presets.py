"""Canonical pipeline layouts used by the CLI, tests and benchmarks.

Column names follow the stage flow: document, sentence, token, normalized,
embedding, entity, chunk, assertion.
"""

from __future__ import annotations

from .assertion import AssertionModel, AssertionModelStage
from .core import FittedPipeline, StageSpec, schema_check, stage_type
from .embeddings import EmbeddingTable, WordEmbeddingsStage
from .ner import NerModel, NerModelStage


def rule_specs(params: dict | None = None) -> list[StageSpec]:
    """Assembler, sentence detector, tokenizer, normalizer."""
    p = params or {}
    return [
        StageSpec("assemble", "document_assembler", ("text",), "document"),
        StageSpec(
            "sentences",
            "sentence_detector",
            ("document",),
            "sentence",
            dict(p.get("sentence_detector", {})),
        ),
        StageSpec(
            "tokens", "tokenizer", ("sentence",), "token", dict(p.get("tokenizer", {}))
        ),
        StageSpec(
            "normalize",
            "normalizer",
            ("token",),
            "normalized",
            dict(p.get("normalizer", {})),
        ),
    ]


def ner_specs(stage_types: tuple[str, str, str] = ("word_embeddings", "ner_model", "chunker")) -> list[StageSpec]:
    emb_type, ner_type, chunk_type = stage_types
    return [
        StageSpec("embed", emb_type, ("token",), "embedding"),
        StageSpec("entities", ner_type, ("sentence", "token", "embedding"), "entity"),
        StageSpec("chunks", chunk_type, ("sentence", "token", "entity"), "chunk"),
    ]


def assertion_spec() -> StageSpec:
    return StageSpec(
        "assertions",
        "assertion_model",
        ("sentence", "token", "embedding", "chunk"),
        "assertion",
    )


def assemble_ner_pipeline(
    table: EmbeddingTable,
    model: NerModel,
    assertion_model: AssertionModel | None = None,
    rule_params: dict | None = None,
) -> FittedPipeline:
    """Fitted pipeline from already-trained pieces, no re-fitting involved."""
    specs = rule_specs(rule_params) + ner_specs()
    if assertion_model is not None:
        specs = specs + [assertion_spec()]
    stages = []
    for spec in specs:
        if spec.stage_type == "ner_model":
            stages.append(NerModelStage(model))
        elif spec.stage_type == "word_embeddings":
            stages.append(WordEmbeddingsStage(table))
        elif spec.stage_type == "assertion_model":
            stages.append(AssertionModelStage(assertion_model))
        else:
            builder = stage_type(spec.stage_type).build
            assert builder is not None
            stages.append(builder(spec))
    schema = schema_check(specs)
    return FittedPipeline(list(zip(specs, stages)), schema)
