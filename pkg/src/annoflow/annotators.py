"""Rule-based annotation stages.

Document assembly, sentence detection, tokenization and token normalization.
All four are pure transformer stages driven by small rule sets that can be
given inline in the pipeline spec params or loaded from one-entry-per-line
text files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from .core import (
    Annotation,
    AnnotationKind,
    DocumentRecord,
    FittedStage,
    StageSpec,
    StageType,
    register_stage_type,
)

# Characters the assembler replaces with plain spaces, offset-preserving.
_CONTROL_RE = re.compile(r"[\x00-\x1f\x7f]")

# Default character class for word runs: letters and digits, no underscore.
WORD_CLASS = r"[^\W_]"


def read_rule_file(path: str) -> tuple[str, ...]:
    """Load a one-entry-per-line rule list; '#' lines and blanks ignored."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                entries.append(line)
    return tuple(entries)


def default_abbreviations() -> tuple[str, ...]:
    text = resources.files("annoflow.data").joinpath("abbreviations.txt").read_text("utf-8")
    return tuple(
        line.strip()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


def assemble_document(text: str) -> Annotation:
    """Wrap raw text in a document annotation.

    Control characters become spaces so downstream offsets stay aligned with
    the original text; empty input yields a flagged empty annotation rather
    than an error.
    """
    if text == "":
        return Annotation(
            kind=AnnotationKind.DOCUMENT.value,
            begin=0,
            end=0,
            result="",
            metadata={"empty": "true"},
        )
    cleaned = _CONTROL_RE.sub(" ", text)
    return Annotation(
        kind=AnnotationKind.DOCUMENT.value,
        begin=0,
        end=len(cleaned) - 1,
        result=cleaned,
    )


@dataclass(frozen=True)
class SentenceRules:
    boundary_chars: frozenset[str] = frozenset({".", "?", "!"})
    abbreviations: tuple[str, ...] = field(default_factory=default_abbreviations)
    decimal_guard: bool = True

    def abbrev_index(self) -> dict[int, set[str]]:
        # Grouped by length so the detector probes one slice per length.
        by_len: dict[int, set[str]] = {}
        for abbr in self.abbreviations:
            by_len.setdefault(len(abbr), set()).add(abbr.lower())
        return by_len


def detect_sentences(
    document: Annotation,
    rules: SentenceRules,
    _index: dict[int, set[str]] | None = None,
) -> list[Annotation]:
    """Split a document annotation into sentence annotations.

    A sentence ends at a boundary char followed by whitespace or end of text,
    unless the abbreviation guard or the decimal guard vetoes the split.
    Sentences never start or end on whitespace, and every non-whitespace
    character falls inside exactly one sentence.
    """
    text = document.result
    n = len(text)
    abbrevs = rules.abbrev_index() if _index is None else _index
    sentences: list[Annotation] = []

    def emit(start: int, end: int) -> None:
        sentences.append(
            Annotation(
                kind=AnnotationKind.SENTENCE.value,
                begin=start,
                end=end,
                result=text[start : end + 1],
            )
        )

    start: int | None = None
    last_nonspace = -1
    for i, ch in enumerate(text):
        if not ch.isspace():
            last_nonspace = i
            if start is None:
                start = i
        if start is None or ch not in rules.boundary_chars:
            continue
        if i + 1 < n and not text[i + 1].isspace():
            # Boundary char inside a token ("3.5", "e.g" mid-word): no split.
            continue
        if rules.decimal_guard and 0 < i < n - 1:
            if text[i - 1].isdigit() and text[i + 1].isdigit():
                continue
        if ch == "." and _ends_with_abbreviation(text, i, abbrevs):
            continue
        emit(start, i)
        start = None
    if start is not None and last_nonspace >= start:
        emit(start, last_nonspace)
    return sentences


def _ends_with_abbreviation(text: str, dot: int, by_len: dict[int, set[str]]) -> bool:
    for length, entries in by_len.items():
        lo = dot - length + 1
        if lo < 0:
            continue
        if text[lo : dot + 1].lower() not in entries:
            continue
        # Must not be the tail of a longer word: "aDr." is not "Dr.".
        if lo > 0 and text[lo - 1].isalnum():
            continue
        return True
    return False


@dataclass(frozen=True)
class TokenRules:
    word_class: str = WORD_CLASS
    split_punctuation: bool = True
    exceptions: tuple[str, ...] = ()

    def pattern(self) -> re.Pattern[str]:
        parts = []
        if self.exceptions:
            # Longest first so "B.I.D." wins over a hypothetical "B.I." entry;
            # lookarounds keep exceptions from firing inside larger words.
            alts = "|".join(
                re.escape(e) for e in sorted(self.exceptions, key=len, reverse=True)
            )
            parts.append(f"(?<!{self.word_class})(?:{alts})(?!{self.word_class})")
        if self.split_punctuation:
            parts.append(f"{self.word_class}+")
            parts.append(r"\S")
        else:
            parts.append(r"\S+")
        return re.compile("|".join(parts))


def tokenize(
    sentence: Annotation,
    rules: TokenRules,
    _pattern: re.Pattern[str] | None = None,
) -> list[Annotation]:
    """Tokenize one sentence annotation into token annotations.

    Tokens are maximal word-character runs; every other non-whitespace
    character becomes a single-character token unless punctuation splitting
    is off.  Exception entries match whole (word-boundary delimited) and
    override both rules.  Offsets are absolute within the document.
    """
    pattern = rules.pattern() if _pattern is None else _pattern
    base = sentence.begin
    kind = AnnotationKind.TOKEN.value
    return [
        Annotation(kind=kind, begin=base + m.start(), end=base + m.end() - 1, result=m.group(0))
        for m in pattern.finditer(sentence.result)
    ]


@dataclass(frozen=True)
class NormalizerRules:
    keep_class: str = WORD_CLASS
    lowercase: bool = True

    def drop_pattern(self) -> re.Pattern[str]:
        return re.compile(f"(?!{self.keep_class}).", re.DOTALL)


def normalize(tokens: list[Annotation], rules: NormalizerRules) -> list[Annotation]:
    """Filter token text down to the keep class (dropping tokens that end up
    empty) and optionally lowercase.  Offsets still point at the original
    token span; the pre-normalization surface form is kept in metadata."""
    drop = rules.drop_pattern()
    out = []
    for tok in tokens:
        kept = drop.sub("", tok.result)
        if rules.lowercase:
            kept = kept.lower()
        if not kept:
            continue
        out.append(
            Annotation(
                kind=AnnotationKind.NORMALIZED_TOKEN.value,
                begin=tok.begin,
                end=tok.end,
                result=kept,
                metadata={"original": tok.result},
            )
        )
    return out


def _rule_list(params: dict[str, Any], inline_key: str, file_key: str,
               default: tuple[str, ...]) -> tuple[str, ...]:
    if inline_key in params:
        return tuple(str(e) for e in params[inline_key])
    if file_key in params:
        return read_rule_file(str(params[file_key]))
    return default


class DocumentAssemblerStage(FittedStage):
    store_type = "document_assembler"

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        return [assemble_document(record.text)]


class SentenceDetectorStage(FittedStage):
    store_type = "sentence_detector"

    def __init__(self, rules: SentenceRules):
        self.rules = rules
        self._index = rules.abbrev_index()

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        out: list[Annotation] = []
        for doc in record.columns[spec.inputs[0]]:
            if doc.metadata.get("empty") == "true":
                continue
            out.extend(detect_sentences(doc, self.rules, self._index))
        return out

    def store_params(self) -> dict[str, Any]:
        return {
            "boundary_chars": "".join(sorted(self.rules.boundary_chars)),
            "abbreviations": sorted(self.rules.abbreviations),
            "decimal_guard": self.rules.decimal_guard,
        }


class TokenizerStage(FittedStage):
    store_type = "tokenizer"

    def __init__(self, rules: TokenRules):
        self.rules = rules
        self._pattern = rules.pattern()

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        out: list[Annotation] = []
        for sent in record.columns[spec.inputs[0]]:
            out.extend(tokenize(sent, self.rules, self._pattern))
        return out

    def store_params(self) -> dict[str, Any]:
        return {
            "word_class": self.rules.word_class,
            "split_punctuation": self.rules.split_punctuation,
            "exceptions": sorted(self.rules.exceptions),
        }

    def __getstate__(self):  # compiled patterns pickle poorly across versions
        return self.rules

    def __setstate__(self, rules: TokenRules):
        self.rules = rules
        self._pattern = rules.pattern()


class NormalizerStage(FittedStage):
    store_type = "normalizer"

    def __init__(self, rules: NormalizerRules):
        self.rules = rules

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        return normalize(record.columns[spec.inputs[0]], self.rules)

    def store_params(self) -> dict[str, Any]:
        return {"keep_class": self.rules.keep_class, "lowercase": self.rules.lowercase}


def _build_assembler(spec: StageSpec) -> FittedStage:
    return DocumentAssemblerStage()


def _build_sentence_detector(spec: StageSpec) -> FittedStage:
    p = spec.params
    rules = SentenceRules(
        boundary_chars=frozenset(p.get("boundary_chars", ".?!")),
        abbreviations=_rule_list(
            p, "abbreviations", "abbreviations_file", default_abbreviations()
        ),
        decimal_guard=bool(p.get("decimal_guard", True)),
    )
    return SentenceDetectorStage(rules)


def _build_tokenizer(spec: StageSpec) -> FittedStage:
    p = spec.params
    rules = TokenRules(
        word_class=str(p.get("word_class", WORD_CLASS)),
        split_punctuation=bool(p.get("split_punctuation", True)),
        exceptions=_rule_list(p, "exceptions", "exceptions_file", ()),
    )
    return TokenizerStage(rules)


def _build_normalizer(spec: StageSpec) -> FittedStage:
    p = spec.params
    rules = NormalizerRules(
        keep_class=str(p.get("keep_class", WORD_CLASS)),
        lowercase=bool(p.get("lowercase", True)),
    )
    return NormalizerStage(rules)


def _restore_via_build(spec: StageSpec, blob: bytes | None, builder) -> FittedStage:
    return builder(spec)


register_stage_type(
    StageType(
        name="document_assembler",
        input_kinds=(None,),
        output_kind=AnnotationKind.DOCUMENT,
        build=_build_assembler,
        restore=lambda spec, blob: _build_assembler(spec),
    )
)
register_stage_type(
    StageType(
        name="sentence_detector",
        input_kinds=(AnnotationKind.DOCUMENT,),
        output_kind=AnnotationKind.SENTENCE,
        build=_build_sentence_detector,
        restore=lambda spec, blob: _build_sentence_detector(spec),
    )
)
register_stage_type(
    StageType(
        name="tokenizer",
        input_kinds=(AnnotationKind.SENTENCE,),
        output_kind=AnnotationKind.TOKEN,
        build=_build_tokenizer,
        restore=lambda spec, blob: _build_tokenizer(spec),
    )
)
register_stage_type(
    StageType(
        name="normalizer",
        input_kinds=(AnnotationKind.TOKEN,),
        output_kind=AnnotationKind.NORMALIZED_TOKEN,
        build=_build_normalizer,
        restore=lambda spec, blob: _build_normalizer(spec),
    )
)
