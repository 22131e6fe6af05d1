"""Word embedding table: text-format loading, lookup policy, binary cache.

Tables are immutable after load.  Vectors are float32.  Lookups follow a
case policy (exact match, then optionally lowercase) and out-of-vocabulary
tokens resolve to the all-zeros vector, flagged as not-found.
"""

from __future__ import annotations

import struct
from typing import Any, BinaryIO, Iterable

import numpy as np

from .core import (
    Annotation,
    AnnotationKind,
    DocumentRecord,
    FittedStage,
    StageSpec,
    StageType,
    register_stage_type,
)

CACHE_MAGIC = b"ANNOEMB1"

CASE_POLICIES = ("exact_then_lowercase", "exact_only")


class EmbeddingError(Exception):
    pass


class EmptyTableError(EmbeddingError):
    def __init__(self, path: str):
        super().__init__(f"embedding file '{path}' has no entries")


class DimensionMismatch(EmbeddingError):
    def __init__(self, path: str, line: int, expected: int, got: int):
        super().__init__(
            f"{path}, line {line}: expected {expected} vector values, got {got}"
        )
        self.line = line
        self.expected = expected
        self.got = got


class CacheFormatError(EmbeddingError):
    pass


class EmbeddingTable:
    def __init__(
        self,
        tokens: list[str],
        vectors: np.ndarray,
        case_policy: str = "exact_then_lowercase",
    ):
        if case_policy not in CASE_POLICIES:
            raise ValueError(f"unknown case policy '{case_policy}'")
        if vectors.ndim != 2 or len(tokens) != vectors.shape[0]:
            raise ValueError("tokens and vector rows must align")
        self.case_policy = case_policy
        self._vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        self._index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            self._index[tok] = i  # duplicate tokens: last entry wins
        self._zero = np.zeros(self.dimension, dtype=np.float32)
        self._zero_bytes = self._zero.tobytes()

    @property
    def dimension(self) -> int:
        return int(self._vectors.shape[1])

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def tokens(self) -> list[str]:
        return list(self._index)

    def _row(self, token: str) -> int | None:
        idx = self._index.get(token)
        if idx is None and self.case_policy == "exact_then_lowercase":
            idx = self._index.get(token.lower())
        return idx

    def lookup(self, token: str) -> tuple[np.ndarray, bool]:
        """Vector for a token plus a found flag; OOV gives the zero vector."""
        idx = self._row(token)
        if idx is None:
            return self._zero, False
        return self._vectors[idx], True

    def lookup_bytes(self, token: str) -> tuple[bytes, bool]:
        idx = self._row(token)
        if idx is None:
            return self._zero_bytes, False
        return self._vectors[idx].tobytes(), True


def load_glove(
    path: str,
    expected_dim: int | None = None,
    case_policy: str = "exact_then_lowercase",
) -> EmbeddingTable:
    """Read a whitespace-separated text table: token then ``dim`` floats per
    line.  The dimension is inferred from the first entry; any later line
    with a different arity fails with its line number."""
    tokens: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise DimensionMismatch(path, lineno, expected_dim or 1, 0)
                dim = len(values)
                if expected_dim is not None and dim != expected_dim:
                    raise DimensionMismatch(path, lineno, expected_dim, dim)
            elif len(values) != dim:
                raise DimensionMismatch(path, lineno, dim, len(values))
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise DimensionMismatch(path, lineno, dim, len(values)) from None
            tokens.append(token)
    if dim is None:
        raise EmptyTableError(path)
    return EmbeddingTable(tokens, np.array(rows, dtype=np.float32), case_policy)


def save_cache(table: EmbeddingTable, fh: BinaryIO) -> None:
    """Binary cache layout: 8-byte magic "ANNOEMB1", u32 dimension, u32 entry
    count, then per entry a u32 token byte length, the UTF-8 token, and
    ``dimension`` float32 values.  All integers and floats little-endian."""
    entries = sorted(table._index.items())
    fh.write(CACHE_MAGIC)
    fh.write(struct.pack("<II", table.dimension, len(entries)))
    for token, row in entries:
        raw = token.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(table._vectors[row].tobytes())


def load_cache(fh: BinaryIO, case_policy: str = "exact_then_lowercase") -> EmbeddingTable:
    magic = fh.read(8)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"bad cache magic {magic!r}")
    dim, count = struct.unpack("<II", _read_exact(fh, 8))
    tokens: list[str] = []
    vectors = np.empty((count, dim), dtype=np.float32)
    row_bytes = dim * 4
    for i in range(count):
        (tlen,) = struct.unpack("<I", _read_exact(fh, 4))
        tokens.append(_read_exact(fh, tlen).decode("utf-8"))
        vectors[i] = np.frombuffer(_read_exact(fh, row_bytes), dtype="<f4")
    return EmbeddingTable(tokens, vectors, case_policy)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CacheFormatError("truncated cache file")
    return data


def coverage_stats(table: EmbeddingTable, token_lists: Iterable[list[str]]) -> dict[str, Any]:
    """Fraction of tokens the table resolves without falling back to zero.

    Counts respect the table's case policy.  An empty stream reports a
    coverage ratio of 0.0 rather than dividing by zero.
    """
    total = 0
    found = 0
    for tokens in token_lists:
        for tok in tokens:
            total += 1
            if table._row(tok) is not None:
                found += 1
    ratio = found / total if total else 0.0
    return {"tokens_total": total, "tokens_found": found, "coverage_ratio": ratio}


class WordEmbeddingsStage(FittedStage):
    """Attach one word_embedding annotation per input token.

    Output annotations copy the token's span and surface form; the vector
    rides along as packed float32.  OOV tokens are flagged in metadata and
    carry the zero vector so downstream consumers always see aligned rows.
    """

    store_type = "word_embeddings"

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def apply(self, record: DocumentRecord, spec: StageSpec) -> list[Annotation]:
        kind = AnnotationKind.WORD_EMBEDDING.value
        out = []
        for tok in record.columns[spec.inputs[0]]:
            vec, found = self.table.lookup_bytes(tok.result)
            out.append(
                Annotation(
                    kind=kind,
                    begin=tok.begin,
                    end=tok.end,
                    result=tok.result,
                    metadata=_EMB_HIT if found else _EMB_MISS,
                    vector=vec,
                )
            )
        return out

    def store_params(self) -> dict[str, Any]:
        return {"case_policy": self.table.case_policy, "dimension": self.table.dimension}

    def store_blob(self) -> bytes | None:
        import io

        buf = io.BytesIO()
        save_cache(self.table, buf)
        return buf.getvalue()


_EMB_HIT: dict[str, str] = {}
_EMB_MISS = {"oov": "true"}


def _build_word_embeddings(spec: StageSpec) -> FittedStage:
    p = spec.params
    policy = str(p.get("case_policy", "exact_then_lowercase"))
    if "path" in p:
        table = load_glove(str(p["path"]), p.get("dimension"), policy)
    elif "cache_path" in p:
        with open(str(p["cache_path"]), "rb") as fh:
            table = load_cache(fh, policy)
    else:
        raise ValueError("word_embeddings needs a 'path' or 'cache_path' param")
    return WordEmbeddingsStage(table)


def _restore_word_embeddings(spec: StageSpec, blob: bytes | None) -> FittedStage:
    if blob is None:
        return _build_word_embeddings(spec)
    import io

    policy = str(spec.params.get("case_policy", "exact_then_lowercase"))
    return WordEmbeddingsStage(load_cache(io.BytesIO(blob), policy))


register_stage_type(
    StageType(
        name="word_embeddings",
        input_kinds=(AnnotationKind.TOKEN,),
        output_kind=AnnotationKind.WORD_EMBEDDING,
        build=_build_word_embeddings,
        restore=_restore_word_embeddings,
    )
)
