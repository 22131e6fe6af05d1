"""Fitted-pipeline persistence.

A saved pipeline is a directory: one ``manifest.json`` plus one binary blob
per stage that has real-valued state.  The manifest is canonical JSON
(sorted keys, two-space indent, trailing newline) and carries no floating
point numbers; every real-valued array lives in a blob, checksummed with
FNV-1a 64 so a single flipped byte fails loudly at load time.

Blob layout ("ANNOPAR1"): 8-byte magic, u32 array count, then per array a
u16 name length, the UTF-8 name, u8 dtype code, u8 ndim, ndim u32 dims and
the raw little-endian data.  Embedding stages reuse their own cache format
inside the blob instead.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from ._version import __version__
from .core import (
    FittedPipeline,
    FittedStage,
    StageSpec,
    UnknownStageType,
    schema_check,
    stage_type,
)

MANIFEST_NAME = "manifest.json"
BLOB_DIR = "blobs"
FORMAT_NAME = "annoflow-pipeline"
FORMAT_VERSION = 1
ARRAY_MAGIC = b"ANNOPAR1"

_DTYPE_CODES: dict[int, np.dtype] = {
    0: np.dtype("<f8"),
    1: np.dtype("<f4"),
    2: np.dtype("<i8"),
}
_CODE_FOR_KIND = {"f8": 0, "f4": 1, "i8": 2}

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class StoreError(Exception):
    pass


class StoreFormatError(StoreError):
    pass


class ChecksumMismatch(StoreError):
    def __init__(self, file: str, expected: str, got: str):
        super().__init__(f"checksum mismatch for '{file}': expected {expected}, got {got}")
        self.file = file


class UnsupportedVersion(StoreError):
    def __init__(self, found: Any):
        super().__init__(f"unsupported pipeline format version {found!r}")
        self.found = found


class DirectoryNotEmpty(StoreError):
    def __init__(self, path: str):
        super().__init__(f"'{path}' is not empty; pass force to overwrite")


def fnv1a64(data: bytes) -> int:
    """FNV-1a, 64-bit.  The multiplier is odd, hence invertible mod 2^64, so
    changing any single input byte always changes the digest."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def fnv1a64_hex(data: bytes) -> str:
    return f"{fnv1a64(data):016x}"


def pack_arrays(arrays: dict[str, np.ndarray]) -> bytes:
    out = [ARRAY_MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        kind = arr.dtype.str.lstrip("<>|=")
        if kind not in _CODE_FOR_KIND:
            raise StoreFormatError(f"array '{name}' has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", _CODE_FOR_KIND[kind], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).astype(f"<{kind}", copy=False).tobytes())
    return b"".join(out)


def unpack_arrays(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != ARRAY_MAGIC:
        raise StoreFormatError(f"bad array container magic {blob[:8]!r}")
    view = memoryview(blob)
    pos = 8

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(blob):
            raise StoreFormatError("truncated array container")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPE_CODES:
            raise StoreFormatError(f"array '{name}' has unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        data = np.frombuffer(take(nbytes), dtype=dtype).reshape(dims)
        arrays[name] = data.copy()  # own the memory; blob view may be reused
    return arrays


def _require_no_floats(value: Any, where: str) -> None:
    if isinstance(value, float):
        raise StoreFormatError(
            f"manifest value at {where} is a float; real-valued state belongs in blobs"
        )
    if isinstance(value, dict):
        for k, v in value.items():
            _require_no_floats(v, f"{where}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _require_no_floats(v, f"{where}[{i}]")


def _blob_filename(index: int, stage_id: str) -> str:
    safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in stage_id)
    return f"{index:02d}_{safe}.bin"


def save_pipeline(
    pipeline: FittedPipeline, path: str | Path, force: bool = False
) -> Path:
    """Write manifest plus blobs; returns the manifest path.

    Estimator-fitted stages are written under their fitted transformer type
    (``store_type``), so a reloaded pipeline never retrains.
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if any(root.iterdir()) and not force:
        raise DirectoryNotEmpty(str(root))
    stages = []
    blobs: list[tuple[str, bytes]] = []
    for index, (spec, stage) in enumerate(pipeline.stages):
        params = stage.store_params()
        _require_no_floats(params, f"stages[{index}].params")
        entry: dict[str, Any] = {
            "id": spec.stage_id,
            "type": stage.store_type,
            "inputs": list(spec.inputs),
            "output": spec.output,
            "params": params,
        }
        blob = stage.store_blob()
        if blob is not None:
            fname = f"{BLOB_DIR}/{_blob_filename(index, spec.stage_id)}"
            entry["blob"] = fname
            entry["checksum"] = fnv1a64_hex(blob)
            blobs.append((fname, blob))
        stages.append(entry)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "engine_version": __version__,
        "schema": {col: kind.value for col, kind in pipeline.schema.items()},
        "stages": stages,
    }
    if blobs:
        (root / BLOB_DIR).mkdir(exist_ok=True)
    for fname, blob in blobs:
        (root / fname).write_bytes(blob)
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path


def read_manifest(path: str | Path) -> dict[str, Any]:
    mpath = Path(path) / MANIFEST_NAME
    if not mpath.is_file():
        raise StoreFormatError(f"no {MANIFEST_NAME} in '{path}'")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StoreFormatError(f"{mpath}: invalid JSON: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_NAME:
        raise StoreFormatError(f"{mpath}: not a pipeline manifest")
    if manifest.get("version") != FORMAT_VERSION:
        raise UnsupportedVersion(manifest.get("version"))
    return manifest


def load_pipeline(path: str | Path) -> FittedPipeline:
    root = Path(path)
    manifest = read_manifest(root)
    specs: list[StageSpec] = []
    fitted: list[FittedStage] = []
    for entry in manifest.get("stages", []):
        spec = StageSpec.from_json_obj(entry)
        st = stage_type(spec.stage_type)  # raises UnknownStageType
        if st.restore is None:
            raise StoreFormatError(f"stage type '{spec.stage_type}' cannot be restored")
        blob: bytes | None = None
        if entry.get("blob") is not None:
            bpath = root / str(entry["blob"])
            if not bpath.is_file():
                raise StoreFormatError(f"missing blob file '{entry['blob']}'")
            blob = bpath.read_bytes()
            expected = str(entry.get("checksum", ""))
            got = fnv1a64_hex(blob)
            if got != expected:
                raise ChecksumMismatch(str(entry["blob"]), expected, got)
        specs.append(spec)
        fitted.append(st.restore(spec, blob))
    schema = schema_check(specs)
    return FittedPipeline(list(zip(specs, fitted)), schema)


def registry_list(root: str | Path) -> list[dict[str, Any]]:
    """One entry per subdirectory of ``root`` that holds a manifest; broken
    manifests are reported with an error marker instead of being skipped."""
    rootp = Path(root)
    out = []
    if not rootp.is_dir():
        return out
    for child in sorted(rootp.iterdir()):
        if not child.is_dir() or not (child / MANIFEST_NAME).exists():
            continue
        entry: dict[str, Any] = {"name": child.name}
        try:
            manifest = read_manifest(child)
            entry["stages"] = [str(s.get("type", "?")) for s in manifest.get("stages", [])]
            entry["schema"] = manifest.get("schema", {})
        except (StoreError, UnknownStageType) as exc:
            entry["error"] = str(exc)
        out.append(entry)
    return out
