"""Checkpoint container: JSON header followed by little-endian f32 sections.

Layout: ``b"CPNK"``, u32 header length h, h bytes of UTF-8 JSON, then the
sections back to back in header order. The header lists each section's
name, shape and byte length next to free-form ``meta`` fields.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, DataError, IoError, MissingCheckpoint, TruncatedFile

MAGIC = b"CPNK"
FORMAT = "cpn-checkpoint/1"


def encode_checkpoint(meta: dict, sections: dict) -> bytes:
    specs, payload = [], []
    for name, arr in sections.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        specs.append({"name": name, "shape": list(data.shape), "nbytes": data.nbytes})
        payload.append(data.tobytes())
    header = json.dumps({"format": FORMAT, "meta": meta, "sections": specs}, sort_keys=True, separators=(",", ":"))
    hb = header.encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(payload)


def decode_checkpoint(raw: bytes) -> tuple[dict, dict]:
    if raw[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 8:
        raise TruncatedFile("checkpoint header truncated")
    (h,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + h:
        raise TruncatedFile("checkpoint header truncated")
    try:
        header = json.loads(raw[8:8 + h].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"bad checkpoint header: {e}") from e
    if header.get("format") != FORMAT:
        raise DataError(f"unsupported checkpoint format {header.get('format')!r}")
    offset = 8 + h
    sections = {}
    for spec in header["sections"]:
        n = spec["nbytes"]
        if offset + n > len(raw):
            raise TruncatedFile(f"section {spec['name']!r} truncated")
        arr = np.frombuffer(raw, dtype="<f4", count=n // 4, offset=offset)
        if arr.size != int(np.prod(spec["shape"])):
            raise CountMismatch(f"section {spec['name']!r}: {arr.size} values for shape {spec['shape']}")
        sections[spec["name"]] = arr.astype(np.float64).reshape(spec["shape"])
        offset += n
    if offset != len(raw):
        raise CountMismatch(f"{len(raw) - offset} trailing bytes after last section")
    return header["meta"], sections


def write_checkpoint(path, meta: dict, sections: dict) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(meta, sections))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    return decode_checkpoint(raw)
