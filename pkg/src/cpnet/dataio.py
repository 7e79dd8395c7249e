"""Embedding tables, attribute tables, class splits and their on-disk formats.

Formats
-------
EMB1 (little-endian): ``b"EMB1"``, u32 count n, u32 dim d, then n records of
(u32 class id, d x f32). No padding.

Attribute CSV: header ``class_id,a_1,...,a_M``; one row per class
(category level) or one row per image (image level, averaged per class).

Split manifest: JSON ``{"base": [...], "val": [...], "novel": [...]}``.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    AllZeroClassVector,
    BadMagic,
    CountMismatch,
    DataError,
    EmptyClass,
    EmptySplit,
    IoError,
    MissingAttributeVector,
    NegativeScore,
    NonFiniteValue,
    OverlappingSplits,
    RaggedRows,
    TruncatedFile,
    UnsplitClass,
)

EMB_MAGIC = b"EMB1"
_EMB_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise DataError(f"features must be a non-empty (n, d) array, got {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise DataError(f"{labels.shape[0]} labels for {feats.shape[0]} records")
        if not np.all(np.isfinite(feats)):
            raise NonFiniteValue("embedding table contains NaN or Inf")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.features.shape[0]


@dataclass(frozen=True, eq=False)
class AttributeTable:
    class_ids: tuple[int, ...]
    vectors: np.ndarray  # (C, M) float64, row i belongs to class_ids[i]

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float64)
        ids = tuple(int(c) for c in self.class_ids)
        if vecs.ndim != 2 or vecs.shape[0] != len(ids) or vecs.shape[1] < 1:
            raise DataError(f"attribute matrix shape {vecs.shape} vs {len(ids)} classes")
        if len(set(ids)) != len(ids):
            raise DataError("duplicate class id in attribute table")
        if not np.all(np.isfinite(vecs)):
            raise NonFiniteValue("attribute table contains NaN or Inf")
        if np.any(vecs < 0):
            raise NegativeScore("attribute scores must be non-negative")
        zero = [c for c, v in zip(ids, vecs) if not np.any(v > 0)]
        if zero:
            raise AllZeroClassVector(f"all-zero attribute vector for class(es) {zero}")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "class_ids", ids)

    @property
    def n_attributes(self) -> int:
        return self.vectors.shape[1]

    @cached_property
    def _row(self) -> dict[int, int]:
        return {c: i for i, c in enumerate(self.class_ids)}

    def __contains__(self, class_id) -> bool:
        return int(class_id) in self._row

    def vector(self, class_id: int) -> np.ndarray:
        try:
            return self.vectors[self._row[int(class_id)]]
        except KeyError:
            raise MissingAttributeVector(f"no attribute vector for class {class_id}") from None

    def matrix(self, class_ids) -> np.ndarray:
        return np.stack([self.vector(c) for c in class_ids])


@dataclass(frozen=True)
class SplitSpec:
    base: frozenset
    val: frozenset
    novel: frozenset

    def __post_init__(self):
        names = ("base", "val", "novel")
        for name in names:
            object.__setattr__(self, name, frozenset(int(c) for c in getattr(self, name)))
        for a, b in (("base", "val"), ("base", "novel"), ("val", "novel")):
            both = getattr(self, a) & getattr(self, b)
            if both:
                raise OverlappingSplits(f"classes {sorted(both)} in both '{a}' and '{b}'")
        for name in names:
            if not getattr(self, name):
                raise EmptySplit(f"split '{name}' is empty")

    def all_classes(self) -> frozenset:
        return self.base | self.val | self.novel

    def to_json(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("base", "val", "novel")}


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    embeddings: EmbeddingTable
    attributes: AttributeTable
    split: SplitSpec
    _by_class: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_class = {}
        for i, c in enumerate(self.embeddings.labels.tolist()):
            by_class.setdefault(c, []).append(i)
        object.__setattr__(self, "_by_class", {c: np.array(v) for c, v in by_class.items()})

    def indices(self, class_id: int) -> np.ndarray:
        return self._by_class.get(int(class_id), np.empty(0, dtype=np.int64))

    @property
    def n_attributes(self) -> int:
        return self.attributes.n_attributes

    @property
    def dim(self) -> int:
        return self.embeddings.dim


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def _write(path, data, mode="wb"):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, mode, **({} if "b" in mode else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def encode_embeddings(table: EmbeddingTable) -> bytes:
    n, d = table.features.shape
    rec = np.dtype([("label", "<u4"), ("x", "<f4", (d,))])
    body = np.empty(n, dtype=rec)
    body["label"] = table.labels
    body["x"] = table.features
    return _EMB_HEADER.pack(EMB_MAGIC, n, d) + body.tobytes()


def write_embeddings(path, table: EmbeddingTable) -> None:
    _write(path, encode_embeddings(table))


def decode_embeddings(raw: bytes) -> EmbeddingTable:
    if len(raw) < 4 or raw[:4] != EMB_MAGIC:
        raise BadMagic(f"expected magic {EMB_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < _EMB_HEADER.size:
        raise TruncatedFile("header shorter than 12 bytes")
    _, n, d = _EMB_HEADER.unpack_from(raw)
    if d == 0:
        raise DataError("embedding dim must be positive")
    rec_size = 4 + 4 * d
    body = len(raw) - _EMB_HEADER.size
    if body < n * rec_size:
        raise TruncatedFile(f"header declares {n} records, body holds {body // rec_size}")
    if body > n * rec_size:
        raise CountMismatch(f"header declares {n} records, body has {body - n * rec_size} extra bytes")
    rec = np.dtype([("label", "<u4"), ("x", "<f4", (d,))])
    arr = np.frombuffer(raw, dtype=rec, count=n, offset=_EMB_HEADER.size)
    return EmbeddingTable(arr["x"].astype(np.float64), arr["label"].astype(np.int64))


def load_embeddings(path) -> EmbeddingTable:
    return decode_embeddings(_read_bytes(path))


def _normalize_rows(vectors: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return vectors
    if mode == "max":
        peak = vectors.max(axis=1, keepdims=True)
        return np.divide(vectors, peak, out=np.zeros_like(vectors), where=peak > 0)
    raise ValueError(f"unknown attribute normalization {mode!r}")


def load_attributes(path, level: str = "category", labels=None, normalize: str = "none") -> AttributeTable:
    """Read an attribute CSV.

    With ``level="image"`` rows are averaged per class; ``labels`` optionally
    overrides the per-row class ids.
    """
    if level not in ("category", "image"):
        raise ValueError(f"level must be 'category' or 'image', not {level!r}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if rows and rows[0][0].strip() == "class_id":
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no attribute rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise RaggedRows(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    if width < 2:
        raise DataError(f"{path}: need class_id plus at least one attribute")
    try:
        ids = np.array([int(r[0]) for r in rows])
        scores = np.array([[float(x) for x in r[1:]] for r in rows])
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    if labels is not None:
        ids = np.asarray(labels, dtype=np.int64)
        if ids.shape != (len(rows),):
            raise DataError(f"{len(ids)} labels for {len(rows)} rows")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteValue(f"{path}: non-finite attribute score")
    if np.any(scores < 0):
        raise NegativeScore(f"{path}: negative attribute score")

    if level == "category":
        if len(set(ids.tolist())) != len(ids):
            raise DataError(f"{path}: duplicate class id at category level")
        class_ids, vectors = ids.tolist(), scores
    else:
        class_ids = sorted(set(ids.tolist()))
        vectors = np.stack([scores[ids == c].mean(axis=0) for c in class_ids])
    return AttributeTable(tuple(class_ids), _normalize_rows(vectors, normalize))


def write_attributes(path, table: AttributeTable) -> None:
    lines = ["class_id," + ",".join(f"a_{j + 1}" for j in range(table.n_attributes))]
    for c, v in zip(table.class_ids, table.vectors):
        lines.append(str(c) + "," + ",".join(repr(float(x)) for x in v))
    _write(path, "\n".join(lines) + "\n", mode="w")


def load_split(path) -> SplitSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise DataError(f"{path}: split manifest must be a JSON object")
    try:
        return SplitSpec(*(frozenset(int(c) for c in doc.get(k, [])) for k in ("base", "val", "novel")))
    except (TypeError, ValueError) as e:
        if isinstance(e, DataError):
            raise
        raise DataError(f"{path}: class ids must be integers") from e


def write_split(path, split: SplitSpec) -> None:
    _write(path, json.dumps(split.to_json()) + "\n", mode="w")


def validate_bundle(embeddings: EmbeddingTable, attributes: AttributeTable, split: SplitSpec) -> DatasetBundle:
    present = set(np.unique(embeddings.labels).tolist())
    missing = sorted(c for c in present if c not in attributes)
    if missing:
        raise MissingAttributeVector(f"embedding labels without attribute vectors: {missing}")
    unsplit = sorted(present - split.all_classes())
    if unsplit:
        raise UnsplitClass(f"embedding labels in no split: {unsplit}")
    no_attr = sorted(c for c in split.all_classes() if c not in attributes)
    if no_attr:
        raise MissingAttributeVector(f"split classes without attribute vectors: {no_attr}")
    empty = sorted(split.all_classes() - present)
    if empty:
        raise EmptyClass(f"split classes with no embedding records: {empty}")
    return DatasetBundle(embeddings, attributes, split)


def load_bundle(embeddings_path, attributes_path, split_path, level="category", normalize="none") -> DatasetBundle:
    return validate_bundle(
        load_embeddings(embeddings_path),
        load_attributes(attributes_path, level=level, normalize=normalize),
        load_split(split_path),
    )


def write_bundle(directory, bundle: DatasetBundle) -> dict:
    directory = Path(directory)
    paths = {
        "embeddings": directory / "embeddings.emb",
        "attributes": directory / "attributes.csv",
        "split": directory / "split.json",
    }
    write_embeddings(paths["embeddings"], bundle.embeddings)
    write_attributes(paths["attributes"], bundle.attributes)
    write_split(paths["split"], bundle.split)
    return paths
