import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpnet.dataio import (
    AttributeTable,
    EmbeddingTable,
    SplitSpec,
    decode_embeddings,
    encode_embeddings,
    load_attributes,
    load_embeddings,
    load_split,
    validate_bundle,
    write_attributes,
    write_embeddings,
    write_split,
)
from cpnet.errors import (
    AllZeroClassVector,
    BadMagic,
    CountMismatch,
    EmptyClass,
    EmptySplit,
    IoError,
    MissingAttributeVector,
    NegativeScore,
    OverlappingSplits,
    RaggedRows,
    TruncatedFile,
    UnsplitClass,
)


def _table():
    feats = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    return EmbeddingTable(feats.astype(np.float64), [5, 6, 5])


def test_embedding_round_trip(tmp_path):
    t = _table()
    write_embeddings(tmp_path / "e.emb", t)
    back = load_embeddings(tmp_path / "e.emb")
    assert back.dim == 4 and len(back) == 3
    np.testing.assert_array_equal(back.features, t.features)
    np.testing.assert_array_equal(back.labels, t.labels)


def test_embedding_layout_is_packed_little_endian():
    raw = encode_embeddings(_table())
    assert raw[:4] == b"EMB1"
    assert struct.unpack_from("<II", raw, 4) == (3, 4)
    assert len(raw) == 12 + 3 * (4 + 16)
    assert struct.unpack_from("<I", raw, 12) == (5,)


def test_bad_magic():
    raw = b"XXXX" + encode_embeddings(_table())[4:]
    with pytest.raises(BadMagic):
        decode_embeddings(raw)


def test_truncated_body():
    t = EmbeddingTable(np.ones((10, 2)), np.zeros(10))
    raw = encode_embeddings(t)
    with pytest.raises(TruncatedFile):
        decode_embeddings(raw[: -(4 + 8)])  # 9 of 10 records


def test_extra_records_count_mismatch():
    raw = encode_embeddings(_table())
    with pytest.raises(CountMismatch):
        decode_embeddings(raw + raw[12:32])


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_embeddings(tmp_path / "nope.emb")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, width=32, allow_nan=False)))
def test_round_trip_bit_exact_at_single_precision(feats):
    t = EmbeddingTable(feats.astype(np.float64), np.arange(feats.shape[0]))
    back = decode_embeddings(encode_embeddings(t))
    assert back.features.astype(np.float32).tobytes() == feats.tobytes()


def _csv(path, rows):
    path.write_text("\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def test_image_level_mean(tmp_path):
    p = _csv(tmp_path / "a.csv", [["class_id", "a_1", "a_2"], [7, 1, 0], [7, 0, 1], [8, 2, 2]])
    t = load_attributes(p, level="image")
    np.testing.assert_allclose(t.vector(7), [0.5, 0.5])
    np.testing.assert_allclose(t.vector(8), [2, 2])


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(6))))
def test_image_level_permutation_invariant(tmp_path_factory, perm):
    rows = [[1, 0.5, 1.0], [1, 2.0, 0.0], [2, 1.0, 1.0], [1, 0.25, 3.0], [2, 0.0, 2.0], [2, 4.0, 0.5]]
    d = tmp_path_factory.mktemp("perm")
    a = load_attributes(_csv(d / "a.csv", [["class_id", "a_1", "a_2"], *rows]), level="image")
    b = load_attributes(_csv(d / "b.csv", [["class_id", "a_1", "a_2"], *[rows[i] for i in perm]]), level="image")
    np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-15)


def test_category_level_pass_through(tmp_path):
    t = AttributeTable((3, 1), np.array([[0.1, 2.5], [1.0, 0.0]]))
    write_attributes(tmp_path / "a.csv", t)
    back = load_attributes(tmp_path / "a.csv")
    assert back.class_ids == (3, 1)
    np.testing.assert_array_equal(back.vectors, t.vectors)


def test_image_labels_override(tmp_path):
    p = _csv(tmp_path / "a.csv", [["class_id", "a_1"], [0, 1], [0, 3]])
    t = load_attributes(p, level="image", labels=[4, 5])
    assert t.class_ids == (4, 5)


def test_attribute_errors(tmp_path):
    with pytest.raises(RaggedRows):
        load_attributes(_csv(tmp_path / "r.csv", [["class_id", "a_1"], [1, 2], [2, 1, 1]]))
    with pytest.raises(NegativeScore):
        load_attributes(_csv(tmp_path / "n.csv", [["class_id", "a_1"], [1, -1]]))
    with pytest.raises(AllZeroClassVector):
        load_attributes(_csv(tmp_path / "z.csv", [["class_id", "a_1", "a_2"], [1, 0, 0], [2, 1, 0]]))


def test_max_normalization(tmp_path):
    p = _csv(tmp_path / "a.csv", [["class_id", "a_1", "a_2"], [1, 2, 4]])
    np.testing.assert_allclose(load_attributes(p, normalize="max").vector(1), [0.5, 1.0])


def test_split_ok_and_errors(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"base": [1, 2], "val": [3], "novel": [4]}))
    s = load_split(p)
    assert s.base == {1, 2} and s.val == {3} and s.novel == {4}
    p.write_text(json.dumps({"base": [1], "val": [], "novel": [1]}))
    with pytest.raises(OverlappingSplits):
        load_split(p)
    p.write_text(json.dumps({"base": [1], "val": [], "novel": [2]}))
    with pytest.raises(EmptySplit):
        load_split(p)


def test_large_split_counts(tmp_path):
    ids = list(range(200))
    split = SplitSpec(ids[:100], ids[100:150], ids[150:])
    write_split(tmp_path / "s.json", split)
    back = load_split(tmp_path / "s.json")
    assert (len(back.base), len(back.val), len(back.novel)) == (100, 50, 50)


def _parts():
    emb = EmbeddingTable(np.eye(3), [1, 2, 3])
    attrs = AttributeTable((1, 2, 3), np.ones((3, 2)))
    return emb, attrs, SplitSpec({1}, {2}, {3})


def test_validate_ok():
    b = validate_bundle(*_parts())
    assert b.dim == 3 and b.n_attributes == 2
    assert b.indices(2).tolist() == [1]


def test_validate_missing_attribute():
    emb, attrs, split = _parts()
    emb = EmbeddingTable(np.eye(4, 3), [1, 2, 3, 9])
    with pytest.raises(MissingAttributeVector):
        validate_bundle(emb, attrs, split)


def test_validate_unsplit_class():
    emb, _, split = _parts()
    attrs = AttributeTable((1, 2, 3, 4), np.ones((4, 2)))
    emb = EmbeddingTable(np.eye(4, 3), [1, 2, 3, 4])
    with pytest.raises(UnsplitClass):
        validate_bundle(emb, attrs, split)


def test_validate_empty_class():
    emb, _, _ = _parts()
    attrs = AttributeTable((1, 2, 3, 4), np.ones((4, 2)))
    with pytest.raises(EmptyClass):
        validate_bundle(emb, attrs, SplitSpec({1}, {2}, {3, 4}))


def test_tables_are_immutable():
    emb, attrs, _ = _parts()
    with pytest.raises(ValueError):
        emb.features[0, 0] = 5.0
    with pytest.raises(ValueError):
        attrs.vectors[0, 0] = 5.0
