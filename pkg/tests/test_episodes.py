import numpy as np
import pytest

from cpnet.dataio import AttributeTable, EmbeddingTable, SplitSpec, validate_bundle
from cpnet.episodes import EpisodeSpec, sample_episode
from cpnet.errors import ClassTooSmall, ConfigError, PoolTooSmall
from cpnet.rng import RngStream


def _bundle(n_classes, per_class):
    labels = np.repeat(np.arange(n_classes), per_class)
    feats = np.random.default_rng(0).normal(size=(labels.size, 3))
    attrs = AttributeTable(tuple(range(n_classes)), np.ones((n_classes, 2)))
    ids = list(range(n_classes))
    return validate_bundle(EmbeddingTable(feats, labels), attrs, SplitSpec(ids[:-2], [ids[-2]], [ids[-1]]))


def test_counts_and_disjointness():
    b = _bundle(3, 3)
    ep = sample_episode(b, [0, 1, 2], EpisodeSpec(2, 1, 1), RngStream(0))
    assert len(ep.support_idx) == 2 and len(ep.query_idx) == 2
    assert not set(ep.support_idx) & set(ep.query_idx)


@pytest.mark.parametrize("seed", range(20))
def test_episode_invariants(seed):
    b = _bundle(8, 12)
    spec = EpisodeSpec(4, 3, 5)
    ep = sample_episode(b, range(8), spec, RngStream(seed, seed * 3))
    assert len(set(ep.classes)) == 4
    assert not set(ep.support_idx.tolist()) & set(ep.query_idx.tolist())
    labels = b.embeddings.labels
    for c in ep.classes:
        assert np.sum(ep.support_y == c) == 3 and np.sum(ep.query_y == c) == 5
    np.testing.assert_array_equal(labels[ep.support_idx], ep.support_y)
    np.testing.assert_array_equal(labels[ep.query_idx], ep.query_y)
    assert set(ep.support_y.tolist()) == set(ep.classes)


def test_deterministic():
    b = _bundle(6, 10)
    spec = EpisodeSpec(3, 2, 2)
    a = sample_episode(b, {0, 1, 2, 3, 4, 5}, spec, RngStream(7, 99))
    c = sample_episode(b, [5, 4, 3, 2, 1, 0], spec, RngStream(7, 99))
    assert a == c


def test_pool_and_class_errors():
    b = _bundle(4, 3)
    with pytest.raises(PoolTooSmall):
        sample_episode(b, [0], EpisodeSpec(2, 1, 1), RngStream(0))
    with pytest.raises(ClassTooSmall):
        sample_episode(b, [0, 1], EpisodeSpec(2, 2, 2), RngStream(0))


def test_spec_validation():
    with pytest.raises(ConfigError):
        EpisodeSpec(1, 1, 1)
    with pytest.raises(ConfigError):
        EpisodeSpec(5, 0, 15)


def test_class_inclusion_uniform():
    # each of 10 classes should appear in N/|pool| = 50% of 5-way episodes
    b = _bundle(10, 2)
    spec = EpisodeSpec(5, 1, 1)
    counts = np.zeros(10)
    for i in range(10_000):
        ep = sample_episode(b, range(10), spec, RngStream(123, i))
        counts[list(ep.classes)] += 1
    freq = counts / 10_000
    assert np.all(np.abs(freq - 0.5) <= 0.02), freq


def test_record_draw_uniform():
    b = _bundle(4, 6)
    spec = EpisodeSpec(2, 1, 1)
    hits = np.zeros(24)
    for i in range(6000):
        ep = sample_episode(b, [0, 1], spec, RngStream(5, i))
        hits[ep.support_idx] += 1
    # each record of a class is the single support draw with probability 1/6
    assert np.all(np.abs(hits[:12] / 6000 - 1 / 6) < 0.02)
