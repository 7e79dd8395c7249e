"""N-way K-shot episode sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import DatasetBundle
from .errors import ClassTooSmall, ConfigError, PoolTooSmall
from .rng import RngStream


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.n_query < 1:
            raise ConfigError(f"invalid episode spec N={self.n_way} K={self.k_shot} Q={self.n_query}")

    def to_json(self) -> dict:
        return {"n_way": self.n_way, "k_shot": self.k_shot, "n_query": self.n_query}


@dataclass(frozen=True, eq=False)
class Episode:
    """Support/query record indices, grouped by class in ``classes`` order."""

    classes: tuple
    support_idx: np.ndarray
    support_y: np.ndarray
    query_idx: np.ndarray
    query_y: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return self.classes == other.classes and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("support_idx", "support_y", "query_idx", "query_y")
        )

    __hash__ = None

    @property
    def query_targets(self) -> np.ndarray:
        """Query labels as positions into ``classes``."""
        pos = {c: i for i, c in enumerate(self.classes)}
        return np.array([pos[c] for c in self.query_y.tolist()])


def sample_episode(bundle: DatasetBundle, pool, spec: EpisodeSpec, rng: RngStream) -> Episode:
    pool = sorted(int(c) for c in pool)
    if len(pool) < spec.n_way:
        raise PoolTooSmall(f"pool has {len(pool)} classes, need {spec.n_way}")
    need = spec.k_shot + spec.n_query
    small = [c for c in pool if len(bundle.indices(c)) < need]
    if small:
        raise ClassTooSmall(f"classes {small} have fewer than K+Q={need} records")

    classes = rng.sample(pool, spec.n_way)
    s_idx, q_idx = [], []
    for c in classes:
        drawn = rng.sample(bundle.indices(c).tolist(), need)
        s_idx.extend(drawn[: spec.k_shot])
        q_idx.extend(drawn[spec.k_shot:])
    return Episode(
        classes=tuple(classes),
        support_idx=np.array(s_idx, dtype=np.int64),
        support_y=np.repeat(classes, spec.k_shot).astype(np.int64),
        query_idx=np.array(q_idx, dtype=np.int64),
        query_y=np.repeat(classes, spec.n_query).astype(np.int64),
    )


def sample_episodes(bundle, pool, spec, seed: int, n: int, first_stream: int = 0) -> list[Episode]:
    return [sample_episode(bundle, pool, spec, RngStream(seed, first_stream + i)) for i in range(n)]
