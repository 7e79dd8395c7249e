"""Synthetic attribute-grounded datasets with known class geometry."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import gradcore as gc
from .checkpoint import read_checkpoint, write_checkpoint
from .dataio import AttributeTable, DatasetBundle, EmbeddingTable, SplitSpec, validate_bundle
from .errors import ConfigError, DataError, RejectionBudgetExceeded
from .rng import RngStream

REJECTION_BUDGET = 10_000


@dataclass(frozen=True)
class SynthConfig:
    M: int = 20
    d: int = 32
    n_base: int = 40
    n_val: int = 10
    n_novel: int = 10
    per_class: int = 50
    sigma: float = 0.05
    sparsity: float = 0.3
    min_angle: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("M", "n_base", "n_val", "n_novel", "per_class"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be >= 0")
        if not 0 < self.sparsity <= 1:
            raise ConfigError("sparsity must lie in (0, 1]")
        if not self.min_angle >= 0:
            raise ConfigError("min_angle must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth field(s): {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def n_classes(self) -> int:
        return self.n_base + self.n_val + self.n_novel


@dataclass(frozen=True, eq=False)
class GroundTruth:
    class_ids: tuple
    R_true: np.ndarray  # (M, d), unit rows
    z_true: np.ndarray  # (C, M)
    mu_true: np.ndarray  # (C, d), unit rows

    def directions(self, class_ids) -> np.ndarray:
        row = {c: i for i, c in enumerate(self.class_ids)}
        return self.mu_true[[row[int(c)] for c in class_ids]]


def _angle(u: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(V @ u, -1.0, 1.0))


def generate(cfg: SynthConfig) -> tuple[DatasetBundle, GroundTruth]:
    """Sample class geometry, attribute scores and noisy features.

    Features are rounded through float32 so the in-memory bundle equals what
    the EMB1 writer stores.
    """
    rng = RngStream(cfg.seed, 0)
    R_true = gc.l2_normalize(rng.normals((cfg.M, cfg.d)))

    zs, mus = [], []
    attempts = 0
    while len(zs) < cfg.n_classes:
        attempts += 1
        if attempts > REJECTION_BUDGET:
            raise RejectionBudgetExceeded(
                f"could not place {cfg.n_classes} classes {cfg.min_angle} rad apart in {REJECTION_BUDGET} draws"
            )
        z = np.array([(rng.random() < cfg.sparsity) * (0.5 + rng.random()) for _ in range(cfg.M)])
        if not np.any(z > 0):
            continue
        p = z @ R_true
        if np.linalg.norm(p) < gc.NORM_EPS:
            continue
        mu = p / np.linalg.norm(p)
        if mus and np.min(_angle(mu, np.array(mus))) < cfg.min_angle:
            continue
        zs.append(z)
        mus.append(mu)
    z_true, mu_true = np.array(zs), np.array(mus)

    noise_rng = RngStream(cfg.seed, 1)
    labels = np.repeat(np.arange(cfg.n_classes), cfg.per_class)
    noise = noise_rng.normals((labels.size, cfg.d)) * (cfg.sigma / np.sqrt(cfg.d))
    feats = (mu_true[labels] + noise).astype(np.float32).astype(np.float64)

    ids = list(range(cfg.n_classes))
    split = SplitSpec(
        base=frozenset(ids[: cfg.n_base]),
        val=frozenset(ids[cfg.n_base: cfg.n_base + cfg.n_val]),
        novel=frozenset(ids[cfg.n_base + cfg.n_val:]),
    )
    bundle = validate_bundle(EmbeddingTable(feats, labels), AttributeTable(tuple(ids), z_true), split)
    return bundle, GroundTruth(tuple(ids), R_true, z_true, mu_true)


def save_ground_truth(path, truth: GroundTruth) -> None:
    meta = {"kind": "ground-truth", "class_ids": list(truth.class_ids)}
    write_checkpoint(path, meta, {"R_true": truth.R_true, "z_true": truth.z_true, "mu_true": truth.mu_true})


def load_ground_truth(path) -> GroundTruth:
    meta, sec = read_checkpoint(path)
    if meta.get("kind") != "ground-truth":
        raise DataError(f"{path}: not a ground-truth file")
    return GroundTruth(tuple(meta["class_ids"]), sec["R_true"], sec["z_true"], sec["mu_true"])


def oracle_accuracy(bundle, truth: GroundTruth, pool, spec, n_episodes: int, seed: int, threads: int = 1):
    """Upper-bound reference: classify queries by cosine to the true class directions."""
    from .evaluation import evaluate_with

    def classify(episode):
        mu = truth.directions(episode.classes)
        q = bundle.embeddings.features[episode.query_idx]
        return np.asarray(episode.classes)[np.argmax(gc.cosine_matrix(q, mu), axis=1)]

    return evaluate_with(classify, bundle, pool, spec, n_episodes, seed, variant="ORACLE", threads=threads)
