"""Run configuration: one JSON file per run, command-line flags override it.

Schema (every key optional)::

    {
      "seed": 0,
      "threads": null,
      "variant": "ADAPTIVE",
      "gen_input_mode": "comp",
      "paths": {"embeddings", "attributes", "split", "ground_truth",
                "pretrain_checkpoint", "metatrain_checkpoint", "ablation_dir",
                "reports"},
      "attributes": {"level": "category", "normalize": "none"},
      "synth": {SynthConfig fields},
      "pretrain": {SgdConfig fields},
      "metatrain": {SgdConfig fields},
      "metatrain_episode": {"n_way": 5, "k_shot": 1, "n_query": 15},
      "eval": {"n_way": 5, "k_shot": 1, "n_query": 15, "n_episodes": 5000},
      "export": {"n_query": 40, "k_shot": 1, "variants": ["VP", "LCP", "ADAPTIVE"]}
    }

Relative paths resolve against the directory holding the config file.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .episodes import EpisodeSpec
from .errors import ConfigError, IoError
from .evaluation import DEFAULT_EPISODES
from .model import GEN_MODES, Variant
from .synth import SynthConfig
from .training import SgdConfig

DEFAULT_PATHS = {
    "embeddings": "data/embeddings.emb",
    "attributes": "data/attributes.csv",
    "split": "data/split.json",
    "ground_truth": "data/ground_truth.ckpt",
    "pretrain_checkpoint": "checkpoints/pretrain.ckpt",
    "metatrain_checkpoint": "checkpoints/metatrain.ckpt",
    "ablation_dir": "checkpoints/ablation",
    "reports": "reports",
}
TOP_KEYS = {"seed", "threads", "variant", "gen_input_mode", "paths", "attributes", "synth", "pretrain",
            "metatrain", "metatrain_episode", "eval", "export"}


def _episode(doc: dict, what: str, default: EpisodeSpec) -> EpisodeSpec:
    unknown = set(doc) - {"n_way", "k_shot", "n_query"}
    if unknown:
        raise ConfigError(f"{what}: unknown field(s) {sorted(unknown)}")
    return EpisodeSpec(**{**default.to_json(), **doc})


@dataclass
class RunConfig:
    root: Path = field(default_factory=Path.cwd)
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    variant: Variant = Variant.ADAPTIVE
    gen_input_mode: str = "comp"
    paths: dict = field(default_factory=lambda: dict(DEFAULT_PATHS))
    attribute_level: str = "category"
    attribute_normalize: str = "none"
    synth: SynthConfig = field(default_factory=SynthConfig)
    pretrain: SgdConfig = field(default_factory=SgdConfig.pretrain_defaults)
    metatrain: SgdConfig = field(default_factory=SgdConfig.meta_defaults)
    metatrain_episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    eval_episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    eval_episodes: int = DEFAULT_EPISODES
    export_episode: EpisodeSpec = field(default_factory=lambda: EpisodeSpec(5, 1, 40))
    export_variants: tuple = ("VP", "LCP", "ADAPTIVE")

    def path(self, key: str) -> Path:
        p = Path(self.paths[key])
        return p if p.is_absolute() else self.root / p

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise IoError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path}: invalid JSON: {e}") from e
        return cls.from_dict(doc, root=path.resolve().parent)

    @classmethod
    def from_dict(cls, doc: dict, root=None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        cfg = cls(root=Path(root) if root is not None else Path.cwd())
        try:
            if "seed" in doc:
                cfg.seed = int(doc["seed"])
            if doc.get("threads") is not None:
                cfg.threads = int(doc["threads"])
            if "variant" in doc:
                cfg.variant = Variant(doc["variant"])
            if "gen_input_mode" in doc:
                cfg.gen_input_mode = doc["gen_input_mode"]
            paths = doc.get("paths", {})
            bad = set(paths) - set(DEFAULT_PATHS)
            if bad:
                raise ConfigError(f"paths: unknown key(s) {sorted(bad)}")
            cfg.paths.update(paths)
            attrs = doc.get("attributes", {})
            cfg.attribute_level = attrs.get("level", cfg.attribute_level)
            cfg.attribute_normalize = attrs.get("normalize", cfg.attribute_normalize)
            cfg.synth = SynthConfig.from_dict(doc.get("synth", {}))
            cfg.pretrain = SgdConfig.from_dict(doc.get("pretrain", {}), cfg.pretrain)
            cfg.metatrain = SgdConfig.from_dict(doc.get("metatrain", {}), cfg.metatrain)
            cfg.metatrain_episode = _episode(doc.get("metatrain_episode", {}), "metatrain_episode", cfg.metatrain_episode)
            ev = dict(doc.get("eval", {}))
            cfg.eval_episodes = int(ev.pop("n_episodes", cfg.eval_episodes))
            cfg.eval_episode = _episode(ev, "eval", cfg.eval_episode)
            ex = dict(doc.get("export", {}))
            cfg.export_variants = tuple(Variant(v).value for v in ex.pop("variants", cfg.export_variants))
            cfg.export_episode = _episode(ex, "export", cfg.export_episode)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg

    def validate(self):
        if self.gen_input_mode not in GEN_MODES:
            raise ConfigError(f"gen_input_mode must be one of {GEN_MODES}")
        if self.attribute_level not in ("category", "image"):
            raise ConfigError("attributes.level must be 'category' or 'image'")
        if self.attribute_normalize not in ("none", "max"):
            raise ConfigError("attributes.normalize must be 'none' or 'max'")
        if self.eval_episodes < 1:
            raise ConfigError("eval.n_episodes must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        out = replace(self, **kw)
        out.validate()
        return out

    def to_json(self) -> dict:
        """Resolved configuration as embedded in reports (machine-independent fields only)."""
        return {
            "seed": self.seed,
            "variant": self.variant.value,
            "gen_input_mode": self.gen_input_mode,
            "paths": dict(sorted(self.paths.items())),
            "attributes": {"level": self.attribute_level, "normalize": self.attribute_normalize},
            "synth": self.synth.to_json(),
            "pretrain": self.pretrain.to_json(),
            "metatrain": self.metatrain.to_json(),
            "metatrain_episode": self.metatrain_episode.to_json(),
            "eval": {**self.eval_episode.to_json(), "n_episodes": self.eval_episodes},
            "export": {**self.export_episode.to_json(), "variants": list(self.export_variants)},
        }
