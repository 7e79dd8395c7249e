"""Compositional prototypical networks for few-shot classification on fixed embeddings."""

from .dataio import AttributeTable, DatasetBundle, EmbeddingTable, SplitSpec, load_bundle, validate_bundle
from .episodes import Episode, EpisodeSpec, sample_episode
from .estimators import CompositionalPrototypeNetwork, EpisodeClassifier
from .evaluation import EvalReport, evaluate, run_ablation
from .model import CpnParams, Variant, init_params, load_params, predict, save_params
from .rng import RngStream
from .synth import SynthConfig, generate
from .training import SgdConfig, meta_train, pretrain

__version__ = "0.1.0"

__all__ = [
    "AttributeTable", "CompositionalPrototypeNetwork", "CpnParams", "DatasetBundle", "EmbeddingTable",
    "Episode", "EpisodeClassifier", "EpisodeSpec", "EvalReport", "RngStream", "SgdConfig", "SplitSpec",
    "SynthConfig", "Variant", "evaluate", "generate", "init_params", "load_bundle", "load_params",
    "meta_train", "predict", "pretrain", "run_ablation", "sample_episode", "save_params", "validate_bundle",
]
