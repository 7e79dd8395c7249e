"""Pre-training and episodic meta-training with momentum SGD."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .episodes import EpisodeSpec, sample_episode
from .errors import ConfigError, IoError, ShapeMismatch
from .evaluation import episode_accuracies
from .model import (
    CpnParams,
    Variant,
    episode_arrays,
    episode_loss_grad,
    generator_width,
    init_params,
    predict,
    pretrain_loss_grad,
    with_concat_head,
)
from .rng import RngStream, meta_stream_id

log = logging.getLogger(__name__)

# parameters that receive weight decay; biases and temperatures never do
DECAYED = frozenset({"R", "w", "concat_W"})

# stream ids for non-episode draws live above every meta-training id
INIT_STREAM = 1 << 63
SHUFFLE_STREAM = INIT_STREAM + 1
CONCAT_INIT_STREAM = INIT_STREAM - 1
VAL_SEED_SALT = 0x7A1D_7A1D

TRAINABLE = {
    Variant.ADAPTIVE: ("R", "w", "b", "tau2"),
    Variant.LCP_VP: ("w", "b", "tau2"),
    Variant.RICP_VP: ("w", "b", "tau2"),
    Variant.CONCAT: ("R", "concat_W", "concat_b", "tau2"),
    Variant.VP: ("tau2",),
    Variant.LCP: ("tau2",),
    Variant.RICP: ("tau2",),
}


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 128
    episodes_per_epoch: int = 100
    val_episodes: int = 600

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        for name in ("batch_size", "episodes_per_epoch", "val_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "SgdConfig":
        return cls(**{"lr": 0.01, "epochs": 30, **overrides})

    @classmethod
    def meta_defaults(cls, **overrides) -> "SgdConfig":
        return cls(**{"lr": 0.001, "epochs": 10, **overrides})

    @classmethod
    def from_dict(cls, doc: dict, base: "SgdConfig") -> "SgdConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown optimizer field(s): {sorted(unknown)}")
        return cls(**{**asdict(base), **doc})

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_acc
    selected_epoch: int | None = None

    def record(self, epoch: int, train_loss: float | None, val_acc: float | None):
        self.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_acc": val_acc})

    def lines(self) -> list[str]:
        out = []
        for e in self.epochs:
            doc = dict(e)
            if e["epoch"] == self.selected_epoch:
                doc["selected"] = True
            out.append(json.dumps(doc, sort_keys=True))
        return out

    def write(self, path) -> None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("".join(line + "\n" for line in self.lines()))
        except OSError as e:
            raise IoError(f"cannot write {path}: {e}") from e


def sgd_step(params: CpnParams, grads: dict, state: dict, cfg: SgdConfig) -> tuple[CpnParams, dict]:
    """One momentum-SGD update of every parameter that has a gradient.

    g' = g + wd·p (decayed parameters only); v <- momentum·v + g'; p <- p - lr·v.
    ``state`` maps parameter names to velocity buffers; a new dict is returned.
    """
    current = params.arrays()
    new_state = dict(state)
    changes = {}
    for name, g in grads.items():
        if name not in current:
            raise ShapeMismatch(f"gradient for unknown parameter {name!r}")
        p = current[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} vs parameter shape {p.shape}")
        if name in DECAYED and cfg.weight_decay:
            g = g + cfg.weight_decay * p
        v = cfg.momentum * state.get(name, np.zeros_like(p)) + g
        new_state[name] = v
        changes[name] = p - cfg.lr * v
    return params.replace(**changes), new_state


def pretrain(bundle, cfg: SgdConfig, seed: int = 0, params: CpnParams | None = None,
             base=None) -> tuple[CpnParams, TrainLog]:
    """Global cosine-softmax classification over all base classes.

    Only the component prototypes and tau1 move; features are fixed inputs.
    ``base`` overrides the bundle's base split.
    """
    if params is None:
        params = init_params(bundle.n_attributes, bundle.dim, rng=RngStream(seed, INIT_STREAM))
    base = sorted(bundle.split.base if base is None else base)
    Z = bundle.attributes.matrix(base)
    pos = {c: i for i, c in enumerate(base)}
    idx = np.concatenate([bundle.indices(c) for c in base])
    feats = bundle.embeddings.features
    targets_all = np.array([pos.get(c, -1) for c in bundle.embeddings.labels.tolist()])

    state: dict = {}
    trace = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        order = np.array(RngStream(seed, SHUFFLE_STREAM + epoch).permutation(idx.tolist()), dtype=np.int64)
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, dR, dtau = pretrain_loss_grad(params.R, params.tau1, feats[batch], targets_all[batch], Z)
            params, state = sgd_step(params, {"R": dR, "tau1": np.asarray(dtau)}, state, cfg)
            total += loss * batch.size
        epoch_loss = total / order.size
        trace.record(epoch, epoch_loss, None)
        log.info("pretrain epoch %d loss %.6f tau1 %.3f", epoch, epoch_loss, params.tau1)
    trace.selected_epoch = cfg.epochs if cfg.epochs else None
    return params, trace


def validation_accuracy(bundle, params, variant, spec, n_episodes, seed, threads=1, pool=None) -> float:
    pool = bundle.split.val if pool is None else pool
    fn = lambda ep: predict(ep, bundle, params, variant)[0]  # noqa: E731
    accs = episode_accuracies({"val": fn}, bundle, pool, spec, n_episodes, seed, threads)["val"]
    return float(accs.mean())


def prepare_for_variant(params: CpnParams, variant, seed: int = 0) -> CpnParams:
    """Attach a concat head when the variant needs one and none exists."""
    if Variant(variant) is Variant.CONCAT and params.concat_W is None:
        return with_concat_head(params, RngStream(seed, CONCAT_INIT_STREAM))
    return params


def with_generator_mode(params: CpnParams, mode: str) -> CpnParams:
    """Same parameters with a fresh zero generator for input ``mode``."""
    return params.replace(mode=mode, w=np.zeros(generator_width(mode, params.dim)), b=0.0)


def meta_train(bundle, params: CpnParams, cfg: SgdConfig, seed: int = 0, variant=Variant.ADAPTIVE,
               spec: EpisodeSpec | None = None, threads: int = 1, base=None, val=None) -> tuple[CpnParams, TrainLog]:
    """Episodic training on base classes with validation-based model selection.

    The incoming parameters are scored as epoch 0 and stay a selection
    candidate, so the result never validates worse than the input.
    """
    variant = Variant(variant)
    spec = spec or EpisodeSpec()
    params = prepare_for_variant(params, variant, seed)
    trainable = [k for k in TRAINABLE[variant] if k in params.arrays()]
    if variant.uses_random_components:
        trainable = [k for k in trainable if k != "R"]
    val_seed = seed ^ VAL_SEED_SALT
    base = sorted(bundle.split.base if base is None else base)
    val = sorted(bundle.split.val if val is None else val)

    trace = TrainLog()
    best_acc = validation_accuracy(bundle, params, variant, spec, cfg.val_episodes, val_seed, threads, val)
    best = params
    trace.record(0, None, best_acc)
    trace.selected_epoch = 0
    state: dict = {}
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for i in range(cfg.episodes_per_epoch):
            ep = sample_episode(bundle, base, spec, RngStream(seed, meta_stream_id(epoch - 1, i)))
            loss, grads = episode_loss_grad(params, variant, *episode_arrays(ep, bundle))
            params, state = sgd_step(params, {k: grads[k] for k in trainable if k in grads}, state, cfg)
            total += loss
        acc = validation_accuracy(bundle, params, variant, spec, cfg.val_episodes, val_seed, threads, val)
        trace.record(epoch, total / cfg.episodes_per_epoch, acc)
        log.info("meta epoch %d loss %.6f val %.2f tau2 %.3f", epoch, total / cfg.episodes_per_epoch, acc, params.tau2)
        if acc > best_acc:
            best_acc, best = acc, params
            trace.selected_epoch = epoch
    return best, trace


ABLATION_TRAINING = {
    "LCP+VP": (Variant.LCP_VP, None),
    "RICP+VP": (Variant.RICP_VP, None),
    "CONCAT": (Variant.CONCAT, None),
    "gen:vis": (Variant.ADAPTIVE, "vis"),
    "gen:concat": (Variant.ADAPTIVE, "concat"),
}


def train_ablation_models(bundle, pretrained: CpnParams, cfg: SgdConfig, seed: int = 0,
                          spec: EpisodeSpec | None = None, threads: int = 1) -> dict:
    """Meta-train the auxiliary models the ablation rows need, starting from ``pretrained``."""
    out = {}
    for name, (variant, mode) in ABLATION_TRAINING.items():
        start = with_generator_mode(pretrained, mode or pretrained.mode)
        out[name], _ = meta_train(bundle, start, cfg, seed, variant, spec, threads)
        log.info("trained ablation model %s", name)
    return out
