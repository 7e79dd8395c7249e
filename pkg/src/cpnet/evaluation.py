"""Episodic evaluation, ablation tables and prototype export."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .episodes import Episode, EpisodeSpec, sample_episode
from .errors import IoError, MissingCheckpoint
from .model import CpnParams, Variant, episode_prototypes, predict
from .rng import RngStream

CI_Z = 1.96
DEFAULT_EPISODES = 5000

PROTOTYPE_ROWS = ("RICP", "VP", "LCP", "RICP+VP", "LCP+VP", "CONCAT", "ADAPTIVE")
GENERATOR_ROWS = ("gen:concat", "gen:vis", "gen:comp")


@dataclass
class EvalReport:
    variant: str
    spec: EpisodeSpec
    n_episodes: int
    mean_acc: float
    ci95: float
    seed: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "variant": self.variant,
            **self.spec.to_json(),
            "n_episodes": self.n_episodes,
            "mean_acc": self.mean_acc,
            "ci95": self.ci95,
            "seed": self.seed,
        }
        if self.config:
            out["config"] = self.config
        return out

    def __str__(self):
        return f"{self.mean_acc:.2f} ± {self.ci95:.2f}"


def mean_ci(accuracies) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width 1.96·s/√n (s with n-1)."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("no accuracies to summarize")
    mean = float(acc.mean())
    if acc.size < 2 or np.all(acc == acc[0]):
        return mean, 0.0
    return mean, float(CI_Z * acc.std(ddof=1) / np.sqrt(acc.size))


def _episode_accuracy(pred, episode: Episode) -> float:
    return 100.0 * float(np.mean(np.asarray(pred) == episode.query_y))


def episode_accuracies(classifiers: dict, bundle, pool, spec, n_episodes: int, seed: int, threads: int = 1) -> dict:
    """Per-episode accuracies for several classifiers over the same episodes.

    Episode ``i`` is drawn from stream ``(seed, i)``, so results do not depend
    on ``threads``.
    """
    pool = sorted(pool)

    def run(i):
        ep = sample_episode(bundle, pool, spec, RngStream(seed, i))
        return [_episode_accuracy(fn(ep), ep) for fn in classifiers.values()]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(run, range(n_episodes)))
    else:
        rows = [run(i) for i in range(n_episodes)]
    table = np.array(rows, dtype=np.float64).reshape(n_episodes, len(classifiers))
    return {name: table[:, j] for j, name in enumerate(classifiers)}


def evaluate_with(classify, bundle, pool, spec, n_episodes, seed, variant="custom", threads=1) -> EvalReport:
    accs = episode_accuracies({variant: classify}, bundle, pool, spec, n_episodes, seed, threads)[variant]
    mean, ci = mean_ci(accs)
    return EvalReport(str(variant), spec, n_episodes, mean, ci, seed)


def evaluate(bundle, params: CpnParams, variant, pool, spec: EpisodeSpec,
             n_episodes: int = DEFAULT_EPISODES, seed: int = 0, threads: int = 1) -> EvalReport:
    variant = Variant(variant)
    return evaluate_with(lambda ep: predict(ep, bundle, params, variant)[0],
                         bundle, pool, spec, n_episodes, seed, variant=variant.value, threads=threads)


def evaluate_many(bundle, models: dict, pool, spec, n_episodes, seed, threads=1) -> dict:
    """``models`` maps a row name to ``(params, variant)``; all share episodes."""
    fns = {
        name: (lambda ep, p=p, v=Variant(v): predict(ep, bundle, p, v)[0])
        for name, (p, v) in models.items()
    }
    accs = episode_accuracies(fns, bundle, pool, spec, n_episodes, seed, threads)
    out = {}
    for name, (_, v) in models.items():
        mean, ci = mean_ci(accs[name])
        out[name] = EvalReport(Variant(v).value, spec, n_episodes, mean, ci, seed)
    return out


@dataclass
class AblationRow:
    name: str
    group: str  # "prototype" (variants) or "generator" (input modes)
    one_shot: EvalReport
    five_shot: EvalReport

    def to_json(self) -> dict:
        return {
            "row": self.name,
            "group": self.group,
            "1shot": self.one_shot.to_json(),
            "5shot": self.five_shot.to_json(),
        }


@dataclass
class AblationTable:
    rows: list
    seed: int

    def row(self, name: str) -> AblationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> list:
        return [r.to_json() for r in self.rows]

    def format(self) -> str:
        lines = [f"{'row':<12} {'1-shot':>16} {'5-shot':>16}"]
        group = None
        for r in self.rows:
            if group is not None and r.group != group:
                lines.append("-" * 46)
            group = r.group
            lines.append(f"{r.name:<12} {str(r.one_shot):>16} {str(r.five_shot):>16}")
        return "\n".join(lines)


def ablation_models(base_params: CpnParams, pretrained: CpnParams | None, extra: dict | None) -> dict:
    """Row name -> (params, variant) for every ablation row; raises if a model is missing."""
    extra = dict(extra or {})
    if pretrained is None:
        raise MissingCheckpoint("ablation needs the pre-training-only checkpoint for the LCP row")
    missing = [k for k in ("RICP+VP", "LCP+VP", "CONCAT", "gen:vis", "gen:concat") if k not in extra]
    if missing:
        raise MissingCheckpoint(f"ablation models missing: {missing}")
    return {
        "RICP": (pretrained, Variant.RICP),
        "VP": (pretrained, Variant.VP),
        "LCP": (pretrained, Variant.LCP),
        "RICP+VP": (extra["RICP+VP"], Variant.RICP_VP),
        "LCP+VP": (extra["LCP+VP"], Variant.LCP_VP),
        "CONCAT": (extra["CONCAT"], Variant.CONCAT),
        "ADAPTIVE": (base_params, Variant.ADAPTIVE),
        "gen:concat": (extra["gen:concat"], Variant.ADAPTIVE),
        "gen:vis": (extra["gen:vis"], Variant.ADAPTIVE),
        "gen:comp": (base_params, Variant.ADAPTIVE),
    }


def run_ablation(bundle, base_params, spec_1shot, spec_5shot, n_episodes, seed,
                 pretrained=None, extra_models=None, pool=None, threads=1) -> AblationTable:
    """Evaluate every prototype variant and generator input mode at both shot settings.

    ``extra_models`` holds the separately meta-trained models keyed by row
    name (see :func:`cpnet.training.train_ablation_models`).
    """
    models = ablation_models(base_params, pretrained, extra_models)
    pool = bundle.split.novel if pool is None else pool
    one = evaluate_many(bundle, models, pool, spec_1shot, n_episodes, seed, threads)
    five = evaluate_many(bundle, models, pool, spec_5shot, n_episodes, seed, threads)
    rows = [AblationRow(k, "prototype", one[k], five[k]) for k in PROTOTYPE_ROWS]
    rows += [AblationRow(k, "generator", one[k], five[k]) for k in GENERATOR_ROWS]
    return AblationTable(rows, seed)


def export_viz(bundle, params, episode: Episode, variants, path) -> Path:
    """Write query features and per-variant prototypes of one episode as CSV.

    ``params`` is a single :class:`CpnParams` or a mapping variant -> params.
    """
    feats = bundle.embeddings.features
    d = feats.shape[1]
    Z = bundle.attributes.matrix(episode.classes)
    rows = []
    for idx, c in zip(episode.query_idx.tolist(), episode.query_y.tolist()):
        rows.append(["query", "", c, *feats[idx]])
    for v in variants:
        v = Variant(v)
        p = params[v] if isinstance(params, dict) else params
        P = episode_prototypes(p, v, feats[episode.support_idx], episode.support_y, episode.classes, Z)
        for c, vec in zip(episode.classes, P):
            rows.append(["proto", v.value, c, *vec])
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["role", "variant", "class_id", *(f"f_{i + 1}" for i in range(d))])
            for role, var, c, *vals in rows:
                w.writerow([role, var, c, *(str(np.float32(x)) for x in vals)])
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return path


def read_viz(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [
            {"role": r[0], "variant": r[1], "class_id": int(r[2]),
             "values": np.array([np.float32(x) for x in r[3:]], dtype=np.float64)}
            for r in reader
        ]


def write_report(path, doc) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
