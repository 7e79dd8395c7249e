"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error,
4 data validation, 5 missing artifact.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import gradsuite
from .config import RunConfig
from .dataio import load_bundle, write_attributes, write_embeddings, write_split
from .episodes import EpisodeSpec, sample_episode
from .errors import ConfigError, CpnError, MissingCheckpoint
from .evaluation import evaluate, export_viz, run_ablation, write_report
from .model import Variant, load_params, save_params
from .rng import RngStream
from .synth import generate, save_ground_truth
from .training import (
    ABLATION_TRAINING,
    meta_train,
    pretrain,
    with_generator_mode,
)

log = logging.getLogger("cpnet")

PRETRAIN_VARIANTS = (Variant.VP, Variant.LCP, Variant.RICP)


def _bundle(cfg: RunConfig):
    return load_bundle(cfg.path("embeddings"), cfg.path("attributes"), cfg.path("split"),
                       level=cfg.attribute_level, normalize=cfg.attribute_normalize)


def _ablation_path(cfg: RunConfig, name: str):
    return cfg.path("ablation_dir") / (name.replace("+", "_").replace(":", "_") + ".ckpt")


def _require(path, what: str):
    if not path.is_file():
        raise MissingCheckpoint(f"{what} checkpoint not found: {path}")
    return load_params(path)


def _params_for(cfg: RunConfig, variant: Variant):
    """Checkpoint matching ``variant``: pre-training only, the run's own model, or an ablation model."""
    if variant in PRETRAIN_VARIANTS:
        return _require(cfg.path("pretrain_checkpoint"), "pre-training")
    if variant is cfg.variant:
        return _require(cfg.path("metatrain_checkpoint"), "meta-training")
    return _require(_ablation_path(cfg, variant.value), f"{variant.value} ablation")


def cmd_synth(args, cfg: RunConfig) -> int:
    bundle, truth = generate(cfg.synth)
    write_embeddings(cfg.path("embeddings"), bundle.embeddings)
    write_attributes(cfg.path("attributes"), bundle.attributes)
    write_split(cfg.path("split"), bundle.split)
    save_ground_truth(cfg.path("ground_truth"), truth)
    s = bundle.split
    print(f"wrote {len(bundle.embeddings)} records, d={bundle.dim}, M={bundle.n_attributes}, "
          f"classes base/val/novel={len(s.base)}/{len(s.val)}/{len(s.novel)}")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    bundle = _bundle(cfg)
    params, trace = pretrain(bundle, cfg.pretrain, cfg.seed)
    save_params(cfg.path("pretrain_checkpoint"), params, extra={"stage": "pretrain", "seed": cfg.seed})
    cfg.path("reports").mkdir(parents=True, exist_ok=True)
    trace.write(cfg.path("reports") / "pretrain_log.jsonl")
    last = trace.epochs[-1]["train_loss"] if trace.epochs else float("nan")
    print(f"pretrained {cfg.pretrain.epochs} epochs, final loss {last:.6f}, tau1 {params.tau1:.4f}")
    return 0


def cmd_metatrain(args, cfg: RunConfig) -> int:
    pre = _require(cfg.path("pretrain_checkpoint"), "pre-training")
    bundle = _bundle(cfg)
    start = with_generator_mode(pre, cfg.gen_input_mode)
    params, trace = meta_train(bundle, start, cfg.metatrain, cfg.seed, cfg.variant,
                               cfg.metatrain_episode, cfg.threads)
    save_params(cfg.path("metatrain_checkpoint"), params, extra={
        "stage": "metatrain", "variant": cfg.variant.value, "seed": cfg.seed,
        "selected_epoch": trace.selected_epoch,
    })
    cfg.path("reports").mkdir(parents=True, exist_ok=True)
    trace.write(cfg.path("reports") / "metatrain_log.jsonl")
    best = trace.epochs[trace.selected_epoch]["val_acc"]
    print(f"meta-trained {cfg.variant.value}/{cfg.gen_input_mode}: selected epoch {trace.selected_epoch} "
          f"(val acc {best:.2f})")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    variant = Variant(args.variant) if args.variant else cfg.variant
    spec = EpisodeSpec(cfg.eval_episode.n_way, args.shots or cfg.eval_episode.k_shot, cfg.eval_episode.n_query)
    n = args.episodes or cfg.eval_episodes
    params = _params_for(cfg, variant)
    bundle = _bundle(cfg)
    report = evaluate(bundle, params, variant, bundle.split.novel, spec, n, cfg.seed, cfg.threads)
    report.config = cfg.to_json()
    doc = report.to_json()
    write_report(cfg.path("reports") / f"eval_{variant.value.replace('+', '_')}_{spec.k_shot}shot.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def ablation_models(cfg: RunConfig, bundle, pretrained, train_missing: bool = True) -> tuple:
    """ADAPTIVE model plus every auxiliary model, loading saved ones and training the rest."""
    extra = {}
    for name, (variant, mode) in ABLATION_TRAINING.items():
        path = _ablation_path(cfg, name)
        if path.is_file():
            extra[name] = load_params(path)
            continue
        if not train_missing:
            raise MissingCheckpoint(f"ablation checkpoint not found: {path}")
        start = with_generator_mode(pretrained, mode or "comp")
        extra[name], _ = meta_train(bundle, start, cfg.metatrain, cfg.seed, variant,
                                    cfg.metatrain_episode, cfg.threads)
        save_params(path, extra[name], extra={"stage": "ablation", "row": name, "seed": cfg.seed})
        log.info("trained ablation model %s", name)
    if cfg.variant is Variant.ADAPTIVE and cfg.gen_input_mode == "comp":
        base = _require(cfg.path("metatrain_checkpoint"), "meta-training")
    else:
        path = _ablation_path(cfg, "ADAPTIVE")
        if path.is_file():
            base = load_params(path)
        else:
            base, _ = meta_train(bundle, with_generator_mode(pretrained, "comp"), cfg.metatrain, cfg.seed,
                                 Variant.ADAPTIVE, cfg.metatrain_episode, cfg.threads)
            save_params(path, base, extra={"stage": "ablation", "row": "ADAPTIVE", "seed": cfg.seed})
    return base, extra


def cmd_ablate(args, cfg: RunConfig) -> int:
    pretrained = _require(cfg.path("pretrain_checkpoint"), "pre-training")
    _require(cfg.path("metatrain_checkpoint"), "meta-training")
    bundle = _bundle(cfg)
    base, extra = ablation_models(cfg, bundle, pretrained)
    n = args.episodes or cfg.eval_episodes
    e = cfg.eval_episode
    table = run_ablation(bundle, base, EpisodeSpec(e.n_way, 1, e.n_query), EpisodeSpec(e.n_way, 5, e.n_query),
                         n, cfg.seed, pretrained=pretrained, extra_models=extra, threads=cfg.threads)
    write_report(cfg.path("reports") / "ablation.json", {"config": cfg.to_json(), "rows": table.to_json()})
    print(table.format())
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    worst = gradsuite.run(args.points, cfg.seed)
    failed = False
    for name, err in worst.items():
        ok = err <= gradsuite.TOLERANCE
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:<32} max rel err {err:.3e}")
    write_report(cfg.path("reports") / "gradcheck.json", {
        "seed": cfg.seed, "points": args.points, "tolerance": gradsuite.TOLERANCE, "max_rel_err": worst,
    })
    return 1 if failed else 0


def cmd_export_viz(args, cfg: RunConfig) -> int:
    variants = [Variant(v) for v in (args.variants.split(",") if args.variants else cfg.export_variants)]
    params = {v: _params_for(cfg, v) for v in variants}
    bundle = _bundle(cfg)
    episode = sample_episode(bundle, bundle.split.novel, cfg.export_episode, RngStream(cfg.seed, 0))
    out = export_viz(bundle, params, episode, variants, args.out or cfg.path("reports") / "viz.csv")
    print(f"wrote {len(episode.query_idx) + len(variants) * len(episode.classes)} rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="override the configured seed (u64)")
    common.add_argument("--threads", type=int, help="cap on evaluation threads (default: core count)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cpnet", description="Compositional prototypical networks on precomputed features.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic bundle").set_defaults(fn=cmd_synth)
    sub.add_parser("pretrain", parents=[common], help="learn component prototypes").set_defaults(fn=cmd_pretrain)
    sub.add_parser("metatrain", parents=[common], help="episodic training of the fusion head").set_defaults(fn=cmd_metatrain)

    p = sub.add_parser("eval", parents=[common], help="evaluate on novel classes")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--shots", type=int)
    p.add_argument("--episodes", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="prototype and generator-input ablation grid")
    p.add_argument("--episodes", type=int)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    p.add_argument("--points", type=int, default=100)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export-viz", parents=[common], help="export features and prototypes of one episode")
    p.add_argument("--variants", help="comma-separated variant names")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for flag in ("shots", "episodes", "points"):
            if getattr(args, flag, None) is not None and getattr(args, flag) < 1:
                raise ConfigError(f"--{flag} must be positive")
        cfg = RunConfig.load(args.config).with_overrides(seed=args.seed, threads=args.threads)
        return args.fn(args, cfg)
    except CpnError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
