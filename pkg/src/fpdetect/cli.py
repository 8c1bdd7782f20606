"""``fpdetect`` command line: a thin layer over :mod:`fpdetect.pipeline`.

Exit status is 0 on success, 1 for validation problems (bad config, missing
or mismatched artifacts, malformed input) and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import FingerprintError, NumericalError, TrainingDivergedError
from .pipeline import ExperimentConfig

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("fpdetect")


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for name in ("seed", "profile", "out"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    for name in ("feature", "model"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value.lower())
    return cfg.validate()


def _split_paths(cfg, args):
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.model_dir() / "best.fpck"
    features = Path(args.features) if args.features else cfg.features_dir()
    return ckpt, features


def cmd_synth(args, cfg):
    path = pipeline.run_synth(cfg, force=args.force)
    print(path)


def cmd_extract(args, cfg):
    manifest = Path(args.manifest) if args.manifest else cfg.manifest_path
    out = pipeline.run_extract(manifest, cfg.feature, cfg.features_dir(), cfg.feature_config(), force=args.force)
    print(out)


def cmd_train(args, cfg):
    print(pipeline.run_train(cfg, force=args.force))


def cmd_eval(args, cfg):
    ckpt, features = _split_paths(cfg, args)
    out = cfg.out_dir / "eval" / cfg.run_name() / args.split
    report = pipeline.run_eval(ckpt, cfg.manifest_path, features, args.split, out)
    sys.stdout.write(pipeline.metrics.render_text(report))


def cmd_embed(args, cfg):
    ckpt, features = _split_paths(cfg, args)
    path = cfg.out_dir / "embed" / cfg.run_name() / args.split / "embeddings.csv"
    emb = pipeline.run_embed(ckpt, cfg.manifest_path, features, args.split, path)
    print(path)
    if args.tsne:
        _tsne(cfg, path, args.split, emb.source)


def _tsne(cfg, emb_path, split, source=None):
    out = cfg.out_dir / "tsne" / cfg.run_name() / split
    res = pipeline.run_tsne(emb_path, out, seed=cfg.seed, source=source, **cfg.tsne)
    print(f"{out} silhouette={res['silhouette']:.4f}")


def cmd_tsne(args, cfg):
    path = Path(args.embeddings) if args.embeddings else cfg.out_dir / "embed" / cfg.run_name() / args.split / "embeddings.csv"
    _tsne(cfg, path, args.split)


def cmd_spectrogram(args, cfg):
    wav = Path(args.wav)
    png = Path(args.png) if args.png else cfg.out_dir / "spectrograms" / (wav.stem + ".png")
    print(pipeline.run_spectrogram(wav, png))


def cmd_matrix(args, cfg):
    doc = pipeline.run_matrix(cfg, split=args.split)
    sys.stdout.write(pipeline.render_matrix(doc))


def cmd_run(args, cfg):
    res = pipeline.run_experiment(cfg, split=args.split)
    sys.stdout.write(pipeline.metrics.render_text(res["report"]))
    print(f"silhouette={res['tsne']['silhouette']:.4f}")


COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "train": cmd_train, "eval": cmd_eval,
    "embed": cmd_embed, "tsne": cmd_tsne, "spectrogram": cmd_spectrogram, "matrix": cmd_matrix,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--profile", choices=("paper", "desk"), help="hyperparameter profile")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fpdetect", description="Synthesis-system fingerprint experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    s = add("synth", "generate the surrogate corpus")
    s.add_argument("--force", action="store_true")
    s = add("extract", "compute and cache features")
    s.add_argument("--kind", dest="feature", choices=pipeline.FEATURE_KINDS)
    s.add_argument("--manifest")
    s.add_argument("--force", action="store_true")
    s = add("train", "train one model")
    s.add_argument("--feature", choices=pipeline.FEATURE_KINDS)
    s.add_argument("--model", choices=pipeline.MODEL_KINDS)
    s.add_argument("--force", action="store_true")
    for name, help_ in (("eval", "score a checkpoint"), ("embed", "export embeddings")):
        s = add(name, help_)
        s.add_argument("--checkpoint")
        s.add_argument("--features", help="feature cache directory")
        s.add_argument("--feature", choices=pipeline.FEATURE_KINDS)
        s.add_argument("--model", choices=pipeline.MODEL_KINDS)
        s.add_argument("--split", default="test", choices=("train", "dev", "test"))
        if name == "embed":
            s.add_argument("--tsne", action="store_true", help="also project with t-SNE")
    s = add("tsne", "project embeddings to 2-D")
    s.add_argument("--embeddings")
    s.add_argument("--feature", choices=pipeline.FEATURE_KINDS)
    s.add_argument("--model", choices=pipeline.MODEL_KINDS)
    s.add_argument("--split", default="test", choices=("train", "dev", "test"))
    s = add("spectrogram", "render a WAV file as a PNG spectrogram")
    s.add_argument("wav")
    s.add_argument("--png")
    s = add("matrix", "train and score the 3 features x 3 models grid")
    s.add_argument("--split", default="test", choices=("train", "dev", "test"))
    s = add("run", "synth, extract, train, eval, embed and t-SNE for one cell")
    s.add_argument("--feature", choices=pipeline.FEATURE_KINDS)
    s.add_argument("--model", choices=pipeline.MODEL_KINDS)
    s.add_argument("--split", default="test", choices=("train", "dev", "test"))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        COMMANDS[args.command](args, cfg)
    except (TrainingDivergedError, NumericalError) as exc:
        print(f"fpdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FingerprintError, ValueError, json.JSONDecodeError) as exc:
        print(f"fpdetect {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"fpdetect {args.command}: runtime failure: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
