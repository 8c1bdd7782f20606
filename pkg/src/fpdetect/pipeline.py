"""Experiment pipeline: corpus -> features -> training -> evaluation -> visualisation.

Every stage writes beneath the experiment's output directory and is a pure
function of its inputs and seeds; rerunning a stage rewrites identical bytes.
Stages record a small stamp file so an up-to-date stage can be skipped.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics, training, viz
from .errors import ConfigError, MissingArtifactError
from .features import FeatureConfig, FeatureKind, extract, load_features, read_cache_kind, save_features
from .models import ModelConfig, ModelKind, build_model

log = logging.getLogger(__name__)

FEATURE_KINDS = ("lfcc", "mfcc", "cqcc")
MODEL_KINDS = ("xvector", "lcnn", "resnet")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run. Serialised as a single JSON document."""

    out: str = "runs/desk"
    seed: int = 0
    profile: str = "desk"
    feature: str = "lfcc"
    model: str = "resnet"
    corpus: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    tsne: dict = field(default_factory=lambda: {"perplexity": 30.0, "iters": 1000})
    crop_frames: int = 300

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None

    def to_dict(self):
        return asdict(self)

    def validate(self):
        FeatureKind.parse(self.feature)
        ModelKind.parse(self.model)
        if self.profile not in ("paper", "desk"):
            raise ConfigError(f"profile must be 'paper' or 'desk', got {self.profile!r}")
        self.corpus_config().check()
        self.train_config()
        return self

    # derived pieces -----------------------------------------------------

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def corpus_config(self) -> corpus_mod.CorpusConfig:
        return corpus_mod.CorpusConfig.from_dict(self.corpus) if self.corpus else corpus_mod.CorpusConfig()

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(**self.features)

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig.for_profile(self.profile, seed=self.seed, **self.train)

    def model_config(self, feature=None, model=None) -> ModelConfig:
        return ModelConfig(
            kind=(model or self.model).lower(),
            profile=self.profile,
            feature_kind=FeatureKind.parse(feature or self.feature).name,
            crop_frames=self.crop_frames,
        )

    # layout -------------------------------------------------------------

    @property
    def corpus_dir(self) -> Path:
        return self.out_dir / "corpus"

    @property
    def manifest_path(self) -> Path:
        return self.corpus_dir / "manifest.jsonl"

    def features_dir(self, feature=None) -> Path:
        return self.out_dir / "features" / FeatureKind.parse(feature or self.feature).name.lower()

    def run_name(self, feature=None, model=None) -> str:
        return f"{FeatureKind.parse(feature or self.feature).name.lower()}_{ModelKind.parse(model or self.model).name.lower()}"

    def model_dir(self, feature=None, model=None) -> Path:
        return self.out_dir / "models" / self.run_name(feature, model)


def _stamp_matches(path: Path, payload: dict) -> bool:
    return path.is_file() and path.read_text(encoding="utf-8") == _stamp_text(payload)


def _stamp_text(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _write_stamp(path: Path, payload: dict):
    path.write_text(_stamp_text(payload), encoding="utf-8")


# ---------------------------------------------------------------- stages


def run_synth(cfg: ExperimentConfig, force=False) -> Path:
    ccfg = cfg.corpus_config()
    ccfg.check()
    stamp = cfg.corpus_dir / ".stamp.json"
    payload = {"corpus": ccfg.to_dict(), "seed": cfg.seed}
    if not force and _stamp_matches(stamp, payload) and cfg.manifest_path.is_file():
        log.info("corpus up to date: %s", cfg.manifest_path)
        return cfg.manifest_path
    cfg.corpus_dir.mkdir(parents=True, exist_ok=True)
    manifest = corpus_mod.generate_corpus(ccfg, cfg.seed, cfg.corpus_dir)
    report = corpus_mod.validate_manifest(manifest)
    if not report.ok:
        raise ConfigError("generated corpus failed validation: " + "; ".join(report.violations))
    _write_stamp(stamp, payload)
    return cfg.manifest_path


def load_manifest(path) -> corpus_mod.DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(path, "synth")
    return corpus_mod.read_manifest(path)


def run_extract(manifest_path, kind, out_dir, feat_cfg: FeatureConfig = FeatureConfig(), force=False) -> Path:
    kind = FeatureKind.parse(kind)
    manifest = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = out_dir / ".stamp.json"
    manifest_text = Path(manifest_path).read_text(encoding="utf-8")
    payload = {"kind": kind.name, "config": feat_cfg.to_dict(), "manifest": manifest_text}
    if not force and _stamp_matches(stamp, payload):
        log.info("%s features up to date: %s", kind.name, out_dir)
        return out_dir
    for rec in manifest.records:
        w = corpus_mod.read_wav(manifest.resolve(rec))
        save_features(out_dir / f"{rec.utt_id}.fpfx", extract(w, kind, feat_cfg))
    _write_stamp(stamp, payload)
    return out_dir


def load_split(manifest, features_dir, split, kind=None):
    """Features, integer labels and records for one split, with a cache-kind check."""
    features_dir = Path(features_dir)
    recs = manifest.split(split)
    feats = []
    for rec in recs:
        path = features_dir / f"{rec.utt_id}.fpfx"
        if not path.is_file():
            raise MissingArtifactError(path, "extract")
        if kind is not None:
            got = read_cache_kind(path)
            if got != FeatureKind.parse(kind):
                raise ConfigError(
                    f"feature cache {path} holds {got.name} features but the model expects "
                    f"{FeatureKind.parse(kind).name}"
                )
        feats.append(load_features(path))
    labels = np.array([metrics.SYSTEMS.index(r.system) for r in recs], dtype=np.int64)
    return feats, labels, recs


def run_train(cfg: ExperimentConfig, feature=None, model=None, force=False) -> Path:
    mcfg = cfg.model_config(feature, model)
    tcfg = cfg.train_config()
    model_dir = cfg.model_dir(feature, model)
    stamp = model_dir / ".stamp.json"
    feat_dir = cfg.features_dir(feature)
    feat_stamp = feat_dir / ".stamp.json"
    if not feat_stamp.is_file():
        raise MissingArtifactError(feat_stamp, "extract")
    payload = {
        "model": mcfg.to_dict(),
        "train": asdict(tcfg),
        "features": feat_stamp.read_text(encoding="utf-8"),
    }
    if not force and _stamp_matches(stamp, payload) and (model_dir / "best.fpck").is_file():
        log.info("model up to date: %s", model_dir)
        return model_dir
    manifest = load_manifest(cfg.manifest_path)
    tr_x, tr_y, _ = load_split(manifest, feat_dir, "train", mcfg.feature_kind)
    dv_x, dv_y, _ = load_split(manifest, feat_dir, "dev", mcfg.feature_kind)
    net = build_model(mcfg, seed=tcfg.seed)
    result = training.train(net, tr_x, tr_y, dv_x, dv_y, tcfg)
    model_dir.mkdir(parents=True, exist_ok=True)
    extra = {"train": asdict(tcfg), "epochs_run": len(result.history)}
    training.save_model(model_dir / "final.fpck", net, result.final_state, {**extra, "checkpoint": "final"})
    training.save_model(
        model_dir / "best.fpck", net, result.best_state,
        {**extra, "checkpoint": "best", "best_epoch": result.best_epoch},
    )
    (model_dir / "history.jsonl").write_text(training.history_jsonl(result.history), encoding="utf-8")
    _write_stamp(stamp, payload)
    return model_dir


def _load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(path, "train")
    return training.load_model(path)


def run_eval(checkpoint, manifest_path, features_dir, split, out_dir) -> metrics.EvalReport:
    net, _ = _load_checkpoint(checkpoint)
    manifest = load_manifest(manifest_path)
    feats, labels, _ = load_split(manifest, features_dir, split, net.cfg.feature_kind)
    preds = training.argmax_labels(training.predict(net, feats))
    report = metrics.evaluate(
        preds, labels,
        meta={"model": net.cfg.kind, "feature": net.cfg.feature_kind, "split": split,
              "profile": net.cfg.profile, "n_utterances": len(labels)},
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(metrics.render_json(report), encoding="utf-8")
    (out_dir / "report.txt").write_text(metrics.render_text(report), encoding="utf-8")
    return report


def run_embed(checkpoint, manifest_path, features_dir, split, out_path) -> viz.EmbeddingSet:
    net, _ = _load_checkpoint(checkpoint)
    manifest = load_manifest(manifest_path)
    feats, _, recs = load_split(manifest, features_dir, split, net.cfg.feature_kind)
    vecs = training.embed(net, feats)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["utt_id", "system"] + [f"e{i}" for i in range(vecs.shape[1])])
    for rec, v in zip(recs, vecs):
        writer.writerow([rec.utt_id, rec.system] + [repr(float(x)) for x in v])
    out_path.write_text(buf.getvalue(), encoding="utf-8")
    source = {"model": net.cfg.kind, "feature": net.cfg.feature_kind, "layer": "embedding", "split": split}
    return viz.EmbeddingSet(vecs, [r.system for r in recs], [r.utt_id for r in recs], source)


def read_embeddings(path) -> viz.EmbeddingSet:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(path, "embed")
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    body = rows[1:]
    vecs = np.array([[float(x) for x in r[2:]] for r in body])
    return viz.EmbeddingSet(vecs, [r[1] for r in body], [r[0] for r in body])


def run_tsne(embeddings_path, out_dir, perplexity=30.0, iters=1000, seed=0, source=None) -> dict:
    emb = read_embeddings(embeddings_path)
    proj = viz.tsne(emb, perplexity=perplexity, iters=iters, seed=seed)
    sil = viz.silhouette(proj.coords, emb.labels)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["utt_id", "x", "y", "system"])
    for uid, (x, y), lab in zip(emb.ids, proj.coords, emb.labels):
        writer.writerow([uid, repr(float(x)), repr(float(y)), lab])
    (out_dir / "projection.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out_dir / "scatter.svg").write_text(viz.scatter_svg(proj, emb.labels), encoding="utf-8")
    meta = {
        "perplexity": perplexity, "iters": iters, "seed": seed, "n": len(emb.labels),
        "silhouette": sil, "final_kl": float(proj.kl_trace[-1]), "source": source or {},
        "embedding_layer": (source or {}).get("layer", "embedding"),
    }
    (out_dir / "tsne.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    np.savetxt(out_dir / "kl_trace.txt", proj.kl_trace, fmt="%.17g")
    return {"projection": proj, "silhouette": sil, "meta": meta}


def run_spectrogram(wav_path, out_png) -> Path:
    wav_path = Path(wav_path)
    if not wav_path.is_file():
        raise MissingArtifactError(wav_path, "synth")
    Path(out_png).parent.mkdir(parents=True, exist_ok=True)
    viz.spectrogram_png(corpus_mod.read_wav(wav_path), out_png)
    return Path(out_png)


# ---------------------------------------------------------------- composites


def run_experiment(cfg: ExperimentConfig, split="test") -> dict:
    """synth -> extract -> train -> eval -> embed -> t-SNE for the configured cell."""
    cfg.validate()
    run_synth(cfg)
    run_extract(cfg.manifest_path, cfg.feature, cfg.features_dir(), cfg.feature_config())
    model_dir = run_train(cfg)
    name = cfg.run_name()
    report = run_eval(model_dir / "best.fpck", cfg.manifest_path, cfg.features_dir(), split,
                      cfg.out_dir / "eval" / name / split)
    emb_path = cfg.out_dir / "embed" / name / split / "embeddings.csv"
    emb = run_embed(model_dir / "best.fpck", cfg.manifest_path, cfg.features_dir(), split, emb_path)
    tsne_cfg = dict(cfg.tsne)
    ts = run_tsne(emb_path, cfg.out_dir / "tsne" / name / split, seed=cfg.seed, source=emb.source, **tsne_cfg)
    return {"report": report, "model_dir": model_dir, "tsne": ts}


def run_matrix(cfg: ExperimentConfig, split="test", features=FEATURE_KINDS, models=MODEL_KINDS) -> dict:
    """Train and score every feature x model cell; writes matrix.json / matrix.txt."""
    cfg.validate()
    run_synth(cfg)
    cells = {}
    for feat in features:
        run_extract(cfg.manifest_path, feat, cfg.features_dir(feat), cfg.feature_config())
        for model in models:
            model_dir = run_train(cfg, feat, model)
            name = cfg.run_name(feat, model)
            report = run_eval(model_dir / "best.fpck", cfg.manifest_path, cfg.features_dir(feat), split,
                              cfg.out_dir / "eval" / name / split)
            t = report.total_percent()
            cells[name] = {"feature": feat.upper(), "model": model, **{k: float(metrics.round_half_up(v)) for k, v in t.items()}}
    out_dir = cfg.out_dir / "matrix"
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"split": split, "profile": cfg.profile, "cells": cells}
    (out_dir / "matrix.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    (out_dir / "matrix.txt").write_text(render_matrix(doc, features, models), encoding="utf-8")
    return doc


def render_matrix(doc, features=FEATURE_KINDS, models=MODEL_KINDS) -> str:
    head = f"{'Features':<10}" + "".join(f"{m:>27}" for m in models)
    sub = f"{'':<10}" + "".join(f"{'P':>9}{'R':>9}{'F1':>9}" for _ in models)
    rows = [head, sub]
    for feat in features:
        line = f"{feat.upper():<10}"
        for model in models:
            c = doc["cells"].get(f"{feat}_{model}")
            line += "".join(f"{c[k]:>9.2f}" for k in ("p", "r", "f1")) if c else f"{'-':>27}"
        rows.append(line)
    return "\n".join(rows) + "\n"
