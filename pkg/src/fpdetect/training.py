"""Mini-batch training, segment-averaged prediction and model checkpoints."""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import Adam, backward, lr_schedule_linear, no_grad, ops
from .autograd.checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, InvalidInputError, TrainingDivergedError
from .features import FeatureKind
from .metrics import evaluate
from .models import Classifier, ModelConfig, ModelKind, build_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    batch_size: int = 32
    epochs: int = 15
    seed: int = 0

    @classmethod
    def for_profile(cls, profile: str, **overrides):
        base = {"paper": dict(batch_size=256, epochs=100), "desk": dict(batch_size=32, epochs=15)}
        if profile not in base:
            raise ConfigError(f"unknown profile {profile!r}")
        return cls(**{**base[profile], **overrides})


@dataclass
class TrainResult:
    history: list
    final_state: "OrderedDict[str, np.ndarray]"
    best_state: "OrderedDict[str, np.ndarray]"
    best_epoch: int
    extra: dict = field(default_factory=dict)


def wrap_pad(feat: np.ndarray, length: int) -> np.ndarray:
    """Repeat ``feat`` cyclically along time until it spans ``length`` frames."""
    return feat[np.arange(length) % feat.shape[0]]


def random_crop(feat: np.ndarray, length: int, rng) -> np.ndarray:
    n = feat.shape[0]
    if n <= length:
        return wrap_pad(feat, length)
    start = int(rng.integers(0, n - length + 1))
    return feat[start : start + length]


def segment(feat: np.ndarray, length: int) -> np.ndarray:
    """Split into consecutive ``length``-frame windows; the last is right-aligned."""
    n = feat.shape[0]
    if n <= length:
        return wrap_pad(feat, length)[None]
    starts = list(range(0, n - length + 1, length))
    if starts[-1] + length < n:
        starts.append(n - length)
    return np.stack([feat[s : s + length] for s in starts])


def _batches(n, batch_size):
    out = [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    # batch norm cannot train on a single example
    if len(out) > 1 and out[-1].size == 1:
        out.pop()
    return out


def _check_kind(model: Classifier, feats):
    want = FeatureKind.parse(model.cfg.feature_kind)
    for f in feats:
        kind = getattr(f, "kind", None)
        if kind is not None and kind != want:
            raise ConfigError(f"model was built for {want.name} features, got {kind.name}")


def _arrays(feats):
    return [np.asarray(getattr(f, "data", f), dtype=np.float32) for f in feats]


def _forward_segments(model: Classifier, feats, batch_size=64):
    """Per-utterance mean logits and embeddings over crop-length segments."""
    _check_kind(model, feats)
    arrays = _arrays(feats)
    length = model.cfg.crop_frames
    segs, owner = [], []
    for i, f in enumerate(arrays):
        s = segment(f, length)
        segs.append(s)
        owner.extend([i] * len(s))
    if not segs:
        return np.zeros((0, model.cfg.n_classes)), np.zeros((0, model.embedding_dim))
    segs = np.concatenate(segs)
    owner = np.asarray(owner)
    logits, embs = [], []
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            for start in range(0, len(segs), batch_size):
                lo, em = model(model.prepare(segs[start : start + batch_size]))
                logits.append(lo.data)
                embs.append(em.data)
    finally:
        model.train(was_training)
    logits = np.concatenate(logits).astype(np.float64)
    embs = np.concatenate(embs).astype(np.float64)
    n = len(arrays)
    counts = np.bincount(owner, minlength=n)[:, None]
    out_l = np.zeros((n, logits.shape[1]))
    out_e = np.zeros((n, embs.shape[1]))
    np.add.at(out_l, owner, logits)
    np.add.at(out_e, owner, embs)
    return out_l / counts, out_e / counts


def predict(model: Classifier, feats, batch_size=64) -> np.ndarray:
    """Logits (n_utts, 5), averaged over each utterance's segments."""
    return _forward_segments(model, feats, batch_size)[0]


def embed(model: Classifier, feats, batch_size=64) -> np.ndarray:
    return _forward_segments(model, feats, batch_size)[1]


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(logits, axis=1)


def train(model: Classifier, train_feats, train_labels, dev_feats, dev_labels, cfg: TrainConfig,
          on_epoch=None) -> TrainResult:
    """Train with shuffled mini-batches, cross-entropy, Adam and linear LR decay.

    The best checkpoint is the epoch with the highest dev macro-F1 (earliest on
    ties).
    """
    if len(train_feats) == 0:
        raise InvalidInputError("training split is empty")
    if len(train_feats) != len(train_labels):
        raise InvalidInputError("train features and labels differ in length")
    _check_kind(model, train_feats)
    arrays = _arrays(train_feats)
    labels = np.asarray(train_labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr0)
    n = len(arrays)
    per_epoch = len(_batches(n, cfg.batch_size))
    total = cfg.epochs * per_epoch
    length = model.cfg.crop_frames
    history = []
    best_f1, best_state, best_epoch = -1.0, None, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        lr = cfg.lr0
        for idx in _batches(n, cfg.batch_size):
            sel = order[idx]
            x = np.stack([random_crop(arrays[i], length, rng) for i in sel])
            lr = lr_schedule_linear(step, total, cfg.lr0)
            logits, _ = model(model.prepare(x))
            loss = ops.softmax_cross_entropy(logits, labels[sel])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDivergedError(step, epoch, value)
            opt.zero_grad()
            backward(loss)
            opt.step(lr)
            losses.append(value)
            step += 1
        dev_f1 = float("nan")
        if dev_feats is not None and len(dev_feats):
            preds = argmax_labels(predict(model, dev_feats))
            dev_f1 = evaluate(preds, dev_labels).macro_f1
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "dev_macro_f1": dev_f1, "lr": lr}
        history.append(entry)
        log.info("epoch %d loss %.4f dev macro-F1 %.4f", epoch, entry["loss"], dev_f1)
        if on_epoch is not None:
            on_epoch(entry)
        if best_state is None or dev_f1 > best_f1:
            best_f1, best_epoch = dev_f1, epoch
            best_state = OrderedDict((k, v.copy()) for k, v in model.state_dict().items())
    final_state = OrderedDict((k, v.copy()) for k, v in model.state_dict().items())
    return TrainResult(history, final_state, best_state, best_epoch)


def history_jsonl(history) -> str:
    return "".join(json.dumps(h, sort_keys=False) + "\n" for h in history)


# ---------------------------------------------------------------- checkpoints


def save_model(path, model: Classifier, state=None, extra=None):
    config = {"model": model.cfg.to_dict(), "extra": extra or {}}
    state = model.state_dict() if state is None else state
    save_checkpoint(path, int(ModelKind.parse(model.cfg.kind)), config, state)


def load_model(path):
    """Return ``(model, extra)``; the model is in eval mode."""
    kind, config, tensors = load_checkpoint(path)
    cfg = ModelConfig(**config["model"])
    if ModelKind.parse(cfg.kind) != kind:
        raise ConfigError(f"checkpoint kind byte {kind} disagrees with config kind {cfg.kind!r}")
    model = build_model(cfg)
    model.load_state_dict(tensors)
    model.eval()
    return model, config.get("extra", {})


def model_summary(model: Classifier) -> dict:
    return {"kind": model.cfg.kind, "params": model.num_parameters(), **asdict(model.cfg)}
