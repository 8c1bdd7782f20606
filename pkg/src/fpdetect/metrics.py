"""Confusion-matrix accounting and Precision / Recall / F1 reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import InvalidInputError

SYSTEMS = ("A", "B", "C", "D", "E")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = true system, columns = predicted system."""

    counts: np.ndarray
    labels: tuple = SYSTEMS

    @property
    def tp(self):
        return np.diag(self.counts)

    @property
    def fp(self):
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self):
        return self.counts.sum(axis=1) - self.tp

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return (
            isinstance(other, ConfusionMatrix)
            and self.labels == other.labels
            and np.array_equal(self.counts, other.counts)
        )


def _as_indices(values, labels, what):
    index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for v in values:
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool) and 0 <= v < len(labels):
            out.append(int(v))
        elif v in index:
            out.append(index[v])
        else:
            raise InvalidInputError(f"unknown {what} label {v!r}; expected one of {labels}")
    return np.asarray(out, dtype=np.int64)


def confusion(preds, truth, labels=SYSTEMS) -> ConfusionMatrix:
    preds, truth = list(preds), list(truth)
    if len(preds) != len(truth):
        raise InvalidInputError(f"{len(preds)} predictions for {len(truth)} references")
    if not preds:
        raise InvalidInputError("cannot score an empty prediction list")
    p = _as_indices(preds, labels, "predicted")
    t = _as_indices(truth, labels, "reference")
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, tuple(labels))


def f1_score(p: float, r: float) -> float:
    """Harmonic mean of precision and recall (0 when both are 0)."""
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    degenerate: np.ndarray  # True where some ratio was 0/0 and set to 0


def _safe_ratio(num, den):
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    zero = den == 0
    return np.where(zero, 0.0, num / np.where(zero, 1.0, den)), zero


def prf(cm: ConfusionMatrix) -> ClassScores:
    """Per-class precision, recall and F1 as fractions in [0, 1]."""
    p, p_deg = _safe_ratio(cm.tp, cm.tp + cm.fp)
    r, r_deg = _safe_ratio(cm.tp, cm.tp + cm.fn)
    f = np.array([f1_score(a, b) for a, b in zip(p, r)])
    return ClassScores(p, r, f, p_deg | r_deg | ((p + r) == 0))


def macro_total(values) -> float:
    """Unweighted mean over the five systems (the "Total" row)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(SYSTEMS),):
        raise InvalidInputError(f"macro_total expects {len(SYSTEMS)} per-class values, got {values.shape}")
    return float(values.mean())


def round_half_up(x: float, places: int = 2) -> Decimal:
    return Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def fmt_percent(x: float) -> str:
    """Format a percentage value with two decimals, rounding half up."""
    return str(round_half_up(x))


# ---------------------------------------------------------------- reports


@dataclass(eq=False)
class EvalReport:
    cm: ConfusionMatrix
    meta: dict = field(default_factory=dict)

    @property
    def scores(self) -> ClassScores:
        return prf(self.cm)

    @property
    def macro_f1(self) -> float:
        return macro_total(self.scores.f1)

    def per_class_percent(self):
        s = self.scores
        return {
            lab: {"p": 100 * s.precision[i], "r": 100 * s.recall[i], "f1": 100 * s.f1[i]}
            for i, lab in enumerate(self.cm.labels)
        }

    def total_percent(self):
        s = self.scores
        return {
            "p": 100 * macro_total(s.precision),
            "r": 100 * macro_total(s.recall),
            "f1": 100 * macro_total(s.f1),
        }


def evaluate(preds, truth, meta=None) -> EvalReport:
    return EvalReport(confusion(preds, truth), dict(meta or {}))


def _rounded(d):
    return {k: float(round_half_up(v)) for k, v in d.items()}


def report_to_dict(report: EvalReport) -> dict:
    degenerate = report.scores.degenerate
    return {
        "per_class": {lab: _rounded(v) for lab, v in report.per_class_percent().items()},
        "total": _rounded(report.total_percent()),
        "confusion": report.cm.counts.tolist(),
        "degenerate": [lab for lab, d in zip(report.cm.labels, degenerate) if d],
        "meta": report.meta,
    }


def render_json(report: EvalReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=False) + "\n"


def report_from_json(text: str) -> EvalReport:
    """Rebuild a report from its JSON form; metrics are recomputed from the confusion counts."""
    obj = json.loads(text)
    labels = tuple(obj["per_class"].keys())
    counts = np.asarray(obj["confusion"], dtype=np.int64)
    return EvalReport(ConfusionMatrix(counts, labels), obj.get("meta", {}))


def render_text(report: EvalReport) -> str:
    """Systems x (Precision, Recall, F1) table with a trailing Total row."""
    rows = [f"{'System':<8}{'Precision':>11}{'Recall':>10}{'F1-score':>10}"]
    for lab, v in report.per_class_percent().items():
        rows.append(f"{lab:<8}{fmt_percent(v['p']) + '%':>11}{fmt_percent(v['r']) + '%':>10}{fmt_percent(v['f1']) + '%':>10}")
    t = report.total_percent()
    rows.append(f"{'Total':<8}{fmt_percent(t['p']) + '%':>11}{fmt_percent(t['r']) + '%':>10}{fmt_percent(t['f1']) + '%':>10}")
    return "\n".join(rows) + "\n"
