"""Exact t-SNE, silhouette scoring, SVG scatter plots and spectrogram images."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import dsp
from .dsp import Waveform
from .errors import ConfigError, InvalidInputError
from .metrics import SYSTEMS


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    vectors: np.ndarray
    labels: tuple
    ids: tuple = ()
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2:
            raise InvalidInputError("embedding set needs an (n >= 2) x d matrix")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("embedding set contains non-finite rows")
        if len(self.labels) != v.shape[0]:
            raise InvalidInputError(f"{len(self.labels)} labels for {v.shape[0]} embeddings")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "ids", tuple(self.ids) or tuple(str(i) for i in range(v.shape[0])))


@dataclass(frozen=True, eq=False)
class Projection2D:
    coords: np.ndarray
    kl_trace: np.ndarray


# ---------------------------------------------------------------- t-SNE


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def conditional_probabilities(dist: np.ndarray, perplexity: float, tol=1e-5, max_steps=50):
    """Row-wise Gaussian affinities whose entropy matches ``log(perplexity)``.

    Returns ``(P_cond, entropies_in_nats)``; bisection on the precision ``beta``
    runs for every row at once.
    """
    n = dist.shape[0]
    target = np.log(perplexity)
    mask = ~np.eye(n, dtype=bool)
    d = np.where(mask, dist, np.inf)
    d = d - d.min(axis=1, keepdims=True)  # shift-invariant; avoids underflow
    d_finite = np.where(mask, d, 0.0)
    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)

    def evaluate(beta):
        p = np.exp(-d * beta[:, None])
        s = p.sum(axis=1)
        h = np.log(s) + beta * (d_finite * p).sum(axis=1) / s
        return p / s[:, None], h

    p, h = evaluate(beta)
    for _ in range(max_steps):
        diff = h - target
        done |= np.abs(diff) <= tol
        if done.all():
            break
        active = ~done
        up = active & (diff > 0)  # entropy too high -> sharpen
        down = active & (diff < 0)
        lo[up] = beta[up]
        beta[up] = np.where(np.isinf(hi[up]), beta[up] * 2.0, (beta[up] + hi[up]) / 2.0)
        hi[down] = beta[down]
        beta[down] = (beta[down] + lo[down]) / 2.0
        p_new, h_new = evaluate(beta)
        p[active], h[active] = p_new[active], h_new[active]
    return p, h


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    p_cond, _ = conditional_probabilities(squared_distances(x), perplexity)
    p = p_cond + p_cond.T
    return p / p.sum()


def kl_divergence(p, q) -> float:
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def _kl_at(p, y):
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    return kl_divergence(p, np.maximum(num / num.sum(), 1e-300))


def tsne(
    e,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 0,
    learning_rate: float = 200.0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    momentum: tuple = (0.5, 0.8),
    init=None,
) -> Projection2D:
    """Exact O(n^2) t-SNE to two dimensions.

    Momentum gradient descent on KL(P || Q). Once exaggeration ends, a step
    that would raise the KL is rejected, momentum is reset and the plain
    gradient step is halved until it descends, so the trace is monotone from
    there on. ``init`` overrides the seeded N(0, 1e-4^2) starting layout.
    """
    x = e.vectors if isinstance(e, EmbeddingSet) else np.asarray(e, dtype=np.float64)
    n = x.shape[0]
    if not 1.0 < perplexity < (n - 1) / 3.0:
        raise ConfigError(f"perplexity {perplexity} infeasible for n={n}; need 1 < perplexity < {(n - 1) / 3:.2f}")
    if iters < 250:
        raise ConfigError(f"iters must be >= 250, got {iters}")
    if init is None:
        y = np.random.default_rng(seed).normal(0.0, 1e-4, size=(n, 2))
    else:
        y = np.array(init, dtype=np.float64)
    # run on a canonical row order so that summation order, and with it every
    # rounding error, does not depend on how the caller ordered the rows
    order = np.lexsort(np.concatenate([x, y], axis=1).T[::-1])
    x, y = x[order], y[order]
    p = joint_probabilities(x, perplexity)
    velocity = np.zeros_like(y)
    trace = np.empty(iters)
    for it in range(iters):
        exag = exaggeration if it < exaggeration_iters else 1.0
        mom = momentum[0] if it < exaggeration_iters else momentum[1]
        num = 1.0 / (1.0 + squared_distances(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-300)
        w = (exag * p - q) * num
        grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
        velocity = mom * velocity - learning_rate * grad
        y_new = y + velocity
        y_new -= y_new.mean(axis=0)
        kl = _kl_at(p, y_new)
        if it >= exaggeration_iters and kl > trace[it - 1]:
            # momentum overshot: restart it and backtrack along the plain gradient
            velocity = np.zeros_like(y)
            step = learning_rate
            for _ in range(40):
                y_new = y - step * grad
                y_new -= y_new.mean(axis=0)
                kl = _kl_at(p, y_new)
                if kl <= trace[it - 1]:
                    break
                step *= 0.5
            else:
                y_new, kl = y, trace[it - 1]
        y = y_new
        trace[it] = kl
    out = np.empty_like(y)
    out[order] = y
    return Projection2D(out, trace)


# ---------------------------------------------------------------- silhouette


def silhouette(points, labels) -> float:
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ConfigError("silhouette needs at least two labels")
    if counts.min() < 2:
        raise ConfigError(f"class {classes[counts.argmin()]!r} has a single point")
    dist = np.sqrt(squared_distances(points))
    member = labels[None, :] == classes[:, None]  # (k, n)
    sums = dist @ member.T.astype(np.float64)  # (n, k): summed distance to each class
    own = np.searchsorted(classes, labels)
    counts_f = counts.astype(np.float64)
    mean_to = sums / counts_f[None, :]
    a = sums[np.arange(len(labels)), own] / (counts_f[own] - 1.0)
    mean_to[np.arange(len(labels)), own] = np.inf
    b = mean_to.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


# ---------------------------------------------------------------- SVG scatter

SYSTEM_COLORS = {
    "A": "#d62728",  # red
    "B": "#e6c200",  # yellow
    "C": "#1f77b4",  # blue
    "D": "#2ca02c",  # green
    "E": "#c71585",  # magenta
}


def scatter_svg(p, labels, width=640, height=480, title="") -> str:
    coords = np.asarray(p.coords if isinstance(p, Projection2D) else p, dtype=np.float64).reshape(-1, 2)
    labels = list(labels)
    if len(labels) != coords.shape[0]:
        raise InvalidInputError(f"{len(labels)} labels for {coords.shape[0]} points")
    margin, legend_w = 30, 90
    plot_w, plot_h = width - 2 * margin - legend_w, height - 2 * margin
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect class="plot-area" x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#888"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="{margin - 10}" font-family="sans-serif" font-size="13">{title}</text>')
    if coords.shape[0]:
        lo, hi = coords.min(axis=0), coords.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        scaled = (coords - lo) / span
        for (u, v), lab in zip(scaled, labels):
            cx = margin + 5 + u * (plot_w - 10)
            cy = margin + 5 + (1.0 - v) * (plot_h - 10)
            color = SYSTEM_COLORS.get(lab, "#555555")
            out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="3" fill="{color}" fill-opacity="0.8" data-system="{lab}"/>')
    lx = width - margin - legend_w + 15
    for i, lab in enumerate(SYSTEMS):
        ly = margin + 10 + 22 * i
        out.append(
            f'<g class="legend-entry"><rect x="{lx}" y="{ly}" width="12" height="12" fill="{SYSTEM_COLORS[lab]}"/>'
            f'<text x="{lx + 18}" y="{ly + 11}" font-family="sans-serif" font-size="12">system {lab}</text></g>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- spectrogram

# Anchor colours (position, RGB) of the fixed dark-to-bright colormap; the
# 256-entry table interpolates linearly between them.
COLORMAP_ANCHORS = (
    (0.00, (0, 0, 4)),
    (0.25, (87, 16, 110)),
    (0.50, (188, 55, 84)),
    (0.75, (249, 142, 9)),
    (1.00, (252, 255, 164)),
)
DB_FLOOR = -80.0


def colormap_table() -> np.ndarray:
    pos = np.array([a[0] for a in COLORMAP_ANCHORS])
    rgb = np.array([a[1] for a in COLORMAP_ANCHORS], dtype=np.float64)
    x = np.linspace(0.0, 1.0, 256)
    table = np.stack([np.interp(x, pos, rgb[:, c]) for c in range(3)], axis=1)
    return np.rint(table).astype(np.uint8)


def spectrogram_db(w: Waveform, win_ms=25.0, hop_ms=10.0, n_fft=512, floor_db=DB_FLOOR) -> np.ndarray:
    """(n_fft/2+1, n_frames) log power in dB relative to the loudest cell, floored."""
    frames = dsp.apply_window(dsp.frame_signal(w, win_ms, hop_ms), "hamming")
    power = dsp.power_spectrum(dsp.fft(frames.frames, n_fft)).T
    peak = power.max()
    if peak <= 0:
        return np.full(power.shape, floor_db)
    db = 10.0 * np.log10(np.maximum(power, 1e-300) / peak)
    return np.maximum(db, floor_db)


def spectrogram_image(w: Waveform, floor_db=DB_FLOOR, **kw) -> np.ndarray:
    """RGB array (height = frequency bins with the highest on top, width = frames)."""
    db = spectrogram_db(w, floor_db=floor_db, **kw)
    idx = np.rint((db - floor_db) / -floor_db * 255.0).astype(np.int64)
    return colormap_table()[idx[::-1]]


def spectrogram_png(w: Waveform, path, **kw) -> np.ndarray:
    img = spectrogram_image(w, **kw)
    Image.fromarray(img, mode="RGB").save(Path(path), format="PNG", optimize=False, compress_level=6)
    return img
