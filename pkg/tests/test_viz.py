import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from fpdetect import viz
from fpdetect.dsp import Waveform
from fpdetect.errors import ConfigError
from fpdetect.viz import EmbeddingSet, Projection2D

SR = 16000


def blobs(n_per=50, d=10, k=2, sep=10.0, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(k, d)) * sep
    x = np.concatenate([c + rng.normal(size=(n_per, d)) for c in centres])
    labels = np.repeat([chr(ord("A") + i) for i in range(k)], n_per)
    return x, labels


# ---------------------------------------------------------------- affinities


def test_joint_probabilities_invariants():
    x, _ = blobs(seed=1)
    p = viz.joint_probabilities(x, 30.0)
    assert np.allclose(p, p.T, atol=0)
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(np.diag(p) == 0)


@pytest.mark.parametrize("perp", [5.0, 30.0])
def test_row_entropy_matches_perplexity(perp):
    x, _ = blobs(seed=2)
    _, h_nats = viz.conditional_probabilities(viz.squared_distances(x), perp)
    assert np.abs(h_nats / np.log(2) - np.log2(perp)).max() < 1e-3


def test_conditional_rows_sum_to_one():
    x, _ = blobs(seed=3)
    p, _ = viz.conditional_probabilities(viz.squared_distances(x), 10.0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


# ---------------------------------------------------------------- t-SNE


@pytest.mark.parametrize("perp,n", [(1.0, 100), (33.0, 100), (5.0, 10)])
def test_infeasible_perplexity(perp, n):
    with pytest.raises(ConfigError):
        viz.tsne(np.random.default_rng(0).normal(size=(n, 3)), perplexity=perp)


def test_iters_minimum():
    with pytest.raises(ConfigError):
        viz.tsne(np.random.default_rng(0).normal(size=(100, 3)), iters=249)


def test_two_blobs_separate():
    x, labels = blobs(seed=4)
    proj = viz.tsne(EmbeddingSet(x, labels), seed=0)
    assert proj.coords.shape == (100, 2)
    assert viz.silhouette(proj.coords, labels) > 0.5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kl_trace_monotone_late(seed):
    x, _ = blobs(n_per=30, k=5, seed=4)
    proj = viz.tsne(x, perplexity=20, iters=600, seed=seed)
    assert proj.kl_trace.shape == (600,)
    assert np.diff(proj.kl_trace[300:]).max() <= 1e-6


def test_tsne_bit_reproducible():
    x, _ = blobs(n_per=20, seed=6)
    a = viz.tsne(x, perplexity=10, iters=300, seed=3)
    b = viz.tsne(x, perplexity=10, iters=300, seed=3)
    assert a.coords.tobytes() == b.coords.tobytes()
    assert a.kl_trace.tobytes() == b.kl_trace.tobytes()


def test_tsne_permutation_equivariant():
    x, _ = blobs(n_per=20, seed=7)
    init = np.random.default_rng(8).normal(0, 1e-4, size=(40, 2))
    perm = np.random.default_rng(9).permutation(40)
    a = viz.tsne(x, perplexity=10, iters=300, init=init).coords
    b = viz.tsne(x[perm], perplexity=10, iters=300, init=init[perm]).coords
    assert b.tobytes() == a[perm].tobytes()


# ---------------------------------------------------------------- silhouette


def test_silhouette_perfect_separation():
    pts = np.array([[0.0, 0.0]] * 3 + [[5.0, 1.0]] * 4)
    assert viz.silhouette(pts, list("AAABBBB")) == pytest.approx(1.0, abs=1e-9)


def test_silhouette_matches_sklearn():
    sk = pytest.importorskip("sklearn.metrics")
    x, labels = blobs(n_per=30, k=3, sep=2.0, seed=10)
    assert viz.silhouette(x, labels) == pytest.approx(sk.silhouette_score(x, labels), abs=1e-10)


def test_silhouette_shuffled_labels_near_zero():
    x, labels = blobs(n_per=100, seed=11)
    shuffled = np.random.default_rng(12).permutation(labels)
    assert abs(viz.silhouette(x, shuffled)) < 0.2


def test_silhouette_errors():
    pts = np.zeros((4, 2))
    with pytest.raises(ConfigError):
        viz.silhouette(pts, list("AAAA"))
    with pytest.raises(ConfigError):
        viz.silhouette(pts, list("AAAB"))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(4, 40))
def test_silhouette_bounded(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 2)) * rng.uniform(0.01, 10)
    labels = np.array(["A", "B"] * (n // 2) + ["A"] * (n % 2))
    rng.shuffle(labels)
    assert -1.0 <= viz.silhouette(pts, labels) <= 1.0


# ---------------------------------------------------------------- SVG


def test_svg_counts():
    pts = np.arange(10, dtype=float).reshape(5, 2)
    svg = viz.scatter_svg(pts, list("ABCDE"))
    assert len(re.findall(r"<circle ", svg)) == 5
    assert svg.count('class="legend-entry"') == 5
    for label, color in viz.SYSTEM_COLORS.items():
        assert f'fill="{color}" fill-opacity="0.8" data-system="{label}"' in svg


def test_svg_deterministic():
    proj = Projection2D(np.random.default_rng(0).normal(size=(30, 2)), np.zeros(1))
    labels = list("ABCDE") * 6
    assert viz.scatter_svg(proj, labels).encode() == viz.scatter_svg(proj, labels).encode()


def test_svg_empty():
    svg = viz.scatter_svg(np.zeros((0, 2)), [])
    assert svg.lstrip().startswith("<?xml") and svg.rstrip().endswith("</svg>")
    assert "<circle" not in svg
    assert 'class="plot-area"' in svg


# ---------------------------------------------------------------- spectrogram


def test_spectrogram_height_and_width():
    img = viz.spectrogram_image(Waveform(np.random.default_rng(0).normal(size=SR)))
    assert img.shape == (257, 98, 3)


def test_spectrogram_tone_row():
    k = 64  # 2000 Hz sits exactly on bin 64 of a 512-point FFT at 16 kHz
    t = np.arange(SR) / SR
    db = viz.spectrogram_db(Waveform(np.sin(2 * np.pi * 2000 * t)))
    img = viz.spectrogram_image(Waveform(np.sin(2 * np.pi * 2000 * t)))
    brightest = img.astype(int).sum(axis=2).mean(axis=1).argmax()
    assert brightest == 256 - k
    assert np.all(db.argmax(axis=0) == k)


def test_spectrogram_silence_uniform_floor():
    img = viz.spectrogram_image(Waveform(np.zeros(SR)))
    floor = viz.colormap_table()[0]
    assert np.all(img == floor)


def test_spectrogram_png_deterministic(tmp_path):
    w = Waveform(np.random.default_rng(1).normal(size=SR // 2))
    viz.spectrogram_png(w, tmp_path / "a.png")
    viz.spectrogram_png(w, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    with Image.open(tmp_path / "a.png") as im:
        assert im.size == (48, 257) and im.mode == "RGB"


def test_colormap_fixed_anchors():
    table = viz.colormap_table()
    assert table.shape == (256, 3)
    assert tuple(table[0]) == viz.COLORMAP_ANCHORS[0][1]
    assert tuple(table[-1]) == viz.COLORMAP_ANCHORS[-1][1]
