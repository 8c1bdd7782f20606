"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Criteria 5-7 share a desk-scale run (seeded corpus, LFCC + ResNet, t-SNE) and
the full 3 x 3 grid, so the module takes tens of minutes on one core.
"""

import json
import time

import numpy as np
import pytest

from fpdetect import dsp, pipeline
from fpdetect.autograd import no_grad, ops
from fpdetect.autograd.checkpoint import encode_checkpoint, load_checkpoint
from fpdetect.autograd.tensor import Tensor
from fpdetect.corpus import validate_manifest
from fpdetect.metrics import SYSTEMS, f1_score, fmt_percent, macro_total, round_half_up
from fpdetect.models import BasicBlock, ModelConfig, build_model
from fpdetect.pipeline import ExperimentConfig

pytestmark = pytest.mark.acceptance

# Reference per-class (P, R, F1) for systems A-E with MFCC features, and the Total rows.
REFERENCE_ROWS = {
    "xvector": [(82.16, 91.16, 86.43), (93.00, 99.85, 96.30), (86.22, 87.92, 87.06),
                (63.39, 53.74, 58.17), (88.39, 41.42, 56.41)],
    "lcnn": [(90.75, 92.25, 91.49), (99.97, 95.83, 97.86), (92.88, 91.78, 92.32),
             (56.92, 72.06, 63.60), (66.19, 53.64, 59.26)],
    "resnet": [(96.59, 94.13, 95.35), (99.83, 99.95, 99.89), (93.32, 95.50, 94.40),
               (60.26, 59.78, 60.02), (59.75, 59.18, 59.46)],
}
REFERENCE_TOTALS = {"xvector": (82.63, 74.82, 76.87), "lcnn": (81.34, 81.11, 80.91), "resnet": (81.95, 81.71, 81.82)}


# ---------------------------------------------------------------- 1: metric arithmetic


def test_criterion_1_metric_arithmetic(record_criterion):
    t0 = time.perf_counter()
    mismatches = []
    for model, rows in REFERENCE_ROWS.items():
        for label, (p, r, f) in zip(SYSTEMS, rows):
            got = fmt_percent(f1_score(p, r))
            if got != f"{f:.2f}":
                mismatches.append(f"{model}/{label}: {p}/{r} -> {got}, printed {f:.2f}")
        arr = np.array(rows)
        totals = tuple(float(round_half_up(macro_total(arr[:, i]))) for i in range(3))
        if totals != REFERENCE_TOTALS[model]:
            mismatches.append(f"{model} totals {totals} != {REFERENCE_TOTALS[model]}")
    for p, r, f in ((82.16, 91.16, "86.43"), (99.43, 99.51, "99.47")):
        if fmt_percent(f1_score(p, r)) != f:
            mismatches.append(f"{p}/{r} -> {fmt_percent(f1_score(p, r))}, expected {f}")
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 1.0
    detail = f"{elapsed:.3f}s; " + ("all cells exact" if not mismatches else "; ".join(mismatches))
    record_criterion(1, ok, detail)
    assert not mismatches, detail
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2: DSP correctness


def test_criterion_2_dsp(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    frames = rng.normal(size=(100, 512))
    spec = dsp.fft(frames, 512)
    fft_err = max(np.abs(spec[i] - dsp.dft_oracle(frames[i])).max() for i in range(100))

    dct_err = 0.0
    for n in (20, 40, 60, 128, 257):
        d = dsp.dct_matrix(n)
        dct_err = max(dct_err, np.abs(d @ d.T - np.eye(n)).max(), np.abs(d.T @ d - np.eye(n)).max())

    framing_bad = 0
    for _ in range(1000):
        win = int(rng.integers(1, 801))
        hop = int(rng.integers(1, 801))
        n = win + int(rng.integers(0, 5000))
        f = dsp.frame_samples(np.arange(n, dtype=np.float64), win, hop)
        expected = (n - win) // hop + 1
        if f.n_frames != expected or f.frames[-1, -1] > n - 1 or f.frames.shape != (expected, win):
            framing_bad += 1
    elapsed = time.perf_counter() - t0
    ok = fft_err < 1e-9 and dct_err < 1e-10 and framing_bad == 0 and elapsed < 10
    record_criterion(2, ok, f"fft err {fft_err:.2e}, dct residual {dct_err:.2e}, "
                            f"framing failures {framing_bad}/1000, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 3: autodiff


def _r(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def _lstm(x, wi, wh, b, wi2, wh2, b2):
    return ops.lstm_layer(x, (wi, wh, b), (wi2, wh2, b2))


def _gradcheck_cases():
    c = 3
    rm, rv = _r(c, seed=5), np.abs(_r(c, seed=6)) + 0.5
    labels = np.array([0, 3, 1, 4])
    d, h = 3, 2
    return {
        "add/mul/sub": (lambda a, b: ops.mul(ops.add(a, b), ops.sub(a, b)), [_r(3, 4), _r(4, seed=1)]),
        "relu": (ops.relu, [_r(4, 5) + 0.05 * np.sign(_r(4, 5, seed=9))]),
        "sigmoid": (ops.sigmoid, [_r(4, 5)]),
        "tanh": (ops.tanh, [_r(4, 5)]),
        "linear": (ops.linear, [_r(3, 4), _r(4, 2, seed=1), _r(2, seed=2)]),
        "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, 2, 1), [_r(2, 3, 7, 6), _r(4, 3, 3, 3, seed=1) * 0.3, _r(4, seed=2)]),
        "conv1d dilated": (lambda x, w, b: ops.conv1d_dilated(x, w, b, 3), [_r(2, 3, 12), _r(4, 3, 3, seed=1), _r(4, seed=2)]),
        "batch norm (train)": (lambda x, g, b: ops.batch_norm(x, g, b, np.zeros(c), np.ones(c), training=True),
                               [_r(2, c, 4, 3), _r(c, seed=1), _r(c, seed=2)]),
        "batch norm (eval)": (lambda x, g, b: ops.batch_norm(x, g, b, rm.copy(), rv.copy(), training=False),
                              [_r(4, c, 2), _r(c, seed=1), _r(c, seed=2)]),
        "max pool": (lambda x: ops.max_pool2d(x, 3, 2, 1), [_r(2, 2, 7, 6)]),
        "global avg pool": (ops.global_avg_pool, [_r(2, 3, 4, 5)]),
        "mfm": (ops.mfm_halve_max, [_r(2, 6, 3, 4)]),
        "bidirectional lstm": (_lstm, [_r(2, 4, d), _r(d, 4 * h, seed=1), _r(h, 4 * h, seed=2), _r(4 * h, seed=3),
                                       _r(d, 4 * h, seed=4), _r(h, 4 * h, seed=5), _r(4 * h, seed=6)]),
        "stats pool": (ops.stats_pool_mean_std, [_r(3, 4, 7)]),
        "softmax-ce": (lambda z: ops.softmax_cross_entropy(z, labels), [_r(4, 5)]),
    }


def test_criterion_3_autodiff(record_criterion, gradcheck):
    t0 = time.perf_counter()
    errors = {name: gradcheck(fn, args) for name, (fn, args) in _gradcheck_cases().items()}
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    bad = [k for k, v in errors.items() if not v < 1e-4]
    ok = not bad and elapsed < 120
    record_criterion(3, ok, f"{len(errors)} ops, worst {worst} {errors[worst]:.2e}, {elapsed:.1f}s"
                            + (f"; failing: {', '.join(bad)}" if bad else ""))
    assert ok


# ---------------------------------------------------------------- 4: architecture contracts


def test_criterion_4_architecture(record_criterion, tmp_path):
    # zeroed residual branch: every dims-preserving block reduces to the identity
    m = build_model(ModelConfig(kind="resnet"), seed=3, dtype=np.float64)
    m.eval()
    identity_ok, checked = True, 0
    for _, mod in m.named_modules():
        if isinstance(mod, BasicBlock) and not mod.projects:
            mod.conv1.weight.data[:] = 0.0
            mod.conv2.weight.data[:] = 0.0
            for bn in (mod.bn1, mod.bn2):
                bn.running_mean[:] = 0.0
                bn.running_var[:] = 1.0
            x = np.abs(np.random.default_rng(checked).normal(size=(2, mod.conv1.weight.shape[1], 9, 7)))
            with no_grad():
                identity_ok &= bool(np.array_equal(mod(Tensor(x)).data, x))
            checked += 1

    xv = build_model(ModelConfig(kind="xvector", profile="paper"))
    xv.eval()
    with no_grad():
        pooled = xv.pooled(xv.prepare(np.zeros((1, 300, 60), np.float32))).shape[1]
        emb = xv(xv.prepare(np.zeros((1, 300, 60), np.float32)))[1].shape[1]

    state = build_model(ModelConfig(kind="lcnn"), seed=1).state_dict()
    path = tmp_path / "m.fpck"
    raw = encode_checkpoint(1, {"k": "lcnn"}, state)
    path.write_bytes(raw)
    _, cfg, back = load_checkpoint(path)
    bit_exact = all(back[k].tobytes() == v.tobytes() for k, v in state.items()) and \
        encode_checkpoint(1, cfg, back) == raw

    ok = identity_ok and checked > 0 and (pooled, emb) == (1024, 512) and bit_exact
    record_criterion(4, ok, f"identity on {checked} blocks: {identity_ok}; x-vector pool/emb {pooled}/{emb}; "
                            f"checkpoint bit-exact: {bit_exact}")
    assert ok


# ---------------------------------------------------------------- 5-7: desk end-to-end


def _desk_run(out):
    cfg = ExperimentConfig(out=str(out), seed=0, profile="desk", feature="lfcc", model="resnet")
    t0 = time.perf_counter()
    res = pipeline.run_experiment(cfg, split="test")
    return cfg, res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    return _desk_run(tmp_path_factory.mktemp("desk-a") / "out")


def test_criterion_5_end_to_end(record_criterion, desk):
    cfg, res, elapsed = desk
    manifest = pipeline.load_manifest(cfg.manifest_path)
    counts = {(s, split): 0 for s in SYSTEMS for split in ("train", "dev", "test")}
    for rec in manifest.records:
        counts[(rec.system, rec.split)] += 1
    shape_ok = all(counts[(s, "train")] == 100 and counts[(s, "dev")] == 20 and counts[(s, "test")] == 20
                   for s in SYSTEMS)
    sp = {split: manifest.speakers(split) for split in ("train", "dev", "test")}
    disjoint = not (sp["train"] & sp["dev"]) and not (sp["train"] & sp["test"]) and not (sp["dev"] & sp["test"])
    disjoint &= validate_manifest(manifest).ok
    macro_f1 = res["report"].macro_f1

    t0 = time.perf_counter()
    doc = pipeline.run_matrix(cfg, split="test")
    matrix_time = time.perf_counter() - t0
    cells = doc["cells"]
    grid_ok = len(cells) == 9 and all(set(c) >= {"p", "r", "f1"} for c in cells.values())
    # the reference LFCC advantage holds in every model column, so it is checked per model
    gaps = {m: cells[f"lfcc_{m}"]["f1"] - cells[f"mfcc_{m}"]["f1"] for m in pipeline.MODEL_KINDS}
    direction_ok = all(g >= -2.0 for g in gaps.values())
    lfcc = np.mean([cells[f"lfcc_{m}"]["f1"] for m in pipeline.MODEL_KINDS])
    mfcc = np.mean([cells[f"mfcc_{m}"]["f1"] for m in pipeline.MODEL_KINDS])

    ok = shape_ok and disjoint and macro_f1 >= 0.95 and elapsed <= 1800 and grid_ok and direction_ok
    record_criterion(5, ok, f"LFCC-ResNet test macro-F1 {macro_f1:.4f} in {elapsed:.0f}s; corpus 5x100/20/20: {shape_ok}; "
                            f"speaker-disjoint: {disjoint}; grid cells {len(cells)} in {matrix_time:.0f}s; "
                            "LFCC - MFCC F1 per model " + ", ".join(f"{m} {g:+.2f}" for m, g in gaps.items())
                            + f" (need >= -2 each; model means {lfcc:.2f} vs {mfcc:.2f}); "
                            + ", ".join(f"{k} {v['f1']:.2f}" for k, v in cells.items()))
    assert ok


def test_criterion_6_visualization(record_criterion, desk, tmp_path):
    cfg, res, _ = desk
    emb_path = cfg.out_dir / "embed" / cfg.run_name() / "test" / "embeddings.csv"
    n = len(pipeline.read_embeddings(emb_path).labels)
    t0 = time.perf_counter()
    ts = pipeline.run_tsne(emb_path, tmp_path / "tsne", seed=cfg.seed, **cfg.tsne)
    elapsed = time.perf_counter() - t0
    trace = ts["projection"].kl_trace
    rise = float(np.diff(trace[300:]).max())
    sil = ts["silhouette"]
    ok = sil > 0.5 and rise <= 1e-6 and n <= 500 and elapsed < 120
    record_criterion(6, ok, f"silhouette {sil:.4f} on {n} test embeddings; max KL rise after iter 300 {rise:.2e}; "
                            f"{elapsed:.1f}s")
    assert ok


def test_criterion_7_determinism(record_criterion, desk, tmp_path):
    cfg_a, _, _ = desk
    cfg_b, _, _ = _desk_run(tmp_path / "out")
    name = cfg_a.run_name()
    rels = [
        f"eval/{name}/test/report.json",
        f"eval/{name}/test/report.txt",
        f"models/{name}/best.fpck",
        f"models/{name}/final.fpck",
        f"models/{name}/history.jsonl",
        f"embed/{name}/test/embeddings.csv",
        f"tsne/{name}/test/projection.csv",
        f"tsne/{name}/test/tsne.json",
    ]
    differ = [r for r in rels if (cfg_a.out_dir / r).read_bytes() != (cfg_b.out_dir / r).read_bytes()]
    report = json.loads((cfg_b.out_dir / rels[0]).read_text())
    ok = not differ
    record_criterion(7, ok, f"{len(rels) - len(differ)}/{len(rels)} artifacts byte-identical across reruns"
                            + (f"; differing: {', '.join(differ)}" if differ else "")
                            + f"; rerun F1 {report['total']['f1']:.2f}")
    assert ok
