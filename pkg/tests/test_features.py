import numpy as np
import pytest

from fpdetect.dsp import Waveform
from fpdetect.errors import InvalidInputError, UnsupportedFormatError
from fpdetect.features import (
    FEATURE_DIMS,
    FeatureConfig,
    FeatureKind,
    FeatureMatrix,
    cqcc,
    decode_features,
    encode_features,
    extract,
    lfcc,
    load_features,
    mfcc,
    read_cache_kind,
    save_features,
)

SR = 16000


def noise(n=SR, seed=0):
    return Waveform(np.random.default_rng(seed).normal(size=n) * 0.1)


def tone(freq, n=SR):
    return Waveform(0.5 * np.sin(2 * np.pi * freq * np.arange(n) / SR))


@pytest.mark.parametrize("fn,dim", [(lfcc, 60), (mfcc, 40), (cqcc, 60)])
def test_one_second_shapes(fn, dim):
    out = fn(noise())
    assert out.data.shape == (98, dim)
    assert out.dim == FEATURE_DIMS[out.kind]


@pytest.mark.parametrize("fn", [lfcc, mfcc, cqcc])
def test_cmvn_columns(fn):
    d = fn(noise(seed=1)).data
    assert np.abs(d.mean(axis=0)).max() < 1e-9
    assert np.abs(d.var(axis=0) - 1.0).max() < 1e-6


def test_lfcc_noise_vs_tone_differ():
    # CMVN removes per-column means, so compare unnormalised statics
    cfg = FeatureConfig(normalize=False)
    a = lfcc(noise(seed=2), cfg).data[:, :20].mean(axis=0)
    b = lfcc(tone(6000), cfg).data[:, :20].mean(axis=0)
    assert np.linalg.norm(a - b) > 0


def test_mfcc_constant_signal_finite():
    out = mfcc(Waveform(np.full(SR, 0.3)))
    assert np.all(np.isfinite(out.data))


def test_mel_vs_linear_on_tone():
    cfg = FeatureConfig(normalize=False)
    a = lfcc(tone(1500), cfg).data[:, 1:20]
    b = mfcc(tone(1500), cfg).data[:, 1:20]
    assert np.abs(a - b).max() > 1e-3


def test_lfcc_deterministic_bytes():
    w = noise(seed=3)
    assert lfcc(w).data.tobytes() == lfcc(Waveform(w.samples.copy())).data.tobytes()


def test_wrong_rate_rejected():
    with pytest.raises(InvalidInputError):
        lfcc(Waveform(np.zeros(8000), 8000))


def test_extract_dispatch():
    assert extract(noise(), "mfcc").kind == FeatureKind.MFCC
    assert FeatureKind.parse("lfcc") is FeatureKind.LFCC


def test_cache_round_trip(tmp_path):
    feat = lfcc(noise(seed=4))
    path = tmp_path / "x.fpfx"
    save_features(path, feat)
    back = load_features(path)
    assert back.kind == FeatureKind.LFCC
    np.testing.assert_array_equal(back.data, feat.data.astype(np.float32))
    assert read_cache_kind(path) == FeatureKind.LFCC
    assert path.read_bytes()[:4] == b"FPFX"


def test_cache_rejects_bad_magic_version_and_length():
    buf = encode_features(FeatureMatrix(np.zeros((2, 40), np.float32), FeatureKind.MFCC))
    with pytest.raises(UnsupportedFormatError, match="magic"):
        decode_features(b"XXXX" + buf[4:])
    with pytest.raises(UnsupportedFormatError, match="version"):
        decode_features(buf[:4] + b"\x09\x00" + buf[6:])
    with pytest.raises(UnsupportedFormatError, match="payload"):
        decode_features(buf[:-4])
    with pytest.raises(UnsupportedFormatError):
        decode_features(buf[:5])


def test_feature_matrix_dim_must_match_kind():
    with pytest.raises(InvalidInputError):
        FeatureMatrix(np.zeros((3, 59)), FeatureKind.LFCC)
