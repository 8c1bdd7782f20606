import itertools
import json
import wave
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from fpdetect import corpus
from fpdetect.corpus import (
    PROFILES,
    CorpusConfig,
    DatasetManifest,
    ManifestRecord,
    band_energy_ratio,
    generate_corpus,
    make_speaker,
    read_manifest,
    read_wav,
    synth_utterance,
    validate_manifest,
    write_wav,
)
from fpdetect.dsp import Waveform
from fpdetect.errors import ConfigError, InvalidInputError, UnsupportedFormatError


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    return generate_corpus(CorpusConfig(), 0, root), root


def test_synth_deterministic():
    spk = make_speaker("x", "female", 1)
    a = synth_utterance(PROFILES["C"], spk, 5, 2.0).samples
    b = synth_utterance(PROFILES["C"], spk, 5, 2.0).samples
    assert a.tobytes() == b.tobytes()


def test_synth_length_and_peak():
    w = synth_utterance(PROFILES["A"], 7, 0, 1.0)
    assert len(w) == 16000
    assert np.abs(w.samples).max() == pytest.approx(0.9)


@pytest.mark.parametrize("dur", [0.5, 10.5])
def test_synth_duration_bounds(dur):
    with pytest.raises(InvalidInputError):
        synth_utterance(PROFILES["A"], 1, 0, dur)


def test_rolloff_reduces_high_band():
    base = PROFILES["A"]
    spk = make_speaker("s", "male", 0)
    low = replace(base, rolloff_hz=3000.0)
    high = replace(base, rolloff_hz=7000.0)
    r_low = np.mean([band_energy_ratio(synth_utterance(low, spk, k, 2.0)) for k in range(4)])
    r_high = np.mean([band_energy_ratio(synth_utterance(high, spk, k, 2.0)) for k in range(4)])
    assert r_low < r_high
    assert r_low / r_high < 0.5


def test_profiles_distinct_on_fingerprint_axes():
    for a, b in itertools.combinations(PROFILES.values(), 2):
        assert a.rolloff_hz != b.rolloff_hz
        assert a.gap_mean_ms != b.gap_mean_ms


def test_fingerprint_separability_precondition():
    ratios = {}
    for label, p in PROFILES.items():
        ratios[label] = np.mean([
            band_energy_ratio(synth_utterance(p, make_speaker(f"s{k}", corpus.GENDERS[k % 4], k), k, 3.0))
            for k in range(4)
        ])
    for a, b in itertools.combinations(PROFILES, 2):
        ok = abs(ratios[a] - ratios[b]) >= 0.05 or abs(PROFILES[a].gap_mean_ms - PROFILES[b].gap_mean_ms) >= 30
        assert ok, (a, b)


# ---------------------------------------------------------------- WAV


def test_wav_round_trip_and_header(tmp_path):
    x = np.round(np.random.default_rng(0).uniform(-0.9, 0.9, 1234) * 32768) / 32768
    path = tmp_path / "a.wav"
    write_wav(path, Waveform(x))
    raw = path.read_bytes()
    assert len(raw) == 44 + 2 * 1234
    assert raw[:4] == b"RIFF" and raw[8:12] == b"WAVE"
    assert int.from_bytes(raw[40:44], "little") == 2 * 1234
    assert int.from_bytes(raw[4:8], "little") == len(raw) - 8
    np.testing.assert_array_equal(read_wav(path).samples, x)


def test_wav_quantisation_applied_once(tmp_path):
    w = Waveform(np.random.default_rng(1).uniform(-0.5, 0.5, 300))
    write_wav(tmp_path / "q.wav", w)
    once = read_wav(tmp_path / "q.wav")
    write_wav(tmp_path / "q2.wav", once)
    np.testing.assert_array_equal(read_wav(tmp_path / "q2.wav").samples, once.samples)
    np.testing.assert_array_equal(corpus.quantize(w).samples, once.samples)


def _write_raw(path, channels=1, width=2, rate=16000, frames=b"\x00\x00" * 20):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(frames)


@pytest.mark.parametrize(
    "kw,field",
    [
        ({"channels": 2}, "channels"),
        ({"width": 1, "frames": b"\x80" * 20}, "bits_per_sample"),
        ({"rate": 8000}, "sample_rate"),
        ({"frames": b""}, "sample_count"),
    ],
)
def test_wav_unsupported(tmp_path, kw, field):
    _write_raw(tmp_path / "bad.wav", **kw)
    with pytest.raises(UnsupportedFormatError) as info:
        read_wav(tmp_path / "bad.wav")
    assert info.value.field == field


def test_wav_not_riff(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"hello world, not a wav file at all......")
    with pytest.raises(UnsupportedFormatError):
        read_wav(tmp_path / "x.wav")


# ---------------------------------------------------------------- corpus + manifest


def test_desk_corpus_structure(desk_corpus):
    m, root = desk_corpus
    assert len(m) == 700
    counts = Counter((r.system, r.split) for r in m.records)
    for s in "ABCDE":
        assert (counts[(s, "train")], counts[(s, "dev")], counts[(s, "test")]) == (100, 20, 20)
    assert validate_manifest(m).ok
    tr, dv, te = m.speakers("train"), m.speakers("dev"), m.speakers("test")
    assert not (tr & dv) and not (tr & te) and not (dv & te)


def test_desk_corpus_gender_balance(desk_corpus):
    m, _ = desk_corpus
    for split in corpus.SPLITS:
        speakers = {(r.speaker, r.gender) for r in m.split(split)}
        per = Counter(g for _, g in speakers)
        values = [per.get(g, 0) for g in corpus.GENDERS]
        assert max(values) - min(values) <= 1, (split, values)


def test_manifest_jsonl_schema(desk_corpus):
    _, root = desk_corpus
    lines = (root / "manifest.jsonl").read_text(encoding="utf-8").splitlines()
    first = json.loads(lines[0])
    assert list(first) == ["utt_id", "path", "system", "speaker", "gender", "split"]
    assert read_manifest(root / "manifest.jsonl").records == desk_corpus[0].records


def test_corpus_deterministic(tmp_path):
    cfg = CorpusConfig(utterances={"train": 2, "dev": 1, "test": 1}, speakers={"train": 1, "dev": 1, "test": 1},
                       duration_s=(1.0, 2.0))
    generate_corpus(cfg, 3, tmp_path / "a")
    generate_corpus(cfg, 3, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 21
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_infeasible_counts_write_nothing(tmp_path):
    cfg = CorpusConfig(utterances={"train": 1, "dev": 1, "test": 1}, speakers={"train": 3, "dev": 1, "test": 1})
    with pytest.raises(ConfigError):
        generate_corpus(cfg, 0, tmp_path / "out")
    assert not (tmp_path / "out").exists()


def _manifest(tmp_path, records):
    for r in records:
        p = tmp_path / r.path
        p.parent.mkdir(parents=True, exist_ok=True)
        p.touch()
    return DatasetManifest(list(records), tmp_path)


def test_validator_shared_speaker(tmp_path):
    m = _manifest(tmp_path, [
        ManifestRecord("u1", "u1.wav", "A", "spk7", "male", "train"),
        ManifestRecord("u2", "u2.wav", "A", "spk7", "male", "test"),
    ])
    report = validate_manifest(m)
    assert len(report.violations) == 1
    assert "spk7" in report.violations[0]


def test_validator_duplicate_id(tmp_path):
    m = _manifest(tmp_path, [
        ManifestRecord("u1", "u1.wav", "A", "s", "male", "train"),
        ManifestRecord("u1", "u1.wav", "A", "s", "male", "train"),
    ])
    assert len(validate_manifest(m).violations) == 1


def test_validator_missing_file(tmp_path):
    m = DatasetManifest([ManifestRecord("u1", "wav/u1.wav", "A", "s", "male", "train")], tmp_path)
    v = validate_manifest(m).violations
    assert len(v) == 1 and "wav/u1.wav" in v[0]


def test_validator_label_domain(tmp_path):
    m = _manifest(tmp_path, [ManifestRecord("u1", "u1.wav", "F", "s", "male", "train")])
    assert len(validate_manifest(m).violations) == 1
