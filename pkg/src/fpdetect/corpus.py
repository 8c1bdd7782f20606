"""Synthetic five-system corpus, WAV I/O and dataset manifests.

Each "system" is a source-filter synthesiser with its own artefacts: a
high-frequency rolloff, a noise floor, pause statistics, formant bandwidths
and pitch jitter. Speakers are never shared between splits.
"""

from __future__ import annotations

import json
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import SAMPLE_RATE, Waveform
from .errors import ConfigError, InvalidInputError, UnsupportedFormatError

SPLITS = ("train", "dev", "test")
GENDERS = ("male", "female", "child_male", "child_female")
PITCH_RANGES = {
    "male": (100.0, 140.0),
    "female": (180.0, 240.0),
    "child_male": (250.0, 320.0),
    "child_female": (250.0, 320.0),
}
# (F1, F2, F3) in Hz for an adult male; scaled per speaker
VOWELS = (
    (730, 1090, 2440),
    (270, 2290, 3010),
    (530, 1840, 2480),
    (570, 840, 2410),
    (300, 870, 2240),
    (660, 1720, 2410),
    (490, 1350, 1690),
)


# ---------------------------------------------------------------- WAV I/O


def write_wav(path, w: Waveform):
    """PCM16 mono at the waveform's rate; samples are clipped to [-1, 1) and
    quantised to k/32768."""
    if w.sample_rate != SAMPLE_RATE:
        raise UnsupportedFormatError("sample_rate", w.sample_rate, SAMPLE_RATE)
    pcm = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    try:
        fh = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise UnsupportedFormatError("format", str(exc), "PCM RIFF/WAVE") from None
    with fh:
        if fh.getnchannels() != 1:
            raise UnsupportedFormatError("channels", fh.getnchannels(), 1)
        if fh.getsampwidth() != 2:
            raise UnsupportedFormatError("bits_per_sample", 8 * fh.getsampwidth(), 16)
        if fh.getframerate() != SAMPLE_RATE:
            raise UnsupportedFormatError("sample_rate", fh.getframerate(), SAMPLE_RATE)
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise UnsupportedFormatError("sample_count", 0, "> 0")
    return Waveform(pcm.astype(np.float64) / 32768.0, SAMPLE_RATE)


def quantize(w: Waveform) -> Waveform:
    """The waveform exactly as it will read back from a PCM16 file."""
    pcm = np.clip(np.rint(w.samples * 32768.0), -32768, 32767)
    return Waveform(pcm / 32768.0, w.sample_rate)


# ---------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SystemProfile:
    label: str
    rolloff_hz: float
    rolloff_db_per_octave: float
    noise_floor_db: float
    gap_mean_ms: float
    gap_std_ms: float
    jitter: float  # relative period perturbation
    pitch_scale: float = 1.0
    bandwidths: tuple = (80.0, 100.0, 140.0)
    breathiness: float = 0.02
    fricative_level: float = 0.3


PROFILES = {
    p.label: p
    for p in (
        SystemProfile("A", 7800.0, 24.0, -75.0, 120.0, 30.0, 0.010, 1.00, (70.0, 90.0, 120.0), 0.02, 0.35),
        SystemProfile("B", 3000.0, 36.0, -65.0, 200.0, 40.0, 0.020, 0.95, (90.0, 110.0, 150.0), 0.03, 0.30),
        SystemProfile("C", 6000.0, 24.0, -55.0, 60.0, 15.0, 0.005, 1.05, (120.0, 160.0, 200.0), 0.01, 0.40),
        SystemProfile("D", 5000.0, 18.0, -45.0, 300.0, 60.0, 0.015, 1.00, (80.0, 100.0, 140.0), 0.05, 0.30),
        SystemProfile("E", 6500.0, 12.0, -50.0, 160.0, 35.0, 0.030, 1.10, (50.0, 60.0, 80.0), 0.02, 0.25),
    )
}


@dataclass(frozen=True)
class Speaker:
    speaker_id: str
    gender: str
    pitch_hz: float
    formant_scale: float


def make_speaker(speaker_id: str, gender: str, seed: int) -> Speaker:
    if gender not in PITCH_RANGES:
        raise InvalidInputError(f"unknown gender {gender!r}")
    rng = np.random.default_rng(seed)
    lo, hi = PITCH_RANGES[gender]
    scale_lo, scale_hi = (0.95, 1.05) if gender == "male" else (1.1, 1.2) if gender == "female" else (1.2, 1.35)
    return Speaker(speaker_id, gender, float(rng.uniform(lo, hi)), float(rng.uniform(scale_lo, scale_hi)))


def _resonator(x, freq, bw, sr):
    """Two-pole resonator with unity gain at DC."""
    r = np.exp(-np.pi * bw / sr)
    theta = 2.0 * np.pi * freq / sr
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return signal.lfilter([sum(a)], a, x)


def _word(rng, profile: SystemProfile, speaker: Speaker, n: int, sr: int):
    t = np.arange(n) / sr
    base = speaker.pitch_hz * profile.pitch_scale * rng.uniform(0.9, 1.1)
    contour = base * (1.0 + 0.06 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi)))
    # per-sample period noise, smoothed so jitter acts cycle-to-cycle
    wobble = signal.lfilter([0.02], [1.0, -0.98], rng.normal(0.0, profile.jitter * 7.0, n))
    phase = np.cumsum(contour * (1.0 + wobble) / sr)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    glottal = signal.lfilter([1.0], [1.0, -1.9, 0.9025], pulses)  # ~-12 dB/oct source tilt
    glottal = glottal / (np.abs(glottal).max() + 1e-12)
    source = glottal + profile.breathiness * rng.normal(size=n)
    vowel = VOWELS[rng.integers(len(VOWELS))]
    out = source
    for f, bw in zip(vowel, profile.bandwidths):
        f = min(f * speaker.formant_scale * rng.uniform(0.92, 1.08), 0.45 * sr)
        out = _resonator(out, f, bw, sr)
    out = out / (np.abs(out).max() + 1e-12)
    # fricative burst at word onset: high-passed noise
    fric_len = min(n, int(sr * rng.uniform(0.03, 0.08)))
    sos = signal.butter(4, rng.uniform(3000.0, 4500.0), "highpass", fs=sr, output="sos")
    fric = signal.sosfilt(sos, rng.normal(size=fric_len)) * profile.fricative_level
    out[:fric_len] += fric
    ramp = min(n // 2, int(0.01 * sr))
    env = np.ones(n)
    if ramp > 0:
        fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = fade
        env[n - ramp :] = fade[::-1]
    return out * env


def synth_utterance(profile: SystemProfile, speaker, utt_seed: int, duration_s: float,
                    sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Render one utterance of exactly ``round(duration_s * sample_rate)`` samples.

    ``speaker`` is a :class:`Speaker` or an integer seed (a female speaker is
    derived from it).
    """
    if not 1.0 <= duration_s <= 10.0:
        raise InvalidInputError(f"duration must be within [1, 10] s, got {duration_s}")
    if isinstance(speaker, (int, np.integer)):
        speaker = make_speaker(f"spk{int(speaker)}", "female", int(speaker))
    sr = sample_rate
    n = int(round(duration_s * sr))
    seed_words = [ord(c) for c in speaker.speaker_id] + [ord(profile.label), int(utt_seed)]
    rng = np.random.default_rng(np.random.SeedSequence(seed_words))
    speech = np.zeros(n)
    pos = int(sr * rng.uniform(0.03, 0.12))
    while pos < n:
        word_len = min(int(sr * rng.uniform(0.15, 0.45)), n - pos)
        if word_len >= int(0.02 * sr):
            speech[pos : pos + word_len] = _word(rng, profile, speaker, word_len, sr)
        pos += word_len
        gap_ms = max(20.0, rng.normal(profile.gap_mean_ms, profile.gap_std_ms))
        pos += int(sr * gap_ms / 1000.0)
    order = max(1, int(round(profile.rolloff_db_per_octave / 6.0)))
    sos = signal.butter(order, profile.rolloff_hz, "lowpass", fs=sr, output="sos")
    speech = signal.sosfilt(sos, speech)
    speech = speech / (np.abs(speech).max() + 1e-12)
    speech += 10.0 ** (profile.noise_floor_db / 20.0) * rng.normal(size=n)
    speech *= 0.9 / np.abs(speech).max()
    return Waveform(speech, sr)


def band_energy_ratio(w: Waveform, split_hz: float = 4000.0) -> float:
    """Share of spectral energy above ``split_hz``."""
    spec = np.abs(np.fft.rfft(w.samples)) ** 2
    freqs = np.fft.rfftfreq(w.samples.size, 1.0 / w.sample_rate)
    return float(spec[freqs > split_hz].sum() / spec.sum())


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    path: str
    system: str
    speaker: str
    gender: str
    split: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


@dataclass
class DatasetManifest:
    records: list
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def speakers(self, split: str) -> set:
        return {r.speaker for r in self.records if r.split == split}

    def resolve(self, rec: ManifestRecord) -> Path:
        return Path(self.root) / rec.path


def write_manifest(path, manifest: DatasetManifest):
    Path(path).write_text("".join(r.to_json() + "\n" for r in manifest.records), encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(ManifestRecord(**json.loads(line)))
        except (TypeError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"{path}:{lineno}: bad manifest record ({exc})") from None
    return DatasetManifest(records, path.parent)


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_manifest(m: DatasetManifest, check_files: bool = True) -> ValidationReport:
    out = []
    seen = set()
    for r in m.records:
        if r.utt_id in seen:
            out.append(f"duplicate utt_id {r.utt_id}")
        seen.add(r.utt_id)
        if r.system not in PROFILES:
            out.append(f"{r.utt_id}: unknown system label {r.system!r}")
        if r.split not in SPLITS:
            out.append(f"{r.utt_id}: unknown split {r.split!r}")
        if r.gender not in GENDERS:
            out.append(f"{r.utt_id}: unknown gender {r.gender!r}")
        if check_files and not m.resolve(r).is_file():
            out.append(f"{r.utt_id}: missing file {r.path}")
    splits_of = {}
    for r in m.records:
        splits_of.setdefault(r.speaker, set()).add(r.split)
    for spk in sorted(splits_of):
        if len(splits_of[spk]) > 1:
            out.append(f"speaker {spk} appears in splits {sorted(splits_of[spk])}")
    return ValidationReport(out)


# ---------------------------------------------------------------- generation


@dataclass(frozen=True)
class CorpusConfig:
    systems: tuple = ("A", "B", "C", "D", "E")
    utterances: dict = field(default_factory=lambda: {"train": 100, "dev": 20, "test": 20})
    speakers: dict = field(default_factory=lambda: {"train": 4, "dev": 2, "test": 2})
    duration_s: tuple = (3.0, 3.0)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        if "systems" in d:
            d["systems"] = tuple(d["systems"])
        if "duration_s" in d:
            dur = d["duration_s"]
            d["duration_s"] = (float(dur), float(dur)) if np.isscalar(dur) else tuple(map(float, dur))
        return cls(**d)

    def to_dict(self):
        return {
            "systems": list(self.systems),
            "utterances": dict(self.utterances),
            "speakers": dict(self.speakers),
            "duration_s": list(self.duration_s),
        }

    def check(self):
        for s in self.systems:
            if s not in PROFILES:
                raise ConfigError(f"no synthesis profile for system {s!r}")
        for split in SPLITS:
            n_utt = self.utterances.get(split, 0)
            n_spk = self.speakers.get(split, 0)
            if n_utt < 1 or n_spk < 1:
                raise ConfigError(f"split {split}: need >= 1 utterance and speaker per system")
            if n_spk > n_utt:
                raise ConfigError(
                    f"split {split}: {n_spk} speakers cannot each get an utterance out of {n_utt}"
                )
        lo, hi = self.duration_s
        if not 1.0 <= lo <= hi <= 10.0:
            raise ConfigError(f"duration range must lie in [1, 10] s, got {self.duration_s}")


def _seed(*words) -> int:
    return int(np.random.SeedSequence(list(words)).generate_state(1)[0])


def plan_corpus(cfg: CorpusConfig, master_seed: int):
    """Yield ``(record, speaker, utt_seed, duration)`` for every utterance, without audio."""
    cfg.check()
    for sp_i, split in enumerate(SPLITS):
        for sys_i, system in enumerate(cfg.systems):
            n_spk = cfg.speakers[split]
            speakers = []
            for j in range(n_spk):
                gender = GENDERS[(j + sys_i + sp_i) % len(GENDERS)]
                spk_id = f"{system}-{split}-spk{j:02d}"
                speakers.append(make_speaker(spk_id, gender, _seed(master_seed, 1, sys_i, sp_i, j)))
            for k in range(cfg.utterances[split]):
                spk = speakers[k % n_spk]
                utt_seed = _seed(master_seed, 2, sys_i, sp_i, k)
                lo, hi = cfg.duration_s
                dur = lo if lo == hi else float(np.random.default_rng(utt_seed).uniform(lo, hi))
                dur = round(dur, 2)
                utt_id = f"{system}_{split}_{k:05d}"
                rec = ManifestRecord(utt_id, f"wav/{split}/{system}/{utt_id}.wav", system,
                                     spk.speaker_id, spk.gender, split)
                yield rec, spk, utt_seed, dur


def generate_corpus(cfg: CorpusConfig, master_seed: int, out_dir) -> DatasetManifest:
    """Render every utterance to ``out_dir`` and write ``manifest.jsonl`` there."""
    cfg.check()
    out_dir = Path(out_dir)
    plan = list(plan_corpus(cfg, master_seed))
    records = []
    for rec, spk, utt_seed, dur in plan:
        path = out_dir / rec.path
        path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(path, synth_utterance(PROFILES[rec.system], spk, utt_seed, dur))
        records.append(rec)
    manifest = DatasetManifest(records, out_dir)
    write_manifest(out_dir / "manifest.jsonl", manifest)
    return manifest
