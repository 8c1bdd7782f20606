"""LFCC / MFCC / CQCC extraction and the binary feature cache."""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import dsp
from .dsp import Waveform
from .errors import ConfigError, InvalidInputError, UnsupportedFormatError


class FeatureKind(IntEnum):
    LFCC = 0
    MFCC = 1
    CQCC = 2

    @classmethod
    def parse(cls, value) -> "FeatureKind":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown feature kind {value!r}; expected lfcc, mfcc or cqcc") from None


FEATURE_DIMS = {FeatureKind.LFCC: 60, FeatureKind.MFCC: 40, FeatureKind.CQCC: 60}


@dataclass(frozen=True)
class FeatureConfig:
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_filters: int = 20
    n_ceps: int = 20
    pre_emphasis: float = 0.97
    window: str = "hamming"
    delta_width: int = 2
    normalize: bool = True
    # constant-Q front end
    cqt_f_min: float = 20.0
    cqt_f_max: float = 8000.0
    cqt_bins_per_octave: int = 24
    cqt_uniform_points: int = 128

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    data: np.ndarray  # (n_frames, dim)
    kind: FeatureKind

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidInputError("feature matrix must be 2-D (frames x dim)")
        if data.shape[1] != FEATURE_DIMS[self.kind]:
            raise InvalidInputError(
                f"{self.kind.name} features must be {FEATURE_DIMS[self.kind]}-dim, got {data.shape[1]}"
            )
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("feature matrix has non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def _power_frames(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    w = dsp.pre_emphasis(w, cfg.pre_emphasis)
    frames = dsp.apply_window(dsp.frame_signal(w, cfg.win_ms, cfg.hop_ms), cfg.window)
    return dsp.power_spectrum(dsp.fft(frames.frames, cfg.n_fft))


def _stack_dynamics(static: np.ndarray, order: int, cfg: FeatureConfig) -> np.ndarray:
    parts = [static]
    for _ in range(order):
        parts.append(dsp.deltas(parts[-1], cfg.delta_width))
    out = np.concatenate(parts, axis=1)
    return dsp.cmvn(out) if cfg.normalize else out


def _check_rate(w: Waveform):
    if w.sample_rate != dsp.SAMPLE_RATE:
        raise InvalidInputError(f"expected {dsp.SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz")


def lfcc(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """20 linear-filterbank cepstra (c0 kept) plus deltas and delta-deltas."""
    _check_rate(w)
    fb = dsp.make_filterbank("linear", cfg.n_filters, cfg.n_fft, w.sample_rate)
    static = dsp.cepstra(_power_frames(w, cfg), fb, cfg.n_ceps)
    return FeatureMatrix(_stack_dynamics(static, 2, cfg), FeatureKind.LFCC)


def mfcc(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """20 mel-filterbank cepstra plus deltas (40 dims)."""
    _check_rate(w)
    fb = dsp.make_filterbank("mel", cfg.n_filters, cfg.n_fft, w.sample_rate)
    static = dsp.cepstra(_power_frames(w, cfg), fb, cfg.n_ceps)
    return FeatureMatrix(_stack_dynamics(static, 1, cfg), FeatureKind.MFCC)


def cqcc(w: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    _check_rate(w)
    spec = dsp.cqt(
        w,
        f_min=cfg.cqt_f_min,
        f_max=cfg.cqt_f_max,
        bins_per_octave=cfg.cqt_bins_per_octave,
        hop_ms=cfg.hop_ms,
        win_ms=cfg.win_ms,
    )
    log_power = np.log(spec.magnitudes**2 + dsp.LOG_EPS)
    uniform = dsp.resample_uniform(log_power, spec.bin_freqs, cfg.cqt_uniform_points)
    static = dsp.log_energies_to_cepstra(uniform, cfg.n_ceps)
    return FeatureMatrix(_stack_dynamics(static, 2, cfg), FeatureKind.CQCC)


EXTRACTORS = {FeatureKind.LFCC: lfcc, FeatureKind.MFCC: mfcc, FeatureKind.CQCC: cqcc}


def extract(w: Waveform, kind, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    return EXTRACTORS[FeatureKind.parse(kind)](w, cfg)


# ------------------------------------------------------------------ cache I/O

CACHE_MAGIC = b"FPFX"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHBII")


def encode_features(feat: FeatureMatrix) -> bytes:
    n, d = feat.data.shape
    body = np.ascontiguousarray(feat.data, dtype="<f4").tobytes()
    return _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, int(feat.kind), n, d) + body


def decode_features(buf: bytes) -> FeatureMatrix:
    if len(buf) < _HEADER.size:
        raise UnsupportedFormatError("header length", len(buf), f">= {_HEADER.size} bytes")
    magic, version, kind, n, d = _HEADER.unpack_from(buf)
    if magic != CACHE_MAGIC:
        raise UnsupportedFormatError("magic", magic, CACHE_MAGIC)
    if version != CACHE_VERSION:
        raise UnsupportedFormatError("version", version, CACHE_VERSION)
    try:
        kind = FeatureKind(kind)
    except ValueError:
        raise UnsupportedFormatError("kind", kind, [int(k) for k in FeatureKind]) from None
    expected = _HEADER.size + 4 * n * d
    if len(buf) != expected:
        raise UnsupportedFormatError("payload length", len(buf), expected)
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    return FeatureMatrix(data.astype(np.float32), kind)


def save_features(path, feat: FeatureMatrix):
    Path(path).write_bytes(encode_features(feat))


def load_features(path) -> FeatureMatrix:
    return decode_features(Path(path).read_bytes())


def read_cache_kind(path) -> FeatureKind:
    """Read only the header of a cache file and return its feature kind."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise UnsupportedFormatError("header length", len(head), f">= {_HEADER.size} bytes")
    magic, version, kind, _, _ = _HEADER.unpack(head)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise UnsupportedFormatError("header", (magic, version), (CACHE_MAGIC, CACHE_VERSION))
    return FeatureKind(kind)
