"""Signal-processing kernels: framing, FFT, filterbanks, cepstra and the CQT.

Everything here works in float64 and is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InvalidInputError, SignalTooShortError

SAMPLE_RATE = 16000
LOG_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError("waveform must be a non-empty 1-D sample buffer")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class FrameMatrix:
    frames: np.ndarray  # (n_frames, win_len)
    hop: int
    win_len: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class FilterBank:
    weights: np.ndarray  # (n_filters, n_fft // 2 + 1)
    scale: str
    edges: np.ndarray  # Hz, n_filters + 2 points; centers are edges[1:-1]

    @property
    def centers(self) -> np.ndarray:
        return self.edges[1:-1]

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class CqtSpectrogram:
    magnitudes: np.ndarray  # (n_frames, n_bins)
    bin_freqs: np.ndarray


def pre_emphasis(w: Waveform, alpha: float = 0.97) -> Waveform:
    if not 0.0 <= alpha < 1.0:
        raise InvalidInputError(f"pre-emphasis alpha must be in [0, 1), got {alpha}")
    x = w.samples
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[1:] - alpha * x[:-1]
    return Waveform(out, w.sample_rate)


def ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def n_frames_for(n_samples: int, win_len: int, hop: int) -> int:
    if n_samples < win_len:
        return 0
    return (n_samples - win_len) // hop + 1


def frame_signal(w: Waveform, win_ms: float = 25.0, hop_ms: float = 10.0) -> FrameMatrix:
    """Slice ``w`` into overlapping frames; the trailing partial frame is dropped."""
    if not (win_ms >= hop_ms > 0):
        raise ConfigError(f"need win_ms >= hop_ms > 0, got win_ms={win_ms}, hop_ms={hop_ms}")
    win_len = ms_to_samples(win_ms, w.sample_rate)
    hop = ms_to_samples(hop_ms, w.sample_rate)
    return frame_samples(w.samples, win_len, hop)


def frame_samples(x: np.ndarray, win_len: int, hop: int) -> FrameMatrix:
    if x.size < win_len:
        raise SignalTooShortError(
            f"signal has {x.size} samples, shorter than one {win_len}-sample window"
        )
    frames = sliding_window_view(x, win_len)[::hop]
    return FrameMatrix(np.ascontiguousarray(frames), hop, win_len)


def window(kind: str, length: int) -> np.ndarray:
    if length < 2:
        raise ConfigError("window length must exceed 1")
    n = np.arange(length)
    if kind == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    if kind == "hann":
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))
    if kind in ("rect", "rectangular", "boxcar"):
        return np.ones(length)
    raise ConfigError(f"unknown window kind {kind!r}")


def apply_window(f: FrameMatrix, kind: str = "hamming") -> FrameMatrix:
    return FrameMatrix(f.frames * window(kind, f.win_len), f.hop, f.win_len)


def dft_oracle(frame) -> np.ndarray:
    """O(N^2) DFT straight from the definition; reference for :func:`fft`."""
    x = np.asarray(frame, dtype=np.float64)
    n = x.size
    if n < 1:
        raise InvalidInputError("dft_oracle needs at least one sample")
    k = np.arange(n)
    # reduce k*n mod N first so the phase stays exact for large N
    phase = (np.outer(k, k) % n) * (-2.0 * np.pi / n)
    return np.exp(1j * phase) @ x


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=16)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(size: int) -> np.ndarray:
    half = size // 2
    return np.exp(-2j * np.pi * np.arange(half) / size)


def fft(frame, n_fft: int) -> np.ndarray:
    """Iterative radix-2 FFT over the last axis.

    ``frame`` may be a single frame or a stack of frames; each is zero-padded or
    truncated to ``n_fft`` samples.
    """
    if not _is_pow2(n_fft):
        raise ConfigError(f"n_fft must be a power of two, got {n_fft}")
    x = np.asarray(frame)
    lead = x.shape[:-1]
    buf = np.zeros(lead + (n_fft,), dtype=np.complex128)
    m = min(n_fft, x.shape[-1])
    buf[..., :m] = x[..., :m]
    X = buf[..., _bit_reverse(n_fft)]
    size = 2
    while size <= n_fft:
        half = size // 2
        X = X.reshape(lead + (n_fft // size, size))
        even = X[..., :half]
        odd = X[..., half:] * _twiddles(size)
        X = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return X.reshape(lead + (n_fft,))


def power_spectrum(spec) -> np.ndarray:
    spec = np.asarray(spec)
    n_fft = spec.shape[-1]
    kept = spec[..., : n_fft // 2 + 1]
    return kept.real**2 + kept.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def make_filterbank(
    scale: str,
    n_filters: int,
    n_fft: int,
    sr: int = SAMPLE_RATE,
    f_lo: float = 0.0,
    f_hi: float | None = None,
) -> FilterBank:
    """Triangular filterbank with centers equally spaced on a linear or mel axis.

    Adjacent triangles share edges. Each triangle peaks at exactly 1.0 on the FFT
    bin nearest its center frequency.
    """
    if f_hi is None:
        f_hi = sr / 2.0
    if n_filters < 1:
        raise ConfigError("n_filters must be >= 1")
    if not 0.0 <= f_lo < f_hi <= sr / 2.0:
        raise ConfigError(f"need 0 <= f_lo < f_hi <= sr/2, got f_lo={f_lo}, f_hi={f_hi}")
    if scale == "linear":
        edges = np.linspace(f_lo, f_hi, n_filters + 2)
    elif scale == "mel":
        edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_filters + 2))
    else:
        raise ConfigError(f"unknown filterbank scale {scale!r}")

    n_bins = n_fft // 2 + 1
    bins = np.rint(edges * n_fft / sr).astype(np.int64)
    if np.any(np.diff(bins) <= 0):
        raise ConfigError(
            f"{n_filters} {scale} filters are too many for a {n_fft}-point FFT: "
            "at least one triangle has no bins on one side"
        )
    weights = np.zeros((n_filters, n_bins))
    k = np.arange(n_bins)
    for m in range(n_filters):
        lo, c, hi = bins[m], bins[m + 1], bins[m + 2]
        rise = (k - lo) / (c - lo)
        fall = (hi - k) / (hi - c)
        weights[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    return FilterBank(weights, scale, edges)


@lru_cache(maxsize=32)
def _dct_cached(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row ``k`` is basis vector ``k``."""
    return _dct_cached(n).copy()


def cepstra(power_frames: np.ndarray, fb: FilterBank, n_ceps: int) -> np.ndarray:
    if n_ceps > fb.n_filters:
        raise ConfigError(f"n_ceps={n_ceps} exceeds n_filters={fb.n_filters}")
    energies = np.asarray(power_frames) @ fb.weights.T
    return log_energies_to_cepstra(np.log(energies + LOG_EPS), n_ceps)


def log_energies_to_cepstra(log_e: np.ndarray, n_ceps: int) -> np.ndarray:
    return log_e @ _dct_cached(log_e.shape[-1])[:n_ceps].T


def deltas(feat: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas along time (axis 0) with replicated edge frames."""
    if width < 1:
        raise ConfigError("delta width must be >= 1")
    feat = np.asarray(feat, dtype=np.float64)
    n = feat.shape[0]
    padded = np.concatenate([np.repeat(feat[:1], width, 0), feat, np.repeat(feat[-1:], width, 0)])
    out = np.zeros_like(feat)
    for k in range(1, width + 1):
        out += k * (padded[width + k : width + k + n] - padded[width - k : width - k + n])
    return out / (2.0 * sum(k * k for k in range(1, width + 1)))


def cmvn(feat: np.ndarray) -> np.ndarray:
    """Per-utterance mean/variance normalisation (mean only for a single frame)."""
    out = feat - feat.mean(axis=0, keepdims=True)
    if feat.shape[0] > 1:
        std = out.std(axis=0, keepdims=True)
        out = out / np.where(std > 1e-12, std, 1.0)
    return out


def resample_uniform(values: np.ndarray, positions: np.ndarray, n_out: int) -> np.ndarray:
    """Linearly interpolate samples taken at ``positions`` onto ``n_out`` evenly
    spaced points spanning the same range. Works row-wise on 2-D input."""
    positions = np.asarray(positions, dtype=np.float64)
    grid = np.linspace(positions[0], positions[-1], n_out)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return np.interp(grid, positions, values)
    # positions are shared by every row, so the interpolation weights are too
    idx = np.clip(np.searchsorted(positions, grid, side="right") - 1, 0, positions.size - 2)
    t = (grid - positions[idx]) / (positions[idx + 1] - positions[idx])
    return values[:, idx] * (1.0 - t) + values[:, idx + 1] * t


# ---------------------------------------------------------------- constant-Q


def cqt_frequencies(f_min: float, f_max: float, bins_per_octave: int) -> np.ndarray:
    n_bins = int(math.floor(bins_per_octave * math.log2(f_max / f_min) + 1e-9)) + 1
    return f_min * 2.0 ** (np.arange(n_bins) / bins_per_octave)


def cqt_quality(bins_per_octave: int) -> float:
    return 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)


@lru_cache(maxsize=8)
def _cqt_kernels(f_min, f_max, bins_per_octave, sr):
    """Complex Hann-windowed kernels, zero-padded onto one common centred support."""
    freqs = cqt_frequencies(f_min, f_max, bins_per_octave)
    q = cqt_quality(bins_per_octave)
    lengths = np.ceil(q * sr / freqs).astype(np.int64)
    support = int(lengths.max())
    if support % 2 == 0:
        support += 1
    centre = support // 2
    kern = np.zeros((support, freqs.size), dtype=np.complex128)
    for k, (f, n) in enumerate(zip(freqs, lengths)):
        t = np.arange(n) - (n - 1) / 2.0
        win = np.hanning(n) if n > 1 else np.ones(1)
        start = centre - (n - 1) // 2
        kern[start : start + n, k] = win * np.exp(2j * np.pi * f * t / sr) / win.sum()
    kern_re = np.ascontiguousarray(kern.real)
    kern_im = np.ascontiguousarray(kern.imag)
    for a in (kern, kern_re, kern_im):
        a.setflags(write=False)
    return freqs, lengths, kern, kern_re, kern_im


def cqt(
    w: Waveform,
    f_min: float = 20.0,
    f_max: float = 8000.0,
    bins_per_octave: int = 24,
    hop_ms: float = 10.0,
    win_ms: float = 25.0,
    method: str = "matrix",
) -> CqtSpectrogram:
    """Constant-Q magnitudes by direct inner products with per-bin complex kernels.

    Frame ``i`` is centred where STFT frame ``i`` (``win_ms``/``hop_ms``) is
    centred, so CQT and STFT features share a frame count. Bin ``k`` uses a
    window of ``ceil(Q*sr/f_k)`` samples with ``Q = 1/(2**(1/B)-1)``.

    ``method="matrix"`` evaluates all bins at once against a zero-padded common
    support (one BLAS product); ``method="loop"`` evaluates each bin's inner
    products on its own window and is kept as a cross-check.
    """
    sr = w.sample_rate
    if f_min < 10.0 or f_max > sr / 2.0 or f_min >= f_max:
        raise ConfigError(f"need 10 <= f_min < f_max <= sr/2, got {f_min}..{f_max}")
    freqs, lengths, kern, kern_re, kern_im = _cqt_kernels(float(f_min), float(f_max), int(bins_per_octave), sr)
    x = w.samples
    # kernels longer than the signal just see the zero padding beyond its ends
    win_len = ms_to_samples(win_ms, sr)
    hop = ms_to_samples(hop_ms, sr)
    n_frames = n_frames_for(x.size, win_len, hop)
    if n_frames < 1:
        raise SignalTooShortError(f"signal has {x.size} samples, shorter than one frame")
    centres = np.arange(n_frames) * hop + win_len // 2
    support = kern.shape[0]
    half = support // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(half)])

    if method == "matrix":
        segs = sliding_window_view(padded, support)[centres]
        # the kernel is applied as an inner product, not a convolution: conj
        out = segs @ kern_re - 1j * (segs @ kern_im)
    elif method == "loop":
        out = np.empty((n_frames, freqs.size), dtype=np.complex128)
        for k, n in enumerate(lengths):
            start = half - (n - 1) // 2
            k_vec = kern[start : start + n, k]
            for i, c in enumerate(centres):
                seg = padded[c + start : c + start + n]
                out[i, k] = np.sum(seg * np.conj(k_vec))
    else:
        raise ConfigError(f"unknown cqt method {method!r}")
    return CqtSpectrogram(np.abs(out), freqs)
