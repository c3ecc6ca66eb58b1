"""Acoustic front end: WAV ingestion, LFCC extraction, feature files.

Feature matrices are stored row-major as (frames, dims) in a small binary
container (all integers little-endian):

    magic    4 bytes   b"LGPF"
    version  u16       currently 1
    rows     u32       frame count T
    cols     u32       feature dim D
    data     rows*cols f32

Precomputed features from other extractors (e.g. constant-Q cepstra) enter
the pipeline through this container; only LFCC is computed here.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

FEATURE_MAGIC = b"LGPF"
FEATURE_VERSION = 1

_LOG_FLOOR = 1e-20


@dataclass
class Waveform:
    samples: np.ndarray           # float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise FormatError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise FormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        raw = fh.readframes(fh.getnframes())
        rate = fh.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


@dataclass
class LfccConfig:
    """Linear-frequency cepstral extraction settings.

    Defaults follow the common anti-spoofing baseline convention: 20 ms
    Hamming windows with 10 ms hop, a 512-point FFT, 20 triangular filters
    on a linear frequency axis, 20 cepstra, and appended delta and
    delta-delta streams (60 dims total).
    """

    window_ms: float = 20.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_filters: int = 20
    n_coeffs: int = 20
    include_deltas: bool = True
    delta_window: int = 2

    def __post_init__(self):
        if self.hop_ms > self.window_ms:
            raise ValueError("hop must not exceed the window length")
        if self.n_coeffs > self.n_filters:
            raise ValueError("coefficient count must not exceed filter count")
        if self.delta_window < 1:
            raise ValueError("delta window must be >= 1")


def linear_filterbank(n_filters: int, n_fft: int, sample_rate: float) -> np.ndarray:
    """Triangular filters with linearly spaced edges; shape (n_filters, n_fft//2 + 1).

    Edges run from 0 to Nyquist; consecutive triangles share edges and
    peak at 1, so interior frequency bins see filter weights summing to
    roughly 1 (partition of unity inside the passband).
    """
    n_bins = n_fft // 2 + 1
    edges_hz = np.linspace(0.0, sample_rate / 2.0, n_filters + 2)
    bin_hz = np.linspace(0.0, sample_rate / 2.0, n_bins)
    fbank = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fbank[i] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return fbank


def _dct2_orthonormal(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * t + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def _deltas(feats: np.ndarray, window: int) -> np.ndarray:
    """Regression deltas over +/- window frames, edges replicated."""
    t = feats.shape[0]
    padded = np.concatenate(
        [np.repeat(feats[:1], window, axis=0), feats, np.repeat(feats[-1:], window, axis=0)]
    )
    denom = 2.0 * sum(w * w for w in range(1, window + 1))
    out = np.zeros_like(feats)
    for w in range(1, window + 1):
        out += w * (padded[window + w : window + w + t] - padded[window - w : window - w + t])
    return out / denom


def extract_lfcc(wav: Waveform, cfg: LfccConfig | None = None) -> np.ndarray:
    """LFCC feature matrix (T, D); D = n_coeffs, or 3x that with deltas.

    Pipeline: Hamming-windowed power spectrum -> linear triangular
    filterbank -> log -> orthonormal DCT-II -> first ``n_coeffs`` terms,
    with optional delta and delta-delta streams appended.
    """
    cfg = cfg or LfccConfig()
    win = int(round(cfg.window_ms * wav.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * wav.sample_rate / 1000.0))
    if win < 1 or hop < 1:
        raise ValueError("window/hop too short for this sample rate")
    if cfg.n_fft < win:
        raise ValueError(f"FFT size {cfg.n_fft} shorter than the {win}-sample window")
    n = wav.samples.shape[0]
    if n < win:
        raise ValueError(f"waveform has {n} samples, needs at least one {win}-sample window")

    n_frames = 1 + (n - win) // hop
    window = np.hamming(win)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wav.samples[idx] * window[None, :]
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2

    fbank = linear_filterbank(cfg.n_filters, cfg.n_fft, wav.sample_rate)
    energies = np.log(np.maximum(spectrum @ fbank.T, _LOG_FLOOR))
    dct = _dct2_orthonormal(cfg.n_filters)[: cfg.n_coeffs]
    ceps = energies @ dct.T

    if not cfg.include_deltas:
        return ceps
    d1 = _deltas(ceps, cfg.delta_window)
    d2 = _deltas(d1, cfg.delta_window)
    return np.concatenate([ceps, d1, d2], axis=1)


def fix_length(feats: np.ndarray, target_t: int) -> np.ndarray:
    """Condition an utterance to exactly ``target_t`` frames.

    Longer inputs keep their first ``target_t`` frames; shorter ones are
    tiled cyclically and cut.  Every output frame is a copy of some input
    frame.
    """
    feats = np.asarray(feats)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("features must be a non-empty (T, D) matrix")
    if target_t < 1:
        raise ValueError("target length must be >= 1")
    t = feats.shape[0]
    if t >= target_t:
        return feats[:target_t].copy()
    reps = -(-target_t // t)
    return np.tile(feats, (reps, 1))[:target_t]


def store_features(path, feats: np.ndarray) -> None:
    """Write a feature matrix to the LGPF container (values stored as f32)."""
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise ValueError("features must be a (T, D) matrix")
    rows, cols = feats.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HII", FEATURE_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())


def load_features(path) -> np.ndarray:
    """Read a feature matrix back; bit-exact for float32 data."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 14:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic bytes", offset=0)
    version, rows, cols = struct.unpack("<HII", data[4:14])
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    expected = 14 + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {rows}x{cols} values, got {len(data)}",
            offset=min(len(data), expected),
        )
    return np.frombuffer(data, dtype="<f4", offset=14).reshape(rows, cols).copy()
