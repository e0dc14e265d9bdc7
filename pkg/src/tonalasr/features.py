"""Log-mel feature extraction and spectrogram time/frequency masking.

The front end is a magnitude STFT with a periodic Hann window, an HTK-scale
mel filterbank, and a natural log with floor 1e-10.  Masking follows the
time/frequency-only recipe: per mask, a width is drawn uniformly up to the
policy maximum and a block of consecutive frames (or bins) is overwritten
with the fill value; there is no time warping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .errors import ConfigError, DataError

LOG_FLOOR = 1e-10
_FEATURE_MAGIC = b"FMX1"


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """T x F matrix of per-frame feature values plus framing metadata."""

    data: np.ndarray
    frame_shift: float = 0.010
    frame_length: float = 0.025

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError("feature matrix must be two-dimensional")
        if arr.shape[1] < 1:
            raise DataError("feature matrix needs at least one bin")
        if not np.all(np.isfinite(arr)):
            raise DataError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]


def mel_from_hz(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def hz_from_mel(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, n_mels: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft//2 + 1)."""
    n_bins = n_fft // 2 + 1
    fft_hz = np.arange(n_bins) * sample_rate / n_fft
    fft_mel = mel_from_hz(fft_hz)
    points = np.linspace(mel_from_hz(0.0), mel_from_hz(sample_rate / 2.0), n_mels + 2)
    bank = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, center, hi = points[i], points[i + 1], points[i + 2]
        rising = (fft_mel - lo) / (center - lo)
        falling = (hi - fft_mel) / (hi - center)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def log_mel(
    waveform: Waveform,
    n_fft: int = 512,
    n_mels: int = 40,
    frame_length: float = 0.025,
    frame_shift: float = 0.010,
) -> FeatureMatrix:
    """Log mel-filterbank features; T = 1 + floor((N - frame)/shift) frames."""
    sr = waveform.sample_rate
    frame_samples = round(frame_length * sr)
    shift_samples = round(frame_shift * sr)
    if frame_samples <= 0 or shift_samples <= 0:
        raise ConfigError("frame length and shift must cover at least one sample")
    if n_fft < frame_samples:
        raise ConfigError(f"n_fft {n_fft} shorter than the {frame_samples}-sample frame")
    n = len(waveform)
    if n < frame_samples:
        raise DataError(
            f"utterance of {n} samples shorter than one {frame_samples}-sample frame"
        )
    num_frames = 1 + (n - frame_samples) // shift_samples
    starts = np.arange(num_frames) * shift_samples
    frames = waveform.samples[starts[:, None] + np.arange(frame_samples)]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_samples) / frame_samples)
    spectra = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))
    bank = mel_filterbank(n_fft, n_mels, sr)
    feats = np.log(np.maximum(spectra @ bank.T, LOG_FLOOR))
    return FeatureMatrix(feats, frame_shift=frame_shift, frame_length=frame_length)


def write_features(features: FeatureMatrix, path) -> None:
    """Binary dump: 16-byte header (magic, T, F, pad) + row-major float32."""
    t, f = features.data.shape
    with open(path, "wb") as out:
        out.write(_FEATURE_MAGIC)
        out.write(struct.pack("<II4x", t, f))
        out.write(features.data.astype("<f4").tobytes())


def read_features(features_path) -> FeatureMatrix:
    with open(features_path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != _FEATURE_MAGIC:
            raise DataError(f"{features_path}: not a feature matrix file")
        t, fbins = struct.unpack("<II4x", header[4:])
        payload = f.read()
    expected = 4 * t * fbins
    if len(payload) != expected:
        raise DataError(
            f"{features_path}: payload of {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(t, fbins).astype(np.float64)
    return FeatureMatrix(data)


@dataclass(frozen=True)
class SpecAugmentPolicy:
    """Mask counts and maximum widths for time and frequency masking."""

    num_time_masks: int = 2
    max_time_width: int = 20
    num_freq_masks: int = 2
    max_freq_width: int = 4
    fill: str = "zero"  # "zero" | "mean"

    def __post_init__(self):
        if min(self.num_time_masks, self.max_time_width, self.num_freq_masks, self.max_freq_width) < 0:
            raise ConfigError("mask counts and widths must be non-negative")
        if self.fill not in ("zero", "mean"):
            raise ConfigError(f"unknown fill mode {self.fill!r}")


def spec_augment(features: FeatureMatrix, policy: SpecAugmentPolicy, rng) -> FeatureMatrix:
    """Mask random blocks of consecutive frames and bins.

    Per time mask, width ~ Uniform{0..max_time_width} and start ~
    Uniform{0..T-width}; frequency masks act on bins analogously.  Maximum
    widths are clamped to the matrix size.  Cells outside the masks are
    bit-identical to the input.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    out = features.data.copy()
    t, f = out.shape
    if policy.fill == "zero" or features.data.size == 0:
        fill_value = 0.0
    else:
        fill_value = float(features.data.mean())
    t_max = min(policy.max_time_width, t)
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, t_max + 1))
        start = int(rng.integers(0, t - width + 1))
        out[start : start + width, :] = fill_value
    f_max = min(policy.max_freq_width, f)
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, f_max + 1))
        start = int(rng.integers(0, f - width + 1))
        out[:, start : start + width] = fill_value
    return FeatureMatrix(out, frame_shift=features.frame_shift, frame_length=features.frame_length)
