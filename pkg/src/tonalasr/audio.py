"""Waveform type, PCM WAV I/O, speed perturbation and SNR-targeted mixing.

Speed perturbation resamples with a Kaiser-windowed sinc kernel so the output
plays ``factor`` times faster at the unchanged sample rate.  Noise mixing
loops the noise clip circularly from a seeded random offset and scales it so
the full-utterance SNR of the mix matches the request exactly (before any
clip-protection normalization).
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError

SPEED_FACTOR_MIN = 0.5
SPEED_FACTOR_MAX = 2.0

# Half-width of the sinc kernel in output-rate samples; widened by 1/cutoff
# when low-passing for time compression.
_KERNEL_HALF_WIDTH = 32
_KAISER_BETA = 8.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono sample sequence in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError("waveform samples must be one-dimensional")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono little-endian WAV file."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise DataError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise DataError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def write_wav(waveform: Waveform, path) -> None:
    ints = np.clip(np.rint(waveform.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(ints.tobytes())


def _kaiser_sinc(t: np.ndarray, cutoff: float, half_width: float) -> np.ndarray:
    """Windowed-sinc kernel value at continuous offsets ``t`` (input samples)."""
    inside = np.abs(t) <= half_width
    x = np.where(inside, t / half_width, 1.0)
    window = np.i0(_KAISER_BETA * np.sqrt(np.maximum(0.0, 1.0 - x * x))) / np.i0(_KAISER_BETA)
    return np.where(inside, cutoff * np.sinc(cutoff * t) * window, 0.0)


def _sinc_resample(samples: np.ndarray, step: float, n_out: int) -> np.ndarray:
    """Evaluate the band-limited signal at times 0, step, 2*step, ...

    For step > 1 (time compression) the kernel cutoff drops to 1/step to keep
    the result alias-free.  Per-sample kernel normalization fixes the DC gain,
    including near the signal edges.
    """
    cutoff = min(1.0, 1.0 / step)
    half_width = math.ceil(_KERNEL_HALF_WIDTH / cutoff)
    times = np.arange(n_out, dtype=np.float64) * step
    base = np.floor(times).astype(np.int64)
    acc = np.zeros(n_out)
    norm = np.zeros(n_out)
    n = samples.size
    for k in range(-half_width, half_width + 1):
        j = base + k
        valid = (j >= 0) & (j < n)
        weights = _kaiser_sinc(times - j, cutoff, half_width)
        acc += weights * np.where(valid, samples[np.clip(j, 0, n - 1)], 0.0)
        norm += np.where(valid, weights, 0.0)
    return acc / np.maximum(norm, 1e-12)


def speed_perturb(waveform: Waveform, factor: float) -> Waveform:
    """Play the utterance ``factor`` times faster; sample rate is unchanged.

    Output length is round(N / factor); frequencies scale by ``factor``.
    ``factor=1.0`` returns the samples bit-identically.
    """
    if not SPEED_FACTOR_MIN <= factor <= SPEED_FACTOR_MAX:
        raise ConfigError(
            f"speed factor {factor} outside [{SPEED_FACTOR_MIN}, {SPEED_FACTOR_MAX}]"
        )
    if len(waveform) == 0:
        raise DataError("cannot speed-perturb an empty waveform")
    if factor == 1.0:
        return Waveform(waveform.samples.copy(), waveform.sample_rate)
    n_out = round(len(waveform) / factor)
    out = _sinc_resample(waveform.samples, factor, n_out)
    return Waveform(np.clip(out, -1.0, 1.0), waveform.sample_rate)


def resample(waveform: Waveform, new_rate: int) -> Waveform:
    """Convert to a different sample rate with the same sinc kernel."""
    if new_rate <= 0:
        raise ConfigError(f"target sample rate must be positive, got {new_rate}")
    if new_rate == waveform.sample_rate:
        return waveform
    if len(waveform) == 0:
        raise DataError("cannot resample an empty waveform")
    step = waveform.sample_rate / new_rate
    n_out = round(len(waveform) / step)
    out = _sinc_resample(waveform.samples, step, max(n_out, 1))
    return Waveform(np.clip(out, -1.0, 1.0), new_rate)


@dataclass(frozen=True)
class MixResult:
    """Outcome of one noise injection.

    ``noise_gain`` is the amplitude factor applied to the looped noise;
    ``noise_offset`` the circular start index into the clip; ``peak_scale``
    the factor (<= 1) applied to the whole mix to avoid clipping, 1.0 when no
    clipping would have occurred.
    """

    mixture: Waveform
    noise_gain: float
    noise_offset: int
    peak_scale: float


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float, rng) -> MixResult:
    """Add noise at an exact full-utterance SNR (in dB).

    The noise clip is looped/trimmed to the speech length starting at a
    random circular offset drawn from ``rng``.  The segment actually added is
    scaled so rms(speech)/rms(scaled segment) matches ``snr_db``; the mix is
    then peak-normalized only if it would clip.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    if speech.sample_rate != noise.sample_rate:
        raise DataError(
            f"sample rate mismatch: speech {speech.sample_rate} Hz vs noise {noise.sample_rate} Hz"
        )
    if len(speech) == 0 or len(noise) == 0:
        raise DataError("mix_at_snr requires non-empty speech and noise")
    speech_rms = speech.rms()
    if speech_rms == 0.0:
        raise NumericalError("mix_at_snr: speech has zero RMS")
    offset = int(rng.integers(0, len(noise)))
    idx = (offset + np.arange(len(speech))) % len(noise)
    segment = noise.samples[idx]
    segment_rms = float(np.sqrt(np.mean(segment**2)))
    if segment_rms == 0.0:
        raise NumericalError("mix_at_snr: noise segment has zero RMS")
    gain = speech_rms / (segment_rms * 10.0 ** (snr_db / 20.0))
    mix = speech.samples + gain * segment
    peak = float(np.max(np.abs(mix))) if mix.size else 0.0
    peak_scale = 1.0 / peak if peak > 1.0 else 1.0
    return MixResult(
        mixture=Waveform(mix * peak_scale, speech.sample_rate),
        noise_gain=gain,
        noise_offset=offset,
        peak_scale=peak_scale,
    )


@dataclass(frozen=True)
class NoisePool:
    """Noise clips with category tags, all at one sample rate."""

    clips: tuple[Waveform, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if not self.clips:
            raise DataError("noise pool is empty")
        if len(self.clips) != len(self.tags):
            raise DataError("noise pool clips and tags differ in length")
        rates = {c.sample_rate for c in self.clips}
        if len(rates) != 1:
            raise DataError(f"noise pool mixes sample rates: {sorted(rates)}")
        if any(len(c) == 0 for c in self.clips):
            raise DataError("noise pool contains an empty clip")

    @property
    def sample_rate(self) -> int:
        return self.clips[0].sample_rate

    @classmethod
    def from_dir(cls, path, target_rate: int) -> "NoisePool":
        """Load every .wav under ``path`` (sorted by name), resampling to
        ``target_rate``; the clip's tag is its file stem."""
        files = sorted(Path(path).glob("*.wav"))
        if not files:
            raise DataError(f"no .wav files found under {path}")
        clips = []
        tags = []
        for f in files:
            clips.append(resample(read_wav(f), target_rate))
            tags.append(f.stem)
        return cls(tuple(clips), tuple(tags))
