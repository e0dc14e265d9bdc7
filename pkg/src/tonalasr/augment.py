"""Label-preserving 6-fold dataset augmentation.

Each utterance yields one copy per speed factor (default 0.9/1.0/1.1) plus a
noise-injected version of each, so the output manifest is exactly six times
the input.  Noise clip, SNR and loop offset are drawn from a per-utterance
RNG stream derived from (seed, utterance id), which makes the rendered audio
byte-identical regardless of processing order or worker count.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .audio import NoisePool, Waveform, mix_at_snr, read_wav, speed_perturb, write_wav
from .corpus import Manifest, ManifestRecord
from .errors import ConfigError

DEFAULT_FACTORS = (0.9, 1.0, 1.1)
DEFAULT_SNR_RANGE = (-5.0, 15.0)


def utterance_rng(seed: int, utterance_id: str) -> np.random.Generator:
    """Per-utterance RNG stream; stable across runs and parallelism levels."""
    digest = hashlib.sha256(utterance_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([seed & 0xFFFFFFFF, *words])


def augment_utterance(
    waveform: Waveform,
    utterance_id: str,
    pool: NoisePool,
    snr_range: tuple[float, float] = DEFAULT_SNR_RANGE,
    factors: tuple[float, ...] = DEFAULT_FACTORS,
    seed: int = 0,
) -> list[tuple[str, Waveform]]:
    """Render the six augmented copies of one utterance.

    Returns (suffix, waveform) pairs; suffixes are `-sp<factor>` and
    `-sp<factor>-noise` in factor order.
    """
    lo, hi = snr_range
    if lo > hi:
        raise ConfigError(f"empty SNR range [{lo}, {hi}]")
    rng = utterance_rng(seed, utterance_id)
    copies: list[tuple[str, Waveform]] = []
    for factor in factors:
        perturbed = speed_perturb(waveform, factor)
        copies.append((f"-sp{factor}", perturbed))
        clip_index = int(rng.integers(0, len(pool.clips)))
        snr_db = float(rng.uniform(lo, hi))
        mixed = mix_at_snr(perturbed, pool.clips[clip_index], snr_db, rng)
        copies.append((f"-sp{factor}-noise", mixed.mixture))
    return copies


def six_fold(
    manifest: Manifest,
    pool: NoisePool,
    out_dir,
    snr_range: tuple[float, float] = DEFAULT_SNR_RANGE,
    factors: tuple[float, ...] = DEFAULT_FACTORS,
    seed: int = 0,
    jobs: int = 1,
) -> Manifest:
    """Write the augmented audio under ``out_dir`` and return its manifest.

    Transcripts (and confidences) are copied unchanged; new utterance ids are
    the input id plus the copy suffix, so the output id set is disjoint from
    the input's and exactly 6x its size.
    """
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    def process(record: ManifestRecord) -> list[ManifestRecord]:
        waveform = read_wav(record.audio_path)
        out_records = []
        for suffix, rendered in augment_utterance(
            waveform, record.utterance_id, pool, snr_range, factors, seed
        ):
            new_id = record.utterance_id + suffix
            wav_path = out_path / f"{new_id}.wav"
            write_wav(rendered, wav_path)
            out_records.append(
                ManifestRecord(new_id, str(wav_path), record.transcript, record.confidence)
            )
        return out_records

    if jobs > 1 and len(manifest) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            per_utt = list(pool_exec.map(process, manifest.records))
    else:
        per_utt = [process(rec) for rec in manifest.records]
    return Manifest(tuple(rec for group in per_utt for rec in group))
