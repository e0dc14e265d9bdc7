"""End-to-end synthetic experiment: cleanse -> augment -> LM -> decode -> score.

The driver chains the toolkit modules over a small self-contained corpus and
writes a deterministic report.  Every reported number comes straight from a
module call; wall-clock timings go to a separate file so the report proper is
byte-identical across runs and worker counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import lattice as lat
from . import lfmmi, lm, metrics
from .audio import NoisePool, Waveform, mix_at_snr, read_wav, write_wav
from .augment import six_fold, utterance_rng
from .corpus import (
    Lexicon,
    Manifest,
    ManifestRecord,
    TonalSyllable,
    Transcript,
    augment_lexicon,
    cleanse,
    read_lexicon,
    read_manifest,
    write_lexicon,
    write_manifest,
)
from .errors import ConfigError, DataError, TonalAsrError
from .features import SpecAugmentPolicy, log_mel, spec_augment, write_features
from .lattice import Arc, Lattice

REPORT_TSV = "report.tsv"
REPORT_TXT = "report.txt"
TIMINGS_TSV = "timings.tsv"

_FRAMES_PER_SYLLABLE = 3
_EMISSION_SEPARATION = 2.0
# other tones of the reference base score almost as well, so decoding errors
# are mostly tone confusions (toneless SER then reads below tonal SER)
_EMISSION_TONE_GAP = 0.5
_SISNR_MIX_DB = 10.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment settings; every field maps to one `key=value` line."""

    manifest: str
    lexicon: str
    noise_dir: str
    out_dir: str
    seed: int = 20200917
    cleanse_threshold: float = 0.6
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    snr_low: float = -5.0
    snr_high: float = 15.0
    time_masks: int = 2
    time_mask_width: int = 20
    freq_masks: int = 2
    freq_mask_width: int = 4
    mask_fill: str = "zero"
    lm_order: int = 3
    lm_heldout_every: int = 5
    acoustic_scale: float = 1.0
    nbest_cap: int = 50
    emission_noise: float = 0.5
    sisnr_pairs: int = 3

    def __post_init__(self):
        if not 0.0 <= self.cleanse_threshold <= 1.0:
            raise ConfigError(f"cleanse_threshold {self.cleanse_threshold} outside [0, 1]")
        if not self.speed_factors or any(f <= 0 for f in self.speed_factors):
            raise ConfigError("speed_factors must be positive")
        if self.snr_low > self.snr_high:
            raise ConfigError(f"empty SNR range [{self.snr_low}, {self.snr_high}]")
        if min(self.time_masks, self.time_mask_width, self.freq_masks, self.freq_mask_width) < 0:
            raise ConfigError("mask counts and widths must be non-negative")
        if self.mask_fill not in ("zero", "mean"):
            raise ConfigError(f"mask_fill must be zero or mean, got {self.mask_fill!r}")
        if not 1 <= self.lm_order <= lm.MAX_ORDER:
            raise ConfigError(f"lm_order {self.lm_order} outside 1..{lm.MAX_ORDER}")
        if self.lm_heldout_every < 2:
            raise ConfigError("lm_heldout_every must be at least 2")
        if not 0.0 < self.acoustic_scale <= 1.0:
            raise ConfigError(f"acoustic_scale {self.acoustic_scale} outside (0, 1]")
        if self.nbest_cap < 1:
            raise ConfigError("nbest_cap must be at least 1")
        if self.emission_noise < 0:
            raise ConfigError("emission_noise must be non-negative")
        if self.sisnr_pairs < 0:
            raise ConfigError("sisnr_pairs must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


_PATH_KEYS = ("manifest", "lexicon", "noise_dir", "out_dir")


def _parse_value(name: str, kind, raw: str):
    try:
        if kind == "tuple[float, ...]":
            values = tuple(float(part) for part in raw.split(",") if part.strip())
            if not values:
                raise ValueError("empty list")
            return values
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {name}: cannot parse {raw!r} as {kind}") from None


def parse_config(path) -> ExperimentConfig:
    """Read a `key=value` file with `#` comments; unknown keys are rejected."""
    spec = {f.name: f.type for f in fields(ExperimentConfig)}
    base = Path(path).resolve().parent
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in spec:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
            values[key] = _parse_value(key, spec[key], value)
    missing = [k for k in _PATH_KEYS if k not in values]
    if missing:
        raise ConfigError(f"{path}: missing required keys {missing}")
    for key in _PATH_KEYS:
        values[key] = str((base / str(values[key])).resolve())
    return ExperimentConfig(**values)


def write_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# experiment configuration\n")
        for field in fields(ExperimentConfig):
            value = getattr(config, field.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            f.write(f"{field.name}={value}\n")


@dataclass(frozen=True)
class Report:
    """Deterministic key/value lines plus per-stage wall-clock timings."""

    values: tuple[tuple[str, str], ...]
    timings: tuple[tuple[str, float], ...]

    def tsv(self) -> str:
        return "".join(f"{key}\t{value}\n" for key, value in self.values)

    def text(self) -> str:
        width = max(len(key) for key, _ in self.values)
        lines = ["experiment report", "=" * len("experiment report")]
        lines += [f"{key.ljust(width)}  {value}" for key, value in self.values]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        (out / REPORT_TSV).write_text(self.tsv(), encoding="utf-8")
        (out / REPORT_TXT).write_text(self.text(), encoding="utf-8")
        with open(out / TIMINGS_TSV, "w", encoding="utf-8") as f:
            f.write("# wall-clock seconds per stage; varies run to run\n")
            for stage, seconds in self.timings:
                f.write(f"{stage}\t{seconds:.3f}\n")


class _StageRunner:
    """Runs stages in order, timing each and naming it in any failure."""

    def __init__(self):
        self.timings: list[tuple[str, float]] = []

    def run(self, name: str, fn):
        started = time.perf_counter()
        try:
            result = fn()
        except TonalAsrError as e:
            raise type(e)(f"stage {name}: {e}") from e
        except OSError as e:
            raise DataError(f"stage {name}: {e}") from e
        self.timings.append((name, time.perf_counter() - started))
        return result


def _syllable_inventory(manifest: Manifest) -> dict[str, int]:
    texts = sorted({s.text for rec in manifest for s in rec.transcript})
    if not texts:
        raise DataError("no syllables in the cleansed corpus")
    return {text: i for i, text in enumerate(texts)}


def _same_base_groups(inventory: dict[str, int]) -> list[list[int]]:
    """For each phone id, the ids of the same syllable base with other tones."""
    by_base: dict[str, list[int]] = {}
    for text, idx in inventory.items():
        by_base.setdefault(text[:-1], []).append(idx)
    groups: list[list[int]] = [[] for _ in inventory]
    for ids in by_base.values():
        for idx in ids:
            groups[idx] = [other for other in ids if other != idx]
    return groups


def _reference_emissions(
    phones: list[int], same_base: list[list[int]], num_phones: int, noise: float, rng
) -> lfmmi.EmissionScores:
    """Synthetic acoustic scores: the reference phone stands out per frame."""
    num_frames = _FRAMES_PER_SYLLABLE * len(phones)
    scores = noise * rng.standard_normal((num_frames, num_phones))
    for i, p in enumerate(phones):
        rows = slice(i * _FRAMES_PER_SYLLABLE, (i + 1) * _FRAMES_PER_SYLLABLE)
        scores[rows, p] += _EMISSION_SEPARATION
        for other in same_base[p]:
            scores[rows, other] += _EMISSION_SEPARATION - _EMISSION_TONE_GAP
    return lfmmi.EmissionScores(scores)


def _decode_lattice(
    emissions: lfmmi.EmissionScores,
    den: lfmmi.Graph,
    inventory: dict[str, int],
    scale: float,
) -> Lattice:
    """Single-path lattice for one system's best frame alignment."""
    frame_phones = lfmmi.viterbi_phones(den, emissions, scale)
    names = {i: text for text, i in inventory.items()}
    arcs = []
    state = 0
    run_start = 0
    for t in range(1, len(frame_phones) + 1):
        if t == len(frame_phones) or frame_phones[t] != frame_phones[t - 1]:
            phone = frame_phones[run_start]
            acoustic = float(sum(emissions.scores[u, phone] for u in range(run_start, t)))
            syllable = TonalSyllable(names[phone][:-1], int(names[phone][-1]))
            arcs.append(Arc(state, state + 1, syllable, acoustic, 0.0))
            state += 1
            run_start = t
    return Lattice(state + 1, tuple(arcs), ((state, 0.0),))


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> Report:
    """Execute every stage and write report + artifacts under the output dir."""
    if jobs < 1:
        raise ConfigError("jobs must be at least 1")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = _StageRunner()
    values: list[tuple[str, str]] = [("seed", str(config.seed))]

    def load():
        for name in ("manifest", "lexicon"):
            if not Path(getattr(config, name)).is_file():
                raise ConfigError(f"{name} file {getattr(config, name)} does not exist")
        if not Path(config.noise_dir).is_dir():
            raise ConfigError(f"noise_dir {config.noise_dir} does not exist")
        manifest = read_manifest(config.manifest)
        if not manifest.records:
            raise DataError("manifest is empty")
        lexicon = read_lexicon(config.lexicon)
        rate = read_wav(manifest.records[0].audio_path).sample_rate
        pool = NoisePool.from_dir(config.noise_dir, rate)
        return manifest, lexicon, pool

    manifest, lexicon, pool = runner.run("load", load)
    values.append(("utterances_total", str(len(manifest))))

    def cleanse_stage():
        kept = cleanse(manifest, config.cleanse_threshold)
        if not kept.records:
            raise DataError("cleansing removed every utterance")
        write_manifest(kept, out_dir / "cleansed.tsv")
        return kept

    kept = runner.run("cleanse", cleanse_stage)
    values.append(("utterances_kept", str(len(kept))))
    values.append(("utterances_dropped", str(len(manifest) - len(kept))))

    def lexicon_stage():
        grown, _ = augment_lexicon(lexicon, [rec.transcript for rec in kept])
        write_lexicon(grown, out_dir / "lexicon.txt")
        return grown

    grown = runner.run("lexicon", lexicon_stage)
    values.append(("lexicon_entries_in", str(len(lexicon))))
    values.append(("lexicon_entries_out", str(len(grown))))

    def augment_stage():
        augmented = six_fold(
            kept,
            pool,
            out_dir / "augmented",
            (config.snr_low, config.snr_high),
            config.speed_factors,
            config.seed,
            jobs,
        )
        write_manifest(augmented, out_dir / "augmented.tsv")
        return augmented

    augmented = runner.run("augment", augment_stage)
    values.append(("augmented_records", str(len(augmented))))

    def features_stage():
        policy = SpecAugmentPolicy(
            config.time_masks,
            config.time_mask_width,
            config.freq_masks,
            config.freq_mask_width,
            config.mask_fill,
        )
        feature_dir = out_dir / "features"
        feature_dir.mkdir(exist_ok=True)
        total_frames = 0
        masked_cells = 0
        for rec in augmented:
            feats = log_mel(read_wav(rec.audio_path))
            write_features(feats, feature_dir / f"{rec.utterance_id}.fmx")
            total_frames += feats.data.shape[0]
            masked = spec_augment(
                feats, policy, utterance_rng(config.seed, rec.utterance_id + "#mask")
            )
            masked_cells += int(np.sum(masked.data != feats.data))
        return total_frames, masked_cells

    total_frames, masked_cells = runner.run("features", features_stage)
    values.append(("feature_frames", str(total_frames)))
    values.append(("masked_cells", str(masked_cells)))

    def lm_stage():
        heldout = [
            rec.transcript.tokens()
            for i, rec in enumerate(kept)
            if i % config.lm_heldout_every == config.lm_heldout_every - 1
        ]
        train = [
            rec.transcript.tokens()
            for i, rec in enumerate(kept)
            if i % config.lm_heldout_every != config.lm_heldout_every - 1
        ]
        if not heldout or not train:
            raise DataError("too few utterances for an LM train/heldout split")
        counts = lm.count(train, config.lm_order)
        good_turing = lm.good_turing_estimate(counts)
        kneser_ney = lm.kneser_ney_estimate(counts)
        lm.write_arpa(good_turing, out_dir / "lm_good_turing.arpa")
        lm.write_arpa(kneser_ney, out_dir / "lm_kneser_ney.arpa")
        return lm.perplexity(good_turing, heldout), lm.perplexity(kneser_ney, heldout)

    ppl_gt, ppl_kn = runner.run("lm", lm_stage)
    values.append(("lm_order", str(config.lm_order)))
    values.append(("ppl_good_turing", f"{ppl_gt:.2f}"))
    values.append(("ppl_kneser_ney", f"{ppl_kn:.2f}"))

    def decode_stage():
        inventory = _syllable_inventory(kept)
        same_base = _same_base_groups(inventory)
        phone_seqs = [
            [inventory[s.text] for s in rec.transcript] for rec in kept
        ]
        # decoding graph is an n-gram over frame-level sequences, so holding a
        # phone for its span is as cheap as the corpus says it should be
        frame_seqs = [
            [p for p in seq for _ in range(_FRAMES_PER_SYLLABLE)] for seq in phone_seqs
        ]
        den = lfmmi.denominator_graph(frame_seqs, len(inventory), order=2)
        pairs: list[tuple[Transcript, Transcript]] = []
        hyp_records = []
        confidences = []
        for rec, phones in zip(kept, phone_seqs):
            if not phones:
                raise DataError(f"utterance {rec.utterance_id!r} has an empty transcript")
            systems = []
            for tag in ("a", "b"):
                rng = utterance_rng(config.seed, f"{rec.utterance_id}#emission-{tag}")
                emissions = _reference_emissions(
                    phones, same_base, len(inventory), config.emission_noise, rng
                )
                systems.append(
                    _decode_lattice(emissions, den, inventory, config.acoustic_scale)
                )
            combined = lat.combine(systems)
            hypothesis = lat.mbr_decode(combined, config.acoustic_scale, config.nbest_cap)
            confidences.append(lat.confidence(combined, config.acoustic_scale))
            pairs.append((rec.transcript, hypothesis))
            hyp_records.append(
                ManifestRecord(rec.utterance_id, "-", hypothesis, rec.confidence)
            )
        write_manifest(Manifest(tuple(hyp_records)), out_dir / "hypotheses.tsv")
        refs = Manifest(
            tuple(
                ManifestRecord(rec.utterance_id, "-", rec.transcript, rec.confidence)
                for rec in kept
            )
        )
        write_manifest(refs, out_dir / "references.tsv")
        mean_confidence = sum(confidences) / len(confidences)
        return pairs, mean_confidence

    pairs, mean_confidence = runner.run("decode", decode_stage)

    def score_stage():
        tonal = metrics.corpus_ser(pairs, tone_sensitive=True)
        toneless = metrics.corpus_ser(pairs, tone_sensitive=False)
        sisnr_rows = []
        for rec in kept.records[: config.sisnr_pairs]:
            clean = read_wav(rec.audio_path)
            rng = utterance_rng(config.seed, rec.utterance_id + "#sisnr")
            clip = pool.clips[int(rng.integers(0, len(pool.clips)))]
            noisy = mix_at_snr(clean, clip, _SISNR_MIX_DB, rng).mixture
            sisnr_rows.append(
                (rec.utterance_id, metrics.si_snr(clean.samples, noisy.samples))
            )
        return tonal, toneless, sisnr_rows

    tonal, toneless, sisnr_rows = runner.run("score", score_stage)
    values.append(("ser_tonal_pct", f"{100.0 * tonal:.2f}"))
    values.append(("ser_toneless_pct", f"{100.0 * toneless:.2f}"))
    values.append(("decode_confidence", f"{mean_confidence:.4f}"))
    values.append(("sisnr_pairs", str(len(sisnr_rows))))
    for utt_id, value in sisnr_rows:
        values.append((f"sisnr_db.{utt_id}", f"{value:.2f}"))
    if sisnr_rows:
        mean_db = sum(v for _, v in sisnr_rows) / len(sisnr_rows)
        values.append(("sisnr_mean_db", f"{mean_db:.2f}"))

    report = Report(tuple(values), tuple(runner.timings))
    report.write(out_dir)
    return report


# --- bundled synthetic corpus -------------------------------------------------

_BASES = ("pa", "ti", "ku", "mo", "ne", "sa")
_TONES = (1, 2, 3, 4)


def _synthetic_wave(rng, sample_rate: int) -> Waveform:
    length = int(rng.integers(sample_rate // 2, sample_rate))
    t = np.arange(length) / sample_rate
    samples = np.zeros(length)
    for _ in range(int(rng.integers(2, 4))):
        freq = float(rng.uniform(120.0, 2400.0))
        samples += float(rng.uniform(0.2, 0.6)) * np.sin(
            2.0 * np.pi * freq * t + float(rng.uniform(0.0, 2.0 * np.pi))
        )
    samples += 0.02 * rng.standard_normal(length)
    return Waveform(0.3 * samples / np.abs(samples).max(), sample_rate)


def make_synthetic_corpus(
    root,
    num_utterances: int = 12,
    seed: int = 20200917,
    low_confidence_ids: tuple[int, ...] = (3, 7),
    sample_rate: int = 16000,
) -> dict[str, str]:
    """Generate a deterministic corpus: audio, manifest, lexicon, noise clips.

    Utterances listed in ``low_confidence_ids`` get confidences below 0.6 so
    the default cleansing threshold drops them.  Transcripts never repeat a
    syllable back to back (the toy decoder collapses runs).  Returns the
    paths keyed `manifest`, `lexicon`, `noise_dir`.
    """
    root = Path(root)
    audio_dir = root / "audio"
    noise_dir = root / "noise"
    audio_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)

    vocabulary = [TonalSyllable(b, t) for b in _BASES for t in _TONES]
    records = []
    for i in range(num_utterances):
        utt_id = f"utt{i:03d}"
        rng = utterance_rng(seed, utt_id + "#corpus")
        wave = _synthetic_wave(rng, sample_rate)
        wav_path = audio_dir / f"{utt_id}.wav"
        write_wav(wave, wav_path)
        syllables: list[TonalSyllable] = []
        target = int(rng.integers(3, 7))
        while len(syllables) < target:
            pick = vocabulary[int(rng.integers(0, len(vocabulary)))]
            if syllables and syllables[-1] == pick:
                continue
            syllables.append(pick)
        if i in low_confidence_ids:
            confidence = round(float(rng.uniform(0.2, 0.55)), 2)
        else:
            confidence = round(float(rng.uniform(0.65, 0.99)), 2)
        records.append(
            ManifestRecord(utt_id, str(wav_path), Transcript(tuple(syllables)), confidence)
        )
    manifest_path = root / "manifest.tsv"
    write_manifest(Manifest(tuple(records)), manifest_path)

    # seed lexicon covers only the first half of the vocabulary, so the
    # lexicon-augmentation stage has genuine work to do
    half = {s.text: (s.base, f"T{s.tone}") for s in vocabulary[: len(vocabulary) // 2]}
    lexicon_path = root / "lexicon.txt"
    write_lexicon(Lexicon(half), lexicon_path)

    for i in range(3):
        rng = np.random.default_rng([seed & 0xFFFFFFFF, 9090, i])
        length = int(rng.integers(sample_rate, 2 * sample_rate))
        samples = 0.1 * rng.standard_normal(length)
        write_wav(Waveform(np.clip(samples, -1.0, 1.0), sample_rate), noise_dir / f"noise{i}.wav")

    return {
        "manifest": str(manifest_path),
        "lexicon": str(lexicon_path),
        "noise_dir": str(noise_dir),
    }


def write_bundled_experiment(root, num_utterances: int = 12, seed: int = 20200917):
    """Create the bundled corpus plus a ready-to-run config; returns its path."""
    root = Path(root).resolve()
    paths = make_synthetic_corpus(root / "corpus", num_utterances, seed)
    config = ExperimentConfig(
        manifest=paths["manifest"],
        lexicon=paths["lexicon"],
        noise_dir=paths["noise_dir"],
        out_dir=str(root / "out"),
        seed=seed,
    )
    config_path = root / "config.txt"
    write_config(config, config_path)
    return config_path
