"""Command-line entry point: every toolkit operation as a subcommand.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Subcommands never modify their inputs; outputs go to explicit
--out locations.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from . import lattice as lat
from . import lfmmi, lm, metrics
from .audio import NoisePool, read_wav
from .corpus import (
    augment_lexicon,
    cleanse,
    read_lexicon,
    read_manifest,
    write_lexicon,
    write_manifest,
)
from .errors import ConfigError, DataError, NumericalError
from .experiment import parse_config, run_experiment, write_bundled_experiment


def _parse_factors(text: str) -> tuple[float, ...]:
    try:
        factors = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"cannot parse speed factors {text!r}") from None
    if not factors:
        raise ConfigError("no speed factors given")
    return factors


def cmd_validate_manifest(options) -> int:
    manifest = read_manifest(options.manifest, options.drop_invalid_tokens)
    syllables = sum(len(rec.transcript) for rec in manifest)
    print(f"{options.manifest}: {len(manifest)} records, {syllables} syllables")
    return 0


def cmd_augment_lexicon(options) -> int:
    lexicon = read_lexicon(options.lexicon)
    manifest = read_manifest(options.manifest)
    grown, added = augment_lexicon(lexicon, [rec.transcript for rec in manifest])
    write_lexicon(grown, options.out)
    print(f"added {len(added)} entries, {len(grown)} total -> {options.out}")
    return 0


def cmd_cleanse(options) -> int:
    manifest = read_manifest(options.manifest)
    kept = cleanse(manifest, options.threshold)
    write_manifest(kept, options.out)
    print(f"kept {len(kept)} of {len(manifest)} records -> {options.out}")
    return 0


def cmd_augment(options) -> int:
    from .augment import six_fold

    manifest = read_manifest(options.manifest)
    if not manifest.records:
        raise DataError("manifest is empty")
    rate = read_wav(manifest.records[0].audio_path).sample_rate
    pool = NoisePool.from_dir(options.noise_dir, rate)
    augmented = six_fold(
        manifest,
        pool,
        options.out,
        (options.snr_low, options.snr_high),
        _parse_factors(options.factors),
        options.seed,
        options.jobs,
    )
    manifest_path = f"{options.out}/manifest.tsv"
    write_manifest(augmented, manifest_path)
    print(f"{len(augmented)} augmented records -> {manifest_path}")
    return 0


def cmd_lm_train(options) -> int:
    manifest = read_manifest(options.manifest)
    sentences = [rec.transcript.tokens() for rec in manifest]
    counts = lm.count(sentences, options.order)
    if options.smoothing == "good-turing":
        model = lm.good_turing_estimate(counts)
    else:
        model = lm.kneser_ney_estimate(counts)
    lm.write_arpa(model, options.out)
    print(
        f"{options.smoothing} {options.order}-gram over "
        f"{len(sentences)} sentences -> {options.out}"
    )
    return 0


def cmd_lm_ppl(options) -> int:
    model = lm.read_arpa(options.model)
    manifest = read_manifest(options.manifest)
    ppl = lm.perplexity(model, [rec.transcript.tokens() for rec in manifest])
    print(f"PPL {ppl:.2f}")
    return 0


def _paired_transcripts(refs_path, hyps_path):
    refs = read_manifest(refs_path)
    hyps = read_manifest(hyps_path)
    by_id = {rec.utterance_id: rec.transcript for rec in hyps}
    missing = [rec.utterance_id for rec in refs if rec.utterance_id not in by_id]
    if missing:
        raise DataError(f"hypotheses missing for {len(missing)} utterances, first {missing[0]!r}")
    return [(rec.transcript, by_id[rec.utterance_id]) for rec in refs]


def cmd_score_ser(options) -> int:
    pairs = _paired_transcripts(options.refs, options.hyps)
    stats = metrics.corpus_edit_stats(pairs, tone_sensitive=not options.toneless)
    if stats.ref_len == 0:
        raise NumericalError("total reference length is zero")
    print(f"SER {100.0 * stats.ser:.2f}")
    print(
        f"substitutions {stats.substitutions} deletions {stats.deletions} "
        f"insertions {stats.insertions} reference {stats.ref_len}"
    )
    return 0


def cmd_score_sisnr(options) -> int:
    reference = read_wav(options.reference)
    estimate = read_wav(options.estimate)
    value = metrics.si_snr(reference.samples, estimate.samples)
    print(f"SI-SNR {value:.2f} dB")
    return 0


def cmd_lat_combine(options) -> int:
    lattices = [lat.read_lattice(path) for path in options.lattices]
    lat.write_lattice(lat.combine(lattices), options.out)
    print(f"combined {len(lattices)} lattices -> {options.out}")
    return 0


def cmd_lat_mbr(options) -> int:
    lattice = lat.read_lattice(options.lattice)
    transcript = lat.mbr_decode(lattice, options.scale, options.cap)
    print(transcript.text)
    return 0


def cmd_lat_confidence(options) -> int:
    lattice = lat.read_lattice(options.lattice)
    print(f"confidence {lat.confidence(lattice, options.scale):.4f}")
    return 0


def cmd_lfmmi_check(options) -> int:
    rng = np.random.default_rng(options.seed)
    frames, phones = options.frames, options.phones
    if frames < 1 or phones < 2:
        raise ConfigError("need at least 1 frame and 2 phones")
    reference = [int(x) for x in rng.integers(0, phones, size=rng.integers(1, frames + 1))]
    corpus = [
        [int(x) for x in rng.integers(0, phones, size=rng.integers(1, 6))]
        for _ in range(5)
    ]
    den = lfmmi.denominator_graph(corpus, phones, order=2)
    num = lfmmi.numerator_graph(reference)
    cfg = lfmmi.LfMmiConfig(options.scale)
    base = rng.standard_normal((frames, phones))
    _, grad = lfmmi.lfmmi_objective(num, den, lfmmi.EmissionScores(base), cfg)
    step = 1e-5
    worst = 0.0
    for t in range(frames):
        for p in range(phones):
            up = base.copy()
            up[t, p] += step
            down = base.copy()
            down[t, p] -= step
            f_up, _ = lfmmi.lfmmi_objective(num, den, lfmmi.EmissionScores(up), cfg)
            f_down, _ = lfmmi.lfmmi_objective(num, den, lfmmi.EmissionScores(down), cfg)
            numeric = (f_up - f_down) / (2 * step)
            worst = max(
                worst,
                abs(numeric - grad[t, p]) / max(abs(numeric), abs(grad[t, p]), 1e-6),
            )
    print(f"max relative error {worst:.3e}")
    if worst >= 1e-4:
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e}")
    return 0


def cmd_lfmmi_toy_train(options) -> int:
    data = lfmmi.make_toy_dataset(seed=options.seed)
    _, trace = lfmmi.toy_train(
        data, lfmmi.LfMmiConfig(options.scale), options.steps, options.lr
    )
    print("step,objective")
    for i, value in enumerate(trace, 1):
        print(f"{i},{value:.6f}")
    return 0


def cmd_run_experiment(options) -> int:
    if options.config is None:
        if options.out is None:
            raise ConfigError("give --out (for the bundled experiment) or --config")
        config_path = write_bundled_experiment(options.out)
        print(f"bundled corpus and config under {options.out}")
    else:
        config_path = options.config
    config = parse_config(config_path)
    if options.out is not None and options.config is not None:
        config = dataclasses.replace(config, out_dir=options.out)
    report = run_experiment(config, options.jobs)
    sys.stdout.write(report.text())
    print(f"report written to {config.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tonalasr",
        description="Desk-scale tonal-syllable ASR toolkit",
    )
    sub = parser.add_subparsers(title="commands", required=True, dest="command")

    p = sub.add_parser("validate-manifest", help="parse a manifest and report its size")
    p.add_argument("manifest")
    p.add_argument(
        "--drop-invalid-tokens",
        action="store_true",
        help="drop non-syllable tokens instead of failing",
    )
    p.set_defaults(handler=cmd_validate_manifest)

    p = sub.add_parser("augment-lexicon", help="add missing transcript syllables to a lexicon")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_augment_lexicon)

    p = sub.add_parser("cleanse", help="drop low-confidence utterances")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_cleanse)

    p = sub.add_parser("augment", help="6-fold speed/noise augmentation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factors", default="0.9,1.0,1.1", help="comma-separated speed factors")
    p.add_argument("--snr-low", type=float, default=-5.0)
    p.add_argument("--snr-high", type=float, default=15.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("lm-train", help="estimate a backoff n-gram model, write ARPA")
    p.add_argument("--manifest", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--smoothing", choices=("good-turing", "kneser-ney"), default="kneser-ney")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_lm_train)

    p = sub.add_parser("lm-ppl", help="held-out perplexity of an ARPA model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(handler=cmd_lm_ppl)

    p = sub.add_parser("score-ser", help="syllable error rate of hypotheses vs references")
    p.add_argument("--refs", required=True)
    p.add_argument("--hyps", required=True)
    p.add_argument("--toneless", action="store_true", help="ignore tone digits when aligning")
    p.set_defaults(handler=cmd_score_ser)

    p = sub.add_parser("score-sisnr", help="scale-invariant SNR between two WAV files")
    p.add_argument("--reference", required=True)
    p.add_argument("--estimate", required=True)
    p.set_defaults(handler=cmd_score_sisnr)

    p = sub.add_parser("lat-combine", help="merge lattices under equal priors")
    p.add_argument("lattices", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_lat_combine)

    p = sub.add_parser("lat-mbr", help="minimum-risk decode of a lattice")
    p.add_argument("lattice")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--cap", type=int, default=100, help="candidate path cap")
    p.set_defaults(handler=cmd_lat_mbr)

    p = sub.add_parser("lat-confidence", help="posterior confidence of the best path")
    p.add_argument("lattice")
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(handler=cmd_lat_confidence)

    p = sub.add_parser("lfmmi-check", help="finite-difference check of the objective gradient")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--phones", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(handler=cmd_lfmmi_check)

    p = sub.add_parser("lfmmi-toy-train", help="train the toy emission model, print CSV trace")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(handler=cmd_lfmmi_toy_train)

    p = sub.add_parser("run-experiment", help="run the full synthetic pipeline")
    p.add_argument("--out", help="output root (bundled mode) or override for the config's out_dir")
    p.add_argument("--config", help="experiment config file; omit to run the bundled experiment")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_run_experiment)

    return parser


def main(args=None) -> int:
    logging.basicConfig(format="%(levelname)s %(message)s")
    options = build_parser().parse_args(args)
    try:
        return options.handler(options)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
