"""Corpus primitives: tonal syllables, transcripts, lexica and dataset manifests.

A tonal syllable is a romanized base followed by a single tone digit in 1..9
("tai5", "gi2").  Transcripts are sequences of tonal syllables; manifests tie
utterance ids to audio paths, transcripts and optional recognition-confidence
scores.  All types are immutable values; every operation here is a pure
function, so instances can be shared freely across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

TONE_MIN = 1
TONE_MAX = 9


@dataclass(frozen=True, order=True)
class TonalSyllable:
    """A romanized syllable base plus a tone index in 1..9."""

    base: str
    tone: int

    def __post_init__(self):
        if not self.base:
            raise DataError("tonal syllable has empty base")
        if not (self.base.isascii() and self.base.isalpha()):
            raise DataError(f"tonal syllable base {self.base!r} contains non-letter characters")
        if not TONE_MIN <= self.tone <= TONE_MAX:
            raise DataError(f"tone {self.tone} out of range {TONE_MIN}..{TONE_MAX}")

    @property
    def text(self) -> str:
        """Canonical text form: base immediately followed by the tone digit."""
        return f"{self.base}{self.tone}"

    def __str__(self) -> str:
        return self.text


def parse_tonal_syllable(token: str) -> TonalSyllable:
    """Split ``token`` into (base, tone), rejecting anything non-canonical.

    The trailing character must be a tone digit in 1..9 and the remainder must
    be a non-empty all-letter ASCII base.  Errors carry the offending position.
    """
    if not token:
        raise DataError("empty token")
    last = token[-1]
    if not last.isdigit():
        raise DataError(f"token {token!r}: expected tone digit at position {len(token) - 1}")
    tone = int(last)
    if not TONE_MIN <= tone <= TONE_MAX:
        raise DataError(
            f"token {token!r}: tone {tone} out of range {TONE_MIN}..{TONE_MAX}"
            f" at position {len(token) - 1}"
        )
    base = token[:-1]
    if not base:
        raise DataError(f"token {token!r}: empty base before tone digit")
    for i, ch in enumerate(base):
        if not (ch.isascii() and ch.isalpha()):
            raise DataError(f"token {token!r}: non-letter character {ch!r} at position {i}")
    return TonalSyllable(base, tone)


@dataclass(frozen=True)
class Transcript:
    """An ordered (possibly empty) sequence of tonal syllables."""

    syllables: tuple[TonalSyllable, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "Transcript":
        """Parse a space-separated token string; rejects invalid tokens."""
        return cls(tuple(parse_tonal_syllable(tok) for tok in text.split()))

    @classmethod
    def parse_lenient(cls, text: str) -> tuple["Transcript", list[str]]:
        """Parse, dropping tokens that are not valid tonal syllables.

        Non-Taiwanese material (English words, proper nouns, stray
        punctuation) is excluded rather than rejected; the dropped tokens are
        returned so callers can report a warning count.
        """
        kept: list[TonalSyllable] = []
        dropped: list[str] = []
        for tok in text.split():
            try:
                kept.append(parse_tonal_syllable(tok))
            except DataError:
                dropped.append(tok)
        return cls(tuple(kept)), dropped

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.syllables)

    def tokens(self) -> list[str]:
        return [s.text for s in self.syllables]

    def __iter__(self) -> Iterator[TonalSyllable]:
        return iter(self.syllables)

    def __len__(self) -> int:
        return len(self.syllables)

    def __getitem__(self, i):
        return self.syllables[i]


Pronunciation = tuple[str, ...]
G2pRule = Callable[[TonalSyllable], Pronunciation]


def default_g2p(syllable: TonalSyllable) -> Pronunciation:
    """Deterministic, invertible fallback pronunciation: [base, "T<tone>"]."""
    return (syllable.base, f"T{syllable.tone}")


@dataclass(frozen=True)
class Lexicon:
    """Maps canonical tonal-syllable strings to phone-symbol pronunciations."""

    entries: dict[str, Pronunciation] = field(default_factory=dict)

    def __post_init__(self):
        for key, pron in self.entries.items():
            if not pron:
                raise DataError(f"lexicon entry {key!r} has empty pronunciation")
            if any(not p for p in pron):
                raise DataError(f"lexicon entry {key!r} has an empty phone symbol")

    def __contains__(self, syllable) -> bool:
        key = syllable.text if isinstance(syllable, TonalSyllable) else syllable
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def pronunciation(self, syllable: TonalSyllable) -> Pronunciation:
        return self.entries[syllable.text]


def augment_lexicon(
    lexicon: Lexicon,
    transcripts: Iterable[Transcript],
    g2p: G2pRule = default_g2p,
) -> tuple[Lexicon, list[TonalSyllable]]:
    """Add every transcript syllable missing from ``lexicon`` via ``g2p``.

    Missing syllables are added in order of first appearance, which makes the
    operation deterministic and idempotent: a second pass over the same
    transcripts adds nothing.
    """
    entries = dict(lexicon.entries)
    added: list[TonalSyllable] = []
    for transcript in transcripts:
        for syllable in transcript:
            if syllable.text not in entries:
                entries[syllable.text] = tuple(g2p(syllable))
                added.append(syllable)
    return Lexicon(entries), added


def read_lexicon(path) -> Lexicon:
    """Read `syllable phone1 phone2 ...` lines; `#` starts a comment."""
    entries: dict[str, Pronunciation] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) < 2:
                raise DataError(f"{path}:{lineno}: expected `syllable phone...`, got {raw.rstrip()!r}")
            key = fields[0]
            parse_tonal_syllable(key)  # keys must be canonical syllables
            if key in entries:
                raise DataError(f"{path}:{lineno}: duplicate lexicon entry {key!r}")
            entries[key] = tuple(fields[1:])
    return Lexicon(entries)


def write_lexicon(lexicon: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, pron in lexicon.entries.items():
            f.write(f"{key} {' '.join(pron)}\n")


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    audio_path: str
    transcript: Transcript
    confidence: float | None = None

    def __post_init__(self):
        if not self.utterance_id:
            raise DataError("manifest record with empty utterance id")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise DataError(
                f"utterance {self.utterance_id!r}: confidence {self.confidence} outside [0, 1]"
            )


@dataclass(frozen=True)
class Manifest:
    """An ordered collection of utterance records with unique ids."""

    records: tuple[ManifestRecord, ...] = ()

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.utterance_id in seen:
                raise DataError(f"duplicate utterance id {rec.utterance_id!r}")
            seen.add(rec.utterance_id)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [rec.utterance_id for rec in self.records]


def cleanse(manifest: Manifest, threshold: float) -> Manifest:
    """Keep records with recognition confidence >= ``threshold``, in order.

    Every record must carry a confidence; the error names the first utterance
    that does not.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"cleanse threshold {threshold} outside [0, 1]")
    for rec in manifest:
        if rec.confidence is None:
            raise DataError(f"utterance {rec.utterance_id!r} has no confidence score")
    kept = tuple(rec for rec in manifest if rec.confidence >= threshold)
    return Manifest(kept)


def _format_confidence(confidence: float | None) -> str:
    if confidence is None:
        return "-"
    return repr(confidence)


def read_manifest(path, drop_invalid_tokens: bool = False) -> Manifest:
    """Read a tab-separated manifest file.

    One record per line: ``utt_id<TAB>audio_path<TAB>confidence_or_dash<TAB>
    space-separated syllables`` (trailing transcript field may be empty).
    With ``drop_invalid_tokens`` non-syllable tokens are excluded with a
    warning count instead of raising.
    """
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    total_dropped = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) == 3:
                fields.append("")
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            utt_id, audio_path, conf_text, transcript_text = fields
            if utt_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            if conf_text == "-":
                confidence = None
            else:
                try:
                    confidence = float(conf_text)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad confidence value {conf_text!r}") from None
            try:
                if drop_invalid_tokens:
                    transcript, dropped = Transcript.parse_lenient(transcript_text)
                    total_dropped += len(dropped)
                else:
                    transcript = Transcript.parse(transcript_text)
                records.append(ManifestRecord(utt_id, audio_path, transcript, confidence))
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    if total_dropped:
        log.warning("%s: dropped %d non-syllable tokens", path, total_dropped)
    return Manifest(tuple(records))


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in manifest:
            f.write(
                f"{rec.utterance_id}\t{rec.audio_path}\t"
                f"{_format_confidence(rec.confidence)}\t{rec.transcript.text}\n"
            )
