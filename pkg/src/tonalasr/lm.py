"""Backoff n-gram language models, orders 1..4.

Training counts padded sentences (one start marker, one end marker), then
estimates either a Katz/Good-Turing model or an interpolated Kneser-Ney
model.  Probabilities and backoff weights are kept in log10 throughout so
the in-memory model matches the ARPA text format bit for bit.

Vocabulary policy: closed over the training data plus an unknown token; the
start marker is context-only and carries the conventional -99 sentinel
instead of a probability.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
MAX_ORDER = 4
GT_MAX_COUNT = 5
# Floors for Katz leftover mass and backoff denominators; keeps weights
# finite without visibly perturbing normalization (tolerance is 1e-6).
MASS_FLOOR = 1e-10
UNK_FLOOR = 1e-7
BOS_SENTINEL = -99.0

NGram = tuple[str, ...]


def _tokens(transcript) -> list[str]:
    if hasattr(transcript, "tokens"):
        return transcript.tokens()
    return [str(t) for t in transcript]


@dataclass(frozen=True, eq=False)
class CountTable:
    """Raw n-gram counts for all lengths 1..order from one padded corpus."""

    order: int
    tables: tuple[dict[NGram, int], ...]
    num_sentences: int

    def ngrams(self, length: int) -> dict[NGram, int]:
        return self.tables[length - 1]

    def counts_of_counts(self, length: int) -> dict[int, int]:
        """n_r for one order; the start-marker unigram is context-only and excluded."""
        n_r: Counter[int] = Counter()
        for gram, c in self.tables[length - 1].items():
            if length == 1 and gram == (BOS,):
                continue
            n_r[c] += 1
        return dict(n_r)

    def continuation_counts(self, length: int) -> dict[NGram, int]:
        """Distinct-left-context counts: |{v : c(v, gram) > 0}| per gram."""
        if length >= self.order:
            raise ConfigError(f"no order-{length + 1} table to derive continuations from")
        seen: dict[NGram, set] = {}
        for gram in self.tables[length]:
            seen.setdefault(gram[1:], set()).add(gram[0])
        return {gram: len(lefts) for gram, lefts in seen.items()}

    def vocab(self) -> list[str]:
        return sorted(set(w for (w,) in self.tables[0]))


def count(transcripts: Iterable, order: int) -> CountTable:
    """Count all n-grams of lengths 1..order over marker-padded sentences."""
    if not 1 <= order <= MAX_ORDER:
        raise ConfigError(f"order {order} outside 1..{MAX_ORDER}")
    tables: list[Counter[NGram]] = [Counter() for _ in range(order)]
    num_sentences = 0
    for transcript in transcripts:
        padded = [BOS, *_tokens(transcript), EOS]
        num_sentences += 1
        for length in range(1, order + 1):
            table = tables[length - 1]
            for i in range(len(padded) - length + 1):
                table[tuple(padded[i : i + length])] += 1
    return CountTable(order, tuple(dict(t) for t in tables), num_sentences)


def merge_counts(a: CountTable, b: CountTable) -> CountTable:
    """Combine two shards counted at the same order."""
    if a.order != b.order:
        raise ConfigError(f"cannot merge counts of order {a.order} and {b.order}")
    merged = tuple(
        dict(Counter(ta) + Counter(tb)) for ta, tb in zip(a.tables, b.tables)
    )
    return CountTable(a.order, merged, a.num_sentences + b.num_sentences)


@dataclass(frozen=True, eq=False)
class NGramModel:
    """Backoff model: log10 probabilities plus log10 context backoff weights."""

    order: int
    logprobs: dict[NGram, float]
    backoffs: dict[NGram, float]
    vocab: tuple[str, ...]

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER:
            raise ConfigError(f"order {self.order} outside 1..{MAX_ORDER}")

    def predictable_vocab(self) -> list[str]:
        """Every type the model can emit: all of vocab except the start marker."""
        return [w for w in self.vocab if w != BOS]


def _check_nonempty(counts: CountTable) -> None:
    if not counts.ngrams(1):
        raise DataError("cannot estimate a model from an empty count table")


def _absolute_discount(n_r: dict[int, int]) -> float:
    n1, n2 = n_r.get(1, 0), n_r.get(2, 0)
    if n1 > 0 and n2 > 0:
        return n1 / (n1 + 2.0 * n2)
    return 0.5


def _gt_discounted(n_r: dict[int, int], label: str):
    """Map raw count -> discounted count for one order.

    Counts above GT_MAX_COUNT are trusted as-is.  Below, the Good-Turing
    formula runs on regression-smoothed counts-of-counts S(r); the fit of
    log n_r against log r must be decreasing faster than 1/r (slope < -1),
    which guarantees 0 < r* < r.  Degenerate tables fall back to a flat
    absolute discount.
    """
    points = sorted((r, n) for r, n in n_r.items() if n > 0)
    slope = intercept = None
    if len(points) >= 2:
        xs = [math.log(r) for r, _ in points]
        ys = [math.log(n) for _, n in points]
        mean_x = sum(xs) / len(xs)
        mean_y = sum(ys) / len(ys)
        var_x = sum((x - mean_x) ** 2 for x in xs)
        if var_x > 0:
            b = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys)) / var_x
            if b < -1.0:
                slope, intercept = b, mean_y - b * mean_x
    if slope is None:
        d = _absolute_discount(n_r)
        log.warning("%s: degenerate counts-of-counts, using absolute discount %.4f", label, d)
        return lambda r: r - d if r <= GT_MAX_COUNT else float(r)

    def smoothed(r: int) -> float:
        return math.exp(intercept + slope * math.log(r))

    def discounted(r: int) -> float:
        if r > GT_MAX_COUNT:
            return float(r)
        return (r + 1) * smoothed(r + 1) / smoothed(r)

    return discounted


def _unigram_base(counts: CountTable, effective: dict[NGram, float]) -> dict[str, float]:
    """Normalized unigram distribution from discounted effective counts.

    Leftover discount mass (plus a small floor) goes to the unknown token, so
    the distribution covers out-of-vocabulary queries.
    """
    total = sum(c for g, c in counts.ngrams(1).items() if g != (BOS,))
    probs = {gram[0]: eff / total for gram, eff in effective.items()}
    vocab_size = len(probs) + 1  # + unknown token
    leftover = 1.0 - sum(probs.values())
    probs[UNK] = max(leftover, UNK_FLOOR / vocab_size)
    # Renormalize so the level sums to exactly 1: higher-level backoff
    # denominators are computed as 1 - (seen mass) and would otherwise be
    # poisoned by the floor overshoot when a context has seen nearly
    # everything.
    norm = sum(probs.values())
    return {w: p / norm for w, p in probs.items()}


def good_turing_estimate(counts: CountTable) -> NGramModel:
    """Katz backoff model with Good-Turing discounting (k = 5)."""
    _check_nonempty(counts)
    logprobs: dict[NGram, float] = {}
    backoffs: dict[NGram, float] = {}

    # Unigrams: discounted relative frequencies; leftover mass to <unk>.
    table1 = counts.ngrams(1)
    discount1 = _gt_discounted(counts.counts_of_counts(1), "order 1")
    effective = {
        gram: discount1(c) for gram, c in table1.items() if gram != (BOS,)
    }
    unigrams = _unigram_base(counts, effective)
    for w, p in unigrams.items():
        logprobs[(w,)] = math.log10(p)
    logprobs[(BOS,)] = BOS_SENTINEL

    lower_probs: dict[NGram, float] = {(w,): p for w, p in unigrams.items()}

    for length in range(2, counts.order + 1):
        table = counts.ngrams(length)
        if not table:
            continue
        discount = _gt_discounted(counts.counts_of_counts(length), f"order {length}")
        by_context: dict[NGram, list[tuple[str, int]]] = {}
        for gram, c in table.items():
            by_context.setdefault(gram[:-1], []).append((gram[-1], c))
        level_probs: dict[NGram, float] = {}
        for context, entries in sorted(by_context.items()):
            context_total = sum(c for _, c in entries)
            seen_mass = 0.0
            seen_lower = 0.0
            for word, c in entries:
                p = discount(c) / context_total
                level_probs[context + (word,)] = p
                logprobs[context + (word,)] = math.log10(p)
                seen_mass += p
                seen_lower += _lower_prob(lower_probs, context, word)
            leftover = max(1.0 - seen_mass, MASS_FLOOR)
            denom = max(1.0 - seen_lower, MASS_FLOOR)
            backoffs[context] = math.log10(leftover / denom)
        lower_probs = level_probs

    vocab = sorted(set(unigrams) | {BOS})
    return NGramModel(counts.order, logprobs, backoffs, tuple(vocab))


def _lower_prob(lower_probs: dict[NGram, float], context: NGram, word: str) -> float:
    """Linear-scale probability of `word` one level down from `context`."""
    suffix = context[1:]
    gram = suffix + (word,)
    if gram in lower_probs:
        return lower_probs[gram]
    # only reachable for unigram lookups of words whose mass sits on <unk>
    return lower_probs.get((UNK,), 0.0)


def kneser_ney_estimate(counts: CountTable) -> NGramModel:
    """Interpolated Kneser-Ney model, single discount D per order.

    Lower-order distributions use continuation counts (how many distinct
    left contexts an n-gram appears after); n-grams whose context begins
    with the start marker keep raw counts, since nothing can precede the
    marker.  Interpolation is folded into the stored probabilities, so the
    model evaluates with plain backoff rules.
    """
    _check_nonempty(counts)
    order = counts.order

    # Effective counts per level: raw at top order, continuation below.
    effective_by_level: list[dict[NGram, float]] = []
    for length in range(1, order + 1):
        if length == order:
            eff = {g: float(c) for g, c in counts.ngrams(length).items()}
        else:
            cont = counts.continuation_counts(length)
            eff = {}
            for gram, c in counts.ngrams(length).items():
                if length > 1 and gram[0] == BOS:
                    eff[gram] = float(c)
                else:
                    eff[gram] = float(cont.get(gram, c))
        effective_by_level.append(eff)

    def level_discount(eff: dict[NGram, float], skip_bos: bool) -> float:
        n_r: Counter[int] = Counter()
        for gram, e in eff.items():
            if skip_bos and gram == (BOS,):
                continue
            n_r[int(round(e))] += 1
        return _absolute_discount(dict(n_r))

    logprobs: dict[NGram, float] = {}
    backoffs: dict[NGram, float] = {}

    # Unigram level: discounted continuation mass interpolated with uniform.
    eff1 = {g: e for g, e in effective_by_level[0].items() if g != (BOS,)}
    d1 = level_discount(effective_by_level[0], skip_bos=True)
    total1 = sum(eff1.values())
    types1 = len(eff1)
    vocab_size = types1 + 1  # + unknown token
    uniform = 1.0 / vocab_size
    unigrams: dict[str, float] = {}
    for (w,), e in eff1.items():
        unigrams[w] = (e - d1) / total1 + (d1 * types1 / total1) * uniform
    unk_p = (d1 * types1 / total1) * uniform
    unigrams[UNK] = max(unk_p, UNK_FLOOR / vocab_size)
    norm = sum(unigrams.values())  # exact-unity base for interpolation
    unigrams = {w: p / norm for w, p in unigrams.items()}
    for w, p in unigrams.items():
        logprobs[(w,)] = math.log10(p)
    logprobs[(BOS,)] = BOS_SENTINEL

    lower_probs: dict[NGram, float] = {(w,): p for w, p in unigrams.items()}
    if order == 1:
        return NGramModel(order, logprobs, backoffs, tuple(sorted(set(unigrams) | {BOS})))

    for length in range(2, order + 1):
        eff = effective_by_level[length - 1]
        if not eff:
            continue
        d = level_discount(eff, skip_bos=False)
        by_context: dict[NGram, list[tuple[str, float]]] = {}
        for gram, e in eff.items():
            by_context.setdefault(gram[:-1], []).append((gram[-1], e))
        level_probs: dict[NGram, float] = {}
        for context, entries in sorted(by_context.items()):
            context_total = sum(e for _, e in entries)
            lam = d * len(entries) / context_total
            for word, e in entries:
                p = (e - d) / context_total + lam * _lower_prob(lower_probs, context, word)
                level_probs[context + (word,)] = p
                logprobs[context + (word,)] = math.log10(p)
            backoffs[context] = math.log10(lam)
        lower_probs = level_probs

    vocab = sorted(set(unigrams) | {BOS})
    return NGramModel(order, logprobs, backoffs, tuple(vocab))


def log_prob(model: NGramModel, context: Sequence[str], word: str) -> float:
    """log10 P(word | context) by longest-match backoff.

    Out-of-vocabulary tokens (in the query word or the context) are mapped
    to the unknown token first; context beyond order-1 tokens is truncated.
    """
    known = set(model.vocab)
    w = word if word in known else UNK
    ctx = tuple(t if t in known else UNK for t in context)
    if len(ctx) > model.order - 1:
        ctx = ctx[len(ctx) - (model.order - 1) :]
    total = 0.0
    while True:
        gram = ctx + (w,)
        if gram in model.logprobs:
            return total + model.logprobs[gram]
        if not ctx:
            raise DataError(f"no unigram entry for {w!r}; model is missing <unk>")
        total += model.backoffs.get(ctx, 0.0)
        ctx = ctx[1:]


def sentence_log_prob(model: NGramModel, transcript) -> tuple[float, int]:
    """Total log10 probability of one sentence and its event count.

    Events are every token plus the end marker; the start marker is context
    only and contributes no event.
    """
    tokens = _tokens(transcript)
    history: list[str] = [BOS]
    total = 0.0
    for tok in tokens + [EOS]:
        total += log_prob(model, history[-(model.order - 1) :] if model.order > 1 else (), tok)
        history.append(tok)
    return total, len(tokens) + 1


def perplexity(model: NGramModel, heldout: Iterable) -> float:
    """10^(-average log10 probability) over all predicted events."""
    total = 0.0
    events = 0
    for transcript in heldout:
        lp, n = sentence_log_prob(model, transcript)
        total += lp
        events += n
    if events == 0:
        raise DataError("perplexity of an empty held-out set")
    return 10.0 ** (-total / events)


def _format_log10(value: float) -> str:
    text = f"{value:.6f}"
    return "0.000000" if text == "-0.000000" else text


def write_arpa(model: NGramModel, path) -> None:
    """Emit the standard ARPA backoff format (log10, 6 fractional digits)."""
    by_length: dict[int, list[NGram]] = {n: [] for n in range(1, model.order + 1)}
    for gram in model.logprobs:
        by_length[len(gram)].append(gram)
    lines = ["\\data\\"]
    for n in range(1, model.order + 1):
        lines.append(f"ngram {n}={len(by_length[n])}")
    lines.append("")
    for n in range(1, model.order + 1):
        lines.append(f"\\{n}-grams:")
        for gram in sorted(by_length[n]):
            parts = [_format_log10(model.logprobs[gram]), " ".join(gram)]
            if gram in model.backoffs:
                parts.append(_format_log10(model.backoffs[gram]))
            lines.append("\t".join(parts))
        lines.append("")
    lines.append("\\end\\")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_arpa(path) -> NGramModel:
    """Parse an ARPA file back into a model; errors carry line numbers."""
    with open(path, "r", encoding="utf-8") as f:
        raw_lines = f.read().splitlines()

    declared: dict[int, int] = {}
    logprobs: dict[NGram, float] = {}
    backoffs: dict[NGram, float] = {}
    section = None  # None | "data" | int order
    seen_end = False
    counts_in_section: dict[int, int] = {}

    for lineno, line in enumerate(raw_lines, start=1):
        text = line.strip()
        if not text:
            continue
        if text == "\\data\\":
            section = "data"
            continue
        if text == "\\end\\":
            seen_end = True
            section = None
            continue
        if text.startswith("\\") and text.endswith("-grams:"):
            try:
                n = int(text[1:].split("-")[0])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed section header {text!r}")
            if n not in declared:
                raise DataError(f"{path}: line {lineno}: section {n}-grams was not declared")
            section = n
            counts_in_section[n] = 0
            continue
        if section == "data":
            if not text.startswith("ngram "):
                raise DataError(f"{path}: line {lineno}: expected 'ngram N=count', got {text!r}")
            try:
                n_str, c_str = text[len("ngram ") :].split("=")
                declared[int(n_str)] = int(c_str)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed count declaration {text!r}")
            continue
        if isinstance(section, int):
            fields = text.split("\t")
            if len(fields) == 1:
                fields = text.split()
                if len(fields) >= 2:
                    fields = [fields[0], " ".join(fields[1:])]
            if len(fields) not in (2, 3):
                raise DataError(f"{path}: line {lineno}: malformed n-gram entry {text!r}")
            try:
                lp = float(fields[0])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: bad log probability {fields[0]!r}")
            gram = tuple(fields[1].split())
            if len(gram) != section:
                raise DataError(
                    f"{path}: line {lineno}: {len(gram)}-gram in {section}-gram section"
                )
            logprobs[gram] = lp
            if len(fields) == 3:
                try:
                    backoffs[gram] = float(fields[2])
                except ValueError:
                    raise DataError(f"{path}: line {lineno}: bad backoff weight {fields[2]!r}")
            counts_in_section[section] += 1
            continue
        raise DataError(f"{path}: line {lineno}: content outside any section: {text!r}")

    if not declared:
        raise DataError(f"{path}: missing \\data\\ section")
    if not seen_end:
        raise DataError(f"{path}: missing \\end\\ marker")
    for n, c in declared.items():
        if counts_in_section.get(n, 0) != c:
            raise DataError(
                f"{path}: declared {c} {n}-grams but found {counts_in_section.get(n, 0)}"
            )
    order = max(declared)
    vocab = sorted({w for gram in logprobs for w in gram} | {UNK})
    return NGramModel(order, logprobs, backoffs, tuple(vocab))
