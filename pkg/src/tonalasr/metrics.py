"""Evaluation metrics: syllable error rate and scale-invariant SNR.

SER is unit-cost Levenshtein against the reference, pooled over a corpus as
(S + D + I) / total reference length.  Tone-insensitive scoring compares
syllable bases only.  SI-SNR follows the standard enhancement criterion:
both signals are zero-meaned, the estimate is projected onto the reference,
and the value is the dB energy ratio of projection to residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import Transcript
from .errors import DataError, NumericalError

# Floor on the residual energy used by the loss, relative to the target
# energy.  Keeps the loss finite and differentiable at perfect reconstruction:
# the loss bottoms out at -10*log10(1/LOSS_FLOOR) = -120 dB.
LOSS_FLOOR = 1e-12

# Relative residual energy below which the estimate counts as an exact
# rescaling of the reference.  Rounding in the mean removal and projection
# leaves ~1e-30 relative energy on truly proportional pairs; real SNRs sit
# many orders of magnitude above this.
_PROPORTIONAL_TOL = 1e-25


@dataclass(frozen=True)
class EditStats:
    """Substitution/deletion/insertion counts against a reference."""

    substitutions: int
    deletions: int
    insertions: int
    ref_len: int

    @property
    def total_edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def ser(self) -> float:
        if self.ref_len == 0:
            raise NumericalError("SER undefined for empty reference")
        return self.total_edits / self.ref_len

    def __add__(self, other: "EditStats") -> "EditStats":
        return EditStats(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.ref_len + other.ref_len,
        )


def _tokens(transcript: Transcript, tone_sensitive: bool) -> list[str]:
    if tone_sensitive:
        return [s.text for s in transcript]
    return [s.base for s in transcript]


def edit_stats(ref: Transcript, hyp: Transcript, tone_sensitive: bool = True) -> EditStats:
    """Minimal unit-cost alignment of ``hyp`` against ``ref``.

    With ``tone_sensitive=False`` two syllables match iff their bases match.
    Among minimal alignments, ties are resolved in favor of substitutions
    over insertion+deletion pairs (backtrace prefers the diagonal move).
    """
    r = _tokens(ref, tone_sensitive)
    h = _tokens(hyp, tone_sensitive)
    n, m = len(r), len(h)
    # dist[i][j] = minimal edits aligning r[:i] with h[:j]
    dist = np.zeros((n + 1, m + 1), dtype=np.int32)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ri = r[i - 1]
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != h[j - 1])
            row[j] = min(sub, prev[j] + 1, row[j - 1] + 1)
    # Backtrace, preferring diagonal moves so ties become substitutions.
    i, j = n, m
    subs = dels = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (r[i - 1] != h[j - 1]):
            if r[i - 1] != h[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(subs, dels, ins, n)


def corpus_ser(
    pairs: list[tuple[Transcript, Transcript]], tone_sensitive: bool = True
) -> float:
    """Pooled SER over (reference, hypothesis) pairs: sum of edits over sum of lengths."""
    totals = EditStats(0, 0, 0, 0)
    for ref, hyp in pairs:
        totals = totals + edit_stats(ref, hyp, tone_sensitive)
    if totals.ref_len == 0:
        raise NumericalError("corpus SER undefined: total reference length is zero")
    return totals.ser


def corpus_edit_stats(
    pairs: list[tuple[Transcript, Transcript]], tone_sensitive: bool = True
) -> EditStats:
    totals = EditStats(0, 0, 0, 0)
    for ref, hyp in pairs:
        totals = totals + edit_stats(ref, hyp, tone_sensitive)
    return totals


def _zero_mean_pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(reference, dtype=np.float64)
    x = np.asarray(estimate, dtype=np.float64)
    if s.ndim != 1 or x.ndim != 1:
        raise DataError("SI-SNR expects 1-D sample sequences")
    if s.shape != x.shape:
        raise DataError(f"SI-SNR length mismatch: reference {s.size} vs estimate {x.size}")
    if s.size == 0:
        raise DataError("SI-SNR undefined for empty signals")
    s = s - s.mean()
    x = x - x.mean()
    if not np.any(s):
        raise NumericalError("SI-SNR undefined: reference has zero energy after mean removal")
    return s, x


def si_snr(reference, estimate) -> float:
    """Scale-invariant SNR in dB; +inf when the estimate is an exact rescaling.

    Both signals are zero-meaned first (the criterion assumes zero-mean
    inputs; applying the removal here makes the metric offset-invariant).
    """
    s, x = _zero_mean_pair(reference, estimate)
    alpha = np.dot(x, s) / np.dot(s, s)
    target = alpha * s
    residual = x - target
    target_energy = np.dot(target, target)
    residual_energy = np.dot(residual, residual)
    if target_energy == 0.0:
        return -math.inf
    if residual_energy <= _PROPORTIONAL_TOL * target_energy:
        return math.inf
    return 10.0 * math.log10(target_energy / residual_energy)


def si_snr_loss(reference, estimate) -> float:
    """Negative SI-SNR with the residual energy floored for finiteness.

    Perfect reconstruction hits the floor: -10*log10(1/1e-12) = -120 dB.
    """
    loss, _ = si_snr_loss_grad(reference, estimate)
    return loss


def si_snr_loss_grad(reference, estimate) -> tuple[float, np.ndarray]:
    """Loss plus its analytic gradient with respect to the raw estimate.

    With s, x the zero-meaned signals, a = <x,s>/<s,s>, t = a*s and
    e = x - t, the loss is -10*log10(|t|^2 / max(|e|^2, floor*|t|^2)) and

        dL/dx = -(20/ln 10) * (a*s/|t|^2 - e/|e|^2)

    (zero when the floor is active, since the floored ratio is constant).
    Both s and e are zero-mean, so the gradient already lies in the
    mean-removal subspace and passes through to the raw estimate unchanged.
    """
    s, x = _zero_mean_pair(reference, estimate)
    alpha = np.dot(x, s) / np.dot(s, s)
    if alpha == 0.0:
        raise NumericalError("SI-SNR loss undefined: estimate orthogonal to reference")
    target = alpha * s
    residual = x - target
    target_energy = np.dot(target, target)
    residual_energy = np.dot(residual, residual)
    floor = LOSS_FLOOR * target_energy
    if residual_energy <= floor:
        return -10.0 * math.log10(1.0 / LOSS_FLOOR), np.zeros_like(x)
    loss = -10.0 * math.log10(target_energy / residual_energy)
    scale = 20.0 / math.log(10.0)
    grad = -scale * (alpha * s / target_energy - residual / residual_energy)
    return loss, grad
