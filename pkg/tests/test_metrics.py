import math
import random

import numpy as np
import pytest

from tonalasr.corpus import Transcript
from tonalasr.errors import DataError, NumericalError
from tonalasr.metrics import (
    EditStats,
    corpus_ser,
    edit_stats,
    si_snr,
    si_snr_loss,
    si_snr_loss_grad,
)


def T(text):
    return Transcript.parse(text)


def brute_force_distance(ref, hyp):
    """Independent memoized recursion on token lists (totals only)."""
    memo = {}

    def go(i, j):
        if (i, j) in memo:
            return memo[(i, j)]
        if i == len(ref):
            result = len(hyp) - j
        elif j == len(hyp):
            result = len(ref) - i
        else:
            result = min(
                go(i + 1, j + 1) + (ref[i] != hyp[j]),
                go(i + 1, j) + 1,
                go(i, j + 1) + 1,
            )
        memo[(i, j)] = result
        return result

    return go(0, 0)


def enumerate_alignments(ref, hyp):
    """All (S, D, I) triples over every complete monotone edit script."""
    results = []

    def go(i, j, s, d, ins):
        if i == len(ref) and j == len(hyp):
            results.append((s, d, ins))
            return
        if i < len(ref) and j < len(hyp):
            go(i + 1, j + 1, s + (ref[i] != hyp[j]), d, ins)
        if i < len(ref):
            go(i + 1, j, s, d + 1, ins)
        if j < len(hyp):
            go(i, j + 1, s, d, ins + 1)

    go(0, 0, 0, 0, 0)
    return results


def random_transcript(rng, max_len=12):
    bases = ["a", "e", "i", "o", "u", "tai", "gi"]
    syllables = [
        f"{rng.choice(bases)}{rng.randint(1, 9)}" for _ in range(rng.randint(0, max_len))
    ]
    return T(" ".join(syllables))


class TestEditStats:
    def test_identity(self):
        st = edit_stats(T("tai5 gi2"), T("tai5 gi2"))
        assert (st.substitutions, st.deletions, st.insertions) == (0, 0, 0)
        assert st.ser == 0.0

    def test_tone_substitution(self):
        st = edit_stats(T("tai5 gi2"), T("tai5 gi3"), tone_sensitive=True)
        assert st.substitutions == 1 and st.ser == 0.5
        st = edit_stats(T("tai5 gi2"), T("tai5 gi3"), tone_sensitive=False)
        assert st.total_edits == 0 and st.ser == 0.0

    def test_full_deletion(self):
        st = edit_stats(T("a1"), T(""))
        assert st.deletions == 1 and st.ser == 1.0

    def test_prefers_substitution_over_ins_del(self):
        st = edit_stats(T("a1"), T("b2"))
        assert (st.substitutions, st.deletions, st.insertions) == (1, 0, 0)

    def test_matches_exhaustive_alignment_oracle(self):
        rng = random.Random(5)
        for _ in range(50):
            ref = random_transcript(rng, max_len=4)
            hyp = random_transcript(rng, max_len=4)
            st = edit_stats(ref, hyp)
            alignments = enumerate_alignments(ref.tokens(), hyp.tokens())
            best_total = min(sum(a) for a in alignments)
            assert st.total_edits == best_total
            # the tie-break picks the minimal alignment with the most substitutions
            best_subs = max(a[0] for a in alignments if sum(a) == best_total)
            assert st.substitutions == best_subs

    def test_symmetry(self):
        rng = random.Random(7)
        for _ in range(50):
            ref = random_transcript(rng, 8)
            hyp = random_transcript(rng, 8)
            ab = edit_stats(ref, hyp)
            ba = edit_stats(hyp, ref)
            assert ab.total_edits == ba.total_edits
            assert ab.insertions == ba.deletions and ab.deletions == ba.insertions

    def test_triangle_inequality(self):
        rng = random.Random(9)
        for _ in range(30):
            a, b, c = (random_transcript(rng, 6) for _ in range(3))
            dab = edit_stats(a, b).total_edits
            dbc = edit_stats(b, c).total_edits
            dac = edit_stats(a, c).total_edits
            assert dac <= dab + dbc

    def test_toneless_never_worse(self):
        rng = random.Random(13)
        for _ in range(100):
            ref = random_transcript(rng, 8)
            hyp = random_transcript(rng, 8)
            tonal = edit_stats(ref, hyp, tone_sensitive=True).total_edits
            toneless = edit_stats(ref, hyp, tone_sensitive=False).total_edits
            assert toneless <= tonal


class TestCorpusSer:
    def test_single_pair(self):
        assert corpus_ser([(T("a1 b2"), T("a1 c3"))]) == 0.5

    def test_pooled_not_averaged(self):
        pairs = [(T("a1 b2"), T("a1 c3")), (T("a1 b2"), T("a1 b2"))]
        assert corpus_ser(pairs) == 0.25

    def test_matches_bruteforce_recount(self):
        rng = random.Random(21)
        pairs = [(random_transcript(rng), random_transcript(rng)) for _ in range(100)]
        pairs = [(r, h) for r, h in pairs if len(r) > 0 or len(h) > 0]
        total_edits = sum(brute_force_distance(r.tokens(), h.tokens()) for r, h in pairs)
        total_ref = sum(len(r) for r, _ in pairs)
        assert corpus_ser(pairs) == pytest.approx(total_edits / total_ref)

    def test_empty_reference_errors(self):
        with pytest.raises(NumericalError):
            corpus_ser([(T(""), T("a1"))])


def orthogonal_pair(rng, n=256, energy_ratio=10.0):
    s = rng.standard_normal(n)
    s -= s.mean()
    n0 = rng.standard_normal(n)
    n0 -= n0.mean()
    n0 -= (np.dot(n0, s) / np.dot(s, s)) * s
    n0 *= math.sqrt(np.dot(s, s) / (energy_ratio * np.dot(n0, n0)))
    return s, n0


class TestSiSnr:
    def test_perfect_reconstruction(self):
        s = np.sin(np.linspace(0, 20, 400))
        assert si_snr(s, s) == math.inf

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal(300)
        for alpha in (-3.0, 0.5, 2.0, 1e-3):
            assert si_snr(s, alpha * s) == math.inf

    def test_orthogonal_noise_10db(self):
        rng = np.random.default_rng(4)
        s, noise = orthogonal_pair(rng, energy_ratio=10.0)
        assert si_snr(s, s + noise) == pytest.approx(10.0, abs=1e-9)

    def test_offset_invariance(self):
        rng = np.random.default_rng(6)
        s = rng.standard_normal(200)
        x = rng.standard_normal(200)
        base = si_snr(s, x)
        assert si_snr(s + 0.7, x) == pytest.approx(base, abs=1e-9)
        assert si_snr(s, x - 1.3) == pytest.approx(base, abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            si_snr(np.zeros(10) + 1.0, np.zeros(11))

    def test_zero_reference(self):
        with pytest.raises(NumericalError):
            si_snr(np.full(64, 0.25), np.random.default_rng(0).standard_normal(64))


class TestSiSnrLoss:
    def test_floor_at_perfect_reconstruction(self):
        s = np.sin(np.linspace(0, 10, 128))
        assert si_snr_loss(s, s) == pytest.approx(-120.0)

    def test_sign_flip(self):
        rng = np.random.default_rng(8)
        s = rng.standard_normal(128)
        x = rng.standard_normal(128)
        assert si_snr_loss(s, x) == pytest.approx(-si_snr(s, x))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            s = rng.standard_normal(64)
            x = rng.standard_normal(64)
            _, grad = si_snr_loss_grad(s, x)
            fd = np.zeros(64)
            h = 1e-6
            for i in range(64):
                bump = np.zeros(64)
                bump[i] = h
                fd[i] = (si_snr_loss(s, x + bump) - si_snr_loss(s, x - bump)) / (2 * h)
            rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
            assert rel < 1e-4
