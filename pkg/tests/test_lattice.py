import math
import random

import pytest

from tonalasr.corpus import TonalSyllable, Transcript
from tonalasr.errors import DataError
from tonalasr.lattice import (
    Arc,
    Lattice,
    best_path,
    combine,
    confidence,
    connect,
    log_partition,
    mbr_decode,
    n_best,
    posteriors,
    read_lattice,
    topological_order,
    write_lattice,
)
from tonalasr.metrics import edit_stats

INF = float("inf")


def syl(text):
    base = text[:-1]
    return TonalSyllable(base, int(text[-1]))


def arc(a, b, label, acoustic=0.0, lm=0.0):
    return Arc(a, b, syl(label) if label else None, acoustic, lm)


def random_lattice(rng, n_states=8, extra_arcs=8):
    """Connected DAG: a backbone chain plus random forward arcs; final at end."""
    bases = ["ta", "gi", "ho", "la", "si"]
    def rand_arc(a, b):
        return Arc(
            a, b,
            TonalSyllable(rng.choice(bases), rng.randint(1, 9)),
            rng.uniform(-3.0, 0.0),
            rng.uniform(-2.0, 0.0),
        )
    arcs = [rand_arc(s, s + 1) for s in range(n_states - 1)]
    for _ in range(extra_arcs):
        a = rng.randrange(0, n_states - 1)
        b = rng.randrange(a + 1, n_states)
        arcs.append(rand_arc(a, b))
    return Lattice(n_states, tuple(arcs), ((n_states - 1, rng.uniform(-1.0, 0.0)),))


def enumerate_paths(lat, k):
    """All complete paths as (arc index tuple, total weight)."""
    out = lat.out_arcs()
    results = []

    def walk(state, path, weight):
        fw = lat.final_weight(state)
        if fw != -INF:
            results.append((tuple(path), weight + fw))
        for i in out[state]:
            walk(lat.arcs[i].dst, path + [i], weight + lat.arcs[i].weight(k))

    walk(0, [], 0.0)
    return results


def logsumexp(values):
    hi = max(values)
    return hi + math.log(sum(math.exp(v - hi) for v in values))


class TestStructure:
    def test_arc_bounds_checked(self):
        with pytest.raises(DataError):
            Lattice(2, (arc(0, 5, "ta1"),), ((1, 0.0),))

    def test_duplicate_final_rejected(self):
        with pytest.raises(DataError):
            Lattice(2, (arc(0, 1, "ta1"),), ((1, 0.0), (1, -1.0)))

    def test_cycle_detected(self):
        lat = Lattice(3, (arc(0, 1, "ta1"), arc(1, 2, "gi2"), arc(2, 1, "ho2")), ((2, 0.0),))
        with pytest.raises(DataError, match="cycle"):
            topological_order(lat)

    def test_connect_drops_dead_states(self):
        # state 2 is a dead end, state 3 unreachable
        lat = Lattice(
            5,
            (arc(0, 1, "ta1"), arc(1, 4, "gi2"), arc(0, 2, "ho2"), arc(3, 4, "la3")),
            ((4, 0.0),),
        )
        trimmed = connect(lat)
        assert trimmed.num_states == 3
        before = sorted(w for _, w in enumerate_paths(lat, 1.0))
        after = sorted(w for _, w in enumerate_paths(trimmed, 1.0))
        assert after == pytest.approx(before)

    def test_connect_no_path(self):
        lat = Lattice(3, (arc(0, 1, "ta1"),), ((2, 0.0),))
        with pytest.raises(DataError, match="no complete path"):
            connect(lat)


class TestPosteriors:
    def test_single_path_all_one(self):
        lat = Lattice(
            3, (arc(0, 1, "ta1", -1.0, -0.5), arc(1, 2, "gi2", -2.0, 0.0)), ((2, -0.3),)
        )
        post = posteriors(lat, acoustic_scale=0.7)
        assert post == pytest.approx({0: 1.0, 1: 1.0})

    def test_two_parallel_equal_arcs(self):
        lat = Lattice(2, (arc(0, 1, "ta1", -1.0), arc(0, 1, "gi2", -1.0)), ((1, 0.0),))
        post = posteriors(lat, acoustic_scale=1.0)
        assert post == pytest.approx({0: 0.5, 1: 0.5})

    def test_matches_enumeration_oracle(self):
        rng = random.Random(17)
        for _ in range(10):
            lat = random_lattice(rng)
            k = rng.choice([0.3, 1.0, 1.7])
            paths = enumerate_paths(lat, k)
            logz = logsumexp([w for _, w in paths])
            post = posteriors(lat, k)
            for i in range(len(lat.arcs)):
                mass = [w for p, w in paths if i in p]
                expected = math.exp(logsumexp(mass) - logz) if mass else 0.0
                assert post[i] == pytest.approx(expected, abs=1e-9)

    def test_path_posteriors_sum_to_one(self):
        rng = random.Random(29)
        lat = random_lattice(rng)
        paths = n_best(lat, 1.0, n=10_000)
        assert sum(math.exp(p.log_posterior) for p in paths) == pytest.approx(1.0, abs=1e-9)

    def test_cut_sums(self):
        rng = random.Random(41)
        for _ in range(5):
            lat = random_lattice(rng)
            post = posteriors(lat, 1.0)
            position = {s: i for i, s in enumerate(topological_order(lat))}
            for cut in range(lat.num_states - 1):
                total = sum(
                    post[i]
                    for i, a in enumerate(lat.arcs)
                    if position[a.src] <= cut < position[a.dst]
                )
                assert total == pytest.approx(1.0, abs=1e-9)

    def test_forward_backward_agree(self):
        rng = random.Random(53)
        for _ in range(5):
            lat = random_lattice(rng)
            paths = enumerate_paths(lat, 0.5)
            assert log_partition(lat, 0.5) == pytest.approx(
                logsumexp([w for _, w in paths]), abs=1e-9
            )

    def test_scale_invariance(self):
        rng = random.Random(61)
        lat = random_lattice(rng)
        scaled = Lattice(
            lat.num_states,
            tuple(Arc(a.src, a.dst, a.label, 4.0 * a.acoustic, a.lm) for a in lat.arcs),
            lat.finals,
        )
        p1 = posteriors(lat, 0.8)
        p2 = posteriors(scaled, 0.2)
        for i in p1:
            assert p2[i] == pytest.approx(p1[i], abs=1e-12)


class TestBestAndNBest:
    def test_best_path_on_toy(self):
        lat = Lattice(
            3,
            (
                arc(0, 1, "ta1", -1.0),
                arc(0, 1, "gi2", -5.0),
                arc(1, 2, "ho2", -1.0),
            ),
            ((2, 0.0),),
        )
        best = best_path(lat, 1.0)
        assert best.transcript.text == "ta1 ho2"

    def test_nbest_matches_enumeration(self):
        rng = random.Random(71)
        for _ in range(8):
            lat = random_lattice(rng)
            k = rng.choice([0.5, 1.0])
            expected = sorted((w for _, w in enumerate_paths(lat, k)), reverse=True)
            logz = logsumexp(expected)
            got = n_best(lat, k, n=len(expected) + 5)
            assert len(got) == len(expected)
            weights = [p.log_posterior + logz for p in got]
            assert weights == pytest.approx(expected, abs=1e-9)
            # descending and deduplicated at the arc-path level
            assert weights == sorted(weights, reverse=True)
            assert len({p.arcs for p in got}) == len(got)

    def test_unique_labels_merges_mass(self):
        # two arc-distinct paths with the same labels plus one distinct path
        lat = Lattice(
            3,
            (
                arc(0, 1, "ta1", math.log(0.3)),
                arc(0, 1, "ta1", math.log(0.3)),
                arc(0, 1, "gi2", math.log(0.4)),
                arc(1, 2, "ho2", 0.0),
            ),
            ((2, 0.0),),
        )
        unique = n_best(lat, 1.0, n=5, unique_labels=True)
        assert [p.transcript.text for p in unique] == ["ta1 ho2", "gi2 ho2"]
        assert math.exp(unique[0].log_posterior) == pytest.approx(0.6, abs=1e-12)
        assert math.exp(unique[1].log_posterior) == pytest.approx(0.4, abs=1e-12)

    def test_empty_lattice_single_state(self):
        lat = Lattice(1, (), ((0, -0.25),))
        best = best_path(lat, 1.0)
        assert best.transcript.text == ""
        assert best.log_posterior == pytest.approx(0.0)


class TestConfidence:
    def test_single_path(self):
        lat = Lattice(2, (arc(0, 1, "ta1", -3.0),), ((1, -1.0),))
        assert confidence(lat, 1.0) == pytest.approx(1.0)

    def test_two_equal_paths(self):
        lat = Lattice(2, (arc(0, 1, "ta1", -1.0), arc(0, 1, "gi2", -1.0)), ((1, 0.0),))
        assert confidence(lat, 1.0) == pytest.approx(0.5)

    def test_matches_enumeration(self):
        rng = random.Random(83)
        for _ in range(6):
            lat = random_lattice(rng)
            paths = enumerate_paths(lat, 1.0)
            weights = [w for _, w in paths]
            expected = math.exp(max(weights) - logsumexp(weights))
            assert confidence(lat, 1.0) == pytest.approx(expected, abs=1e-9)


class TestCombine:
    def test_empty_list_rejected(self):
        with pytest.raises(DataError):
            combine([])

    def test_identity_exact(self):
        rng = random.Random(97)
        lat = random_lattice(rng)
        merged = combine([lat])
        orig = n_best(lat, 0.9, n=1000)
        got = n_best(merged, 0.9, n=1000)
        assert [p.log_posterior for p in got] == [p.log_posterior for p in orig]
        assert [p.transcript.text for p in got] == [p.transcript.text for p in orig]

    def test_equal_copies_leave_label_posteriors_unchanged(self):
        rng = random.Random(101)
        lat = random_lattice(rng, n_states=6, extra_arcs=4)
        single = n_best(lat, 1.0, n=1000, unique_labels=True)
        doubled = n_best(combine([lat, lat]), 1.0, n=1000, unique_labels=True)
        ref = {p.transcript.text: math.exp(p.log_posterior) for p in single}
        got = {p.transcript.text: math.exp(p.log_posterior) for p in doubled}
        assert got == pytest.approx(ref, abs=1e-12)

    def test_three_way_matches_enumeration(self):
        rng = random.Random(103)
        lats = [random_lattice(rng, n_states=5, extra_arcs=3) for _ in range(3)]
        merged = combine(lats)
        # oracle: each input path keeps weight + log(1/3); joint Z sums inputs
        all_weights = []
        for lat in lats:
            all_weights.extend(w + math.log(1 / 3) for _, w in enumerate_paths(lat, 1.0))
        logz = logsumexp(all_weights)
        expected = sorted((w - logz for w in all_weights), reverse=True)
        got = [p.log_posterior for p in n_best(merged, 1.0, n=10_000)]
        assert got == pytest.approx(expected, abs=1e-9)

    def test_structure_offsets(self):
        a = Lattice(2, (arc(0, 1, "ta1"),), ((1, 0.0),))
        b = Lattice(2, (arc(0, 1, "gi2"),), ((1, 0.0),))
        merged = combine([a, b])
        assert merged.num_states == 5
        eps = [x for x in merged.arcs if x.label is None]
        assert [(x.src, x.dst) for x in eps] == [(0, 1), (0, 3)]
        assert all(x.lm == pytest.approx(-math.log(2)) for x in eps)


class TestMbrDecode:
    def test_single_path(self):
        lat = Lattice(3, (arc(0, 1, "ta1"), arc(1, 2, "gi2")), ((2, 0.0),))
        assert mbr_decode(lat, 1.0).text == "ta1 gi2"

    def test_majority_path_wins(self):
        lat = Lattice(
            2,
            (arc(0, 1, "ta1", math.log(0.7)), arc(0, 1, "gi2", math.log(0.3))),
            ((1, 0.0),),
        )
        assert mbr_decode(lat, 1.0).text == "ta1"

    def test_matches_brute_force(self):
        rng = random.Random(113)
        for _ in range(10):
            lat = random_lattice(rng, n_states=6, extra_arcs=4)
            paths = enumerate_paths(lat, 1.0)
            assert len(paths) <= 50
            logz = logsumexp([w for _, w in paths])
            labeled = [
                (Transcript(tuple(lat.arcs[i].label for i in p if lat.arcs[i].label)), w)
                for p, w in paths
            ]
            candidates = {}
            for t, w in labeled:
                key = t.text
                candidates.setdefault(key, [t, 0.0])
                candidates[key][1] += math.exp(w - logz)
            def risk(cand):
                return sum(
                    math.exp(w - logz) * edit_stats(cand, t).total_edits for t, w in labeled
                )
            best_key = min(
                candidates, key=lambda k: (risk(candidates[k][0]), -candidates[k][1], k)
            )
            got = mbr_decode(lat, 1.0, n_cap=1000)
            assert got.text == best_key

    def test_never_worse_than_one_best(self):
        rng = random.Random(127)
        for _ in range(10):
            lat = random_lattice(rng, n_states=6, extra_arcs=5)
            paths = enumerate_paths(lat, 1.0)
            logz = logsumexp([w for _, w in paths])
            labeled = [
                (Transcript(tuple(lat.arcs[i].label for i in p if lat.arcs[i].label)), w)
                for p, w in paths
            ]
            def risk(cand):
                return sum(
                    math.exp(w - logz) * edit_stats(cand, t).total_edits for t, w in labeled
                )
            one_best = best_path(lat, 1.0).transcript
            mbr = mbr_decode(lat, 1.0, n_cap=1000)
            assert risk(mbr) <= risk(one_best) + 1e-12


class TestLatticeIO:
    def test_roundtrip(self, tmp_path):
        rng = random.Random(131)
        lat = random_lattice(rng)
        p = tmp_path / "l.lat"
        write_lattice(lat, p)
        back = read_lattice(p)
        assert back.num_states == lat.num_states
        assert back.arcs == lat.arcs
        assert back.finals == lat.finals

    def test_epsilon_and_comments(self, tmp_path):
        p = tmp_path / "l.lat"
        p.write_text("# header comment\n0\t1\t<eps>\t-1.5\t0.0\n\nfinal\t1\t-0.25\n")
        lat = read_lattice(p)
        assert lat.arcs[0].label is None
        assert lat.finals == ((1, -0.25),)

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "l.lat"
        p.write_text("0\t1\tta1\t-1.0\t0.0\n0\t2\tta1\tnot_a_float\t0.0\n")
        with pytest.raises(DataError, match="line 2"):
            read_lattice(p)

    def test_bad_label_rejected(self, tmp_path):
        p = tmp_path / "l.lat"
        p.write_text("0\t1\tta\t-1.0\t0.0\nfinal\t1\t0.0\n")
        with pytest.raises(DataError, match="line 1"):
            read_lattice(p)

    def test_posteriors_survive_roundtrip(self, tmp_path):
        rng = random.Random(137)
        lat = random_lattice(rng)
        p = tmp_path / "l.lat"
        write_lattice(lat, p)
        back = read_lattice(p)
        assert posteriors(back, 0.7) == pytest.approx(posteriors(lat, 0.7))
