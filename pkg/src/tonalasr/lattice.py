"""Acyclic weighted lattices: posteriors, N-best, combination, MBR decoding.

A lattice is a DAG over states 0..S-1 with state 0 as the start; arcs carry
a syllable label (or epsilon) plus separate acoustic and LM log scores, and
final states carry a final log weight.  All scores are natural logs.  The
acoustic scale k enters only at evaluation time, as the combined arc weight
k*acoustic + lm, so one lattice can be rescored without rebuilding it.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

from .corpus import Transcript, TonalSyllable, parse_tonal_syllable
from .errors import DataError, NumericalError
from .metrics import edit_stats

EPSILON_TEXT = "<eps>"
LOGZERO = float("-inf")
# forward and backward partition functions must agree to this tolerance
PARTITION_TOL = 1e-6


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    label: TonalSyllable | None  # None = epsilon
    acoustic: float
    lm: float

    def weight(self, acoustic_scale: float) -> float:
        return acoustic_scale * self.acoustic + self.lm


@dataclass(frozen=True, eq=False)
class Lattice:
    """States 0..num_states-1, start state 0, arcs and weighted final states."""

    num_states: int
    arcs: tuple[Arc, ...]
    finals: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if self.num_states < 1:
            raise DataError("lattice needs at least the start state")
        for arc in self.arcs:
            if not (0 <= arc.src < self.num_states and 0 <= arc.dst < self.num_states):
                raise DataError(f"arc {arc.src}->{arc.dst} references a missing state")
        seen_finals = set()
        for state, _ in self.finals:
            if not 0 <= state < self.num_states:
                raise DataError(f"final state {state} out of range")
            if state in seen_finals:
                raise DataError(f"state {state} listed final twice")
            seen_finals.add(state)

    def final_weight(self, state: int) -> float:
        for s, w in self.finals:
            if s == state:
                return w
        return LOGZERO

    def out_arcs(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_states)]
        for i, arc in enumerate(self.arcs):
            out[arc.src].append(i)
        return out

    def in_arcs(self) -> list[list[int]]:
        inc: list[list[int]] = [[] for _ in range(self.num_states)]
        for i, arc in enumerate(self.arcs):
            inc[arc.dst].append(i)
        return inc


@dataclass(frozen=True)
class PathPosterior:
    """One complete path: its arc indices, label sequence and log posterior."""

    arcs: tuple[int, ...]
    transcript: Transcript
    log_posterior: float


def _logaddexp(a: float, b: float) -> float:
    if a == LOGZERO:
        return b
    if b == LOGZERO:
        return a
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def topological_order(lattice: Lattice) -> list[int]:
    """Kahn's algorithm; rejects cyclic inputs."""
    indegree = [0] * lattice.num_states
    for arc in lattice.arcs:
        indegree[arc.dst] += 1
    out = lattice.out_arcs()
    ready = sorted(s for s in range(lattice.num_states) if indegree[s] == 0)
    order = []
    while ready:
        state = ready.pop(0)
        order.append(state)
        for i in out[state]:
            dst = lattice.arcs[i].dst
            indegree[dst] -= 1
            if indegree[dst] == 0:
                ready.append(dst)
    if len(order) != lattice.num_states:
        raise DataError("lattice has a cycle")
    return order


def connect(lattice: Lattice) -> Lattice:
    """Drop states off every complete path; error if nothing survives."""
    out, inc = lattice.out_arcs(), lattice.in_arcs()
    forward = {0}
    stack = [0]
    while stack:
        state = stack.pop()
        for i in out[state]:
            dst = lattice.arcs[i].dst
            if dst not in forward:
                forward.add(dst)
                stack.append(dst)
    backward = {s for s, _ in lattice.finals}
    stack = list(backward)
    while stack:
        state = stack.pop()
        for i in inc[state]:
            src = lattice.arcs[i].src
            if src not in backward:
                backward.add(src)
                stack.append(src)
    alive = forward & backward
    if 0 not in alive:
        raise DataError("no complete path from start to a final state")
    remap = {old: new for new, old in enumerate(sorted(alive))}
    arcs = tuple(
        Arc(remap[a.src], remap[a.dst], a.label, a.acoustic, a.lm)
        for a in lattice.arcs
        if a.src in alive and a.dst in alive
    )
    finals = tuple((remap[s], w) for s, w in lattice.finals if s in alive)
    return Lattice(len(alive), arcs, finals)


def _forward(lattice: Lattice, acoustic_scale: float, order: list[int]) -> list[float]:
    alpha = [LOGZERO] * lattice.num_states
    alpha[0] = 0.0
    inc = lattice.in_arcs()
    for state in order:
        for i in inc[state]:
            arc = lattice.arcs[i]
            alpha[state] = _logaddexp(
                alpha[state], alpha[arc.src] + arc.weight(acoustic_scale)
            )
    return alpha


def _backward(lattice: Lattice, acoustic_scale: float, order: list[int]) -> list[float]:
    beta = [LOGZERO] * lattice.num_states
    for state, w in lattice.finals:
        beta[state] = w
    out = lattice.out_arcs()
    for state in reversed(order):
        for i in out[state]:
            arc = lattice.arcs[i]
            beta[state] = _logaddexp(
                beta[state], beta[arc.dst] + arc.weight(acoustic_scale)
            )
    return beta


def log_partition(lattice: Lattice, acoustic_scale: float = 1.0) -> float:
    """Log sum of all complete path weights; checks forward/backward agreement."""
    order = topological_order(lattice)
    alpha = _forward(lattice, acoustic_scale, order)
    beta = _backward(lattice, acoustic_scale, order)
    logz_f = LOGZERO
    for state, w in lattice.finals:
        logz_f = _logaddexp(logz_f, alpha[state] + w)
    logz_b = beta[0]
    if logz_f == LOGZERO or logz_b == LOGZERO:
        raise DataError("no complete path from start to a final state")
    if abs(logz_f - logz_b) > PARTITION_TOL:
        raise NumericalError(
            f"partition mismatch: forward {logz_f!r} vs backward {logz_b!r}"
        )
    return logz_f


def posteriors(lattice: Lattice, acoustic_scale: float = 1.0) -> dict[int, float]:
    """Per-arc occupation probabilities by forward-backward."""
    order = topological_order(lattice)
    alpha = _forward(lattice, acoustic_scale, order)
    beta = _backward(lattice, acoustic_scale, order)
    logz = beta[0]
    if logz == LOGZERO:
        raise DataError("no complete path from start to a final state")
    logz_f = LOGZERO
    for state, w in lattice.finals:
        logz_f = _logaddexp(logz_f, alpha[state] + w)
    if abs(logz_f - logz) > PARTITION_TOL:
        raise NumericalError(
            f"partition mismatch: forward {logz_f!r} vs backward {logz!r}"
        )
    result = {}
    for i, arc in enumerate(lattice.arcs):
        score = alpha[arc.src] + arc.weight(acoustic_scale) + beta[arc.dst]
        result[i] = math.exp(score - logz) if score != LOGZERO else 0.0
    return result


def _viterbi_to_final(lattice: Lattice, acoustic_scale: float, order: list[int]) -> list[float]:
    """Best achievable weight from each state to any final state."""
    best = [LOGZERO] * lattice.num_states
    for state, w in lattice.finals:
        best[state] = w
    out = lattice.out_arcs()
    for state in reversed(order):
        for i in out[state]:
            arc = lattice.arcs[i]
            cand = arc.weight(acoustic_scale) + best[arc.dst]
            if cand > best[state]:
                best[state] = cand
    return best


def _labels(lattice: Lattice, arc_indices) -> Transcript:
    return Transcript(
        tuple(
            lattice.arcs[i].label for i in arc_indices if lattice.arcs[i].label is not None
        )
    )


def n_best(
    lattice: Lattice,
    acoustic_scale: float = 1.0,
    n: int = 1,
    unique_labels: bool = False,
) -> list[PathPosterior]:
    """Top-n complete paths in weight order (deterministic tie-breaking).

    Best-first search with the exact Viterbi completion heuristic, so paths
    pop in true descending order.  With unique_labels, paths sharing a label
    sequence are merged: the best path represents it and the posterior sums
    over the merged paths.
    """
    order = topological_order(lattice)
    heuristic = _viterbi_to_final(lattice, acoustic_scale, order)
    if heuristic[0] == LOGZERO:
        raise DataError("no complete path from start to a final state")
    logz = log_partition(lattice, acoustic_scale)
    out = lattice.out_arcs()
    tick = itertools.count()
    # heap holds partial paths (complete=False) and finished paths
    heap = [(-heuristic[0], next(tick), False, 0, (), 0.0)]
    results: list[PathPosterior] = []
    merged: dict[tuple, int] = {}
    while heap and len(results) < n:
        _, _, complete, state, path, weight = heapq.heappop(heap)
        if complete:
            labels = _labels(lattice, path)
            key = tuple(s.text for s in labels)
            if unique_labels and key in merged:
                idx = merged[key]
                prev = results[idx]
                combined = _logaddexp(prev.log_posterior, weight - logz)
                results[idx] = PathPosterior(prev.arcs, prev.transcript, combined)
                continue
            results.append(PathPosterior(tuple(path), labels, weight - logz))
            if unique_labels:
                merged[key] = len(results) - 1
            continue
        final_w = lattice.final_weight(state)
        if final_w != LOGZERO:
            total = weight + final_w
            heapq.heappush(heap, (-total, next(tick), True, state, path, total))
        for i in out[state]:
            arc = lattice.arcs[i]
            g = weight + arc.weight(acoustic_scale)
            h = heuristic[arc.dst]
            if h == LOGZERO:
                continue
            heapq.heappush(heap, (-(g + h), next(tick), False, arc.dst, path + (i,), g))
    if unique_labels:
        # merging may have grown posteriors of earlier entries out of order
        results.sort(key=lambda p: (-p.log_posterior, tuple(s.text for s in p.transcript)))
    return results


def best_path(lattice: Lattice, acoustic_scale: float = 1.0) -> PathPosterior:
    top = n_best(lattice, acoustic_scale, 1)
    return top[0]


def confidence(lattice: Lattice, acoustic_scale: float = 1.0) -> float:
    """Posterior of the single best path: exp(best weight - logZ)."""
    return math.exp(best_path(lattice, acoustic_scale).log_posterior)


def combine(lattices: list[Lattice]) -> Lattice:
    """Union under equal priors: a new start fans out over epsilon arcs.

    Each branch arc carries lm = -log(count), so every input contributes its
    paths with a 1/count prior that the acoustic scale cannot distort.  With
    a single input the branch weight is exactly zero and all path weights
    are preserved bit for bit.
    """
    if not lattices:
        raise DataError("cannot combine an empty list of lattices")
    prior = -math.log(len(lattices))
    arcs: list[Arc] = []
    finals: list[tuple[int, float]] = []
    offset = 1
    for lat in lattices:
        arcs.append(Arc(0, offset, None, 0.0, prior))
        for a in lat.arcs:
            arcs.append(Arc(a.src + offset, a.dst + offset, a.label, a.acoustic, a.lm))
        finals.extend((s + offset, w) for s, w in lat.finals)
        offset += lat.num_states
    return Lattice(offset, tuple(arcs), tuple(finals))


def mbr_decode(lattice: Lattice, acoustic_scale: float = 1.0, n_cap: int = 100) -> Transcript:
    """Minimum expected edit distance over the top-n_cap path hypotheses.

    Candidates are the unique label sequences among those paths; the risk of
    a candidate sums path posterior times tone-sensitive edit distance.
    Ties break toward the higher-posterior candidate, then lexicographically.
    """
    paths = n_best(lattice, acoustic_scale, n_cap)
    by_labels: dict[tuple, tuple[Transcript, float]] = {}
    for p in paths:
        key = tuple(s.text for s in p.transcript)
        post = math.exp(p.log_posterior)
        if key in by_labels:
            by_labels[key] = (by_labels[key][0], by_labels[key][1] + post)
        else:
            by_labels[key] = (p.transcript, post)
    best_key = None
    best_entry = None
    for key, (candidate, cand_post) in by_labels.items():
        risk = 0.0
        for p in paths:
            dist = edit_stats(candidate, p.transcript).total_edits
            risk += math.exp(p.log_posterior) * dist
        entry = (risk, -cand_post, key)
        if best_entry is None or entry < best_entry:
            best_entry = entry
            best_key = key
    return by_labels[best_key][0]


def write_lattice(lattice: Lattice, path) -> None:
    """One arc per line; finals prefixed `final`; floats via repr (lossless)."""
    lines = []
    for arc in lattice.arcs:
        label = arc.label.text if arc.label is not None else EPSILON_TEXT
        lines.append(f"{arc.src}\t{arc.dst}\t{label}\t{arc.acoustic!r}\t{arc.lm!r}")
    for state, w in lattice.finals:
        lines.append(f"final\t{state}\t{w!r}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + ("\n" if lines else ""))


def read_lattice(path) -> Lattice:
    arcs: list[Arc] = []
    finals: list[tuple[int, float]] = []
    max_state = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            try:
                if fields[0] == "final":
                    if len(fields) != 3:
                        raise ValueError("expected: final <state> <logweight>")
                    state, w = int(fields[1]), float(fields[2])
                    finals.append((state, w))
                    max_state = max(max_state, state)
                else:
                    if len(fields) != 5:
                        raise ValueError("expected: from to label acoustic lm")
                    src, dst = int(fields[0]), int(fields[1])
                    label = None if fields[2] == EPSILON_TEXT else parse_tonal_syllable(fields[2])
                    arcs.append(Arc(src, dst, label, float(fields[3]), float(fields[4])))
                    max_state = max(max_state, src, dst)
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return Lattice(max_state + 1, tuple(arcs), tuple(finals))
