"""Desk-scale lattice-free MMI training objective.

The objective contrasts a supervision (numerator) graph against a phone
n-gram (denominator) graph over the same frame-synchronous emission scores:
F = logZ_num - logZ_den, with the analytic gradient wrt the emissions equal
to the scaled difference of the two occupancy matrices.  Graphs are plain
finite-state acceptors whose arcs each consume exactly one frame; self-loops
provide duration elasticity.  All arithmetic is natural-log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import lm
from .errors import ConfigError, DataError
from .lattice import Lattice, topological_order

LOGZERO = float("-inf")
LN10 = math.log(10.0)


@dataclass(frozen=True, eq=False)
class EmissionScores:
    """T x P matrix of per-frame log-likelihood scores."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError("emission scores must be a T x P matrix with T, P >= 1")
        if not np.all(np.isfinite(arr)):
            raise DataError("emission scores contain non-finite values")
        object.__setattr__(self, "scores", arr)

    @property
    def num_frames(self) -> int:
        return self.scores.shape[0]

    @property
    def num_phones(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class GraphArc:
    src: int
    dst: int
    phone: int
    weight: float


@dataclass(frozen=True, eq=False)
class Graph:
    """Frame-synchronous acceptor: each arc consumes one frame of one phone."""

    num_states: int
    arcs: tuple[GraphArc, ...]
    start: int
    finals: tuple[tuple[int, float], ...]
    min_path_length: int

    def __post_init__(self):
        for arc in self.arcs:
            if not (0 <= arc.src < self.num_states and 0 <= arc.dst < self.num_states):
                raise DataError(f"graph arc {arc.src}->{arc.dst} references a missing state")
            if arc.phone < 0:
                raise DataError(f"negative phone id {arc.phone}")
        if not 0 <= self.start < self.num_states:
            raise DataError("graph start state out of range")


@dataclass(frozen=True)
class LfMmiConfig:
    acoustic_scale: float = 1.0
    den_order: int = 2

    def __post_init__(self):
        if not 0.0 < self.acoustic_scale <= 1.0:
            raise ConfigError(f"acoustic scale {self.acoustic_scale} outside (0, 1]")
        if not 1 <= self.den_order <= lm.MAX_ORDER:
            raise ConfigError(f"denominator order {self.den_order} outside 1..{lm.MAX_ORDER}")


def numerator_graph(phones: Sequence[int]) -> Graph:
    """Forced-alignment chain: phones in order, each occupying >= 1 frame."""
    seq = [int(p) for p in phones]
    if not seq:
        raise DataError("numerator needs a non-empty phone sequence")
    arcs = []
    for i, p in enumerate(seq):
        arcs.append(GraphArc(i, i + 1, p, 0.0))      # first frame of phone i
        arcs.append(GraphArc(i + 1, i + 1, p, 0.0))  # stay within the phone
    return Graph(len(seq) + 1, tuple(arcs), 0, ((len(seq), 0.0),), len(seq))


def denominator_graph(
    train_phone_seqs: Iterable[Sequence[int]],
    num_phones: int,
    order: int = 2,
) -> Graph:
    """All phone sequences weighted by an n-gram phone LM.

    States are LM histories (up to order-1 phones); every state has one
    outgoing arc per phone, weighted ln P(phone | history), and a final
    weight ln P(end | history), so any sequence length >= 1 is accepted.
    """
    seqs = [[str(int(p)) for p in seq] for seq in train_phone_seqs]
    if not seqs:
        raise DataError("denominator needs at least one training phone sequence")
    if num_phones < 1:
        raise ConfigError("need at least one phone")
    model = lm.kneser_ney_estimate(lm.count(seqs, order))

    def trunc(ctx: tuple[str, ...]) -> tuple[str, ...]:
        return ctx[-(order - 1):] if order > 1 else ()

    start_ctx = trunc((lm.BOS,))
    states: dict[tuple[str, ...], int] = {start_ctx: 0}
    arcs: list[GraphArc] = []
    queue = [start_ctx]
    while queue:
        ctx = queue.pop(0)
        src = states[ctx]
        for p in range(num_phones):
            token = str(p)
            weight = LN10 * lm.log_prob(model, ctx, token)
            nctx = trunc(ctx + (token,))
            if nctx not in states:
                states[nctx] = len(states)
                queue.append(nctx)
            arcs.append(GraphArc(src, states[nctx], p, weight))
    finals = tuple(
        (idx, LN10 * lm.log_prob(model, ctx, lm.EOS)) for ctx, idx in states.items()
    )
    return Graph(len(states), tuple(arcs), 0, finals, 1)


def _closure(lattice: Lattice):
    """Epsilon closure per state: reachable non-epsilon arcs and final mass."""
    out = lattice.out_arcs()
    arc_closure: list[list[tuple[int, float]]] = [None] * lattice.num_states
    final_closure: list[float] = [LOGZERO] * lattice.num_states

    def visit(state: int, seen: frozenset):
        if arc_closure[state] is not None:
            return
        if state in seen:
            raise DataError("epsilon cycle in supervision lattice")
        arc_closure[state] = []
        fin = lattice.final_weight(state)
        for i in out[state]:
            arc = lattice.arcs[i]
            w = arc.acoustic + arc.lm
            if arc.label is not None:
                arc_closure[state].append((i, 0.0))
                continue
            visit(arc.dst, seen | {state})
            arc_closure[state].extend((j, w + eps_w) for j, eps_w in arc_closure[arc.dst])
            fin = np.logaddexp(fin, w + final_closure[arc.dst])
        final_closure[state] = float(fin)

    for s in range(lattice.num_states):
        visit(s, frozenset())
    return arc_closure, final_closure


def lattice_to_numerator_graph(lattice: Lattice, phone_index: Mapping[str, int]) -> Graph:
    """Supervision graph from a lattice's label paths.

    Each labelled lattice arc becomes one graph state with a zero-weight
    self-loop; lattice acoustic+lm scores ride on the entering transition.
    Epsilon arcs (e.g. from lattice combination) are closed over.
    """
    arc_closure, final_closure = _closure(lattice)

    def phone_of(arc_idx: int) -> int:
        text = lattice.arcs[arc_idx].label.text
        if text not in phone_index:
            raise DataError(f"lattice label {text!r} missing from the phone inventory")
        return phone_index[text]

    labelled = [i for i, a in enumerate(lattice.arcs) if a.label is not None]
    if not labelled:
        raise DataError("supervision lattice has no labelled arcs")
    state_of = {i: n + 1 for n, i in enumerate(labelled)}  # 0 is the start

    def enter_weight(arc_idx: int, eps_w: float) -> float:
        a = lattice.arcs[arc_idx]
        return a.acoustic + a.lm + eps_w

    arcs: list[GraphArc] = []
    for arc_idx, eps_w in arc_closure[0]:
        arcs.append(GraphArc(0, state_of[arc_idx], phone_of(arc_idx), enter_weight(arc_idx, eps_w)))
    finals = []
    for arc_idx in labelled:
        s = state_of[arc_idx]
        arcs.append(GraphArc(s, s, phone_of(arc_idx), 0.0))
        dst = lattice.arcs[arc_idx].dst
        for nxt, eps_w in arc_closure[dst]:
            arcs.append(GraphArc(s, state_of[nxt], phone_of(nxt), enter_weight(nxt, eps_w)))
        if final_closure[dst] != LOGZERO:
            finals.append((s, final_closure[dst]))
    if not finals:
        raise DataError("no labelled path reaches a final state")

    # fewest labelled hops to an accepting state = minimum frame count
    dist = [math.inf] * lattice.num_states
    dist[0] = 0.0
    for state in topological_order(lattice):
        if dist[state] == math.inf:
            continue
        for arc_idx, _ in arc_closure[state]:
            dst = lattice.arcs[arc_idx].dst
            dist[dst] = min(dist[dst], dist[state] + 1)
    min_len = min(
        (dist[s] for s in range(lattice.num_states)
         if final_closure[s] != LOGZERO and dist[s] >= 1),
        default=1,
    )
    return Graph(len(labelled) + 1, tuple(arcs), 0, tuple(finals), int(min_len))


def _segment_reduce(values: np.ndarray, sort_idx: np.ndarray, seg_starts: np.ndarray) -> np.ndarray:
    return np.logaddexp.reduceat(values[sort_idx], seg_starts)


def graph_logsum(
    graph: Graph, emissions: EmissionScores, acoustic_scale: float = 1.0
) -> tuple[float, np.ndarray]:
    """Log total path mass over T frames plus per-frame phone occupancies."""
    e = emissions.scores
    num_frames, num_phones = e.shape
    if graph.arcs and max(a.phone for a in graph.arcs) >= num_phones:
        raise DataError("graph phone id exceeds emission matrix width")
    if not graph.arcs:
        raise DataError("graph has no arcs")
    src = np.fromiter((a.src for a in graph.arcs), dtype=np.int64)
    dst = np.fromiter((a.dst for a in graph.arcs), dtype=np.int64)
    phone = np.fromiter((a.phone for a in graph.arcs), dtype=np.int64)
    weight = np.fromiter((a.weight for a in graph.arcs), dtype=np.float64)

    by_dst = np.argsort(dst, kind="stable")
    dst_ids, dst_starts = np.unique(dst[by_dst], return_index=True)
    by_src = np.argsort(src, kind="stable")
    src_ids, src_starts = np.unique(src[by_src], return_index=True)
    by_phone = np.argsort(phone, kind="stable")
    phone_ids, phone_starts = np.unique(phone[by_phone], return_index=True)

    alpha = np.full((num_frames + 1, graph.num_states), LOGZERO)
    alpha[0, graph.start] = 0.0
    for t in range(num_frames):
        vals = alpha[t, src] + acoustic_scale * e[t, phone] + weight
        alpha[t + 1, dst_ids] = _segment_reduce(vals, by_dst, dst_starts)

    final_states = np.fromiter((s for s, _ in graph.finals), dtype=np.int64)
    final_weights = np.fromiter((w for _, w in graph.finals), dtype=np.float64)
    terminal = alpha[num_frames, final_states] + final_weights
    logz = float(np.logaddexp.reduce(terminal)) if len(terminal) else LOGZERO
    if logz == LOGZERO:
        raise DataError(
            f"graph admits no path of length {num_frames}; "
            f"minimum path length is {graph.min_path_length}"
        )

    beta = np.full((num_frames + 1, graph.num_states), LOGZERO)
    beta[num_frames, final_states] = final_weights
    for t in range(num_frames - 1, -1, -1):
        vals = beta[t + 1, dst] + acoustic_scale * e[t, phone] + weight
        beta[t, src_ids] = _segment_reduce(vals, by_src, src_starts)

    occupancies = np.zeros((num_frames, num_phones))
    for t in range(num_frames):
        vals = alpha[t, src] + acoustic_scale * e[t, phone] + weight + beta[t + 1, dst]
        mass = _segment_reduce(vals, by_phone, phone_starts)
        occupancies[t, phone_ids] = np.exp(mass - logz)
    return logz, occupancies


def lfmmi_objective(
    num: Graph, den: Graph, emissions: EmissionScores, cfg: LfMmiConfig
) -> tuple[float, np.ndarray]:
    """F = logZ_num - logZ_den; grad[t,p] = k * (occ_num - occ_den)."""
    logz_num, occ_num = graph_logsum(num, emissions, cfg.acoustic_scale)
    logz_den, occ_den = graph_logsum(den, emissions, cfg.acoustic_scale)
    grad = cfg.acoustic_scale * (occ_num - occ_den)
    return logz_num - logz_den, grad


def lfmmi_lattice_supervised(
    num_lattice: Lattice,
    den: Graph,
    emissions: EmissionScores,
    cfg: LfMmiConfig,
    phone_index: Mapping[str, int],
) -> tuple[float, np.ndarray]:
    """LF-MMI with a decoded lattice as the (soft) supervision."""
    num = lattice_to_numerator_graph(num_lattice, phone_index)
    return lfmmi_objective(num, den, emissions, cfg)


def viterbi_phones(graph: Graph, emissions: EmissionScores, acoustic_scale: float = 1.0) -> list[int]:
    """Best frame-level phone sequence through the graph (deterministic ties)."""
    e = emissions.scores
    num_frames = e.shape[0]
    if graph.arcs and max(a.phone for a in graph.arcs) >= e.shape[1]:
        raise DataError("graph phone id exceeds emission matrix width")
    score = np.full(graph.num_states, LOGZERO)
    score[graph.start] = 0.0
    back: list[np.ndarray] = []
    arcs = graph.arcs
    for t in range(num_frames):
        nxt = np.full(graph.num_states, LOGZERO)
        choice = np.full(graph.num_states, -1, dtype=np.int64)
        for i, a in enumerate(arcs):
            cand = score[a.src] + acoustic_scale * e[t, a.phone] + a.weight
            if cand > nxt[a.dst]:
                nxt[a.dst] = cand
                choice[a.dst] = i
        score = nxt
        back.append(choice)
    best_state, best_score = -1, LOGZERO
    for s, w in graph.finals:
        total = score[s] + w
        if total > best_score:
            best_score = total
            best_state = s
    if best_state < 0:
        raise DataError(
            f"graph admits no path of length {num_frames}; "
            f"minimum path length is {graph.min_path_length}"
        )
    phones = []
    state = best_state
    for t in range(num_frames - 1, -1, -1):
        arc = arcs[int(back[t][state])]
        phones.append(arc.phone)
        state = arc.src
    phones.reverse()
    return phones


def collapse_repeats(phones: Sequence[int]) -> list[int]:
    """Merge consecutive duplicates: frame-level labels -> phone sequence."""
    out: list[int] = []
    for p in phones:
        if not out or out[-1] != p:
            out.append(int(p))
    return out


@dataclass(frozen=True, eq=False)
class ToyUtterance:
    utterance_id: str
    features: np.ndarray  # T x D
    phones: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Emission provider: per-phone scores are affine in the frame features."""

    weights: np.ndarray  # P x D
    bias: np.ndarray     # P

    def emissions(self, features: np.ndarray) -> EmissionScores:
        return EmissionScores(features @ self.weights.T + self.bias)


def make_toy_dataset(
    num_phones: int = 6,
    num_utterances: int = 36,
    feature_dim: int = 8,
    seed: int = 0,
) -> list[ToyUtterance]:
    """Separable synthetic utterances: one noisy prototype vector per phone.

    Reference sequences never repeat a phone back to back, so collapsing a
    frame-level decode is a faithful inverse.
    """
    rng = np.random.default_rng(seed)
    prototypes = 2.0 * rng.standard_normal((num_phones, feature_dim))
    utterances = []
    for j in range(num_utterances):
        length = int(rng.integers(4, 8))
        seq: list[int] = []
        while len(seq) < length:
            p = int(rng.integers(num_phones))
            if seq and seq[-1] == p:
                continue
            seq.append(p)
        rows = []
        for p in seq:
            span = int(rng.integers(3, 7))
            rows.append(prototypes[p] + 0.4 * rng.standard_normal((span, feature_dim)))
        utterances.append(ToyUtterance(f"toy{j:03d}", np.vstack(rows), tuple(seq)))
    return utterances


def pairwise_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Balanced-tree summation: result is stable under reordering to ~1e-16."""
    if len(arrays) == 1:
        return np.array(arrays[0], dtype=np.float64)
    mid = len(arrays) // 2
    return pairwise_sum(arrays[:mid]) + pairwise_sum(arrays[mid:])


def toy_train(
    utterances: Sequence[ToyUtterance],
    cfg: LfMmiConfig,
    steps: int = 50,
    learning_rate: float = 0.05,
) -> tuple[LinearModel, list[float]]:
    """Gradient ascent of the mean objective for a linear emission model.

    Deterministic: zero initialization, fixed utterance order, and pairwise
    summation of per-utterance gradients.
    """
    if not utterances:
        raise DataError("toy training needs at least one utterance")
    num_phones = max(max(u.phones) for u in utterances) + 1
    dim = utterances[0].features.shape[1]
    den = denominator_graph([u.phones for u in utterances], num_phones, cfg.den_order)
    nums = [numerator_graph(u.phones) for u in utterances]
    weights = np.zeros((num_phones, dim))
    bias = np.zeros(num_phones)
    trace: list[float] = []
    for _ in range(steps):
        objective = 0.0
        grad_w = []
        grad_b = []
        for utt, num in zip(utterances, nums):
            emissions = EmissionScores(utt.features @ weights.T + bias)
            f, grad = lfmmi_objective(num, den, emissions, cfg)
            objective += f
            grad_w.append(grad.T @ utt.features)
            grad_b.append(grad.sum(axis=0))
        total_w = pairwise_sum(grad_w)
        total_b = pairwise_sum(grad_b)
        weights = weights + learning_rate * total_w / len(utterances)
        bias = bias + learning_rate * total_b / len(utterances)
        trace.append(objective / len(utterances))
    return LinearModel(weights, bias), trace


def decode_phones(
    model: LinearModel, den: Graph, features: np.ndarray, acoustic_scale: float = 1.0
) -> list[int]:
    """Viterbi decode against the denominator graph, runs collapsed."""
    frame_phones = viterbi_phones(den, model.emissions(features), acoustic_scale)
    return collapse_repeats(frame_phones)
