"""Cosine-softmax attention over phrase- or sentence-level story memories."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numeric as nm
from .errors import DimensionError, DomainError
from .treebank import ROOT

LEVELS = ("phrase", "sentence")
ALPHA_TOLERANCE = 1e-9


@dataclass
class MemoryParams:
    W_m: object
    W_c: object
    W_q: object

    @classmethod
    def initialize(cls, d_mem, d_h, rng, scale=0.05) -> "MemoryParams":
        return cls(*(rng.uniform(-scale, scale, (d_mem, d_h)) for _ in range(3)))

    def items(self):
        return [("W_m", self.W_m), ("W_c", self.W_c), ("W_q", self.W_q)]


@dataclass(frozen=True)
class MemoryEntry:
    sentence: int
    node: int | str  # token index, or ROOT for sentence-level memories
    head: int
    span: tuple[int, ...]
    tokens: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "sentence": self.sentence,
            "node": self.node,
            "head": self.head,
            "span": list(self.span),
            "tokens": list(self.tokens),
        }


@dataclass
class MemorySet:
    vectors: object  # [T x d_h], array or Var
    entries: list[MemoryEntry]

    def __len__(self):
        return len(self.entries)


def build_memory(story_states, level: str, sentences: Sequence[int] | None = None) -> MemorySet:
    """Collect memory vectors from encoded story sentences.

    ``story_states`` is a ``ForestStates``; ``sentences`` picks which of its
    trees form the story (default: all).  Phrase level keeps every node,
    sentence level only roots; order is sentence-major then token index.
    """
    if level not in LEVELS:
        raise DomainError(f"level must be one of {LEVELS}, got {level!r}")
    if sentences is None:
        sentences = range(len(story_states))
    sentences = list(sentences)
    if not sentences:
        raise DomainError("story is empty")
    rows, entries = [], []
    for s_idx, t in enumerate(sentences):
        tree = story_states.trees[t]
        if level == "sentence":
            r = tree.root_index
            rows.append(story_states.rows[t][r])
            span = tuple(range(len(tree)))
            entries.append(MemoryEntry(s_idx, ROOT, r, span, tree.tokens))
        else:
            for j in range(len(tree)):
                rows.append(story_states.rows[t][j])
                span = tuple(tree.subtree(j))
                entries.append(MemoryEntry(s_idx, j, j, span, tuple(tree.tokens[k] for k in span)))
    hidden = story_states.hidden
    if isinstance(hidden, nm.Var):
        vectors = nm.gather_rows(hidden, rows)
    else:
        vectors = np.asarray(hidden)[rows]
    return MemorySet(vectors, entries)


@dataclass
class HopRecord:
    query: np.ndarray
    scores: np.ndarray
    weights: np.ndarray
    story_vector: np.ndarray
    keys: np.ndarray | None = None  # memory vectors m_t compared against the query


@dataclass
class AttentionTrace:
    hops: list[HopRecord] = field(default_factory=list)
    entries: list[MemoryEntry] = field(default_factory=list)

    def to_json(self, k: int | None = None) -> dict:
        out = []
        for h, ranked in enumerate(top_k_attention(self, k if k is not None else len(self.entries))):
            out.append({
                "hop": h + 1,
                "top": [
                    {"memory": idx, "weight": float(w), **self.entries[idx].to_json()}
                    for idx, w in ranked
                ],
            })
        return {"hops": out}


def _attend(q, mem: MemorySet, params: MemoryParams):
    O = mem.vectors
    d_h = nm.value(O).shape[1]
    for name, W in params.items():
        if nm.value(W).shape[1] != d_h:
            raise DimensionError(f"{name} {nm.value(W).shape} cannot embed memories of size {d_h}")
    if nm.value(q).shape != (nm.value(params.W_m).shape[0],):
        raise DimensionError(f"query {nm.value(q).shape} does not match W_m {nm.value(params.W_m).shape}")
    m = nm.linear(O, params.W_m)
    c = nm.linear(O, params.W_c)
    eta = nm.cosine_rows(m, q)
    alpha = nm.softmax(eta)
    a = alpha.value
    if abs(a.sum() - 1.0) > ALPHA_TOLERANCE or not np.all(a > 0):
        raise ArithmeticError(f"attention weights not a positive distribution: sum={a.sum()!r}")
    s = nm.matmul(alpha, c)
    return eta, alpha, s, m


def attend(q, mem: MemorySet, params: MemoryParams):
    """One attention read: returns (alpha [T], story vector s [d_mem])."""
    tape = nm._tape_of(q, mem.vectors, *(W for _, W in params.items()))
    mem = MemorySet(tape.lift(mem.vectors), mem.entries)
    params = MemoryParams(*(tape.lift(W) for _, W in params.items()))
    _, alpha, s, _ = _attend(tape.lift(q), mem, params)
    return alpha, s


def run_hops(V_Q, mem: MemorySet, params, hops: int):
    """Multi-hop reading starting from ``q0 = W_q V_Q``.

    ``params`` is one ``MemoryParams`` shared by all hops, or a sequence with
    one entry per hop (``W_q`` is taken from the first).
    Returns ``(q_n, AttentionTrace)``.
    """
    if hops < 1:
        raise DomainError(f"need at least one hop, got {hops}")
    per_hop = list(params) if isinstance(params, (list, tuple)) else [params] * hops
    if len(per_hop) != hops:
        raise DomainError(f"{len(per_hop)} parameter sets for {hops} hops")
    W_q = per_hop[0].W_q
    if isinstance(V_Q, nm.Var) or isinstance(W_q, nm.Var):
        tape = nm._tape_of(V_Q, W_q)
    else:
        tape = nm._tape_of(mem.vectors)
    q = nm.matmul(tape.lift(W_q), tape.lift(V_Q))
    trace = AttentionTrace(entries=list(mem.entries))
    if isinstance(mem.vectors, nm.Var) and mem.vectors.tape is not tape:
        raise ValueError("memory and query live on different tapes")
    mem_t = mem if isinstance(mem.vectors, nm.Var) else MemorySet(tape.lift(mem.vectors), mem.entries)
    for p in per_hop:
        p = MemoryParams(*(tape.lift(W) for _, W in p.items()))
        eta, alpha, s, m = _attend(q, mem_t, p)
        trace.hops.append(HopRecord(q.value.copy(), eta.value.copy(), alpha.value.copy(), s.value.copy(), m.value))
        q = nm.add(q, s)
    return q, trace


def top_k_attention(trace: AttentionTrace, k: int):
    """Per hop, the ``k`` largest weights as ``(memory index, weight)``, descending.

    Ties go to the lower memory index.
    """
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    out = []
    for hop in trace.hops:
        order = np.argsort(-hop.weights, kind="stable")[:k]
        out.append([(int(i), float(hop.weights[i])) for i in order])
    return out
