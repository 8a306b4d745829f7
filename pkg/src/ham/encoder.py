"""Word embeddings and the Child-Sum (dependency) Tree-LSTM.

Trees are encoded bottom-up.  Nodes from any number of trees are grouped by
height so that each level is a handful of batched tape operations; a node's
children always sit on lower levels.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import numeric as nm
from .errors import DimensionError, DomainError, ParseError
from .treebank import DepTree

UNK = "<unk>"
GATES = ("i", "o", "f", "u")


@dataclass
class EmbeddingTable:
    vocabulary: dict[str, int]
    vectors: object  # np.ndarray [V x d_emb] or a tape Var
    unk_index: int

    def __post_init__(self):
        V = nm.value(self.vectors).shape[0]
        if not 0 <= self.unk_index < V:
            raise DomainError(f"unk_index {self.unk_index} outside table of {V} rows")
        bad = [w for w, i in self.vocabulary.items() if not 0 <= i < V]
        if bad:
            raise DomainError(f"vocabulary indices out of range for {bad[:3]}")

    @property
    def dim(self) -> int:
        return nm.value(self.vectors).shape[1]

    def index(self, word: str) -> int:
        return self.vocabulary.get(word.lower(), self.unk_index)

    def indices(self, words: Sequence[str]) -> np.ndarray:
        return np.array([self.index(w) for w in words], dtype=np.intp)


def embed(word: str, table: EmbeddingTable) -> np.ndarray:
    return nm.value(table.vectors)[table.index(word)]


def build_vocabulary(words) -> dict[str, int]:
    """Index ``<unk>`` as 0, then words in first-seen order (lowercased)."""
    vocab = {UNK: 0}
    for w in words:
        w = w.lower()
        if w not in vocab:
            vocab[w] = len(vocab)
    return vocab


def load_vectors(path, vocabulary=None) -> EmbeddingTable:
    """Read a whitespace-separated text vector file (``word f1 ... fd`` per line).

    The first line fixes the dimensionality.  If ``vocabulary`` is given,
    only those words are kept and missing ones are left at zero.  The unk row
    is all zeros.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return parse_vectors(lines, vocabulary)


def parse_vectors(lines, vocabulary=None) -> EmbeddingTable:
    dim = None
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines, start=1):
        parts = line.rstrip().split(" ")
        if not line.strip():
            continue
        word, nums = parts[0], parts[1:]
        if dim is None:
            dim = len(nums)
            if dim == 0:
                raise ParseError("vector line carries no numbers", lineno)
        if len(nums) != dim:
            raise ParseError(f"expected {dim} floats for {word!r}, got {len(nums)}", lineno)
        try:
            vec = np.array([float(x) for x in nums])
        except ValueError:
            raise ParseError(f"non-numeric component for {word!r}", lineno) from None
        table.setdefault(word.lower(), vec)
    if dim is None:
        raise ParseError("vector file is empty")
    if vocabulary is None:
        vocabulary = build_vocabulary(table)
    vectors = np.zeros((max(vocabulary.values()) + 1, dim))
    for w, i in vocabulary.items():
        if w in table:
            vectors[i] = table[w]
    unk = vocabulary.get(UNK, 0)
    vectors[unk] = 0.0
    return EmbeddingTable(vocabulary, vectors, unk)


@dataclass
class TreeLstmParams:
    W_i: object
    W_o: object
    W_f: object
    W_u: object
    U_i: object
    U_o: object
    U_f: object
    U_u: object
    b_i: object
    b_o: object
    b_f: object
    b_u: object

    @classmethod
    def initialize(cls, d_emb, d_h, rng, scale=0.05, forget_bias=1.0) -> "TreeLstmParams":
        kw = {}
        for g in GATES:
            kw[f"W_{g}"] = rng.uniform(-scale, scale, (d_h, d_emb))
            kw[f"U_{g}"] = rng.uniform(-scale, scale, (d_h, d_h))
            kw[f"b_{g}"] = np.full(d_h, forget_bias if g == "f" else 0.0)
        return cls(**kw)

    @classmethod
    def zeros(cls, d_emb, d_h) -> "TreeLstmParams":
        kw = {}
        for g in GATES:
            kw[f"W_{g}"] = np.zeros((d_h, d_emb))
            kw[f"U_{g}"] = np.zeros((d_h, d_h))
            kw[f"b_{g}"] = np.zeros(d_h)
        return cls(**kw)

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def hidden_dim(self) -> int:
        return nm.value(self.b_i).shape[0]

    @property
    def input_dim(self) -> int:
        return nm.value(self.W_i).shape[1]

    def check(self, d_emb: int) -> None:
        d_h = self.hidden_dim
        for name, p in self.items():
            shape = nm.value(p).shape
            want = {"W": (d_h, d_emb), "U": (d_h, d_h), "b": (d_h,)}[name[0]]
            if shape != want:
                raise DimensionError(f"{name} has shape {shape}, expected {want}")


@dataclass
class NodeStates:
    """Hidden and cell states of one tree, rows in token order."""

    tree: DepTree
    hidden: np.ndarray
    cell: np.ndarray

    @property
    def root_hidden(self) -> np.ndarray:
        return self.hidden[self.tree.root_index]


class ForestStates:
    """Encoded states for several trees stored as one pair of tape values.

    ``hidden`` and ``cell`` are [R x d_h] where R is the total node count; row
    ``rows[t][j]`` belongs to node ``j`` of tree ``t``.
    """

    def __init__(self, trees, hidden, cell, rows):
        self.trees = list(trees)
        self.hidden = hidden
        self.cell = cell
        self.rows = rows
        self.root_rows = np.array([r[t.root_index] for r, t in zip(rows, self.trees)], dtype=np.intp)

    def __len__(self):
        return len(self.trees)

    def node_states(self, t: int) -> NodeStates:
        r = self.rows[t]
        return NodeStates(self.trees[t], nm.value(self.hidden)[r], nm.value(self.cell)[r])


def encode_forest(trees: Sequence[DepTree], table: EmbeddingTable, params: TreeLstmParams, tape=None) -> ForestStates:
    if not trees:
        raise DomainError("nothing to encode")
    if table.dim != params.input_dim:
        raise DimensionError(f"embedding dim {table.dim} != Tree-LSTM input dim {params.input_dim}")
    params.check(table.dim)
    if tape is None:
        tape = nm._tape_of(table.vectors, *[p for _, p in params.items()])
    lift = tape.lift
    E = lift(table.vectors)
    P = {name: lift(p) for name, p in params.items()}
    d = params.hidden_dim
    W_iou = nm.concat_rows([P["W_i"], P["W_o"], P["W_u"]])
    U_iou = nm.concat_rows([P["U_i"], P["U_o"], P["U_u"]])
    b_iou = nm.concat_rows([P["b_i"], P["b_o"], P["b_u"]])

    # assign every node a level (its height) and a global row in level order
    levels: dict[int, list[tuple[int, int]]] = {}
    for t, tree in enumerate(trees):
        for j, h in enumerate(tree.heights()):
            levels.setdefault(h, []).append((t, j))
    rows = [np.empty(len(tree), dtype=np.intp) for tree in trees]
    next_row = 0
    for h in sorted(levels):
        for t, j in levels[h]:
            rows[t][j] = next_row
            next_row += 1

    H_all = C_all = None
    for h in sorted(levels):
        nodes = levels[h]
        n = len(nodes)
        x_ids = np.array([table.index(trees[t].tokens[j]) for t, j in nodes], dtype=np.intp)
        X = nm.gather_rows(E, x_ids)
        child_rows, child_parent = [], []
        for pos, (t, j) in enumerate(nodes):
            for k in trees[t].children(j):
                child_rows.append(rows[t][k])
                child_parent.append(pos)
        pre = nm.add(nm.linear(X, W_iou), b_iou)
        if child_rows:
            Hc = nm.gather_rows(H_all, child_rows)
            Cc = nm.gather_rows(C_all, child_rows)
            H_tilde = nm.segment_sum(Hc, child_parent, n)
            pre = nm.add(pre, nm.linear(H_tilde, U_iou))
        i = nm.sigmoid(nm.columns(pre, 0, d))
        o = nm.sigmoid(nm.columns(pre, d, 2 * d))
        u = nm.tanh(nm.columns(pre, 2 * d, 3 * d))
        c = nm.mul(i, u)
        if child_rows:
            fx = nm.gather_rows(nm.linear(X, P["W_f"]), child_parent)
            f = nm.sigmoid(nm.add(nm.add(fx, nm.linear(Hc, P["U_f"])), P["b_f"]))
            c = nm.add(c, nm.segment_sum(nm.mul(f, Cc), child_parent, n))
        hid = nm.mul(o, nm.tanh(c))
        if H_all is None:
            H_all, C_all = hid, c
        else:
            H_all = nm.concat_rows([H_all, hid])
            C_all = nm.concat_rows([C_all, c])
    return ForestStates(trees, H_all, C_all, rows)


def encode_tree(tree: DepTree, table: EmbeddingTable, params: TreeLstmParams) -> NodeStates:
    return encode_forest([tree], table, params).node_states(0)


def encode_sentence_set(sentences: Sequence[DepTree], table: EmbeddingTable, params: TreeLstmParams) -> np.ndarray:
    """Sum of root hidden states, the question / choice vector."""
    if not sentences:
        raise DomainError("cannot encode an empty sentence set")
    forest = encode_forest(sentences, table, params)
    return nm.value(forest.hidden)[forest.root_rows].sum(axis=0)
