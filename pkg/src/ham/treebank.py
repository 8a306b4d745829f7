"""Dependency trees and problem sets: CoNLL-U ingestion, validation, JSONL I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import CycleError, DomainError, ParseError, ProblemError, RangeError, StructureError

ROOT = "ROOT"


@dataclass(frozen=True)
class DepTree:
    """A rooted dependency tree.

    ``heads`` are 1-based parent indices with 0 marking the root, exactly as
    in CoNLL-U.  Node indices used everywhere else are 0-based token positions.
    """

    tokens: tuple[str, ...]
    heads: tuple[int, ...]
    root_index: int
    _children: tuple[tuple[int, ...], ...] = field(repr=False, compare=False, default=())

    def __len__(self):
        return len(self.tokens)

    @property
    def words(self) -> tuple[str, ...]:
        """Lowercased tokens, the form used for vocabulary lookup."""
        return tuple(t.lower() for t in self.tokens)

    def children(self, j: int) -> tuple[int, ...]:
        return self._children[j]

    def subtree(self, j: int) -> list[int]:
        """Token indices of the subtree rooted at ``j``, ascending."""
        out, stack = [], [j]
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(self._children[k])
        return sorted(out)

    def span(self, j: int) -> list[str]:
        return [self.tokens[k] for k in self.subtree(j)]

    def heights(self) -> list[int]:
        """Distance from each node to its deepest descendant leaf."""
        h = [0] * len(self.tokens)
        for j in reversed(self.topological_order()):
            for k in self._children[j]:
                h[j] = max(h[j], h[k] + 1)
        return h

    def topological_order(self) -> list[int]:
        """Root first, parents before children."""
        order, stack = [], [self.root_index]
        while stack:
            j = stack.pop()
            order.append(j)
            stack.extend(reversed(self._children[j]))
        return order

    def to_json(self) -> dict:
        return {"tokens": list(self.tokens), "heads": list(self.heads)}


def validate(tokens: Sequence[str], heads: Sequence[int]) -> DepTree:
    tokens = tuple(str(t) for t in tokens)
    heads = tuple(int(h) for h in heads)
    n = len(tokens)
    if n != len(heads):
        raise DomainError(f"{n} tokens but {len(heads)} heads")
    if n == 0:
        raise DomainError("a sentence needs at least one token")
    for k, h in enumerate(heads):
        if h < 0 or h > n:
            raise RangeError(f"token {k + 1} has head {h}, outside 0..{n}")
    roots = [k for k, h in enumerate(heads) if h == 0]
    if len(roots) != 1:
        raise StructureError(f"expected exactly one root, found {len(roots)}")
    # with a single root and in-range heads, a node fails to reach the root
    # only by sitting on a cycle
    state = [0] * n  # 0 unknown, 1 on current path, 2 reaches root
    state[roots[0]] = 2
    for start in range(n):
        path, k = [], start
        while state[k] == 0:
            state[k] = 1
            path.append(k)
            k = heads[k] - 1
        if state[k] == 1:
            raise CycleError(f"token {k + 1} is its own ancestor")
        for p in path:
            state[p] = 2
    kids: list[list[int]] = [[] for _ in range(n)]
    for k, h in enumerate(heads):
        if h:
            kids[h - 1].append(k)
    return DepTree(tokens, heads, roots[0], tuple(tuple(c) for c in kids))


def children(tree: DepTree, j: int) -> tuple[int, ...]:
    return tree.children(j)


def chain_tree(tokens: Sequence[str]) -> DepTree:
    """Right-branching chain: the first token is the root and heads the second,
    which heads the third, and so on."""
    return validate(tokens, list(range(len(tokens))))


# ---------------------------------------------------------------------------
# CoNLL-U


def parse_conllu(text: str) -> list[DepTree]:
    """Read FORM and HEAD columns of a CoNLL-U document.

    Multiword-token ranges (``3-4``) and empty nodes (``3.1``) are skipped.
    """
    trees: list[DepTree] = []
    tokens: list[str] = []
    heads: list[int] = []

    def flush():
        if tokens:
            trees.append(validate(tokens, heads))
            tokens.clear()
            heads.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise ParseError(f"expected at least 8 tab-separated fields, got {len(cols)}", lineno)
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            tid = int(tid)
        except ValueError:
            raise ParseError(f"bad token ID {cols[0]!r}", lineno) from None
        if tid != len(tokens) + 1:
            raise ParseError(f"token ID {tid} out of sequence (expected {len(tokens) + 1})", lineno)
        try:
            head = int(cols[6])
        except ValueError:
            raise ParseError(f"bad HEAD field {cols[6]!r}", lineno) from None
        tokens.append(cols[1])
        heads.append(head)
    flush()
    return trees


def serialize_conllu(trees: Iterable[DepTree]) -> str:
    blocks = []
    for tree in trees:
        lines = [
            f"{k + 1}\t{tok}\t_\t_\t_\t_\t{h}\t{'root' if h == 0 else 'dep'}\t_\t_"
            for k, (tok, h) in enumerate(zip(tree.tokens, tree.heads))
        ]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


# ---------------------------------------------------------------------------
# problem sets


@dataclass(frozen=True)
class ProblemSet:
    story: tuple[DepTree, ...]
    question: tuple[DepTree, ...]
    choices: tuple[tuple[DepTree, ...], ...]
    correct: frozenset[int]
    id: str = ""

    def __post_init__(self):
        K = len(self.choices)
        if K < 2:
            raise ProblemError(f"need at least 2 choices, got {K}")
        N = len(self.correct)
        if not 1 <= N < K:
            raise ProblemError(f"need 1 <= |correct| < K, got {N} of {K}")
        if any(not 0 <= i < K for i in self.correct):
            raise ProblemError(f"correct indices {sorted(self.correct)} outside [0, {K})")
        if not self.story or not self.question or any(not c for c in self.choices):
            raise ProblemError("story, question and every choice need at least one sentence")

    @property
    def k(self) -> int:
        return len(self.choices)

    @property
    def n_correct(self) -> int:
        return len(self.correct)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "story": [t.to_json() for t in self.story],
            "question": [t.to_json() for t in self.question],
            "choices": [[t.to_json() for t in c] for c in self.choices],
            "correct": sorted(self.correct),
        }

    @classmethod
    def from_json(cls, obj: dict, default_id: str = "") -> "ProblemSet":
        def sents(items):
            return tuple(validate(s["tokens"], s["heads"]) for s in items)

        try:
            return cls(
                story=sents(obj["story"]),
                question=sents(obj["question"]),
                choices=tuple(sents(c) for c in obj["choices"]),
                correct=frozenset(int(i) for i in obj["correct"]),
                id=str(obj.get("id", default_id)),
            )
        except KeyError as e:
            raise ProblemError(f"missing field {e.args[0]!r}") from None


def dumps_problem(problem: ProblemSet) -> str:
    return json.dumps(problem.to_json(), ensure_ascii=False, separators=(",", ":"))


def write_jsonl(path, problems: Iterable[ProblemSet]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in problems:
            fh.write(dumps_problem(p) + "\n")


def read_jsonl(path) -> list[ProblemSet]:
    with open(path, encoding="utf-8") as fh:
        return loads_jsonl(fh.read())


def loads_jsonl(text: str) -> list[ProblemSet]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(str(e), lineno) from None
        out.append(ProblemSet.from_json(obj, default_id=str(len(out))))
    return out
