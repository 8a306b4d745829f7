"""Seeded synthetic comprehension problems with known answers.

Two task kinds:

``locate``
    Each story sentence pairs an entity with attribute(s).  The question names
    one entity; its attribute is the answer.  Distractor choices are
    attributes of other entities in the same story.

``two-hop``
    Entities own link objects and link objects hold attributes, each fact in
    its own sentence.  The question names an entity, so answering needs the
    entity->link sentence and then the link->attribute sentence.

Surface tokens are synthetic symbols (``entity3``, ``link7``, ``attr12``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GenerationError
from .treebank import DepTree, ProblemSet, chain_tree, dumps_problem, validate

TASKS = ("locate", "two-hop")
TREE_MODES = ("chain", "random")
FILLERS = ("the", "a", "big", "old", "red", "small")
FILLER_SENTENCES = (
    ("the", "day", "was", "long"),
    ("it", "rained", "a", "lot"),
    ("the", "room", "was", "quiet"),
    ("nothing", "else", "happened"),
)


@dataclass
class SynthConfig:
    task: str = "locate"
    n: int = 200
    k: int = 4
    answers: int = 1
    seed: int = 0
    vocab_size: int = 60
    distractors: int = 0
    story_length: int | None = None
    sentence_length: tuple[int, int] = (3, 3)
    tree: str = "chain"
    token_dropout: float = 0.0

    def pairs(self) -> int:
        """Entity facts (locate) or chains (two-hop) per story."""
        return 1 + (self.k - self.answers) + self.distractors

    def min_story_length(self) -> int:
        return self.pairs() * (2 if self.task == "two-hop" else 1)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise GenerationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.tree not in TREE_MODES:
            raise GenerationError(f"tree must be one of {TREE_MODES}, got {self.tree!r}")
        if self.k < 2 or not 1 <= self.answers < self.k:
            raise GenerationError(f"need K >= 2 and 1 <= N < K, got K={self.k}, N={self.answers}")
        if self.n < 0 or self.distractors < 0:
            raise GenerationError("n and distractors must be nonnegative")
        lo, hi = self.sentence_length
        if lo > hi or lo < 1:
            raise GenerationError(f"bad sentence length range {self.sentence_length}")
        if not 0.0 <= self.token_dropout < 1.0:
            raise GenerationError("token_dropout must be in [0, 1)")
        story = self.story_length if self.story_length is not None else self.min_story_length()
        if story < max(2, self.min_story_length()):
            raise GenerationError(
                f"story length {story} too short: task needs {self.min_story_length()} sentences (and at least 2)"
            )
        ents, links, attrs = self._pools()
        need_attrs = self.k + self.distractors
        if ents < self.pairs() or attrs < need_attrs or (self.task == "two-hop" and links < self.pairs()):
            raise GenerationError(
                f"vocabulary of {self.vocab_size} symbols too small for {self.pairs()} "
                f"entities and {need_attrs} attributes per story"
            )

    def _pools(self) -> tuple[int, int, int]:
        if self.task == "two-hop":
            third = self.vocab_size // 3
            return third, third, self.vocab_size - 2 * third
        half = self.vocab_size // 2
        return half, 0, self.vocab_size - half


@dataclass
class Generated:
    problems: list[ProblemSet]
    metadata: list[dict] = field(default_factory=list)


def _tree(tokens, mode, rng) -> DepTree:
    if mode == "chain":
        return chain_tree(tokens)
    return random_tree(tokens, rng)


def random_tree(tokens, rng) -> DepTree:
    """Uniform random rooted labelled tree over the tokens (Prüfer decoding)."""
    n = len(tokens)
    if n == 1:
        return validate(tokens, [0])
    adj: list[list[int]] = [[] for _ in range(n)]
    if n == 2:
        adj[0].append(1)
        adj[1].append(0)
    else:
        seq = list(rng.integers(0, n, size=n - 2))
        degree = [1] * n
        for v in seq:
            degree[v] += 1
        for v in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            adj[leaf].append(v)
            adj[v].append(leaf)
            degree[leaf] -= 1
            degree[v] -= 1
        u, w = [i for i in range(n) if degree[i] == 1]
        adj[u].append(w)
        adj[w].append(u)
    root = int(rng.integers(0, n))
    heads = [0] * n
    seen, stack = {root}, [root]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                heads[w] = v + 1
                stack.append(w)
    return validate(tokens, heads)


def _pad(tokens, cfg, rng):
    """Insert filler words after the first token up to a sampled length."""
    lo, hi = cfg.sentence_length
    target = int(rng.integers(lo, hi + 1))
    tokens = list(tokens)
    while len(tokens) < target:
        pos = int(rng.integers(1, len(tokens)))
        tokens.insert(pos, FILLERS[int(rng.integers(len(FILLERS)))])
    return tokens


def _dropout(tokens, p, rng):
    if p <= 0:
        return list(tokens)
    kept = [t for t in tokens if rng.random() >= p]
    return kept or [tokens[-1]]


def _attr_phrase(attrs):
    out = [attrs[0]]
    for a in attrs[1:]:
        out += ["and", a]
    return out


def _one(cfg: SynthConfig, index: int, pools) -> tuple[ProblemSet, dict]:
    rng = np.random.default_rng([cfg.seed, index])
    ent_pool, link_pool, attr_pool = pools
    P, K, N = cfg.pairs(), cfg.k, cfg.answers
    ents = [ent_pool[i] for i in rng.choice(len(ent_pool), P, replace=False)]
    n_attrs = N + (P - 1)
    attrs = [attr_pool[i] for i in rng.choice(len(attr_pool), n_attrs, replace=False)]
    # fact 0 belongs to the asked entity and carries the N answers
    fact_attrs = [attrs[:N]] + [[a] for a in attrs[N:]]
    facts: list[tuple[list[str], list[int]]] = []  # (tokens, fact id)
    if cfg.task == "locate":
        for f, (e, av) in enumerate(zip(ents, fact_attrs)):
            facts.append((_pad([e, "has", *_attr_phrase(av)], cfg, rng), [f]))
        question = [ents[0], "has", "what"]
    else:
        links = [link_pool[i] for i in rng.choice(len(link_pool), P, replace=False)]
        for f, (e, l, av) in enumerate(zip(ents, links, fact_attrs)):
            facts.append((_pad([e, "owns", l], cfg, rng), [f, 0]))
            facts.append((_pad([l, "holds", *_attr_phrase(av)], cfg, rng), [f, 1]))
        question = [ents[0], "gets", "what"]
    story_len = cfg.story_length if cfg.story_length is not None else len(facts)
    for i in range(story_len - len(facts)):
        facts.append((list(FILLER_SENTENCES[int(rng.integers(len(FILLER_SENTENCES)))]), [-1]))
    order = rng.permutation(len(facts))
    story_tokens = [_dropout(facts[i][0], cfg.token_dropout, rng) for i in order]
    supporting = [pos for pos, i in enumerate(order) if facts[i][1][0] == 0]

    # choices: the N answers plus K-N attributes of other facts
    distractor_attrs = [fact_attrs[f][0] for f in range(1, 1 + K - N)]
    options = list(fact_attrs[0]) + distractor_attrs
    perm = rng.permutation(K)
    choice_words = [options[i] for i in perm]
    correct = frozenset(int(pos) for pos, i in enumerate(perm) if i < N)

    story = tuple(_tree(t, cfg.tree, rng) for t in story_tokens)
    q_tree = (_tree(question, cfg.tree, rng),)
    choices = tuple((_tree(["the", w], cfg.tree, rng),) for w in choice_words)
    pid = f"{cfg.task}-{cfg.seed}-{index}"
    problem = ProblemSet(story, q_tree, choices, correct, id=pid)
    meta = {
        "id": pid,
        "task": cfg.task,
        "entity": ents[0],
        "answers": list(fact_attrs[0]),
        "supporting": supporting,
    }
    return problem, meta


def generate(cfg: SynthConfig) -> Generated:
    cfg.validate()
    n_ent, n_link, n_attr = cfg._pools()
    pools = (
        [f"entity{i}" for i in range(n_ent)],
        [f"link{i}" for i in range(n_link)],
        [f"attr{i}" for i in range(n_attr)],
    )
    out = Generated([])
    for i in range(cfg.n):
        p, m = _one(cfg, i, pools)
        out.problems.append(p)
        out.metadata.append(m)
    return out


def split(problems, ratios=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle then partition into ``len(ratios)`` disjoint parts."""
    ratios = [float(r) for r in ratios]
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise GenerationError(f"split ratios must be nonnegative and sum to 1, got {ratios}")
    items = list(problems)
    order = np.random.default_rng(seed).permutation(len(items))
    sizes = [int(round(r * len(items))) for r in ratios[:-1]]
    if sum(sizes) > len(items):
        sizes[-1] -= sum(sizes) - len(items)
    sizes.append(len(items) - sum(sizes))
    parts, start = [], 0
    for s in sizes:
        parts.append([items[i] for i in order[start:start + s]])
        start += s
    return tuple(parts)


def metadata_jsonl(metadata) -> str:
    return "".join(json.dumps(m, separators=(",", ":")) + "\n" for m in metadata)


def problems_jsonl(problems) -> str:
    return "".join(dumps_problem(p) + "\n" for p in problems)


def config_json(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["sentence_length"] = list(cfg.sentence_length)
    return d


def random_problem(rng, max_story_nodes=6, max_question_nodes=8, k=None, vocab=8, tree="random") -> ProblemSet:
    """A small random problem for gradient checks: random trees over ``w0..w{vocab-1}``.

    A token ``oov`` is occasionally emitted to exercise the unknown-word row.
    """
    def sentence(n):
        words = [f"w{int(rng.integers(vocab))}" if rng.random() > 0.1 else "oov" for _ in range(n)]
        return _tree(words, tree, rng)

    budget = int(rng.integers(1, max_story_nodes + 1))
    story = []
    while budget > 0:
        n = int(rng.integers(1, budget + 1))
        story.append(sentence(n))
        budget -= n
    question = (sentence(int(rng.integers(1, max_question_nodes + 1))),)
    K = k if k is not None else int(rng.integers(2, 5))
    choices = tuple(
        tuple(sentence(int(rng.integers(1, 4))) for _ in range(int(rng.integers(1, 3))))
        for _ in range(K)
    )
    N = 1 if K == 2 else int(rng.integers(1, 3))
    correct = frozenset(int(i) for i in rng.choice(K, N, replace=False))
    return ProblemSet(tuple(story), question, choices, correct, id="random")
