"""The full hierarchical attention model: encoders, memory hops, answer module.

Parameters live in a flat ``{name: array}`` mapping so that gradients,
AdaGrad state and checkpoints can all be keyed the same way.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import numeric as nm
from .answer import score_choices, select, target_distribution
from .encoder import EmbeddingTable, TreeLstmParams, encode_forest
from .errors import ConfigError
from .memory import LEVELS, AttentionTrace, MemoryParams, build_memory, run_hops
from .treebank import ProblemSet

ROLES = ("story", "question", "choice")


@dataclass
class ModelConfig:
    hidden_dim: int = 75
    embedding_dim: int | None = None
    memory_dim: int | None = None
    hops: int = 2
    level: str = "phrase"
    attention: bool = True
    tie_encoders: bool = True
    per_hop_memory: bool = False
    train_embeddings: bool = True
    forget_bias: float = 1.0
    init_scale: float = 0.05

    def __post_init__(self):
        if self.embedding_dim is None:
            self.embedding_dim = self.hidden_dim
        if self.memory_dim is None:
            self.memory_dim = self.hidden_dim
        if min(self.hidden_dim, self.embedding_dim, self.memory_dim) < 1:
            raise ConfigError("dimensions must be positive")
        if not 1 <= self.hops <= 3:
            raise ConfigError(f"hops must be in 1..3, got {self.hops}")
        if self.level not in LEVELS:
            raise ConfigError(f"level must be one of {LEVELS}, got {self.level!r}")
        # q_n is compared to raw choice vectors by cosine
        if self.attention and self.memory_dim != self.hidden_dim:
            raise ConfigError(
                f"memory_dim ({self.memory_dim}) must equal hidden_dim ({self.hidden_dim})"
            )

    def to_json(self) -> dict:
        return asdict(self)


class Forward(NamedTuple):
    scores: nm.Var
    p_hat: nm.Var
    trace: AttentionTrace | None
    tape: nm.Tape
    output: nm.Var  # q_n, or the pair vector without attention
    choices: nm.Var  # [K x d_h] choice vectors


class HamModel:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], vocabulary: dict[str, int]):
        self.config = config
        self.params = params
        self.vocabulary = vocabulary
        missing = [n for n in self.expected_names() if n not in params]
        if missing:
            raise ConfigError(f"missing parameters: {missing}")

    # -- construction -----------------------------------------------------

    @classmethod
    def initialize(cls, config: ModelConfig, vocabulary: dict[str, int], seed: int,
                   pretrained: EmbeddingTable | None = None) -> "HamModel":
        rng = np.random.default_rng(seed)
        s = config.init_scale
        params: dict[str, np.ndarray] = {}
        emb = rng.uniform(-s, s, (len(vocabulary), config.embedding_dim))
        if pretrained is not None:
            if pretrained.dim != config.embedding_dim:
                raise ConfigError(f"pretrained vectors have dim {pretrained.dim}, config wants {config.embedding_dim}")
            pv = nm.value(pretrained.vectors)
            for w, i in vocabulary.items():
                j = pretrained.vocabulary.get(w)
                if j is not None and j != pretrained.unk_index:
                    emb[i] = pv[j]
        params["embedding"] = emb
        for prefix in cls._tree_prefixes(config):
            tp = TreeLstmParams.initialize(config.embedding_dim, config.hidden_dim, rng, s, config.forget_bias)
            for name, arr in tp.items():
                params[f"{prefix}.{name}"] = arr
        if config.attention:
            for prefix in cls._memory_prefixes(config):
                mp = MemoryParams.initialize(config.memory_dim, config.hidden_dim, rng, s)
                for name, arr in mp.items():
                    if name == "W_q" and prefix != cls._memory_prefixes(config)[0]:
                        continue
                    params[f"{prefix}.{name}"] = arr
        return cls(config, params, vocabulary)

    @staticmethod
    def _tree_prefixes(config):
        return ["tree"] if config.tie_encoders else [f"{r}_tree" for r in ROLES]

    @staticmethod
    def _memory_prefixes(config):
        if config.per_hop_memory:
            return [f"memory.hop{h + 1}" for h in range(config.hops)]
        return ["memory"]

    def expected_names(self) -> list[str]:
        c = self.config
        names = ["embedding"]
        for prefix in self._tree_prefixes(c):
            names += [f"{prefix}.{g}_{k}" for g in "WUb" for k in "iofu"]
        if c.attention:
            prefixes = self._memory_prefixes(c)
            names += [f"{p}.{n}" for p in prefixes for n in ("W_m", "W_c")]
            names.append(f"{prefixes[0]}.W_q")
        return names

    @property
    def trainable_names(self) -> list[str]:
        return [n for n in self.params if n != "embedding" or self.config.train_embeddings]

    def copy(self) -> "HamModel":
        return HamModel(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.vocabulary))

    # -- forward ----------------------------------------------------------

    def _bind(self, tape: nm.Tape, grad: bool = True):
        trainable = set(self.trainable_names) if grad else set()
        bound = {
            name: tape.param(name, arr) if name in trainable else tape.constant(arr)
            for name, arr in self.params.items()
        }
        table = EmbeddingTable(self.vocabulary, bound["embedding"], self.vocabulary.get("<unk>", 0))
        trees = {}
        for role in ROLES:
            prefix = "tree" if self.config.tie_encoders else f"{role}_tree"
            trees[role] = TreeLstmParams(**{k: bound[f"{prefix}.{k}"] for k in
                                            (f"{g}_{x}" for g in "WUb" for x in "iofu")})
        memory = None
        if self.config.attention:
            prefixes = self._memory_prefixes(self.config)
            W_q = bound[f"{prefixes[0]}.W_q"]
            hops = [MemoryParams(bound[f"{p}.W_m"], bound[f"{p}.W_c"], W_q) for p in prefixes]
            memory = hops if self.config.per_hop_memory else hops[0]
        return table, trees, memory

    def forward(self, problem: ProblemSet, tape: nm.Tape | None = None, grad: bool = True) -> Forward:
        """Run the model; with ``grad=False`` nothing is recorded for backward."""
        tape = tape or nm.Tape()
        table, trees, memory = self._bind(tape, grad)
        S, Q = len(problem.story), len(problem.question)
        choice_trees = [t for c in problem.choices for t in c]
        choice_seg = np.array([i for i, c in enumerate(problem.choices) for _ in c], dtype=np.intp)
        if self.config.tie_encoders:
            forest = encode_forest(list(problem.story) + list(problem.question) + choice_trees,
                                   table, trees["story"], tape)
            story_f = question_f = choice_f = forest
            story_ids = list(range(S))
            q_roots = forest.root_rows[S:S + Q]
            c_roots = forest.root_rows[S + Q:]
        else:
            story_f = encode_forest(problem.story, table, trees["story"], tape)
            question_f = encode_forest(problem.question, table, trees["question"], tape)
            choice_f = encode_forest(choice_trees, table, trees["choice"], tape)
            story_ids = list(range(S))
            q_roots = question_f.root_rows
            c_roots = choice_f.root_rows
        V_Q = nm.sum_rows(nm.gather_rows(question_f.hidden, q_roots))
        V_C = nm.segment_sum(nm.gather_rows(choice_f.hidden, c_roots), choice_seg, problem.k)
        trace = None
        if self.config.attention:
            mem = build_memory(story_f, self.config.level, story_ids)
            q_n, trace = run_hops(V_Q, mem, memory, self.config.hops)
        else:
            # attention-free pair vector: story roots plus question roots
            story_sum = nm.sum_rows(nm.gather_rows(story_f.hidden, story_f.root_rows[:S]))
            q_n = nm.add(story_sum, V_Q)
        scores, p_hat = score_choices(q_n, V_C)
        return Forward(scores, p_hat, trace, tape, q_n, V_C)

    def loss(self, problem: ProblemSet) -> float:
        fw = self.forward(problem, grad=False)
        return float(nm.kl_divergence(target_distribution(problem.k, problem.correct), fw.p_hat).value)

    def loss_and_grads(self, problem: ProblemSet):
        fw = self.forward(problem)
        L = nm.kl_divergence(target_distribution(problem.k, problem.correct), fw.p_hat)
        grads = fw.tape.backward(L)
        return float(L.value), grads

    def predict_distribution(self, problem: ProblemSet) -> np.ndarray:
        return self.forward(problem, grad=False).p_hat.value

    def predict(self, problem: ProblemSet) -> frozenset[int]:
        return select(self.predict_distribution(problem), problem.n_correct)

    def attention(self, problem: ProblemSet) -> AttentionTrace | None:
        return self.forward(problem, grad=False).trace
