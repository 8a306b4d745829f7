"""Reference baselines: question/choice similarity, sliding window, and the
attention-free Tree-LSTM.

(a) and (b) represent every utterance as the mean of its word vectors and
compare utterances by cosine.  (f) reuses the full model with the memory
module switched off, so it is trained by the ordinary training loop.
"""

from __future__ import annotations

import numpy as np

from .answer import select
from .encoder import EmbeddingTable, embed
from .errors import DomainError
from .training import TrainConfig, TrainResult, train

NAMES = ("question_choice", "sliding_window", "treelstm")


def average_vector(tokens, table: EmbeddingTable) -> np.ndarray:
    """Mean word vector; unknown words contribute the unk row."""
    return np.mean([embed(w, table) for w in tokens], axis=0)


def _sentences_vector(sentences, table):
    return average_vector([w for s in sentences for w in s.tokens], table)


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-8 or nb < 1e-8:
        return 0.0
    return float(a @ b / (na * nb))


def _softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


def question_choice_scores(problem, table) -> np.ndarray:
    q = _sentences_vector(problem.question, table)
    return np.array([_cos(q, _sentences_vector(c, table)) for c in problem.choices])


def baseline_question_choice(problem, table) -> frozenset[int]:
    return select(question_choice_scores(problem, table), problem.n_correct)


def best_window(problem, table, w: int = 5) -> tuple[int, np.ndarray]:
    """Start index and mean vector of the ``w``-sentence window closest to the question.

    Stride 1; a story shorter than ``w`` forms a single window.
    """
    if w < 1:
        raise DomainError(f"window size must be positive, got {w}")
    q = _sentences_vector(problem.question, table)
    story = problem.story
    best_start, best_vec, best_sim = 0, None, -np.inf
    for start in range(max(1, len(story) - w + 1)):
        vec = _sentences_vector(story[start:start + w], table)
        sim = _cos(q, vec)
        if sim > best_sim:
            best_start, best_vec, best_sim = start, vec, sim
    return best_start, best_vec


def sliding_window_scores(problem, table, w: int = 5) -> np.ndarray:
    _, window = best_window(problem, table, w)
    return np.array([_cos(window, _sentences_vector(c, table)) for c in problem.choices])


def baseline_sliding_window(problem, table, w: int = 5) -> frozenset[int]:
    return select(sliding_window_scores(problem, table, w), problem.n_correct)


class SimilarityBaseline:
    """Adapter exposing (a)/(b) through ``predict_distribution`` for ``evaluate``."""

    def __init__(self, name: str, table: EmbeddingTable, window: int = 5):
        if name not in ("question_choice", "sliding_window"):
            raise ValueError(f"unknown similarity baseline {name!r}")
        self.name, self.table, self.window = name, table, window

    def scores(self, problem) -> np.ndarray:
        if self.name == "question_choice":
            return question_choice_scores(problem, self.table)
        return sliding_window_scores(problem, self.table, self.window)

    def predict_distribution(self, problem) -> np.ndarray:
        # softmax is monotone, so top-N on it equals top-N on the raw cosines
        return _softmax(self.scores(problem))

    def predict(self, problem) -> frozenset[int]:
        return select(self.scores(problem), problem.n_correct)


def train_treelstm_baseline(config: TrainConfig, train_set, dev_set) -> TrainResult:
    """Baseline (f): the Tree-LSTM encoder trained with the answer module but no memory."""
    cfg = TrainConfig(**{**config.to_json(), "attention": False})
    return train(cfg, train_set, dev_set)


def baseline_treelstm_sum(problem, model) -> frozenset[int]:
    if model.config.attention:
        raise ValueError("baseline (f) expects a model trained with attention disabled")
    return model.predict(problem)


def random_table(vocabulary: dict[str, int], dim: int, seed: int = 0) -> EmbeddingTable:
    """Gaussian stand-in for pretrained vectors when none exist (synthetic symbols).

    The unk row is zero.
    """
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((max(vocabulary.values()) + 1, dim))
    unk = vocabulary.get("<unk>", 0)
    vectors[unk] = 0.0
    return EmbeddingTable(vocabulary, vectors, unk)
