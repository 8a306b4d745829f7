"""Choice scoring, the target distribution, KL loss and top-N selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import numeric as nm
from .errors import DimensionError, DomainError


@dataclass
class AnswerDistribution:
    scores: np.ndarray
    p_hat: np.ndarray
    p: np.ndarray | None = None
    selected: frozenset[int] | None = None


def score_choices(q_n, choice_vectors):
    """Cosine of ``q_n`` against each choice vector, then softmax.

    Returns ``(scores, p_hat)`` as tape values.
    """
    C = choice_vectors
    if not isinstance(C, nm.Var):
        C = np.asarray(C, dtype=np.float64)
        if C.ndim != 2:
            raise DimensionError(f"choice vectors must be a [K x d] matrix, got {C.shape}")
    K, d = nm.value(C).shape
    if K < 2:
        raise DomainError(f"need at least 2 choices, got {K}")
    if nm.value(q_n).shape != (d,):
        raise DimensionError(f"memory output {nm.value(q_n).shape} vs choice vectors of size {d}")
    scores = nm.cosine_rows(C, q_n)
    return scores, nm.softmax(scores)


def answer_distribution(q_n, choice_vectors, correct=None) -> AnswerDistribution:
    scores, p_hat = score_choices(q_n, choice_vectors)
    dist = AnswerDistribution(scores.value, p_hat.value)
    if correct is not None:
        dist.p = target_distribution(len(dist.scores), correct)
        dist.selected = select(dist.p_hat, len(correct))
    return dist


def target_distribution(K: int, correct: Iterable[int]) -> np.ndarray:
    correct = set(correct)
    N = len(correct)
    if not 1 <= N < K:
        raise DomainError(f"need 1 <= |correct| < K, got {N} of {K}")
    if any(not 0 <= i < K for i in correct):
        raise DomainError(f"correct indices {sorted(correct)} outside [0, {K})")
    p = np.zeros(K)
    p[sorted(correct)] = 1.0 / N
    return p


def select(p_hat, N: int) -> frozenset[int]:
    """Indices of the ``N`` largest entries; ties go to the lower index."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if not 1 <= N < len(p_hat):
        raise DomainError(f"need 1 <= N < K, got N={N}, K={len(p_hat)}")
    order = np.argsort(-p_hat, kind="stable")
    return frozenset(int(i) for i in order[:N])


def loss(p, p_hat):
    return nm.kl_divergence(p, p_hat)


def grade(prediction, correct) -> bool:
    return set(prediction) == set(correct)
