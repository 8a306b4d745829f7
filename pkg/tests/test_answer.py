import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ham import numeric as nm
from ham.answer import answer_distribution, grade, loss, score_choices, select, target_distribution
from ham.errors import DimensionError, DomainError
from ham.training import numerical_gradient, relative_error

from oracles import cos, kl, softmax


# --- score_choices ------------------------------------------------------------------


def test_identical_direction_wins():
    C = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    q = 2.5 * C[1]
    scores, p_hat = score_choices(q, C)
    others = [i for i in range(4) if i != 1]
    assert all(p_hat.value[1] > p_hat.value[i] for i in others)
    assert scores.value[1] == pytest.approx(1.0, abs=1e-15)


def test_identical_choices_uniform():
    rng = np.random.default_rng(0)
    v = rng.normal(size=5)
    _, p_hat = score_choices(rng.normal(size=5), np.tile(v, (4, 1)))
    assert np.abs(p_hat.value - 0.25).max() < 1e-15


def test_softmax_of_unit_score():
    # scores (1, 0, 0, 0): q along e1, choices e1 then three orthogonal directions
    C = np.array([[1.0, 0, 0, 0, 0], [0, 1.0, 0, 0, 0], [0, 0, 1.0, 0, 0], [0, 0, 0, 1.0, 0]])
    scores, p_hat = score_choices(np.array([1.0, 0, 0, 0, 0]), C)
    assert scores.value.tolist() == [1.0, 0.0, 0.0, 0.0]
    e = math.e
    want = np.array([e, 1, 1, 1]) / (e + 3)
    assert np.abs(p_hat.value - want).max() < 1e-15
    # the rounded reference (0.4755, 0.1748) is off by one in the last digit
    assert np.allclose(p_hat.value, [0.4755, 0.1748, 0.1748, 0.1748], atol=2e-4)


def test_score_errors():
    with pytest.raises(DimensionError):
        score_choices(np.ones(3), np.ones((4, 2)))
    with pytest.raises(DomainError):
        score_choices(np.ones(3), np.ones((1, 3)))
    with pytest.raises(DimensionError):
        score_choices(np.ones(3), np.ones(3))


def test_scores_match_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        K, d = int(rng.integers(2, 6)), int(rng.integers(1, 8))
        q, C = rng.normal(size=d), rng.normal(size=(K, d))
        scores, p_hat = score_choices(q, C)
        want = [cos(q, c) for c in C]
        assert np.abs(scores.value - want).max() < 1e-12
        assert np.abs(p_hat.value - softmax(want)).max() < 1e-12


# --- target_distribution --------------------------------------------------------------


@pytest.mark.parametrize(
    "K, correct, want",
    [(4, {0}, [1, 0, 0, 0]), (4, {0, 1}, [0.5, 0.5, 0, 0]), (2, {1}, [0, 1])],
)
def test_target_examples(K, correct, want):
    assert target_distribution(K, correct).tolist() == want


def test_target_errors():
    with pytest.raises(DomainError):
        target_distribution(4, set())
    with pytest.raises(DomainError):
        target_distribution(2, {0, 1})
    with pytest.raises(DomainError):
        target_distribution(3, {3})


@given(st.integers(2, 12).flatmap(lambda K: st.tuples(st.just(K), st.sets(st.integers(0, K - 1), min_size=1, max_size=K - 1))))
def test_target_sums_to_one(args):
    K, correct = args
    p = target_distribution(K, correct)
    assert abs(p.sum() - 1) < 1e-12
    assert np.count_nonzero(p) == len(correct)
    assert all(p[i] == 1 / len(correct) for i in correct)


# --- select and grade ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "p_hat, N, want",
    [([0.1, 0.6, 0.2, 0.1], 1, {1}), ([0.25] * 4, 2, {0, 1}), ([0.4, 0.1, 0.4, 0.1], 2, {0, 2})],
)
def test_select_examples(p_hat, N, want):
    assert select(p_hat, N) == want


def test_select_errors():
    with pytest.raises(DomainError):
        select([0.5, 0.5], 2)
    with pytest.raises(DomainError):
        select([0.5, 0.5], 0)


@settings(max_examples=80)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=8), st.data())
def test_select_invariant_under_softmax(scores, data):
    N = data.draw(st.integers(1, len(scores) - 1))
    p_hat = nm.softmax(np.array(scores)).value
    # softmax can merge distinct scores into equal floats only when they are within an ulp
    if len(set(p_hat.tolist())) == len(set(scores)):
        assert select(scores, N) == select(p_hat, N)


@pytest.mark.parametrize(
    "pred, correct, ok",
    [({1}, {1}, True), ({0, 1}, {0, 2}, False), ({0, 1}, {1, 0}, True)],
)
def test_grade_examples(pred, correct, ok):
    assert grade(pred, correct) is ok


# --- loss ------------------------------------------------------------------------------------


def test_loss_zero_at_target():
    p = np.array([0.5, 0.5, 0.0])
    assert loss(p, p).value == 0.0


def test_loss_ln4_for_uniform_prediction():
    assert abs(loss(np.array([1.0, 0, 0, 0]), np.full(4, 0.25)).value - math.log(4)) < 1e-12


def test_loss_ln2_for_half_mass():
    assert abs(loss(np.array([1.0, 0]), np.array([0.5, 0.5])).value - math.log(2)) < 1e-12


def test_loss_monotone_in_correct_mass():
    p = np.array([1.0, 0.0])
    values = [loss(p, np.array([a, 1 - a])).value for a in (0.9, 0.5, 0.1)]
    assert values[0] < values[1] < values[2]
    assert values == pytest.approx([kl(p, [a, 1 - a]) for a in (0.9, 0.5, 0.1)], abs=1e-15)


def test_loss_vanishes_with_extreme_scores():
    p = target_distribution(4, {2})
    p_hat = nm.softmax(np.array([-30.0, -30.0, 30.0, -30.0]))
    assert loss(p, p_hat).value < 1e-6


def test_loss_gradient_wrt_scores():
    rng = np.random.default_rng(2)
    for _ in range(20):
        K = int(rng.integers(2, 6))
        scores = rng.normal(size=K)
        p = target_distribution(K, {int(rng.integers(K))})

        def f(grad=False):
            tape = nm.Tape()
            s = tape.param("s", scores) if grad else scores
            return tape, loss(p, nm.softmax(s))

        tape, L = f(True)
        analytic = tape.backward(L)["s"]
        numeric = numerical_gradient(lambda: float(f()[1].value), scores)
        assert relative_error(analytic, numeric).max() < 1e-5


def test_answer_distribution_bundle():
    rng = np.random.default_rng(3)
    dist = answer_distribution(rng.normal(size=4), rng.normal(size=(4, 4)), correct={0, 3})
    assert dist.p.tolist() == [0.5, 0, 0, 0.5]
    assert len(dist.selected) == 2 and abs(dist.p_hat.sum() - 1) < 1e-9
