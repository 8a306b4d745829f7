import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ham import numeric as nm
from ham.errors import DimensionError, DomainError
from ham.training import numerical_gradient, relative_error

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def vec(n):
    return hnp.arrays(np.float64, n, elements=finite)


# --- affine ------------------------------------------------------------------


def test_affine_identity():
    out = nm.affine(np.eye(2), [3.0, -1.0], [0.0, 0.0])
    assert np.array_equal(out.value, [3.0, -1.0])


def test_affine_zero_weights_returns_bias():
    out = nm.affine(np.zeros((2, 3)), [7.0, -2.0, 4.0], [1.0, 2.0])
    assert np.array_equal(out.value, [1.0, 2.0])


def test_affine_hand_evaluated():
    out = nm.affine([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0], [1.0, 0.0])
    assert np.array_equal(out.value, [4.0, 7.0])


def test_affine_shape_mismatch_names_operands():
    with pytest.raises(DimensionError, match="W"):
        nm.affine(np.eye(2), [1.0, 2.0, 3.0], [0.0, 0.0])
    with pytest.raises(DimensionError):
        nm.affine(np.eye(2), [1.0, 2.0], [0.0, 0.0, 0.0])


# --- softmax ---------------------------------------------------------------


def test_softmax_uniform():
    assert np.allclose(nm.softmax(np.zeros(4)).value, 0.25, atol=0, rtol=1e-15)


@pytest.mark.parametrize("c", [-3.0, 0.0, 12.5])
def test_softmax_singleton(c):
    assert nm.softmax([c]).value.tolist() == [1.0]


def test_softmax_ln2():
    y = nm.softmax([math.log(2), 0.0]).value
    assert abs(y[0] - 2 / 3) < 1e-15 and abs(y[1] - 1 / 3) < 1e-15


def test_softmax_domain_errors():
    with pytest.raises(DomainError):
        nm.softmax(np.zeros(0))
    with pytest.raises(DomainError):
        nm.softmax([0.0, np.inf])


@given(vec(st.integers(1, 12)), st.floats(-10, 10))
def test_softmax_sums_to_one_and_shift_invariant(v, c):
    y = nm.softmax(v).value
    assert np.all(y > 0)
    assert abs(y.sum() - 1.0) < 1e-12
    # exact up to the rounding of v + c itself
    assert np.max(np.abs(nm.softmax(v + c).value - y)) < 1e-12


# --- cosine ------------------------------------------------------------------


def test_cosine_identical():
    assert abs(nm.cosine([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]).value - 1.0) < 1e-15


def test_cosine_orthogonal():
    assert nm.cosine([1.0, 0.0], [0.0, 1.0]).value == 0.0


def test_cosine_zero_norm_guard_has_zero_gradient():
    tape = nm.Tape()
    a = tape.param("a", [0.0, 0.0])
    b = tape.param("b", [1.0, 1.0])
    out = nm.cosine(a, b)
    assert out.value == 0.0
    g = tape.backward(out)
    assert not g["a"].any() and not g["b"].any()


def test_cosine_dimension_error():
    with pytest.raises(DimensionError):
        nm.cosine([1.0, 2.0], [1.0, 2.0, 3.0])


@given(vec(5), vec(5), st.floats(1e-3, 1e3))
def test_cosine_symmetric_and_scale_invariant(a, b, lam):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    c = nm.cosine(a, b).value
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert abs(c - nm.cosine(b, a).value) < 1e-12
    assert abs(c - nm.cosine(lam * a, b).value) < 1e-12


def test_cosine_rows_matches_cosine():
    rng = np.random.default_rng(3)
    M, q = rng.normal(size=(5, 4)), rng.normal(size=4)
    M[2] = 0.0
    rows = nm.cosine_rows(M, q).value
    assert np.allclose(rows, [nm.cosine(m, q).value for m in M], atol=1e-15)
    assert rows[2] == 0.0


# --- KL ----------------------------------------------------------------------


def test_kl_identical_is_zero():
    p = [0.5, 0.5, 0.0, 0.0]
    assert nm.kl_divergence(p, p).value == 0.0


def test_kl_point_mass_vs_uniform_pair():
    assert abs(nm.kl_divergence([1.0, 0.0], [0.5, 0.5]).value - math.log(2)) < 1e-12


def test_kl_two_answers_vs_uniform_four():
    v = nm.kl_divergence([0.5, 0.5, 0.0, 0.0], [0.25] * 4).value
    assert abs(v - math.log(2)) < 1e-12


def test_kl_zero_where_target_positive():
    with pytest.raises(DomainError):
        nm.kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_kl_rejects_unnormalised():
    with pytest.raises(DomainError):
        nm.kl_divergence([0.5, 0.6], [0.5, 0.5])


@given(st.integers(2, 6).flatmap(lambda k: st.tuples(vec(k), vec(k))))
def test_kl_nonnegative_and_zero_iff_equal(pair):
    p = nm.softmax(pair[0]).value
    q = nm.softmax(pair[1]).value
    d = nm.kl_divergence(p, q).value
    assert d >= -1e-15
    assert abs(nm.kl_divergence(p, p).value) < 1e-12
    if np.max(np.abs(p - q)) > 1e-3:
        assert d > 0


# --- backward ------------------------------------------------------------------


def test_backward_square():
    tape = nm.Tape()
    x = tape.param("x", 3.0)
    g = tape.backward(nm.mul(x, x))
    assert g["x"] == 6.0


def test_backward_constant_cosine():
    tape = nm.Tape()
    x = tape.param("x", [0.3, -1.2, 2.0])
    g = tape.backward(nm.cosine(x, x))
    assert np.allclose(g["x"], 0.0, atol=1e-15)


def test_backward_non_scalar_loss():
    tape = nm.Tape()
    x = tape.param("x", [1.0, 2.0])
    with pytest.raises(DomainError):
        tape.backward(nm.scale(x, 2.0))


def test_unreached_parameter_gets_zero_gradient():
    tape = nm.Tape()
    x = tape.param("x", [1.0, 2.0])
    tape.param("y", [[1.0, 2.0]])
    g = nm.backward(tape, nm.total(nm.mul(x, x)))
    assert g["y"].shape == (1, 2) and not g["y"].any()


def test_gradient_of_sum_is_sum_of_gradients():
    rng = np.random.default_rng(0)
    W, x = rng.normal(size=(3, 4)), rng.normal(size=4)

    def grads(which):
        tape = nm.Tape()
        Wv, xv = tape.param("W", W), tape.param("x", x)
        h = nm.tanh(nm.matmul(Wv, xv))
        l1, l2 = nm.total(nm.mul(h, h)), nm.cosine(h, [1.0, -1.0, 0.5])
        loss = {"1": l1, "2": l2, "both": nm.add(l1, l2)}[which]
        return tape.backward(loss)

    g1, g2, g12 = grads("1"), grads("2"), grads("both")
    for k in ("W", "x"):
        assert np.allclose(g12[k], g1[k] + g2[k], atol=1e-14)


def _three_gate(params, x):
    tape = nm.Tape()
    P = {k: tape.param(k, v) for k, v in params.items()}
    i = nm.sigmoid(nm.affine(P["W_i"], x, P["b_i"]))
    f = nm.sigmoid(nm.affine(P["W_f"], x, P["b_f"]))
    u = nm.tanh(nm.affine(P["W_u"], x, P["b_u"]))
    c = nm.add(nm.mul(i, u), nm.mul(f, tape.constant([0.3, -0.2, 0.1])))
    loss = nm.total(nm.mul(nm.tanh(c), tape.constant([1.0, -2.0, 0.5])))
    return tape, loss


def test_three_gate_composite_against_finite_differences():
    rng = np.random.default_rng(11)
    for trial in range(10):
        params = {}
        for g in "ifu":
            params[f"W_{g}"] = rng.normal(size=(3, 4))
            params[f"b_{g}"] = rng.normal(size=3)
        x = rng.normal(size=4)
        tape, loss = _three_gate(params, x)
        analytic = tape.backward(loss)
        for name, arr in params.items():
            numeric = numerical_gradient(lambda: float(_three_gate(params, x)[1].value), arr)
            assert relative_error(analytic[name], numeric, floor=1e-8).max() < 1e-6, name


# --- every primitive against finite differences ----------------------------------


def _rand(rng, shape):
    return rng.normal(size=shape)


PRIMITIVES = {
    "affine": (lambda a, b, c: nm.affine(a, b, c), [(3, 4), (4,), (3,)]),
    "matmul_mv": (lambda a, b: nm.matmul(a, b), [(3, 4), (4,)]),
    "matmul_vm": (lambda a, b: nm.matmul(a, b), [(3,), (3, 4)]),
    "matmul_mm": (lambda a, b: nm.matmul(a, b), [(2, 3), (3, 4)]),
    "linear": (lambda a, b: nm.linear(a, b), [(5, 4), (3, 4)]),
    "add_bias": (lambda a, b: nm.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: nm.sub(a, b), [(4,), (4,)]),
    "mul": (lambda a, b: nm.mul(a, b), [(3, 4), (3, 4)]),
    "scale": (lambda a: nm.scale(a, -1.7), [(4,)]),
    "sigmoid": (nm.sigmoid, [(6,)]),
    "tanh": (nm.tanh, [(2, 3)]),
    "total": (nm.total, [(2, 3)]),
    "sum_rows": (nm.sum_rows, [(4, 3)]),
    "gather_rows": (lambda a: nm.gather_rows(a, [2, 0, 2, 3]), [(4, 3)]),
    "segment_sum": (lambda a: nm.segment_sum(a, np.array([1, 0, 1, 2, 1]), 3), [(5, 3)]),
    "concat_rows": (lambda a, b: nm.concat_rows([a, b]), [(2, 3), (3, 3)]),
    "columns": (lambda a: nm.columns(a, 1, 3), [(4, 5)]),
    "cosine": (nm.cosine, [(5,), (5,)]),
    "cosine_rows": (nm.cosine_rows, [(4, 5), (5,)]),
    "softmax": (nm.softmax, [(5,)]),
    "kl": (lambda a: nm.kl_divergence([0.5, 0.0, 0.5, 0.0], nm.softmax(a)), [(4,)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    op, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(100):
        inputs = [_rand(rng, s) for s in shapes]
        if name.startswith("cosine") and min(np.linalg.norm(x, axis=-1).min() for x in inputs) < 1e-6:
            continue
        out_shape = op(*inputs).value.shape
        R = rng.normal(size=out_shape)

        def f():
            return float(np.sum(op(*inputs).value * R))

        tape = nm.Tape()
        vs = [tape.param(f"x{i}", x) for i, x in enumerate(inputs)]
        analytic = tape.backward(nm.total(nm.mul(op(*vs), tape.constant(R))))
        for i, x in enumerate(inputs):
            numeric = numerical_gradient(f, x)
            assert relative_error(analytic[f"x{i}"], numeric).max() < 1e-5, (name, i)


def test_forward_values_are_finite_on_finite_inputs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.normal(scale=30, size=6)
        for y in (nm.sigmoid(x), nm.tanh(x), nm.softmax(x)):
            assert np.all(np.isfinite(y.value))


def test_operands_from_different_tapes_rejected():
    a = nm.Tape().param("a", [1.0])
    b = nm.Tape().param("b", [1.0])
    with pytest.raises(ValueError):
        nm.add(a, b)
