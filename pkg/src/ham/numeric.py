"""Dense float64 tensors with a small reverse-mode differentiation tape.

Every operation takes ``Var`` objects (or plain array-likes, which are lifted
to constants) and records a vector-Jacobian product on the tape owning its
inputs.  ``backward`` replays the tape in reverse creation order.

The op set is exactly what the model composes: affine maps, elementwise
sigmoid/tanh/product, sums, row gathers and segment sums for tree batching,
cosine similarity, softmax and KL divergence.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError, NonFiniteError

COSINE_EPS = 1e-8


class Var:
    """A value held on a tape.  ``value`` is a float64 numpy array."""

    __slots__ = ("value", "tape", "parents", "vjp", "requires_grad", "index", "name")

    def __init__(self, value, tape, parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.index = -1
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


class Tape:
    """Ordered record of differentiable operations.

    One forward/backward pass owns one tape; tapes are not shared between
    threads.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    def __len__(self):
        return len(self.nodes)

    def constant(self, value) -> Var:
        return Var(_as_array(value), self)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        var = Var(_as_array(value), self, requires_grad=True, name=name)
        self._push(var)
        self.params[name] = var
        return var

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("operands belong to different tapes")
            return x
        return self.constant(x)

    def record(self, value, parents, vjp) -> Var:
        if not any(p.requires_grad for p in parents):
            return Var(value, self)
        var = Var(value, self, parents, vjp, requires_grad=True)
        self._push(var)
        return var

    def _push(self, var):
        var.index = len(self.nodes)
        self.nodes.append(var)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every registered parameter.

        Parameters with no path to the loss get zero arrays.
        """
        if loss.value.size != 1:
            raise DomainError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: list = [None] * len(self.nodes)
        if loss.requires_grad:
            grads[loss.index] = np.ones_like(loss.value)
            for i in range(loss.index, -1, -1):
                g = grads[i]
                if g is None:
                    continue
                node = self.nodes[i]
                if node.vjp is None:
                    continue
                for parent, pg in zip(node.parents, node.vjp(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    j = parent.index
                    grads[j] = pg if grads[j] is None else grads[j] + pg
        out = {}
        for name, var in self.params.items():
            g = grads[var.index]
            out[name] = np.zeros_like(var.value) if g is None else np.asarray(g, dtype=np.float64)
        return out


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def _as_array(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    return arr


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return Tape()


def _lift_all(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            tape = x.tape
            break
    if tape is None:
        tape = Tape()
    elif all(isinstance(x, Var) and x.tape is tape for x in xs):
        return tape, xs
    return tape, [tape.lift(x) for x in xs]


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# linear algebra


def affine(W, x, b) -> Var:
    """``W @ x + b`` for a matrix ``W`` [m x n], vector ``x`` [n], bias ``b`` [m]."""
    tape, (W, x, b) = _lift_all(W, x, b)
    if W.value.ndim != 2 or x.value.ndim != 1 or b.value.ndim != 1:
        raise DimensionError(
            f"affine expects W matrix, x vector, b vector; got W{W.shape}, x{x.shape}, b{b.shape}"
        )
    m, n = W.value.shape
    if x.value.shape[0] != n:
        raise DimensionError(f"affine: W{W.shape} cannot multiply x{x.shape}")
    if b.value.shape[0] != m:
        raise DimensionError(f"affine: b{b.shape} does not match W{W.shape} output size {m}")
    Wv, xv = W.value, x.value

    def vjp(g):
        return np.outer(g, xv), Wv.T @ g, g

    return tape.record(Wv @ xv + b.value, (W, x, b), vjp)


def matmul(a, b) -> Var:
    """Matrix/vector product for 1-D and 2-D operands."""
    tape, (a, b) = _lift_all(a, b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: left {av.shape} and right {bv.shape} do not conform")

    def vjp(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        if bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        return g @ bv.T, av.T @ g

    return tape.record(av @ bv, (a, b), vjp)


def linear(X, W) -> Var:
    """Row-batched map ``X @ W.T``: X [B x n], W [m x n] -> [B x m]."""
    tape, (X, W) = _lift_all(X, W)
    Xv, Wv = X.value, W.value
    if Xv.ndim != 2 or Wv.ndim != 2 or Xv.shape[1] != Wv.shape[1]:
        raise DimensionError(f"linear: X{Xv.shape} does not match W{Wv.shape}")

    def vjp(g):
        return g @ Wv, g.T @ Xv

    return tape.record(Xv @ Wv.T, (X, W), vjp)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Var:
    """Elementwise sum; ``b`` may be a 1-D bias broadcast over the rows of ``a``."""
    tape, (a, b) = _lift_all(a, b)
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        return tape.record(av + bv, (a, b), lambda g: (g, g))
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        return tape.record(av + bv, (a, b), lambda g: (g, g.sum(axis=0)))
    raise DimensionError(f"add: shapes {av.shape} and {bv.shape} are incompatible")


def sub(a, b) -> Var:
    tape, (a, b) = _lift_all(a, b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    tape, (a, b) = _lift_all(a, b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        raise DimensionError(f"mul: shapes {av.shape} and {bv.shape} differ")
    return tape.record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Var:
    tape, (a,) = _lift_all(a)
    c = float(c)
    return tape.record(a.value * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Var:
    tape, (a,) = _lift_all(a)
    # tanh form is overflow-free for large |x|
    y = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return tape.record(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Var:
    tape, (a,) = _lift_all(a)
    y = np.tanh(a.value)
    return tape.record(y, (a,), lambda g: (g * (1.0 - y * y),))


# ---------------------------------------------------------------------------
# reductions and indexing


def total(a) -> Var:
    """Sum of all entries (a scalar)."""
    tape, (a,) = _lift_all(a)
    shape = a.value.shape
    return tape.record(np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def sum_rows(a) -> Var:
    """Column-wise sum of a matrix [B x d] -> [d]."""
    tape, (a,) = _lift_all(a)
    if a.value.ndim != 2:
        raise DimensionError(f"sum_rows expects a matrix, got {a.shape}")
    n = a.value.shape[0]
    return tape.record(a.value.sum(axis=0), (a,), lambda g: (np.broadcast_to(g, (n, g.shape[0])).copy(),))


def gather_rows(a, idx) -> Var:
    tape, (a,) = _lift_all(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return tape.record(a.value[idx], (a,), vjp)


def segment_sum(a, segments, n: int) -> Var:
    """Sum rows of ``a`` into ``n`` buckets: ``out[segments[r]] += a[r]``."""
    tape, (a,) = _lift_all(a)
    seg = np.asarray(segments, dtype=np.intp)
    if a.value.ndim != 2 or seg.shape[0] != a.value.shape[0]:
        raise DimensionError(f"segment_sum: {a.shape} rows vs {seg.shape[0]} segment ids")
    out = np.zeros((n, a.value.shape[1]))
    np.add.at(out, seg, a.value)
    return tape.record(out, (a,), lambda g: (g[seg],))


def concat_rows(parts) -> Var:
    tape, parts = _lift_all(*parts)
    bounds = []
    start = 0
    for p in parts:
        stop = start + p.value.shape[0]
        bounds.append((start, stop))
        start = stop

    def vjp(g):
        return tuple(g[a:b] for a, b in bounds)

    return tape.record(np.concatenate([p.value for p in parts], axis=0), tuple(parts), vjp)


def columns(a, start: int, stop: int) -> Var:
    """Column slice ``a[:, start:stop]`` of a matrix."""
    tape, (a,) = _lift_all(a)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return tape.record(a.value[:, start:stop], (a,), vjp)


# ---------------------------------------------------------------------------
# similarity, normalisation, divergence


def cosine(a, b) -> Var:
    """Cosine similarity of two vectors.

    If either norm is below ``COSINE_EPS`` the result is 0 with zero gradient.
    """
    tape, (a, b) = _lift_all(a, b)
    av, bv = a.value, b.value
    if av.ndim != 1 or av.shape != bv.shape:
        raise DimensionError(f"cosine: vectors of shape {av.shape} and {bv.shape}")
    na, nb = np.sqrt(av @ av), np.sqrt(bv @ bv)
    if na < COSINE_EPS or nb < COSINE_EPS:
        return tape.record(np.asarray(0.0), (a, b), lambda g: (np.zeros_like(av), np.zeros_like(bv)))
    ua, ub = av / na, bv / nb
    cos = float(ua @ ub)

    def vjp(g):
        g = float(g)
        return g * (ub - cos * ua) / na, g * (ua - cos * ub) / nb

    return tape.record(np.asarray(cos), (a, b), vjp)


def cosine_rows(M, q) -> Var:
    """Cosine between each row of ``M`` [T x d] and ``q`` [d] -> [T]."""
    tape, (M, q) = _lift_all(M, q)
    Mv, qv = M.value, q.value
    if Mv.ndim != 2 or qv.ndim != 1 or Mv.shape[1] != qv.shape[0]:
        raise DimensionError(f"cosine_rows: rows {Mv.shape} vs query {qv.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", Mv, Mv))
    qn = np.sqrt(qv @ qv)
    live = ~(norms < COSINE_EPS)  # NaN rows stay live so they propagate
    if qn < COSINE_EPS or not live.any():
        T = Mv.shape[0]
        return tape.record(np.zeros(T), (M, q), lambda g: (np.zeros_like(Mv), np.zeros_like(qv)))
    safe = np.where(live, norms, 1.0)
    U = Mv / safe[:, None]
    uq = qv / qn
    cos = np.where(live, U @ uq, 0.0)

    def vjp(g):
        g = np.where(live, g, 0.0)
        gM = (g / safe)[:, None] * (uq[None, :] - cos[:, None] * U)
        gq = (g[:, None] * (U - cos[:, None] * uq[None, :])).sum(axis=0) / qn
        return gM, gq

    return tape.record(cos, (M, q), vjp)


def softmax(scores) -> Var:
    tape, (s,) = _lift_all(scores)
    v = s.value
    if v.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got {v.shape}")
    if v.shape[0] == 0:
        raise DomainError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("softmax scores must be finite")
    e = np.exp(v - v.max())
    y = e / e.sum()

    def vjp(g):
        return (y * (g - g @ y),)

    return tape.record(y, (s,), vjp)


def kl_divergence(p, p_hat) -> Var:
    """KL(p || p_hat) = sum_i p_i log(p_i / p_hat_i) with 0 log 0 = 0.

    ``p`` is the target and is treated as a constant.
    """
    tape, (p, q) = _lift_all(p, p_hat)
    pv, qv = p.value, q.value
    if pv.ndim != 1 or pv.shape != qv.shape:
        raise DimensionError(f"kl_divergence: shapes {pv.shape} and {qv.shape}")
    if np.any(pv < 0) or np.any(qv < 0):
        raise DomainError("kl_divergence: distributions must be nonnegative")
    if abs(pv.sum() - 1.0) > 1e-9 or abs(qv.sum() - 1.0) > 1e-9:
        raise DomainError("kl_divergence: distributions must sum to 1")
    support = pv > 0
    if np.any(qv[support] <= 0):
        raise DomainError("kl_divergence: p_hat is zero where p is positive")
    ps, qs = pv[support], qv[support]
    kl = float(np.sum(ps * (np.log(ps) - np.log(qs))))

    def vjp(g):
        gq = np.zeros_like(qv)
        gq[support] = -float(g) * ps / qs
        return None, gq

    return tape.record(np.asarray(kl), (p, q), vjp)
