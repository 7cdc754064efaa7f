"""Dense float64 matrix primitives with hand-written gradients.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  The
:class:`Tape` records every differentiable primitive the model needs so a
scalar loss can be back-propagated to the parameters, and replayed to
recompute the forward value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def masked_row_softmax(scores, mask) -> np.ndarray:
    """Row softmax restricted to the entries where ``mask`` is 1.

    Each row is shifted by its masked maximum before exponentiation and the
    denominator is accumulated with :func:`math.fsum`, so the result does not
    depend on the order of entries inside a row.
    """
    s = as_matrix(scores)
    m = as_matrix(mask)
    if s.shape != m.shape:
        raise ShapeError(f"scores {s.shape} and mask {m.shape} differ")
    on = m != 0
    empty = ~on.any(axis=1)
    if empty.any():
        raise ValueError(f"mask row {int(np.argmax(empty))} has no active entry")
    out = np.zeros_like(s)
    for i in range(s.shape[0]):
        idx = on[i]
        row = s[i, idx]
        e = np.exp(row - row.max())
        out[i, idx] = e / math.fsum(e)
    return out


def relu(a) -> np.ndarray:
    return np.maximum(as_matrix(a), 0.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def finite_diff_grad(f: Callable[[np.ndarray], float], p, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``p``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    p = np.array(p, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = float(f(p))
        flat[k] = orig - eps
        lo = float(f(p))
        flat[k] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value probing coordinate {k}")
        grad[k] = (hi - lo) / (2 * eps)
    return grad.reshape(p.shape)


@dataclass(eq=False)
class Var:
    value: np.ndarray
    requires_grad: bool = False
    grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g


@dataclass(eq=False)
class _Op:
    name: str
    inputs: tuple[Var, ...]
    output: Var
    forward: Callable[..., np.ndarray]
    make_backward: Callable[..., Callable[[np.ndarray], Sequence[np.ndarray | None]]]


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Only the primitives below are supported; this is not a general autodiff
    engine.  ``backward`` fills ``Var.grad`` for every input that requires
    gradients, and ``replay`` recomputes all outputs from current leaf values.
    """

    ops: list[_Op] = field(default_factory=list)

    def leaf(self, value, requires_grad: bool = False) -> Var:
        return Var(np.asarray(value, dtype=np.float64), requires_grad)

    def _record(self, name, inputs, forward, make_backward) -> Var:
        value = forward(*(v.value for v in inputs))
        out = Var(value, any(v.requires_grad for v in inputs))
        self.ops.append(_Op(name, tuple(inputs), out, forward, make_backward))
        return out

    # primitives

    def matmul(self, a: Var, b: Var) -> Var:
        def bwd(inputs, out):
            a, b = inputs
            return lambda g: (g @ b.value.T, a.value.T @ g)

        return self._record("matmul", (a, b), matmul, bwd)

    def transpose(self, a: Var) -> Var:
        return self._record("transpose", (a,), lambda x: x.T, lambda i, o: lambda g: (g.T,))

    def add(self, a: Var, b: Var) -> Var:
        if a.shape != b.shape:
            raise ShapeError(f"add: {a.shape} vs {b.shape}")
        return self._record("add", (a, b), np.add, lambda i, o: lambda g: (g, g))

    def add_bias(self, x: Var, b: Var) -> Var:
        """``x`` is n x k, ``b`` is a length-k vector broadcast over rows."""
        if x.shape[-1] != b.shape[-1]:
            raise ShapeError(f"bias length {b.shape[-1]} vs {x.shape[-1]} columns")
        return self._record("add_bias", (x, b), np.add, lambda i, o: lambda g: (g, g.sum(axis=0)))

    def scale(self, a: Var, c: float) -> Var:
        return self._record("scale", (a,), lambda x: x * c, lambda i, o: lambda g: (g * c,))

    def linear(self, x: Var, w: Var, b: Var) -> Var:
        """Affine map ``x @ w.T + b`` with ``w`` of shape out x in."""
        return self.add_bias(self.matmul(x, self.transpose(w)), b)

    def relu(self, a: Var) -> Var:
        def bwd(inputs, out):
            pos = inputs[0].value > 0
            return lambda g: (g * pos,)

        return self._record("relu", (a,), relu, bwd)

    def masked_row_softmax(self, s: Var, mask: np.ndarray) -> Var:
        mask = np.asarray(mask)

        def bwd(inputs, out):
            p = out.value
            return lambda g: (p * (g - (g * p).sum(axis=1, keepdims=True)),)

        return self._record("masked_row_softmax", (s,), lambda x: masked_row_softmax(x, mask), bwd)

    def max_pool(self, x: Var) -> Var:
        """Columnwise max over rows as a 1 x k matrix; ties route gradient to the lowest row."""

        def fwd(v):
            return v.max(axis=0, keepdims=True)

        def bwd(inputs, out):
            v = inputs[0].value
            rows = v.argmax(axis=0)
            cols = np.arange(v.shape[1])

            def back(g):
                gx = np.zeros_like(v)
                gx[rows, cols] = g.reshape(-1)
                return (gx,)

            return back

        return self._record("max_pool", (x,), fwd, bwd)

    def cross_entropy(self, logits: Var, labels: Sequence[int]) -> Var:
        """Mean softmax cross-entropy over the rows of ``logits`` (n x K)."""
        labels = np.asarray(labels, dtype=np.int64)

        def fwd(z):
            z = np.atleast_2d(z)
            if z.shape[0] != labels.size:
                raise ShapeError(f"{z.shape[0]} logit rows vs {labels.size} labels")
            return np.asarray(-log_softmax(z)[np.arange(labels.size), labels].mean())

        def bwd(inputs, out):
            z = inputs[0].value
            shape = z.shape
            z2 = np.atleast_2d(z)
            p = np.exp(log_softmax(z2))
            p[np.arange(labels.size), labels] -= 1.0
            p /= labels.size
            return lambda g: ((g * p).reshape(shape),)

        return self._record("cross_entropy", (logits,), fwd, bwd)

    def weighted_sum(self, terms: Sequence[Var], weights: Sequence[float]) -> Var:
        weights = tuple(float(w) for w in weights)

        def fwd(*vals):
            return np.asarray(sum(w * v for w, v in zip(weights, vals)))

        return self._record(
            "weighted_sum", tuple(terms), fwd, lambda i, o: lambda g: tuple(w * g for w in weights)
        )

    def add_many(self, terms: Sequence[Var]) -> Var:
        return self.weighted_sum(terms, [1.0] * len(terms))

    # driving

    def backward(self, out: Var, grad: np.ndarray | None = None) -> None:
        """Back-propagate from ``out``; ``grad`` seeds a non-scalar output."""
        if grad is None:
            if out.value.size != 1:
                raise ShapeError("backward needs a scalar output or an explicit seed")
            grad = np.ones_like(out.value)
        out.grad = np.asarray(grad, dtype=np.float64).reshape(out.shape)
        for op in reversed(self.ops):
            g = op.output.grad
            if g is None or not op.output.requires_grad:
                continue
            for var, gi in zip(op.inputs, op.make_backward(op.inputs, op.output)(g)):
                if var.requires_grad and gi is not None:
                    var._accumulate(gi)

    def replay(self) -> np.ndarray | None:
        """Recompute every recorded output from current leaf values."""
        last = None
        for op in self.ops:
            op.output.value = op.forward(*(v.value for v in op.inputs))
            last = op.output.value
        return last
