"""Reverse-mode automatic differentiation on dense numpy arrays.

Every primitive operation computes its forward value eagerly and, when a
tape is active, records a closure that maps the output adjoint to the
input adjoints (a vector-Jacobian product). ``Tape.backward`` replays the
records once, in reverse execution order, which is a valid reverse
topological order because records are appended as ops execute.

Adjoints of intermediate values are transient (rebuilt on every backward
pass); only values created with ``requires_grad=True`` (``Parameter`` in
particular) accumulate into a persistent ``.grad`` array, so running
backward twice doubles leaf gradients exactly.

No implicit broadcasting: elementwise ops require equal shapes. Ops that
mix a differentiable value with a constant array take the constant as a
plain ndarray (``mul_const``, ``add_bias`` takes a Parameter).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument, StateError

_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    """The innermost tape currently recording, or None (inference mode)."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Value:
    """A dense array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Parameter(Value):
    """A trainable value with a persistent, accumulating gradient."""

    def __init__(self, data, name: str | None = None):
        super().__init__(np.asarray(data), requires_grad=True, name=name)


class Tape:
    """Ordered record of executed ops, replayed in reverse for backward.

    One tape is single-threaded by contract; independent tapes (e.g. for
    different batch shards) may run concurrently.
    """

    def __init__(self):
        self._records: list[tuple[Value, tuple[Value, ...], object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Value, inputs: tuple[Value, ...], vjp) -> None:
        """Append a record; ``vjp(g_out)`` must return one adjoint per input
        (None for inputs that need no gradient)."""
        self._records.append((out, inputs, vjp))

    def backward(self, root: Value, seed: np.ndarray | None = None) -> None:
        """Propagate adjoints from ``root`` back through all records.

        Leaf values with ``requires_grad`` accumulate into ``.grad``;
        everything else gets a transient adjoint only. ``seed`` defaults to
        ones (sum-reduction semantics for non-scalar roots).
        """
        if not self._records:
            raise StateError("backward called on an empty tape")
        adjoint: dict[int, np.ndarray] = {}
        holders: dict[int, Value] = {}
        adjoint[id(root)] = (
            np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=root.data.dtype)
        )
        holders[id(root)] = root
        for out, inputs, vjp in reversed(self._records):
            g_out = adjoint.pop(id(out), None)
            if g_out is None:
                continue
            holders.pop(id(out), None)
            grads = vjp(g_out)
            for inp, g in zip(inputs, grads):
                if g is None:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + g
                else:
                    adjoint[key] = g
                    holders[key] = inp
        # what remains are sources (values not produced by this tape)
        for key, g in adjoint.items():
            v = holders[key]
            if v.requires_grad:
                v.grad += g


def _record(out: Value, inputs: tuple[Value, ...], vjp) -> Value:
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _check_same_shape(a: Value, b: Value, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise InvalidArgument(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise and structural primitives
# ---------------------------------------------------------------------------


def add(a: Value, b: Value) -> Value:
    _check_same_shape(a, b, "add")
    out = Value(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: Value, b: Value) -> Value:
    _check_same_shape(a, b, "sub")
    out = Value(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: Value, b: Value) -> Value:
    """Elementwise (Hadamard) product."""
    _check_same_shape(a, b, "mul")
    out = Value(a.data * b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Value, k: float) -> Value:
    """Multiply by a python scalar constant."""
    out = Value(a.data * k)
    return _record(out, (a,), lambda g: (g * k,))


def add_scalar(a: Value, k: float) -> Value:
    out = Value(a.data + k)
    return _record(out, (a,), lambda g: (g,))


def mul_const(a: Value, c: np.ndarray) -> Value:
    """Elementwise product with a constant array (no gradient to ``c``)."""
    if np.shape(c) != a.data.shape and np.ndim(c) != 0:
        raise InvalidArgument(f"mul_const: shape mismatch {np.shape(c)} vs {a.data.shape}")
    out = Value(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def sub_const(a: Value, c: np.ndarray) -> Value:
    """Subtract a constant array (no gradient to ``c``)."""
    out = Value(a.data - c)
    return _record(out, (a,), lambda g: (g,))


def sigmoid(a: Value) -> Value:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Value(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Value) -> Value:
    mask = a.data > 0
    out = Value(np.where(mask, a.data, 0))
    return _record(out, (a,), lambda g: (g * mask,))


def reshape(a: Value, shape) -> Value:
    orig = a.data.shape
    out = Value(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(orig),))


def sum_all(a: Value) -> Value:
    """Reduce to a scalar; adjoint broadcasts back."""
    out = Value(np.asarray(a.data.sum()))
    shape, dt = a.data.shape, a.data.dtype
    return _record(out, (a,), lambda g: (np.full(shape, g, dtype=dt),))


def mean_time(a: Value) -> Value:
    """Average over the leading (time) axis: [T, ...] -> [...]."""
    t = a.data.shape[0]
    out = Value(a.data.mean(axis=0))
    return _record(out, (a,), lambda g: (np.broadcast_to(g / t, a.data.shape).copy(),))


def stop_gradient(a: Value) -> Value:
    """Forward identity; blocks the backward path."""
    out = Value(a.data)
    return _record(out, (a,), lambda g: (None,))


def matmul(a: Value, b: Value) -> Value:
    """2-D matrix product [m,k] x [k,n] -> [m,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise InvalidArgument(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )
    out = Value(a.data @ b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return _matmul_vjp(g, ad, bd)

    return _record(out, (a, b), vjp)


def _matmul_vjp(g, a_data, b_data):
    # split out so the gradcheck fault-injection hook can wrap it
    return (g @ b_data.T, a_data.T @ g)


def add_bias(x: Value, b: Value) -> Value:
    """Add a per-feature bias along the last axis."""
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise InvalidArgument(f"add_bias: bias {b.data.shape} vs input {x.data.shape}")
    out = Value(x.data + b.data)
    axes = tuple(range(x.data.ndim - 1))
    return _record(out, (x, b), lambda g: (g, g.sum(axis=axes)))
