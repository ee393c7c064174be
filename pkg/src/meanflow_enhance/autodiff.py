"""Minimal tape-based reverse-mode plus dual-number forward-mode autodiff.

Everything is dense float64 numpy under the hood.  The primitive set is
deliberately closed: add/sub/mul (broadcasting), matmul (2-D), tanh, silu,
sin, cos, square, sum, mean, concat, narrow.  Anything richer is composed
from these.

Reverse mode records onto an explicit :class:`Tape`; calling
``tape.gradient`` replays the vector-Jacobian products in exact reverse
order of recording, accumulating adjoints additively across fan-out.
Forward mode rides along on an optional ``tan`` array carried by each
:class:`Tensor`; an op propagates tangents only when at least one input
carries one, so ordinary passes pay nothing for it.  :func:`jvp` suspends
any active tape while it runs, which keeps directional-derivative targets
out of the gradient graph by construction.

Every op checks its output for NaN/Inf and raises :class:`NumericError`
naming the offending primitive.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class AutodiffError(Exception):
    """Base class for engine failures."""


class ShapeError(AutodiffError):
    """Shape mismatch or contract violation (non-scalar loss, bad tangent)."""


class NumericError(AutodiffError):
    """NaN or Inf crossed an operation boundary."""


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Dense float64 array with an optional same-shape forward tangent."""

    __slots__ = ("data", "tan")

    def __init__(self, data, tan=None):
        self.data = _asarray(data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("non-finite values in tensor")
        if tan is None:
            self.tan = None
        else:
            tan = _asarray(tan)
            if tan.shape != self.data.shape:
                raise ShapeError(
                    f"tangent shape {tan.shape} does not match value shape {self.data.shape}"
                )
            if not np.all(np.isfinite(tan)):
                raise NumericError("non-finite values in tangent")
            self.tan = tan

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tan={'yes' if self.tan is not None else 'no'})"

    # operator sugar; floats and ndarrays coerce to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

# Stack of recording contexts.  A ``None`` entry pauses recording (used by
# jvp so target construction never lands on a training tape).
_STACK: list["Tape | None"] = []


def _active_tape() -> "Tape | None":
    return _STACK[-1] if _STACK else None


@contextmanager
def tape_paused() -> Iterator[None]:
    _STACK.append(None)
    try:
        yield
    finally:
        _STACK.pop()


class Tape:
    """Ordered record of primitive applications, replayed in reverse."""

    def __init__(self):
        self._records: list[tuple[str, Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def gradient(self, output: Tensor, sources, seed=None):
        """Adjoints of ``output`` w.r.t. ``sources`` (dict or sequence of leaves).

        ``seed`` defaults to 1 and then requires a scalar output; pass an
        explicit cotangent array for non-scalar outputs.
        """
        if seed is None:
            if output.data.shape != ():
                raise ShapeError("output must be a scalar unless a seed cotangent is given")
            seed = np.ones((), dtype=np.float64)
        seed = _asarray(seed)
        if seed.shape != output.data.shape:
            raise ShapeError("seed cotangent shape does not match output shape")

        adj: dict[int, np.ndarray] = {id(output): seed}
        for name, out, inputs, vjp_fn in reversed(self._records):
            g = adj.pop(id(out), None)
            if g is None:
                continue
            for tensor, contrib in zip(inputs, vjp_fn(g)):
                if contrib is None:
                    continue
                prev = adj.get(id(tensor))
                adj[id(tensor)] = contrib if prev is None else prev + contrib

        def result(t: Tensor) -> np.ndarray:
            return adj.get(id(t), np.zeros_like(t.data))

        if isinstance(sources, dict):
            return {k: result(t) for k, t in sources.items()}
        return [result(t) for t in sources]


def _make(name: str, data: np.ndarray, tan, inputs: tuple[Tensor, ...], vjp_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{name}: non-finite values in output")
    if tan is not None and not np.all(np.isfinite(tan)):
        raise NumericError(f"{name}: non-finite values in output tangent")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.tan = tan
    tape = _active_tape()
    if tape is not None:
        tape._records.append((name, out, inputs, vjp_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from e


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_check("add", a, b)
    data = a.data + b.data
    tan = None
    if a.tan is not None and b.tan is not None:
        tan = a.tan + b.tan
    elif a.tan is not None:
        tan = np.broadcast_to(a.tan, data.shape).astype(np.float64, copy=True)
    elif b.tan is not None:
        tan = np.broadcast_to(b.tan, data.shape).astype(np.float64, copy=True)

    def vjp_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", data, tan, (a, b), vjp_fn)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_check("sub", a, b)
    data = a.data - b.data
    tan = None
    if a.tan is not None and b.tan is not None:
        tan = a.tan - b.tan
    elif a.tan is not None:
        tan = np.broadcast_to(a.tan, data.shape).astype(np.float64, copy=True)
    elif b.tan is not None:
        tan = -np.broadcast_to(b.tan, data.shape)

    def vjp_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", data, tan, (a, b), vjp_fn)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _broadcast_check("mul", a, b)
    data = a.data * b.data
    tan = None
    if a.tan is not None and b.tan is not None:
        tan = a.tan * b.data + a.data * b.tan
    elif a.tan is not None:
        tan = a.tan * b.data
    elif b.tan is not None:
        tan = a.data * b.tan

    ad, bd = a.data, b.data

    def vjp_fn(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make("mul", data, tan, (a, b), vjp_fn)


def neg(a) -> Tensor:
    a = _coerce(a)
    tan = None if a.tan is None else -a.tan

    def vjp_fn(g):
        return (-g,)

    return _make("neg", -a.data, tan, (a,), vjp_fn)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data
    tan = None
    if a.tan is not None and b.tan is not None:
        tan = a.tan @ b.data + a.data @ b.tan
    elif a.tan is not None:
        tan = a.tan @ b.data
    elif b.tan is not None:
        tan = a.data @ b.tan

    ad, bd = a.data, b.data

    def vjp_fn(g):
        return g @ bd.T, ad.T @ g

    return _make("matmul", data, tan, (a, b), vjp_fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a) -> Tensor:
    """x * sigmoid(x); smooth everywhere so forward tangents stay continuous."""
    a = _coerce(a)
    s = _sigmoid(a.data)
    data = a.data * s
    deriv = s * (1.0 + a.data * (1.0 - s))
    tan = None if a.tan is None else a.tan * deriv

    def vjp_fn(g):
        return (g * deriv,)

    return _make("silu", data, tan, (a,), vjp_fn)


def tanh(a) -> Tensor:
    a = _coerce(a)
    data = np.tanh(a.data)
    deriv = 1.0 - data * data
    tan = None if a.tan is None else a.tan * deriv

    def vjp_fn(g):
        return (g * deriv,)

    return _make("tanh", data, tan, (a,), vjp_fn)


def sin(a) -> Tensor:
    a = _coerce(a)
    data = np.sin(a.data)
    deriv = np.cos(a.data)
    tan = None if a.tan is None else a.tan * deriv

    def vjp_fn(g):
        return (g * deriv,)

    return _make("sin", data, tan, (a,), vjp_fn)


def cos(a) -> Tensor:
    a = _coerce(a)
    data = np.cos(a.data)
    deriv = -np.sin(a.data)
    tan = None if a.tan is None else a.tan * deriv

    def vjp_fn(g):
        return (g * deriv,)

    return _make("cos", data, tan, (a,), vjp_fn)


def square(a) -> Tensor:
    a = _coerce(a)
    data = a.data * a.data
    tan = None if a.tan is None else 2.0 * a.data * a.tan
    ad = a.data

    def vjp_fn(g):
        return (2.0 * ad * g,)

    return _make("square", data, tan, (a,), vjp_fn)


def sum(a) -> Tensor:  # noqa: A001 - mirrors the primitive's name
    a = _coerce(a)
    data = np.sum(a.data)
    tan = None if a.tan is None else np.sum(a.tan)
    shape = a.shape

    def vjp_fn(g):
        return (np.full(shape, float(g)),)

    return _make("sum", np.asarray(data), None if tan is None else np.asarray(tan), (a,), vjp_fn)


def mean(a) -> Tensor:
    a = _coerce(a)
    data = np.mean(a.data)
    tan = None if a.tan is None else np.mean(a.tan)
    shape, size = a.shape, a.data.size

    def vjp_fn(g):
        return (np.full(shape, float(g) / size),)

    return _make("mean", np.asarray(data), None if tan is None else np.asarray(tan), (a,), vjp_fn)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(_coerce(p) for p in parts)
    if not tensors:
        raise ShapeError("concat: needs at least one input")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    tan = None
    if any(t.tan is not None for t in tensors):
        tan = np.concatenate(
            [t.tan if t.tan is not None else np.zeros_like(t.data) for t in tensors],
            axis=axis,
        )
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make("concat", data, tan, tensors, vjp_fn)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _coerce(a)
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) out of range for axis {axis}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index].copy()
    tan = None if a.tan is None else a.tan[index].copy()
    shape = a.shape

    def vjp_fn(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _make("narrow", data, tan, (a,), vjp_fn)


def affine(x, w, b) -> Tensor:
    """x @ w + b, composed from the matmul and add primitives."""
    return add(matmul(x, w), b)


def stop_gradient(x) -> Tensor:
    """Value-identical tensor detached from both differentiation modes."""
    x = _coerce(x)
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# Driver entry points
# ---------------------------------------------------------------------------


def grad(loss_fn: Callable, params):
    """Reverse-mode gradients of a scalar-valued ``loss_fn`` at ``params``.

    ``params`` is a dict (name -> Tensor) or a sequence of Tensors; the
    return value mirrors its structure with one numpy array per parameter.
    """
    with Tape() as tape:
        loss = loss_fn(params)
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ShapeError("loss_fn must return a scalar Tensor")
    return tape.gradient(loss, params)


def jvp(f: Callable, inputs: Sequence, tangents: Sequence):
    """Forward-mode directional derivative of ``f`` at ``inputs`` along ``tangents``.

    Returns ``(outputs, output_tangents)`` as numpy arrays, mirroring f's
    return structure (single value or tuple).  Exact to rounding, not a
    finite difference.  Any active tape is suspended for the evaluation.
    """
    if len(inputs) != len(tangents):
        raise ShapeError("jvp: one tangent per input required")
    args = [Tensor(x, tan=t) for x, t in zip(inputs, tangents)]
    with tape_paused():
        out = f(*args)

    def split(o: Tensor):
        t = o.tan if o.tan is not None else np.zeros_like(o.data)
        return o.data, t

    if isinstance(out, tuple):
        pairs = [split(o) for o in out]
        return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)
    return split(out)


def vjp(f: Callable, inputs: Sequence, cotangent):
    """Reverse-mode pullback of ``cotangent`` through ``f`` at ``inputs``."""
    args = [Tensor(x) for x in inputs]
    with Tape() as tape:
        out = f(*args)
    return tape.gradient(out, args, seed=cotangent)
