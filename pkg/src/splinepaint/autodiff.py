"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation performed on tracked tensors while it
is active.  :func:`backward` replays the records in reverse, accumulating
adjoints into the ``grad`` attribute of every leaf tensor that requires
gradients and is reachable from the root.

Conventions, chosen so that gradients are deterministic everywhere:

* all storage is float64; any op producing a non-finite value raises
  immediately, naming the op and the operand shapes;
* ``clamp`` has gradient 1 strictly inside ``(lo, hi)`` and 0 at and beyond
  the bounds;
* pairwise ``minimum``/``maximum`` route the gradient entirely to the winning
  operand, with ties broken toward the first operand; the ``amin``/``amax``
  reductions route to the first extremal index;
* ``sqrt``, ``norm`` and ``hypot`` use a zero subgradient at the origin;
* ``power`` with a tracked exponent floors the base at 1e-6 inside the
  ``log`` of the exponent gradient.
"""

from __future__ import annotations

import numbers

import numpy as np


class TapeError(RuntimeError):
    """Backward pass requested on a missing, stale, or unusable tape."""


# Stack of recording contexts.  A ``None`` entry disables recording (no_grad).
_TAPE_STACK: list["Tape | None"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Records operations for one backward pass.

    Entering the context makes the tape active; leaving it clears the tape,
    freeing saved activations.  :func:`backward` must therefore run while the
    tape is still alive (normally inside the ``with`` block).
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._closed = False

    def __enter__(self) -> "Tape":
        if self._closed:
            raise TapeError("tape has been cleared and cannot be reused")
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()
        self.clear()

    def __len__(self) -> int:
        return len(self._records)

    def clear(self) -> None:
        """Drop all records and saved activations; the tape becomes stale."""
        self._records = []
        self._closed = True


class no_grad:
    """Context manager that suspends recording on any active tape."""

    def __enter__(self) -> "no_grad":
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()


class _Record:
    __slots__ = ("inputs", "needs", "bwd")

    def __init__(self, inputs, needs, bwd) -> None:
        self.inputs = inputs
        self.needs = needs
        self.bwd = bwd


class Tensor:
    """Dense float64 array with optional gradient tracking.

    Parameters
    ----------
    data : array-like
        Values, converted to a float64 ndarray.  Must be finite.
    requires_grad : bool
        Leaves with ``requires_grad=True`` receive a ``grad`` array after
        :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor: non-finite values in input of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: tuple[Tape, int] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """Copy of the stored values."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Same values as a fresh untracked leaf (shares the buffer)."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._node = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic operators delegate to the module-level ops.
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    """Wrap array-likes and scalars as untracked tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _tracked(t: Tensor, tape: "Tape | None") -> bool:
    if t.requires_grad:
        return True
    return t._node is not None and tape is not None and t._node[0] is tape


def is_tracked(t) -> bool:
    """Whether ops on ``t`` would currently record gradient information."""
    return isinstance(t, Tensor) and _tracked(t, _active_tape())


def _wrap(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    """Build an op result, validating finiteness and recording if needed."""
    if not np.all(np.isfinite(data)):
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise ValueError(f"{name}: non-finite result (operand shapes: {shapes})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._node = None
    tape = _active_tape()
    if tape is not None:
        needs = tuple(_tracked(t, tape) for t in inputs)
        if any(needs):
            tape._records.append(_Record(inputs, needs, bwd))
            out._node = (tape, len(tape._records) - 1)
            out.requires_grad = True
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Tensor) -> None:
    """Accumulate ``d root / d leaf`` into ``grad`` of every tracked leaf.

    The root must be a scalar recorded on a live tape.  Gradients add across
    calls and across multiple uses of the same tensor; zero-gradient paths
    still populate ``grad`` with zeros, so reachability is observable.
    """
    if not isinstance(root, Tensor):
        raise TypeError(f"backward root must be a Tensor, got {type(root).__name__}")
    if root._node is None:
        raise TapeError("backward root was not recorded on any tape")
    tape, root_idx = root._node
    if tape._closed:
        raise TapeError("backward root belongs to a cleared tape")
    if root.size != 1:
        raise TapeError(f"backward root must be scalar, got shape {root.shape}")

    adjoints: dict[int, np.ndarray] = {root_idx: np.ones_like(root.data)}
    for idx in range(root_idx, -1, -1):
        g = adjoints.pop(idx, None)
        if g is None:
            continue
        rec = tape._records[idx]
        grads = rec.bwd(g)
        for t, needed, gi in zip(rec.inputs, rec.needs, grads):
            if not needed or gi is None:
                continue
            node = t._node
            if node is not None and node[0] is tape:
                j = node[1]
                prev = adjoints.get(j)
                adjoints[j] = gi if prev is None else prev + gi
            elif t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad = t.grad + gi


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _wrap("add", a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _wrap("sub", a.data - b.data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _wrap("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _wrap("mul", a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0.0):
        raise ValueError(f"div: zero divisor (operand shapes: {a.shape}, {b.shape})")

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _wrap("div", a.data / b.data, (a, b), bwd)


def power(a, b) -> Tensor:
    """Elementwise ``a ** b`` with a scalar or tensor exponent.

    With a tracked exponent the base is floored at 1e-6 inside the log of the
    exponent gradient.  The base gradient at ``a == 0`` uses the subgradient 0
    for exponents below 1 (the one-sided derivative diverges there).
    """
    a = as_tensor(a)
    if isinstance(b, Tensor) or not isinstance(b, numbers.Real):
        b = as_tensor(b)
        p = b.data
    else:
        p = float(b)
        b = None

    p_arr = np.asarray(p, dtype=np.float64)
    integral = np.all(p_arr == np.round(p_arr))
    if not integral and np.any(a.data < 0.0):
        raise ValueError(f"power: negative base with non-integer exponent (shape {a.shape})")
    if np.any((a.data == 0.0) & (p_arr < 0.0)):
        raise ValueError(f"power: zero base with negative exponent (shape {a.shape})")

    with np.errstate(over="ignore"):
        out_data = np.power(a.data, p_arr)

    def base_grad() -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = p_arr * np.power(a.data, p_arr - 1.0)
        at_zero = np.where(p_arr == 1.0, 1.0, 0.0)
        return np.where(a.data == 0.0, at_zero, raw)

    if b is None:

        def bwd(g):
            return (_unbroadcast(g * base_grad(), a.shape),)

        return _wrap("power", out_data, (a,), bwd)

    def bwd2(g):
        ga = _unbroadcast(g * base_grad(), a.shape)
        gb = _unbroadcast(g * out_data * np.log(np.maximum(a.data, 1e-6)), b.shape)
        return ga, gb

    return _wrap("power", out_data, (a, b), bwd2)


# ---------------------------------------------------------------------------
# elementwise transcendental


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return _wrap("tanh", out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _wrap("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    return _wrap("exp", out_data, (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError(f"log: non-positive input (shape {a.shape})")
    return _wrap("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise ValueError(f"sqrt: negative input (shape {a.shape})")
    out_data = np.sqrt(a.data)

    def bwd(g):
        with np.errstate(divide="ignore"):
            raw = 0.5 * g / out_data
        return (np.where(a.data > 0.0, raw, 0.0),)

    return _wrap("sqrt", out_data, (a,), bwd)


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _wrap("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _wrap("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _wrap("absolute", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# ---------------------------------------------------------------------------
# pairwise extrema and clamping


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    win = a.data >= b.data  # ties go to the first operand

    def bwd(g):
        return _unbroadcast(g * win, a.shape), _unbroadcast(g * ~win, b.shape)

    return _wrap("maximum", np.where(win, a.data, b.data), (a, b), bwd)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    win = a.data <= b.data  # ties go to the first operand

    def bwd(g):
        return _unbroadcast(g * win, a.shape), _unbroadcast(g * ~win, b.shape)

    return _wrap("minimum", np.where(win, a.data, b.data), (a, b), bwd)


def clamp(a, lo: float | None, hi: float | None) -> Tensor:
    """Clip to ``[lo, hi]``; gradient is 1 strictly inside, 0 at the bounds."""
    a = as_tensor(a)
    low = -np.inf if lo is None else float(lo)
    high = np.inf if hi is None else float(hi)
    if low > high:
        raise ValueError(f"clamp: lo {low} exceeds hi {high}")
    interior = (a.data > low) & (a.data < high)
    return _wrap("clamp", np.clip(a.data, low, high), (a,), lambda g: (g * interior,))


# ---------------------------------------------------------------------------
# reductions


def _restore_axis(g, axis: int | None, keepdims: bool, shape) -> np.ndarray:
    g = np.asarray(g)
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        return (_restore_axis(g, axis, keepdims, a.shape),)

    return _wrap("sum", np.asarray(out_data), (a,), bwd)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        return (_restore_axis(g, axis, keepdims, a.shape) / count,)

    return _wrap("mean", np.asarray(out_data), (a,), bwd)


def _extremum_reduce(name: str, a, axis: int | None, keepdims: bool, arg_fn, red_fn) -> Tensor:
    a = as_tensor(a)
    out_data = red_fn(a.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        z = np.zeros_like(a.data)
        if axis is None:
            z.reshape(-1)[arg_fn(a.data)] = float(np.asarray(g))
        else:
            idx = np.expand_dims(arg_fn(a.data, axis=axis), axis)
            ge = np.asarray(g) if keepdims else np.expand_dims(np.asarray(g), axis)
            np.put_along_axis(z, idx, ge, axis=axis)
        return (z,)

    return _wrap(name, np.asarray(out_data), (a,), bwd)


def amax(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties route the gradient to the first extremal index."""
    return _extremum_reduce("amax", a, axis, keepdims, np.argmax, np.max)


def amin(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Min reduction; ties route the gradient to the first extremal index."""
    return _extremum_reduce("amin", a, axis, keepdims, np.argmin, np.min)


# ---------------------------------------------------------------------------
# norms


def norm(a, axis: int, keepdims: bool = False) -> Tensor:
    """L2 norm along an axis; zero subgradient where the norm vanishes."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    out_data = n if keepdims else np.squeeze(n, axis=axis)

    def bwd(g):
        ge = np.asarray(g) if keepdims else np.expand_dims(np.asarray(g), axis)
        return (ge * a.data / np.maximum(n, 1e-12),)

    return _wrap("norm", out_data, (a,), bwd)


def hypot(x, y) -> Tensor:
    """Elementwise ``sqrt(x**2 + y**2)`` with broadcasting, fused for stability."""
    x, y = as_tensor(x), as_tensor(y)
    out_data = np.hypot(x.data, y.data)

    def bwd(g):
        safe = np.maximum(out_data, 1e-12)
        return (
            _unbroadcast(g * x.data / safe, x.shape),
            _unbroadcast(g * y.data / safe, y.shape),
        )

    return _wrap("hypot", out_data, (x, y), bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _wrap("matmul", a.data @ b.data, (a, b), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _wrap("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.shape}")
    return _wrap("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def moveaxis(a, source: int, destination: int) -> Tensor:
    a = as_tensor(a)
    out = np.moveaxis(a.data, source, destination).copy()
    return _wrap("moveaxis", out, (a,),
                 lambda g: (np.moveaxis(g, destination, source),))


def take(a, key) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back into place."""
    a = as_tensor(a)
    out_data = np.asarray(a.data[key], dtype=np.float64)

    def bwd(g):
        z = np.zeros_like(a.data)
        z[key] = g
        return (z,)

    return _wrap("take", out_data.copy(), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.shape[axis] for p in parts]

    def bwd(g):
        grads = []
        start = 0
        for ext in extents:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + ext)
            grads.append(g[tuple(sl)])
            start += ext
        return tuple(grads)

    return _wrap("concat", out_data, parts, bwd)


def embed(a, shape: tuple[int, ...], offsets: tuple[int, ...]) -> Tensor:
    """Place ``a`` inside a zero array of ``shape`` at the given offsets."""
    a = as_tensor(a)
    if len(shape) != a.ndim or len(offsets) != a.ndim:
        raise ValueError(f"embed: rank mismatch between {a.shape}, {shape}, {offsets}")
    if any(o < 0 or o + e > s for o, e, s in zip(offsets, a.shape, shape)):
        raise ValueError(f"embed: window {a.shape} at {offsets} exceeds target {shape}")
    window = tuple(slice(o, o + e) for o, e in zip(offsets, a.shape))
    out_data = np.zeros(shape, dtype=np.float64)
    out_data[window] = a.data

    def bwd(g):
        return (g[window],)

    return _wrap("embed", out_data, (a,), bwd)
