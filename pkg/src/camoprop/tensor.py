"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation runs eagerly on numpy arrays. When a ``Tape`` is active on
the current thread and an input requires gradients, the op appends a record
(inputs, output, backward rule) to the tape; ``Tape.backward`` then walks
the records in reverse execution order, which is a reverse topological
order of the computation graph.

Double precision throughout: correctness is established by comparing
analytic gradients against central finite differences, which single
precision could not support at tight tolerances. Broadcasting is limited
to scalar-vs-tensor; anything else raises ``ShapeError``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN/Inf; raised instead of propagating silently."""


class TapeError(RuntimeError):
    """Tape misuse: backward re-run, no active tape, non-scalar root."""


class Tensor:
    """A dense n-dimensional float64 array with optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; floats are wrapped as non-grad scalar constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, float(p))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"cannot treat {type(x).__name__} as a Tensor")


# --------------------------------------------------------------------------
# Tape


class _Entry:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TLS = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed ops for one forward pass.

    Confined to the thread that opened it; independent tapes on separate
    threads do not interact. ``backward`` may be called once per tape.
    """

    def __init__(self):
        self._entries: list[_Entry] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[Array], tuple]) -> None:
        """Append one executed op. ``backward`` maps the output gradient to
        a tuple of input gradients aligned with ``inputs`` (None to skip)."""
        self._entries.append(_Entry(op, tuple(inputs), output, backward))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into ``grad`` of every tensor that
        requires gradients, visiting recorded ops in reverse order."""
        if self._consumed:
            raise TapeError("backward already ran on this tape; re-run forward first")
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        self._consumed = True

        pending: dict[int, tuple[Tensor, Array]] = {
            id(root): (root, np.ones_like(root.data))
        }
        for entry in reversed(self._entries):
            got = pending.pop(id(entry.output), None)
            if got is None:
                continue
            grads = entry.backward(got[1])
            for t, g in zip(entry.inputs, grads):
                if g is None:
                    continue
                if g.shape != t.data.shape:
                    raise ShapeError(
                        f"backward of {entry.op}: grad shape {g.shape} "
                        f"!= input shape {t.data.shape}")
                key = id(t)
                if key in pending:
                    pending[key] = (t, pending[key][1] + g)
                else:
                    pending[key] = (t, g)
        for t, g in pending.values():
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g


# --------------------------------------------------------------------------
# Op plumbing


def _finite_or_raise(arr: Array, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(op: str, inputs: Sequence[Tensor], out_data: Array,
          backward: Callable[[Array], tuple]) -> Tensor:
    _finite_or_raise(out_data, op)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    if out.requires_grad:
        tape = active_tape()
        if tape is not None:
            tape.record(op, inputs, out, backward)
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # Identical shapes, or one side a scalar; no other broadcasting.
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                     "(identical shapes or scalar-vs-tensor only)")


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    # Collapse a broadcast gradient back onto a scalar operand.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# --------------------------------------------------------------------------
# Elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make("sub", (a, b), a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _make("mul", (a, b), ad * bd, bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "div")
    ad, bd = a.data, b.data

    def bwd(g):
        return (_reduce_to(g / bd, a.shape),
                _reduce_to(-g * ad / (bd * bd), b.shape))

    return _make("div", (a, b), ad / bd, bwd)


def neg(x: Tensor) -> Tensor:
    return _make("neg", (x,), -x.data, lambda g: (-g,))


def scale(x: Tensor, s: float) -> Tensor:
    """Multiply by a plain (non-trainable) scalar."""
    s = float(s)
    return _make("scale", (x,), x.data * s, lambda g: (g * s,))


def add_const(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("add_const", (x,), x.data + c, lambda g: (g,))


def pow_const(x: Tensor, p: float) -> Tensor:
    p = float(p)
    xd = x.data

    def bwd(g):
        if p == 0.0:
            return (np.zeros_like(xd),)
        return (g * p * np.power(xd, p - 1.0),)

    return _make("pow_const", (x,), np.power(xd, p), bwd)


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make("log", (x,), np.log(xd), lambda g: (g / xd,))


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)
    return _make("exp", (x,), out_data, lambda g: (g * out_data,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out_data = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                        np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _make("sigmoid", (x,), out_data, bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow for large |x|."""
    xd = x.data
    out_data = np.logaddexp(0.0, xd)

    def bwd(g):
        return (g / (1.0 + np.exp(-xd)) if np.all(xd > -30)
                else g * np.exp(xd - out_data),)

    return _make("softplus", (x,), out_data, bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _make("gelu", (x,), xd * cdf, bwd)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0

    def bwd(g):
        return (g * mask,)

    return _make("relu", (x,), np.where(mask, xd, 0.0), bwd)


# --------------------------------------------------------------------------
# Reductions


def tsum(x: Tensor) -> Tensor:
    shape = x.shape

    def bwd(g):
        return (np.full(shape, float(g.reshape(()))),)

    return _make("sum", (x,), np.asarray(np.sum(x.data)), bwd)


def tmean(x: Tensor) -> Tensor:
    shape = x.shape
    n = x.size

    def bwd(g):
        return (np.full(shape, float(g.reshape(())) / n),)

    return _make("mean", (x,), np.asarray(np.mean(x.data)), bwd)


# --------------------------------------------------------------------------
# Shape ops


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape

    def bwd(g):
        return (np.reshape(g, old),)

    try:
        out_data = np.reshape(x.data, shape)
    except ValueError as e:
        raise ShapeError(f"reshape {old} -> {shape}: {e}") from None
    return _make("reshape", (x,), out_data, bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for ndim {x.ndim}")
    inv = tuple(int(a) for a in np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _make("transpose", (x,), np.transpose(x.data, axes), bwd)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if len(xs) == 0:
        raise ShapeError("concat of zero tensors")
    ndim = xs[0].ndim
    if not (0 <= axis < ndim):
        raise ShapeError(f"concat axis {axis} out of range for ndim {ndim}")
    ref = list(xs[0].shape)
    for t in xs[1:]:
        other = list(t.shape)
        if len(other) != ndim or any(
                i != axis and other[i] != ref[i] for i in range(ndim)):
            raise ShapeError(
                f"concat: shapes {xs[0].shape} and {t.shape} differ off axis {axis}")
    extents = [t.shape[axis] for t in xs]
    offsets = np.cumsum([0] + extents)

    def bwd(g):
        return tuple(
            np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(xs)))

    return _make("concat", tuple(xs),
                 np.concatenate([t.data for t in xs], axis=axis), bwd)


def stack(xs: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    return concat([reshape(t, (1,) + t.shape) for t in xs], axis=0)


# --------------------------------------------------------------------------
# Linear algebra / neural-net ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make("matmul", (a, b), ad @ bd, bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: x[..., din] @ w[din, dout] + b[dout]."""
    if x.ndim < 1 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear: bad ranks x{x.shape} w{w.shape} b{b.shape}")
    din, dout = w.shape
    if x.shape[-1] != din or b.shape[0] != dout:
        raise ShapeError(f"linear: x{x.shape} w{w.shape} b{b.shape} do not chain")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    wd = w.data

    def bwd(g):
        g2 = g.reshape(-1, dout)
        return (g2 @ wd.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    out_data = (x2 @ wd + b.data).reshape(lead + (dout,))
    return _make("linear", (x, w, b), out_data, bwd)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects 2-D input, got {x.shape}")
    shifted = x.data - np.max(x.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out_data, axis=1, keepdims=True)
        return (out_data * (g - dot),)

    return _make("softmax_rows", (x,), out_data, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: zero-length last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must be ({d},)")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gd = gain.data

    def bwd(g):
        gg = g * gd
        dx = inv * (gg - np.mean(gg, axis=-1, keepdims=True)
                    - xhat * np.mean(gg * xhat, axis=-1, keepdims=True))
        axes = tuple(range(x.ndim - 1))
        return dx, np.sum(g * xhat, axis=axes), np.sum(g, axis=axes)

    return _make("layer_norm", (x, gain, bias), xhat * gd + bias.data, bwd)


# --------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradcheckReport:
    """Outcome of one finite-difference check."""

    max_rel_err: float
    tol: float
    per_input: list[float]

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor],
              eps: float = 1e-5, tol: float = 1e-4) -> GradcheckReport:
    """Compare analytic gradients of scalar-valued ``f`` against central
    finite differences.

    Perturbs every element of every input by +/- eps, so cost is
    2 * total element count forward passes; size inputs accordingly.
    The relative error per input is
    ``max|analytic - numeric| / max(scale, 1e-4)`` where ``scale`` is the
    largest gradient magnitude seen for that input, so zero-gradient
    inputs are judged on an absolute floor that comfortably exceeds
    finite-difference noise.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"gradcheck eps {eps} outside [1e-7, 1e-3]")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()

    with Tape() as tape:
        out = f(*inputs)
        if out.data.size != 1:
            raise ShapeError("gradcheck requires a scalar-valued function")
        tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]
    for t in inputs:
        t.zero_grad()

    per_input: list[float] = []
    for t, ana in zip(inputs, analytic):
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(*inputs).item()
            flat[i] = orig - eps
            lo = f(*inputs).item()
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)
        scale_ = max(float(np.max(np.abs(ana))), float(np.max(np.abs(num))), 1e-4)
        per_input.append(float(np.max(np.abs(ana - num))) / scale_)

    return GradcheckReport(max_rel_err=max(per_input) if per_input else 0.0,
                           tol=tol, per_input=per_input)
