"""Dense float64 tensor math with forward-mode (dual) and reverse-mode (tape) derivatives.

The primitive set is deliberately small: affine maps (matmul, add, scalar/elementwise
mul), concatenation, a few elementwise nonlinearities, and reductions. That closure is
enough for time-conditioned MLPs and squared-error losses, and every primitive carries
three rules:

  * a forward kernel (plain numpy),
  * a dual rule propagating a tangent alongside the value (directional derivative),
  * a vjp rule for reverse accumulation over a :class:`Tape`.

Tangent propagation and tape recording are independent, so a single forward pass can
yield both a differentiable output (w.r.t. parameters on the tape) and its directional
derivative along a tangent of the *inputs* as a plain constant. Training objectives rely
on exactly that split: the directional derivative feeds a stop-gradiented target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

Array = np.ndarray


class ShapeMismatch(ValueError):
    """Operand or tangent shapes disagree."""


class UnsupportedOp(TypeError):
    """Operation outside the supported primitive set."""


class NonScalarLoss(ValueError):
    """Reverse accumulation requires a scalar seed."""


def tensor(data, shape: Sequence[int] | None = None) -> Array:
    """Build a float64 tensor from literals, rejecting non-finite entries."""
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise ShapeMismatch(f"cannot view {arr.size} entries as shape {tuple(shape)}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor literals must be finite (no NaN/Inf)")
    return arr


@dataclass(frozen=True)
class DualTensor:
    """A (value, tangent) pair; the carrier of forward-mode directional derivatives."""

    value: Array
    tangent: Array

    def __post_init__(self):
        if np.shape(self.value) != np.shape(self.tangent):
            raise ShapeMismatch(
                f"dual tangent shape {np.shape(self.tangent)} != value shape {np.shape(self.value)}"
            )


class Var:
    """A computation node: value, optional dual tangent, optional tape membership.

    ``needs_grad`` marks nodes on a path from a differentiable leaf; only those are
    recorded for reverse accumulation. Tangents ride along as constants and never
    interact with the reverse pass.
    """

    __slots__ = ("value", "tangent", "tape", "needs_grad")

    def __init__(self, value, tangent=None, tape: "Tape | None" = None, needs_grad: bool = False):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
        if tangent is not None and not isinstance(tangent, np.ndarray):
            tangent = np.asarray(tangent, dtype=np.float64)
        if tangent is not None and tangent.shape != self.value.shape:
            raise ShapeMismatch(
                f"tangent shape {tangent.shape} != value shape {self.value.shape}"
            )
        self.tangent = tangent
        self.tape = tape
        self.needs_grad = needs_grad

    # numpy must not silently consume Vars via ufuncs
    __array_ufunc__ = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        flags = []
        if self.tangent is not None:
            flags.append("dual")
        if self.needs_grad:
            flags.append("grad")
        return f"Var(shape={self.value.shape}{', ' + '+'.join(flags) if flags else ''})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        raise UnsupportedOp("division is outside the primitive set (multiply by a reciprocal constant)")

    def __pow__(self, other):
        raise UnsupportedOp("pow is outside the primitive set (use square)")


class _Record:
    __slots__ = ("op", "out", "inputs", "aux")

    def __init__(self, op, out, inputs, aux):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.aux = aux


class Gradients:
    """Read-only mapping from leaf Vars to accumulated gradient arrays."""

    def __init__(self, table: dict[int, Array]):
        self._table = table

    def get(self, var: Var, default=None):
        return self._table.get(id(var), default)

    def __getitem__(self, var: Var) -> Array:
        return self._table[id(var)]

    def __contains__(self, var: Var) -> bool:
        return id(var) in self._table


class Tape:
    """Ordered record of primitive applications with saved inputs.

    Supports reverse accumulation from any scalar node and bit-exact replay of the
    recorded forward values. A tape is owned by one computation; do not share across
    threads.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __len__(self) -> int:
        return len(self._records)

    def leaf(self, value, requires_grad: bool = True) -> Var:
        return Var(np.asarray(value, dtype=np.float64), tape=self, needs_grad=requires_grad)

    def replay(self) -> bool:
        """Re-execute every recorded op; True iff all outputs reproduce bit-for-bit."""
        for rec in self._records:
            vals = tuple(v.value for v in rec.inputs)
            redone = _OPS[rec.op].forward(vals, rec.aux)
            if not np.array_equal(redone, rec.out.value):
                return False
        return True

    def backward(self, out: Var, seed: Array | None = None) -> Gradients:
        """Accumulate d(out)/d(leaf) for every requires-grad leaf reachable from ``out``.

        ``out`` must be scalar unless an explicit cotangent ``seed`` of its shape is
        given. Several backward calls on one tape are independent.
        """
        if seed is None:
            if out.value.shape != ():
                raise NonScalarLoss(f"backward seed required for non-scalar output {out.value.shape}")
            seed = np.ones(())
        table: dict[int, Array] = {id(out): np.asarray(seed, dtype=np.float64)}
        for rec in reversed(self._records):
            g = table.pop(id(rec.out), None)
            if g is None:
                continue
            needs = tuple(v.needs_grad for v in rec.inputs)
            contribs = _OPS[rec.op].vjp(g, tuple(v.value for v in rec.inputs), rec.out.value, rec.aux, needs)
            for v, c in zip(rec.inputs, contribs):
                if c is None:
                    continue
                prev = table.get(id(v))
                table[id(v)] = c if prev is None else prev + c
        # only leaves (never an op output) remain unpopped, plus out itself if a leaf
        return Gradients(table)


# --------------------------------------------------------------------------- primitives

class _Op:
    __slots__ = ("forward", "jvp", "vjp")

    def __init__(self, forward, jvp, vjp):
        self.forward = forward
        self.jvp = jvp
        self.vjp = vjp


_OPS: dict[str, _Op] = {}


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _apply(op: str, *inputs, aux=()) -> Var:
    inputs = tuple(_as_var(x) for x in inputs)
    spec = _OPS[op]
    vals = tuple(v.value for v in inputs)
    out_val = spec.forward(vals, aux)

    out_tan = None
    if any(v.tangent is not None for v in inputs):
        out_tan = spec.jvp(vals, tuple(v.tangent for v in inputs), out_val, aux)

    tape = None
    needs = False
    for v in inputs:
        if v.tape is not None:
            if tape is None:
                tape = v.tape
            elif tape is not v.tape:
                raise ValueError("operands belong to different tapes")
        if v.needs_grad:
            needs = True
    out = Var(out_val, out_tan, tape, needs)
    if tape is not None and needs:
        tape._records.append(_Record(op, out, inputs, aux))
    return out


def _def(name: str, forward, jvp, vjp):
    _OPS[name] = _Op(forward, jvp, vjp)


_def(
    "add",
    lambda v, aux: v[0] + v[1],
    lambda v, t, o, aux: (t[0] if t[1] is None else t[1] if t[0] is None else t[0] + t[1]),
    lambda g, v, o, aux, needs: (
        _unbroadcast(g, v[0].shape) if needs[0] else None,
        _unbroadcast(g, v[1].shape) if needs[1] else None,
    ),
)

_def(
    "sub",
    lambda v, aux: v[0] - v[1],
    lambda v, t, o, aux: (t[0] if t[1] is None else -t[1] if t[0] is None else t[0] - t[1]),
    lambda g, v, o, aux, needs: (
        _unbroadcast(g, v[0].shape) if needs[0] else None,
        _unbroadcast(-g, v[1].shape) if needs[1] else None,
    ),
)

_def(
    "mul",
    lambda v, aux: v[0] * v[1],
    lambda v, t, o, aux: (
        (t[0] * v[1] if t[0] is not None else 0.0)
        + (v[0] * t[1] if t[1] is not None else 0.0)
    ),
    lambda g, v, o, aux, needs: (
        _unbroadcast(g * v[1], v[0].shape) if needs[0] else None,
        _unbroadcast(g * v[0], v[1].shape) if needs[1] else None,
    ),
)

_def(
    "neg",
    lambda v, aux: -v[0],
    lambda v, t, o, aux: -t[0],
    lambda g, v, o, aux, needs: ((-g) if needs[0] else None,),
)

_def(
    "matmul",
    lambda v, aux: v[0] @ v[1],
    lambda v, t, o, aux: (
        (t[0] @ v[1] if t[0] is not None else 0.0)
        + (v[0] @ t[1] if t[1] is not None else 0.0)
    ),
    lambda g, v, o, aux, needs: (
        g @ v[1].T if needs[0] else None,
        v[0].T @ g if needs[1] else None,
    ),
)


def _concat_fwd(vals, aux):
    return np.concatenate(vals, axis=aux[0])


def _concat_jvp(vals, tans, out, aux):
    parts = [t if t is not None else np.zeros_like(v) for v, t in zip(vals, tans)]
    return np.concatenate(parts, axis=aux[0])


def _concat_vjp(g, vals, out, aux, needs):
    axis = aux[0]
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    pieces = np.split(g, splits, axis=axis)
    return tuple(p if n else None for p, n in zip(pieces, needs))


_def("concat", _concat_fwd, _concat_jvp, _concat_vjp)

_def(
    "tanh",
    lambda v, aux: np.tanh(v[0]),
    lambda v, t, o, aux: (1.0 - o * o) * t[0],
    lambda g, v, o, aux, needs: (g * (1.0 - o * o) if needs[0] else None,),
)


def _sigmoid(x: Array) -> Array:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu_deriv(x: Array) -> Array:
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


_def(
    "silu",
    lambda v, aux: v[0] * _sigmoid(v[0]),
    lambda v, t, o, aux: _silu_deriv(v[0]) * t[0],
    lambda g, v, o, aux, needs: (g * _silu_deriv(v[0]) if needs[0] else None,),
)

_def(
    "sin",
    lambda v, aux: np.sin(v[0]),
    lambda v, t, o, aux: np.cos(v[0]) * t[0],
    lambda g, v, o, aux, needs: (g * np.cos(v[0]) if needs[0] else None,),
)

_def(
    "cos",
    lambda v, aux: np.cos(v[0]),
    lambda v, t, o, aux: -np.sin(v[0]) * t[0],
    lambda g, v, o, aux, needs: (-g * np.sin(v[0]) if needs[0] else None,),
)

_def(
    "square",
    lambda v, aux: v[0] * v[0],
    lambda v, t, o, aux: 2.0 * v[0] * t[0],
    lambda g, v, o, aux, needs: (2.0 * g * v[0] if needs[0] else None,),
)


def _sum_vjp(g, vals, out, aux, needs):
    if not needs[0]:
        return (None,)
    axis = aux[0]
    shape = vals[0].shape
    if axis is None:
        return (np.broadcast_to(g, shape),)
    return (np.broadcast_to(np.expand_dims(g, axis), shape),)


_def(
    "sum",
    lambda v, aux: np.sum(v[0], axis=aux[0]),
    lambda v, t, o, aux: np.sum(t[0], axis=aux[0]),
    _sum_vjp,
)


def _mean_count(shape, axis):
    return float(np.prod(shape)) if axis is None else float(shape[axis])


def _mean_vjp(g, vals, out, aux, needs):
    if not needs[0]:
        return (None,)
    axis = aux[0]
    shape = vals[0].shape
    scaled = g / _mean_count(shape, axis)
    if axis is None:
        return (np.broadcast_to(scaled, shape),)
    return (np.broadcast_to(np.expand_dims(scaled, axis), shape),)


_def(
    "mean",
    lambda v, aux: np.mean(v[0], axis=aux[0]),
    lambda v, t, o, aux: np.mean(t[0], axis=aux[0]),
    _mean_vjp,
)


# ----------------------------------------------------------------------- op front ends

def add(a, b) -> Var:
    return _apply("add", a, b)


def sub(a, b) -> Var:
    return _apply("sub", a, b)


def mul(a, b) -> Var:
    return _apply("mul", a, b)


def neg(a) -> Var:
    return _apply("neg", a)


def matmul(a, b) -> Var:
    return _apply("matmul", a, b)


def concat(parts: Sequence, axis: int = -1) -> Var:
    return _apply("concat", *parts, aux=(axis,))


def tanh(a) -> Var:
    return _apply("tanh", a)


def silu(a) -> Var:
    return _apply("silu", a)


def sin(a) -> Var:
    return _apply("sin", a)


def cos(a) -> Var:
    return _apply("cos", a)


def square(a) -> Var:
    return _apply("square", a)


def vsum(a, axis: int | None = None) -> Var:
    return _apply("sum", a, aux=(axis,))


def vmean(a, axis: int | None = None) -> Var:
    return _apply("mean", a, aux=(axis,))


def stop_gradient(a) -> Var:
    """Detach: same value, no tangent, no tape membership."""
    v = _as_var(a)
    return Var(v.value)


def constant(value) -> Var:
    return Var(np.asarray(value, dtype=np.float64))


# ------------------------------------------------------------------------- entry points

def jvp(
    f: Callable[..., Var],
    inputs: Sequence,
    tangents: Sequence,
) -> tuple[Array, Array]:
    """Evaluate ``f`` and its directional derivative along ``tangents``.

    ``f`` must be composed of the supported primitives and accept one Var per input.
    Returns ``(f(inputs), sum_i df/dinput_i . tangent_i)``, exact for the computational
    graph.
    """
    if len(inputs) != len(tangents):
        raise ShapeMismatch("inputs and tangents must pair up")
    lifted = []
    for x, tx in zip(inputs, tangents):
        xv = np.asarray(x, dtype=np.float64)
        tv = np.asarray(tx, dtype=np.float64)
        if xv.shape != tv.shape:
            raise ShapeMismatch(f"tangent shape {tv.shape} != input shape {xv.shape}")
        lifted.append(Var(xv, tv))
    out = f(*lifted)
    tan = out.tangent if out.tangent is not None else np.zeros_like(out.value)
    return out.value, tan


def grad(loss_fn: Callable[[Mapping[str, Var]], Var], params: Mapping[str, Array]) -> dict[str, Array]:
    """Reverse-mode gradient of a scalar ``loss_fn`` w.r.t. every named parameter.

    Parameters the loss never touches get zero gradients.
    """
    tape = Tape()
    pvars = {k: tape.leaf(v) for k, v in params.items()}
    out = loss_fn(pvars)
    if not isinstance(out, Var):
        raise NonScalarLoss("loss_fn must return a Var")
    if out.value.shape != ():
        raise NonScalarLoss(f"loss must be scalar, got shape {out.value.shape}")
    table = tape.backward(out)
    return {k: table.get(pv, np.zeros_like(pv.value)) for k, pv in pvars.items()}


def value_only(f: Callable[..., Var], inputs: Sequence) -> Array:
    """Run ``f`` on plain values (no tape, no tangents)."""
    out = f(*[Var(np.asarray(x, dtype=np.float64)) for x in inputs])
    return out.value


def check_jvp_fd(
    f: Callable[..., Var],
    inputs: Sequence,
    tangents: Sequence,
    eps: float,
) -> float:
    """Max relative error of jvp(f) against a central finite difference along the tangent."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, dd = jvp(f, inputs, tangents)
    plus = value_only(f, [np.asarray(x, dtype=np.float64) + eps * np.asarray(t, dtype=np.float64)
                          for x, t in zip(inputs, tangents)])
    minus = value_only(f, [np.asarray(x, dtype=np.float64) - eps * np.asarray(t, dtype=np.float64)
                           for x, t in zip(inputs, tangents)])
    fd = (plus - minus) / (2.0 * eps)
    return float(np.max(np.abs(dd - fd) / (np.abs(fd) + 1e-12)))
