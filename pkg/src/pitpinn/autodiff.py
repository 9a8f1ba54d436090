"""Differentiable computation engine.

Two cooperating mechanisms:

* reverse mode: a ``Tape`` records array operations on ``Var`` handles so a
  scalar loss can be differentiated with respect to every recorded leaf
  (network parameters).
* forward mode: ``Jet`` carries (value, first, second) coefficients along one
  input axis, giving pure second derivatives for Laplacians.

Jet components may themselves be ``Var`` handles, so an input Laplacian built
from jets stays differentiable with respect to parameters.  All arithmetic is
64-bit.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Sequence

import numpy as np


class UnsupportedPrimitive(TypeError):
    """An operation outside the registered primitive set was applied."""


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _asarray(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum an adjoint back down to the shape of the operand it belongs to."""
    grad = _asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class _Node:
    __slots__ = ("value", "parents", "vjp", "fwd", "name")

    def __init__(self, value, parents, vjp, fwd, name):
        self.value = value
        self.parents = parents  # tuple of parent node indices
        self.vjp = vjp          # adjoint -> tuple of parent adjoints
        self.fwd = fwd          # tuple of parent values -> value (replay)
        self.name = name


class Tape:
    """Append-only record of one differentiable evaluation.

    The node list is in execution order, which is also a topological order,
    so a single reverse sweep computes adjoints.  Completed tapes are
    immutable by convention and may be replayed or differentiated repeatedly.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def leaf(self, value, name: str = "leaf") -> "Var":
        return self._record(_asarray(value), (), None, None, name)

    def _record(self, value, parents, vjp, fwd, name) -> "Var":
        self.nodes.append(_Node(value, parents, vjp, fwd, name))
        return Var(self, len(self.nodes) - 1)

    def gradient(self, out: "Var", wrt: Sequence["Var"], seed=1.0) -> list[np.ndarray]:
        """Adjoints of a scalar ``out`` with respect to the given leaves."""
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        adjoints: dict[int, np.ndarray] = {out.index: _asarray(seed)}
        for idx in range(out.index, -1, -1):
            g = adjoints.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.vjp is None:
                # leaves keep their adjoint for collection below
                adjoints[idx] = g
                continue
            for parent_idx, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                acc = adjoints.get(parent_idx)
                adjoints[parent_idx] = pg if acc is None else acc + pg
        grads = []
        for v in wrt:
            if v.tape is not self:
                raise ValueError("wrt leaf does not belong to this tape")
            g = adjoints.get(v.index)
            grads.append(np.zeros_like(self.nodes[v.index].value) if g is None
                         else _unbroadcast(g, self.nodes[v.index].value.shape))
        return grads

    def replay(self) -> list[np.ndarray]:
        """Re-execute every recorded operation from the stored leaf values.

        Returns the recomputed node values; with unchanged leaves the result
        is bit-identical to the recording pass.
        """
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.fwd is None:
                values.append(node.value)
            else:
                values.append(node.fwd(tuple(values[p] for p in node.parents)))
        return values


class Var:
    """Handle to one recorded array value on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, node={self.index})"

    # -- binary arithmetic ------------------------------------------------

    def _binary(self, other, forward, vjp_self, vjp_other, name):
        if isinstance(other, Jet):
            return NotImplemented
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands recorded on different tapes")
            a, b = self.value, other.value
            out = forward(a, b)
            sa, sb = a.shape, b.shape

            def vjp(g):
                return (_unbroadcast(vjp_self(g, a, b), sa),
                        _unbroadcast(vjp_other(g, a, b), sb))

            return self.tape._record(out, (self.index, other.index), vjp,
                                     lambda vals: forward(vals[0], vals[1]), name)
        const = _asarray(other)
        a = self.value
        out = forward(a, const)
        sa = a.shape

        def vjp_c(g):
            return (_unbroadcast(vjp_self(g, a, const), sa),)

        return self.tape._record(out, (self.index,), vjp_c,
                                 lambda vals: forward(vals[0], const), name)

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b,
                            lambda g, a, b: g, lambda g, a, b: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b,
                            lambda g, a, b: g, lambda g, a, b: -g, "sub")

    def __rsub__(self, other):
        if isinstance(other, Jet):
            return NotImplemented
        const = _asarray(other)
        a = self.value
        out = const - a
        sa = a.shape
        return self.tape._record(out, (self.index,),
                                 lambda g: (_unbroadcast(-g, sa),),
                                 lambda vals: const - vals[0], "rsub")

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b,
                            lambda g, a, b: g * b, lambda g, a, b: g * a, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: a / b,
                            lambda g, a, b: g / b,
                            lambda g, a, b: -g * a / (b * b), "div")

    def __rtruediv__(self, other):
        if isinstance(other, Jet):
            return NotImplemented
        const = _asarray(other)
        a = self.value
        out = const / a
        sa = a.shape
        return self.tape._record(out, (self.index,),
                                 lambda g: (_unbroadcast(-g * const / (a * a), sa),),
                                 lambda vals: const / vals[0], "rdiv")

    def __neg__(self):
        a = self.value
        return self.tape._record(-a, (self.index,), lambda g: (-g,),
                                 lambda vals: -vals[0], "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, (Var, Jet)):
            raise UnsupportedPrimitive("variable exponents are not supported")
        p = float(exponent)
        a = self.value
        out = a ** p
        return self.tape._record(out, (self.index,),
                                 lambda g: (g * p * a ** (p - 1.0),),
                                 lambda vals: vals[0] ** p, "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # sum()/mean() mirror the module-level reductions for convenience
    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)

    # numpy ufunc interception: registered primitives are rerouted through
    # the tape, anything else is a hard error rather than a silent constant
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            raise UnsupportedPrimitive(f"{ufunc.__name__}.{method}")
        unary = {np.tanh: tanh, np.sin: sin, np.cos: cos, np.exp: exp,
                 np.absolute: absolute, np.negative: lambda x: -x,
                 np.sqrt: lambda x: x ** 0.5}
        if ufunc in unary and len(inputs) == 1:
            return unary[ufunc](inputs[0])
        binary = {np.add: lambda a, b: a + b, np.subtract: lambda a, b: a - b,
                  np.multiply: lambda a, b: a * b,
                  np.true_divide: lambda a, b: a / b,
                  np.power: lambda a, b: a ** b,
                  np.matmul: matmul}
        if ufunc in binary and len(inputs) == 2:
            a, b = inputs
            if isinstance(b, Var) and not isinstance(a, Var):
                # reflected form: constant op Var
                if ufunc is np.add:
                    return b + a
                if ufunc is np.multiply:
                    return b * a
                if ufunc is np.subtract:
                    return b.__rsub__(a)
                if ufunc is np.true_divide:
                    return b.__rtruediv__(a)
                if ufunc is np.matmul:
                    return matmul(a, b)
                raise UnsupportedPrimitive(ufunc.__name__)
            return binary[ufunc](a, b)
        raise UnsupportedPrimitive(ufunc.__name__)

    # unsupported operator stubs surface as typed errors
    def __mod__(self, other):
        raise UnsupportedPrimitive("mod")

    def __floordiv__(self, other):
        raise UnsupportedPrimitive("floordiv")


def _record_unary(x: Var, forward: Callable, deriv: Callable, name: str) -> Var:
    a = x.value
    out = forward(a)

    def vjp(g):
        return (g * deriv(a, out),)

    return x.tape._record(out, (x.index,), vjp, lambda vals: forward(vals[0]), name)


# ---------------------------------------------------------------------------
# Jets: truncated second-order Taylor coefficients along one input axis.
# ---------------------------------------------------------------------------

def _is_zero(v) -> bool:
    return isinstance(v, (int, float)) and v == 0


def _jadd(a, b):
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return a + b


def _jsub(a, b):
    if _is_zero(b):
        return a
    if _is_zero(a):
        return -b
    return a - b


def _jmul(a, b):
    if _is_zero(a) or _is_zero(b):
        return 0.0
    return a * b


class Jet:
    """Value with first and second derivative coefficients along one axis.

    Components are floats, arrays, or ``Var`` handles; literal zero floats
    are propagated symbolically so unseeded axes cost nothing.
    """

    __slots__ = ("f0", "f1", "f2")

    def __init__(self, f0, f1=0.0, f2=0.0):
        self.f0 = f0
        self.f1 = f1
        self.f2 = f2

    @staticmethod
    def _coerce(other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet(other, 0.0, 0.0)

    def __repr__(self):
        return f"Jet({self.f0!r}, {self.f1!r}, {self.f2!r})"

    def __add__(self, other):
        o = Jet._coerce(other)
        return Jet(_jadd(self.f0, o.f0), _jadd(self.f1, o.f1), _jadd(self.f2, o.f2))

    __radd__ = __add__

    def __sub__(self, other):
        o = Jet._coerce(other)
        return Jet(_jsub(self.f0, o.f0), _jsub(self.f1, o.f1), _jsub(self.f2, o.f2))

    def __rsub__(self, other):
        return Jet._coerce(other).__sub__(self)

    def __mul__(self, other):
        o = Jet._coerce(other)
        f0 = _jmul(self.f0, o.f0)
        f1 = _jadd(_jmul(self.f1, o.f0), _jmul(self.f0, o.f1))
        f2 = _jadd(_jadd(_jmul(self.f2, o.f0), _jmul(2.0, _jmul(self.f1, o.f1))),
                   _jmul(self.f0, o.f2))
        return Jet(f0, f1, f2)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * _jreciprocal(Jet._coerce(other))

    def __rtruediv__(self, other):
        return Jet._coerce(other) * _jreciprocal(self)

    def __neg__(self):
        return Jet(-self.f0,
                   0.0 if _is_zero(self.f1) else -self.f1,
                   0.0 if _is_zero(self.f2) else -self.f2)

    def __pow__(self, exponent):
        if isinstance(exponent, (Var, Jet)):
            raise UnsupportedPrimitive("variable exponents are not supported")
        p = float(exponent)
        return _jet_unary(self,
                          lambda v: v ** p,
                          lambda v, f: _jmul(p, v ** (p - 1.0)),
                          lambda v, f: _jmul(p * (p - 1.0), v ** (p - 2.0)))

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__":
            raise UnsupportedPrimitive(f"{ufunc.__name__}.{method}")
        table = {np.tanh: tanh, np.sin: sin, np.cos: cos, np.exp: exp,
                 np.add: lambda a, b: Jet._coerce(a) + b,
                 np.subtract: lambda a, b: Jet._coerce(a) - b,
                 np.multiply: lambda a, b: Jet._coerce(a) * b,
                 np.true_divide: lambda a, b: Jet._coerce(a) / b,
                 np.negative: lambda a: -a}
        if ufunc in table:
            return table[ufunc](*inputs)
        raise UnsupportedPrimitive(ufunc.__name__)


def _jet_unary(x: Jet, f, d1, d2) -> Jet:
    """Chain rule for a scalar function applied to a jet."""
    v = x.f0
    f0 = f(v)
    g1 = d1(v, f0)
    out1 = _jmul(g1, x.f1)
    out2 = _jadd(_jmul(d2(v, f0), _jmul(x.f1, x.f1)), _jmul(g1, x.f2))
    return Jet(f0, out1, out2)


def _jreciprocal(x: Jet) -> Jet:
    return _jet_unary(x,
                      lambda v: 1.0 / v,
                      lambda v, f: -f * f,
                      lambda v, f: 2.0 * f * f * f)


# ---------------------------------------------------------------------------
# Generic math functions dispatching over ndarray / Var / Jet.
# ---------------------------------------------------------------------------

def tanh(x):
    if isinstance(x, Jet):
        return _jet_unary(x, tanh,
                          lambda v, f: 1.0 - f * f,
                          lambda v, f: -2.0 * f * (1.0 - f * f))
    if isinstance(x, Var):
        return _record_unary(x, np.tanh, lambda a, out: 1.0 - out * out, "tanh")
    return np.tanh(x)


def sin(x):
    if isinstance(x, Jet):
        return _jet_unary(x, sin, lambda v, f: cos(v), lambda v, f: -f)
    if isinstance(x, Var):
        return _record_unary(x, np.sin, lambda a, out: np.cos(a), "sin")
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return _jet_unary(x, cos, lambda v, f: -sin(v), lambda v, f: -f)
    if isinstance(x, Var):
        return _record_unary(x, np.cos, lambda a, out: -np.sin(a), "cos")
    return np.cos(x)


def exp(x):
    if isinstance(x, Jet):
        return _jet_unary(x, exp, lambda v, f: f, lambda v, f: f)
    if isinstance(x, Var):
        return _record_unary(x, np.exp, lambda a, out: out, "exp")
    return np.exp(x)


def absolute(x):
    if isinstance(x, Jet):
        s = np.sign(x.f0)
        return Jet(np.abs(x.f0), _jmul(s, x.f1), _jmul(s, x.f2))
    if isinstance(x, Var):
        return _record_unary(x, np.abs, lambda a, out: np.sign(a), "abs")
    return np.abs(x)


def matmul(a, b):
    if isinstance(a, Jet) and isinstance(b, Jet):
        raise UnsupportedPrimitive("matmul of two jets")
    if isinstance(a, Jet):
        return Jet(matmul(a.f0, b),
                   0.0 if _is_zero(a.f1) else matmul(a.f1, b),
                   0.0 if _is_zero(a.f2) else matmul(a.f2, b))
    if isinstance(b, Jet):
        return Jet(matmul(a, b.f0),
                   0.0 if _is_zero(b.f1) else matmul(a, b.f1),
                   0.0 if _is_zero(b.f2) else matmul(a, b.f2))
    av = a.value if isinstance(a, Var) else _asarray(a)
    bv = b.value if isinstance(b, Var) else _asarray(b)
    if av.ndim != 2 or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
    if not isinstance(a, Var) and not isinstance(b, Var):
        return av @ bv

    if isinstance(a, Var) and isinstance(b, Var):
        tape = a.tape

        def vjp(g):
            if bv.ndim == 1:
                return (np.outer(g, bv), av.T @ g)
            return (g @ bv.T, av.T @ g)

        return tape._record(av @ bv, (a.index, b.index), vjp,
                            lambda vals: vals[0] @ vals[1], "matmul")
    if isinstance(a, Var):
        def vjp_a(g):
            if bv.ndim == 1:
                return (np.outer(g, bv),)
            return (g @ bv.T,)

        return a.tape._record(av @ bv, (a.index,), vjp_a,
                              lambda vals: vals[0] @ bv, "matmul")

    def vjp_b(g):
        return (av.T @ g,)

    return b.tape._record(av @ bv, (b.index,), vjp_b,
                          lambda vals: av @ vals[0], "matmul")


def transpose(x):
    if isinstance(x, Jet):
        return Jet(transpose(x.f0),
                   0.0 if _is_zero(x.f1) else transpose(x.f1),
                   0.0 if _is_zero(x.f2) else transpose(x.f2))
    if isinstance(x, Var):
        return x.tape._record(x.value.T.copy(), (x.index,),
                              lambda g: (g.T,), lambda vals: vals[0].T.copy(),
                              "transpose")
    return _asarray(x).T


def concat(parts: Sequence, axis: int = 0):
    """Concatenate arrays, Vars, or jets of matching kind along an axis."""
    if any(isinstance(p, Jet) for p in parts):
        jets = [Jet._coerce(p) for p in parts]
        f0 = concat([j.f0 for j in jets], axis)

        def component(comps):
            if all(_is_zero(c) for c in comps):
                return 0.0
            dense = [np.zeros(j.f0.shape) if _is_zero(c) else c
                     for c, j in zip(comps, jets)]
            return concat(dense, axis)

        return Jet(f0, component([j.f1 for j in jets]),
                   component([j.f2 for j in jets]))
    tape = None
    for p in parts:
        if isinstance(p, Var):
            tape = p.tape
            break
    if tape is None:
        return np.concatenate([_asarray(p) for p in parts], axis=axis)
    vars_ = [p if isinstance(p, Var) else tape.leaf(p, "const") for p in parts]
    values = [v.value for v in vars_]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return tape._record(np.concatenate(values, axis=axis), tuple(v.index for v in vars_),
                        vjp, lambda vals: np.concatenate(vals, axis=axis), "concat")


def total(x):
    """Sum of all elements."""
    if isinstance(x, Jet):
        return Jet(total(x.f0),
                   0.0 if _is_zero(x.f1) else total(x.f1),
                   0.0 if _is_zero(x.f2) else total(x.f2))
    if isinstance(x, Var):
        shape = x.value.shape
        return x.tape._record(_asarray(x.value.sum()), (x.index,),
                              lambda g: (np.broadcast_to(g, shape).copy(),),
                              lambda vals: _asarray(vals[0].sum()), "sum")
    return _asarray(x).sum()


def mean(x):
    if isinstance(x, Jet):
        return Jet(mean(x.f0),
                   0.0 if _is_zero(x.f1) else mean(x.f1),
                   0.0 if _is_zero(x.f2) else mean(x.f2))
    if isinstance(x, Var):
        n = x.value.size
        return total(x) / float(n)
    return _asarray(x).mean()


# ---------------------------------------------------------------------------
# Public derivative operators.
# ---------------------------------------------------------------------------

def grad_params(loss_fn: Callable, theta) -> np.ndarray:
    """Gradient of a scalar loss with respect to a flat parameter vector."""
    theta = _asarray(theta)
    tape = Tape()
    th = tape.leaf(theta, "theta")
    loss = loss_fn(th)
    if not isinstance(loss, Var):
        # loss ignored the parameters entirely
        return np.zeros_like(theta)
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ShapeMismatch("loss_fn must return a scalar")
    return tape.gradient(loss, [th])[0]


def input_jet(f: Callable, x, axis: int) -> tuple[float, float, float]:
    """Value, first, and second derivative of ``f`` along one coordinate axis."""
    x = np.atleast_1d(_asarray(x))
    coords = [Jet(float(x[j]), 1.0 if j == axis else 0.0, 0.0)
              for j in range(x.size)]
    out = f(coords)
    if isinstance(out, Jet):
        return (float(out.f0), float(0.0 + out.f1), float(0.0 + out.f2))
    return (float(out), 0.0, 0.0)


def laplacian(f: Callable, x) -> float:
    """Sum of pure second derivatives of ``f`` over all coordinate axes."""
    x = np.atleast_1d(_asarray(x))
    return float(sum(input_jet(f, x, axis)[2] for axis in range(x.size)))


@dataclasses.dataclass
class GradCheckReport:
    value: float
    max_rel_error_first: float
    max_rel_error_second: float
    nondifferentiable: bool
    passed: bool
    details: list


def _rel_err(a: float, b: float, floor: float = 1e-2) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradient(f: Callable, x, tolerance: float = 1e-4,
                   step1: float = 1e-5, step2: float = 1e-3) -> GradCheckReport:
    """Compare jet derivatives of ``f`` against central finite differences.

    Finite differences are evaluated at two step sizes; mutually inconsistent
    estimates mark the point as non-differentiable (kinks poison the second
    difference long before they poison the value).
    """
    x = np.atleast_1d(_asarray(x))

    def feval(pt):
        out = f([float(v) for v in pt])
        return float(out.f0) if isinstance(out, Jet) else float(out)

    value = feval(x)
    max1 = 0.0
    max2 = 0.0
    kink = False
    details = []
    for axis in range(x.size):
        _, d1, d2 = input_jet(f, x, axis)

        def fd_pair(h):
            e = np.zeros_like(x)
            e[axis] = h
            fp, fm = feval(x + e), feval(x - e)
            return (fp - fm) / (2.0 * h), (fp - 2.0 * value + fm) / (h * h)

        fd1_a, _ = fd_pair(step1)
        fd1_b, _ = fd_pair(step1 / 2.0)
        _, fd2_a = fd_pair(step2)
        _, fd2_b = fd_pair(step2 / 2.0)
        incons1 = abs(fd1_a - fd1_b) / max(abs(fd1_a), abs(fd1_b), 1.0)
        incons2 = abs(fd2_a - fd2_b) / max(abs(fd2_a), abs(fd2_b), 1.0)
        if incons1 > 0.25 or incons2 > 0.25:
            kink = True
        e1 = _rel_err(d1, fd1_b)
        e2 = _rel_err(d2, fd2_b)
        max1 = max(max1, e1)
        max2 = max(max2, e2)
        details.append({"axis": axis, "engine": (d1, d2), "fd": (fd1_b, fd2_b),
                        "rel_err": (e1, e2)})
    passed = (not kink) and max1 <= tolerance and max2 <= max(tolerance, 1e-3)
    return GradCheckReport(value, max1, max2, kink, passed, details)
