"""Reverse-mode automatic differentiation on a recorded tape.

Nodes hold numpy values (scalars or arrays), so a single recorded graph
evaluates a whole batch of points at once. Second derivatives with respect
to inputs are obtained forward-over-reverse: the tape is replayed with
:class:`Dual` values and the reverse pass then carries tangents.
"""
from __future__ import annotations

from collections import Counter
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "COUNTERS",
    "Dual",
    "NonSmoothError",
    "Tape",
    "UnsupportedPrimitiveError",
    "Var",
    "gradient",
    "jet_activation",
    "record",
    "relu",
    "relu3",
    "second_input_derivative",
    "step",
    "value_and_grad",
]

# Instrumentation: how often second-order machinery was entered.
COUNTERS: Counter = Counter()


class UnsupportedPrimitiveError(TypeError):
    """Raised when a recorded expression uses an operation the tape cannot differentiate."""


class NonSmoothError(ArithmeticError):
    """Raised when a second derivative is requested through a non-smooth primitive."""


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    gshape = np.shape(g)
    if gshape == tuple(shape):
        return g
    ndiff = len(gshape) - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and np.shape(g)[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _is_dual(v) -> bool:
    return isinstance(v, Dual)


class Tape:
    """Append-only record of a computation.

    Each node stores its op kind, operand indices, cached value and a local
    vector-Jacobian product. Operand indices always precede the consumer, so
    the node list is a topological order.
    """

    def __init__(self):
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.values: list = []
        self._vjps: list = []
        self.inputs: list[int] = []

    def __len__(self):
        return len(self.values)

    def _push(self, op, value, parents, vjp) -> "Var":
        self.ops.append(op)
        self.values.append(value)
        self.parents.append(tuple(parents))
        self._vjps.append(vjp)
        return Var(self, len(self.values) - 1)

    def input(self, value) -> "Var":
        if not _is_dual(value):
            value = np.asarray(value, dtype=float)
        v = self._push("input", value, (), None)
        self.inputs.append(v.index)
        return v

    def constant(self, value) -> "Var":
        return self._push("constant", np.asarray(value, dtype=float), (), None)


class Var:
    """Handle to a node on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100.0

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.values[self.index]

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return len(self.shape)

    def __len__(self):
        return self.shape[0]

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.shape})"

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __matmul__(self, other):
        return _binary("matmul", self, other)

    def __rmatmul__(self, other):
        return _binary("matmul", other, self)

    def __neg__(self):
        return _unary("neg", self, lambda v: -v, lambda g, v, out: -g)

    def __pos__(self):
        return self

    def __pow__(self, n):
        if isinstance(n, Var) or int(n) != n:
            raise UnsupportedPrimitiveError("only integer powers are supported")
        n = int(n)
        if n == 0:
            return self.tape.constant(np.ones(self.shape))
        return _unary(
            "pow",
            self,
            lambda v: v**n,
            lambda g, v, out: g * (n * v ** (n - 1)),
        )

    # -- structural ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def vjp(g, v, out):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis) if not _is_dual(g) else g.expand_dims(axis)
            return g * np.ones(shape) if not _is_dual(g) else g.broadcast_to(shape)

        return _unary("sum", self, lambda v: v.sum(axis=axis, keepdims=keepdims), vjp)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _unary("reshape", self, lambda v: v.reshape(shape), lambda g, v, out: g.reshape(old))

    @property
    def T(self):
        return _unary("transpose", self, lambda v: v.T, lambda g, v, out: g.T)

    def __getitem__(self, key):
        shape = self.shape

        def vjp(g, v, out):
            if _is_dual(g):
                return g.scatter(shape, key)
            z = np.zeros(shape)
            np.add.at(z, key, g)
            return z

        return _unary("getitem", self, lambda v: v[key], vjp)

    # numpy interop: np.tanh(var), np.exp(var), ...
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"{ufunc.__name__}.{method} is not recordable")
        handler = _UFUNCS.get(ufunc)
        if handler is None:
            raise UnsupportedPrimitiveError(f"primitive {ufunc.__name__!r} is not supported on the tape")
        return handler(*inputs)

    def __bool__(self):
        raise UnsupportedPrimitiveError("a recorded value has no truth value; branch on .value instead")


def _as_operand(x, tape):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands belong to different tapes")
        return x.value, True
    if not _is_dual(x):
        x = np.asarray(x, dtype=float)
    return x, False


def _unary(op, a: Var, fwd, vjp):
    va = a.value
    out = fwd(va)
    return a.tape._push(op, out, (a.index,), lambda g, out_=None: (vjp(g, va, out),))


def _matmul_grads(a, b):
    a_nd, b_nd = np.ndim(a), np.ndim(b)
    if a_nd == 1 and b_nd == 1:
        return (lambda g: g * b), (lambda g: g * a)
    if a_nd == 1:
        return (lambda g: g @ b.T), (lambda g: _outer(a, g))
    if b_nd == 1:
        return (lambda g: _outer(g, b)), (lambda g: a.T @ g)
    return (lambda g: g @ b.T), (lambda g: a.T @ g)


def _outer(u, w):
    if _is_dual(u):
        return u.reshape((-1, 1)) * w.reshape((1, -1))
    if _is_dual(w):
        return w.reshape((1, -1)) * np.reshape(u, (-1, 1))
    return np.outer(u, w)


def _binary(op, a, b):
    tape = a.tape if isinstance(a, Var) else b.tape
    va, ta = _as_operand(a, tape)
    vb, tb = _as_operand(b, tape)
    sa, sb = np.shape(va), np.shape(vb)
    if op == "add":
        out = va + vb
        ga, gb = (lambda g: _unbroadcast(g, sa)), (lambda g: _unbroadcast(g, sb))
    elif op == "sub":
        out = va - vb
        ga, gb = (lambda g: _unbroadcast(g, sa)), (lambda g: _unbroadcast(-g, sb))
    elif op == "mul":
        out = va * vb
        ga, gb = (lambda g: _unbroadcast(g * vb, sa)), (lambda g: _unbroadcast(g * va, sb))
    elif op == "div":
        out = va / vb
        ga, gb = (lambda g: _unbroadcast(g / vb, sa)), (lambda g: _unbroadcast(-g * va / (vb * vb), sb))
    elif op == "matmul":
        out = va @ vb
        ga, gb = _matmul_grads(va, vb)
    else:  # pragma: no cover
        raise UnsupportedPrimitiveError(op)
    if ta and tb:
        return tape._push(op, out, (a.index, b.index), lambda g: (ga(g), gb(g)))
    if ta:
        return tape._push(op, out, (a.index,), lambda g: (ga(g),))
    return tape._push(op, out, (b.index,), lambda g: (gb(g),))


def _reject_dual(name, v):
    if _is_dual(v):
        COUNTERS["nonsmooth_rejections"] += 1
        raise NonSmoothError(f"{name} is not twice differentiable; second derivatives through it are undefined")


def _tanh(a):
    def fwd(v):
        return np.tanh(v)

    def vjp(g, v, out):
        return g * (1.0 - out * out)

    return _unary("tanh", a, fwd, vjp)


def _exp(a):
    return _unary("exp", a, np.exp, lambda g, v, out: g * out)


def _log(a):
    return _unary("log", a, np.log, lambda g, v, out: g / v)


def _abs(a):
    def fwd(v):
        _reject_dual("abs", v)
        return np.abs(v)

    return _unary("abs", a, fwd, lambda g, v, out: g * np.sign(v))


def _maximum(a, b):
    if not isinstance(a, Var):
        a, b = b, a
    tape = a.tape
    va, ta = _as_operand(a, tape)
    vb, tb = _as_operand(b, tape)
    _reject_dual("max", va)
    _reject_dual("max", vb)
    out = np.maximum(va, vb)
    mask = (va > vb).astype(float)  # ties go to the second operand
    sa, sb = np.shape(va), np.shape(vb)
    parents = [x.index for x, t in ((a, ta), (b, tb)) if t]

    def vjp(g):
        grads = []
        if ta:
            grads.append(_unbroadcast(g * mask, sa))
        if tb:
            grads.append(_unbroadcast(g * (1.0 - mask), sb))
        return tuple(grads)

    return tape._push("max", out, parents, vjp)


def _add_uf(a, b):
    return _binary("add", a, b) if isinstance(a, Var) or isinstance(b, Var) else np.add(a, b)


_UFUNCS = {
    np.tanh: _tanh,
    np.exp: _exp,
    np.log: _log,
    np.abs: _abs,
    np.absolute: _abs,
    np.maximum: _maximum,
    np.add: lambda a, b: _binary("add", a, b),
    np.subtract: lambda a, b: _binary("sub", a, b),
    np.multiply: lambda a, b: _binary("mul", a, b),
    np.divide: lambda a, b: _binary("div", a, b),
    np.true_divide: lambda a, b: _binary("div", a, b),
    np.matmul: lambda a, b: _binary("matmul", a, b),
    np.negative: lambda a: -a,
}


def relu(x):
    """max(x, 0). Subgradient 0 at the kink; rejects second-order use."""
    if isinstance(x, Var):

        def fwd(v):
            _reject_dual("relu", v)
            return np.maximum(v, 0.0)

        return _unary("relu", x, fwd, lambda g, v, out: g * (v > 0))
    if _is_dual(x):
        _reject_dual("relu", x.value)
        mask = x.value > 0
        return Dual(np.maximum(x.value, 0.0), x.tangent * mask)
    return np.maximum(x, 0.0)


def relu3(x):
    """max(0, x)**3, twice continuously differentiable."""
    if isinstance(x, Var):

        def fwd(v):
            if _is_dual(v):
                m = relu(v)
                return m * m * m
            return np.maximum(v, 0.0) ** 3

        def vjp(g, v, out):
            m = relu(v)
            return g * (3.0 * m * m)

        return _unary("relu3", x, fwd, vjp)
    m = relu(x)
    return m * m * m


def step(x):
    """Heaviside step of the value (treated as a constant, derivative zero)."""
    v = x.value if isinstance(x, Var) else x
    if _is_dual(v):
        v = v.value
    return (np.asarray(v) > 0).astype(float)


def _jet_forward(z, bias, n, n_dir, order, derivs):
    """Blocks of a truncated Taylor jet through an elementwise activation."""
    out = np.empty_like(z)
    f, f1, f2, f3 = derivs(z[:n] + bias, order)
    out[:n] = f
    d = [z[(1 + k) * n : (2 + k) * n] for k in range(n_dir)]
    for k in range(n_dir):
        np.multiply(f1, d[k], out=out[(1 + k) * n : (2 + k) * n])
    dd = None
    if order == 2:
        dd = [z[(1 + n_dir + k) * n : (2 + n_dir + k) * n] for k in range(n_dir)]
        for k in range(n_dir):
            blk = out[(1 + n_dir + k) * n : (2 + n_dir + k) * n]
            np.multiply(d[k], d[k], out=blk)
            blk *= f2
            blk += f1 * dd[k]
    return out, (f1, f2, f3, d, dd)


def _jet_vjp(g, n, n_dir, order, cache):
    f1, f2, f3, d, dd = cache
    gz = np.empty_like(g)
    G = [g[(1 + k) * n : (2 + k) * n] for k in range(n_dir)]
    acc = G[0] * d[0]
    for k in range(1, n_dir):
        acc += G[k] * d[k]
    if order == 2:
        H = [g[(1 + n_dir + k) * n : (2 + n_dir + k) * n] for k in range(n_dir)]
        acc3 = None
        for k in range(n_dir):
            acc += H[k] * dd[k]
            t = H[k] * d[k]
            t *= d[k]
            acc3 = t if acc3 is None else acc3 + t
        acc3 *= f3
    acc *= f2
    np.multiply(g[:n], f1, out=gz[:n])
    gz[:n] += acc
    if order == 2:
        gz[:n] += acc3
    for k in range(n_dir):
        blk = gz[(1 + k) * n : (2 + k) * n]
        np.multiply(G[k], f1, out=blk)
        if order == 2:
            t = H[k] * d[k]
            t *= 2.0 * f2
            blk += t
            np.multiply(H[k], f1, out=gz[(1 + n_dir + k) * n : (2 + n_dir + k) * n])
    return gz


def jet_activation(z, bias, n_dir: int, order: int, derivs):
    """Fused dense-layer activation acting on a stacked Taylor jet.

    ``z`` stacks ``1 + n_dir * order`` equal row blocks: the pre-activation
    values, their first directional derivatives and (order 2) their pure
    second derivatives, all before the bias. ``bias`` is added to the value
    block only. ``derivs(v, order)`` returns the activation and its first
    three derivatives (the third may be ``None`` below order 2). Recorded
    as a single tape node with a hand-written adjoint.
    """
    if order not in (1, 2):
        raise ValueError("jet order must be 1 or 2")
    zv = z.value if isinstance(z, Var) else z
    bv = bias.value if isinstance(bias, Var) else bias
    if _is_dual(zv) or _is_dual(bv):
        raise UnsupportedPrimitiveError("jet_activation does not accept dual numbers")
    zv, bv = np.asarray(zv, dtype=float), np.asarray(bv, dtype=float)
    n = zv.shape[0] // (1 + n_dir * order)
    out, cache = _jet_forward(zv, bv, n, n_dir, order, derivs)
    if order == 2:
        COUNTERS["second_order"] += 1
    parents, grads = [], []
    if isinstance(z, Var):
        parents.append(z.index)
        grads.append(lambda gz: gz)
    if isinstance(bias, Var):
        parents.append(bias.index)
        grads.append(lambda gz: _unbroadcast(gz[:n], np.shape(bv)))
    if not parents:
        return out
    tape = z.tape if isinstance(z, Var) else bias.tape

    def vjp(g):
        gz = _jet_vjp(g, n, n_dir, order, cache)
        return tuple(fn(gz) for fn in grads)

    return tape._push("jet_activation", out, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def gradient(tape: Tape, output, seed=None) -> dict[int, object]:
    """Reverse-mode adjoints of every input of ``tape`` with respect to ``output``.

    ``output`` is a :class:`Var` or a node index. Unless ``seed`` is given the
    output must be scalar. Inputs that do not influence the output get zeros.
    """
    idx = output.index if isinstance(output, Var) else int(output)
    if isinstance(output, Var) and output.tape is not tape:
        raise IndexError("output node is not on this tape")
    if not 0 <= idx < len(tape):
        raise IndexError(f"node {idx} is not on the tape (size {len(tape)})")
    out_val = tape.values[idx]
    if seed is None:
        if np.size(out_val if not _is_dual(out_val) else out_val.value) != 1:
            raise ValueError("gradient of a non-scalar output needs an explicit seed")
        seed = np.ones(np.shape(out_val)) if not _is_dual(out_val) else Dual(np.ones(out_val.shape), np.zeros(out_val.shape))
    adj: list = [None] * (idx + 1)
    adj[idx] = seed
    for i in range(idx, -1, -1):
        g = adj[i]
        if g is None:
            continue
        vjp = tape._vjps[i]
        if vjp is None:
            continue
        for p, gp in zip(tape.parents[i], vjp(g)):
            adj[p] = gp if adj[p] is None else adj[p] + gp
    result = {}
    for k in tape.inputs:
        g = adj[k] if k <= idx else None
        if g is None:
            v = tape.values[k]
            g = np.zeros(np.shape(v)) if not _is_dual(v) else Dual(np.zeros(v.shape), np.zeros(v.shape))
        result[k] = g
    return result


def record(fn: Callable, *inputs) -> tuple[Tape, Var]:
    """Run ``fn`` on tape inputs built from ``inputs``; returns (tape, output)."""
    tape = Tape()
    args = [tape.input(x) for x in inputs]
    out = fn(*args)
    if not isinstance(out, Var):
        out = tape.constant(out)
    return tape, out


def value_and_grad(fn: Callable, x, *args):
    """Value of ``fn(x, *args)`` and its gradient with respect to ``x``."""
    tape, out = record(lambda v: fn(v, *args), x)
    g = gradient(tape, out)[tape.inputs[0]]
    val = out.value
    return (float(val) if np.size(val) == 1 else val), g


def second_input_derivative(fn: Callable, x: Sequence[float], axis: int) -> float:
    """d^2 fn / d x[axis]^2 at ``x`` by forward-over-reverse.

    The input is seeded as a dual number along ``axis``, ``fn`` is recorded
    with dual values and the reverse pass yields (df/dx, d^2f/dx dx_axis).
    Raises :class:`NonSmoothError` if ``fn`` passes through relu/max/abs.
    """
    COUNTERS["second_order"] += 1
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[axis] = 1.0
    tape = Tape()
    xv = tape.input(Dual(x, e))
    out = fn(xv)
    if not isinstance(out, Var):
        return 0.0
    g = gradient(tape, out)[xv.index]
    return float(np.asarray(g.tangent)[axis])


# ---------------------------------------------------------------------------
# dual numbers


class Dual:
    """Forward-mode dual number ``value + tangent * eps`` with eps**2 = 0.

    ``value`` and ``tangent`` may be floats, numpy arrays, other duals (for
    higher order) or tape variables (reverse-over-forward).
    """

    __array_priority__ = 200.0

    def __init__(self, value, tangent=0.0):
        self.value = value
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent!r})"

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return len(self.shape)

    @staticmethod
    def _split(o):
        if isinstance(o, Dual):
            return o.value, o.tangent
        return o, 0.0

    def __add__(self, o):
        v, t = self._split(o)
        return Dual(self.value + v, self.tangent + t)

    __radd__ = __add__

    def __sub__(self, o):
        v, t = self._split(o)
        return Dual(self.value - v, self.tangent - t)

    def __rsub__(self, o):
        v, t = self._split(o)
        return Dual(v - self.value, t - self.tangent)

    def __mul__(self, o):
        v, t = self._split(o)
        return Dual(self.value * v, self.tangent * v + self.value * t)

    __rmul__ = __mul__

    def __truediv__(self, o):
        v, t = self._split(o)
        return Dual(self.value / v, (self.tangent * v - self.value * t) / (v * v))

    def __rtruediv__(self, o):
        v, t = self._split(o)
        return Dual(v / self.value, (t * self.value - v * self.tangent) / (self.value * self.value))

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __pow__(self, n):
        if int(n) != n:
            raise UnsupportedPrimitiveError("only integer powers are supported")
        n = int(n)
        if n == 0:
            return Dual(self.value**0, self.tangent * 0.0)
        return Dual(self.value**n, n * self.value ** (n - 1) * self.tangent)

    def _full_tangent(self):
        return np.broadcast_to(self.tangent, self.shape)

    def __matmul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.value @ o.value, self._full_tangent() @ o.value + self.value @ o._full_tangent())
        return Dual(self.value @ o, self._full_tangent() @ o)

    def __rmatmul__(self, o):
        return Dual(o @ self.value, o @ self._full_tangent())

    def __gt__(self, o):
        raise NonSmoothError("comparison of dual numbers is not differentiable")

    __lt__ = __ge__ = __le__ = __gt__

    # structural helpers used by the reverse pass
    def sum(self, axis=None, keepdims=False):
        return Dual(self.value.sum(axis=axis, keepdims=keepdims), _t_sum(self.tangent, self.shape, axis, keepdims))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Dual(self.value.reshape(shape), np.broadcast_to(self.tangent, self.shape).reshape(shape))

    def expand_dims(self, axis):
        return Dual(np.expand_dims(self.value, axis), np.expand_dims(np.broadcast_to(self.tangent, self.shape), axis))

    def broadcast_to(self, shape):
        return Dual(np.broadcast_to(self.value, shape) * 1.0, np.broadcast_to(self.tangent, shape) * 1.0)

    def scatter(self, shape, key):
        zv, zt = np.zeros(shape), np.zeros(shape)
        np.add.at(zv, key, self.value)
        np.add.at(zt, key, np.broadcast_to(self.tangent, self.shape))
        return Dual(zv, zt)

    @property
    def T(self):
        return Dual(self.value.T, np.broadcast_to(self.tangent, self.shape).T)

    def __getitem__(self, key):
        return Dual(self.value[key], np.broadcast_to(self.tangent, self.shape)[key])

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"{ufunc.__name__}.{method} on dual numbers")
        if ufunc is np.tanh:
            t = np.tanh(self.value)
            return Dual(t, (1.0 - t * t) * self.tangent)
        if ufunc is np.exp:
            e = np.exp(self.value)
            return Dual(e, e * self.tangent)
        if ufunc is np.log:
            return Dual(np.log(self.value), self.tangent / self.value)
        if ufunc in (np.abs, np.absolute):
            _reject_dual("abs", self.value)
            return Dual(np.abs(self.value), np.sign(self.value) * self.tangent)
        if ufunc is np.maximum:
            a, b = inputs
            if isinstance(b, Dual) and not isinstance(a, Dual):
                a, b = b, a
            bv, bt = Dual._split(b)
            _reject_dual("max", a.value)
            m = a.value > bv
            return Dual(np.maximum(a.value, bv), np.where(m, a.tangent, bt))
        ops = {
            np.add: lambda a, b: a + b,
            np.subtract: lambda a, b: a - b,
            np.multiply: lambda a, b: a * b,
            np.divide: lambda a, b: a / b,
            np.true_divide: lambda a, b: a / b,
        }
        if ufunc is np.matmul:
            a, b = inputs
            return a @ b if isinstance(a, Dual) else b.__rmatmul__(a)
        if ufunc in ops:
            a, b = inputs
            if not isinstance(a, Dual):
                a = Dual(a, np.zeros(np.shape(a)))
            return ops[ufunc](a, b)
        raise UnsupportedPrimitiveError(f"primitive {ufunc.__name__!r} is not supported on dual numbers")


def _t_sum(t, shape, axis, keepdims):
    return np.broadcast_to(t, shape).sum(axis=axis, keepdims=keepdims)
