"""Dense tensors with reverse-mode differentiation.

Every primitive records a closure that maps the output gradient to parent
gradients. Backward closures are written with ``Tensor`` operations, so a
backward pass run with ``create_graph=True`` is itself recorded and can be
differentiated again (needed by the gradient penalty).
"""

import contextlib
import os
import threading

import numpy as np

_state = threading.local()

# Finiteness checks on every primitive output. Tests switch this on.
CHECK_FINITE = os.environ.get("ATTN_INPAINT_CHECK_FINITE", "0") == "1"


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


def _default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def set_grad_enabled(flag):
    prev = _grad_enabled()
    _state.grad_enabled = bool(flag)
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for newly created tensors (float32 or float64)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    prev = _default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = prev


def set_check_finite(flag):
    global CHECK_FINITE
    CHECK_FINITE = bool(flag)


class Node:
    __slots__ = ("parents", "backward", "name", "double")

    def __init__(self, parents, backward, name, double):
        self.parents = parents
        self.backward = backward
        self.name = name
        # False when the backward closure treats a data-dependent factor as a
        # constant, i.e. it is only correct to first order.
        self.double = double


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                arr = data
            else:
                arr = np.asarray(data, dtype=_default_dtype())
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._node = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # ------------------------------------------------------------- autodiff
    def backward(self):
        backward(self)

    # ------------------------------------------------------------ operators
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def abs(self):
        return abs_(self)

    def sqrt(self):
        return sqrt(self)

    def square(self):
        return square(self)

    def exp(self):
        return exp(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype if dtype is not None else _default_dtype())


def _make(data, parents, backward_fn, name, double=True):
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {name}")
    if not _grad_enabled() or not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._node = Node(tuple(parents), backward_fn, name, double)
    return out


def _topo_order(roots):
    """Reverse-traversable ordering of every recorded node reachable from roots."""
    order = []
    seen = set()
    stack = [(r, False) for r in roots]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def _run_backward(root, seed, targets, create_graph):
    order = _topo_order([root])
    position = {id(t): i for i, t in enumerate(order)}
    for t in order:
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad:
                    assert position[id(p)] < position[id(t)], "cycle in recorded graph"
    grads = {id(root): seed}
    captured = {}
    with set_grad_enabled(create_graph):
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if id(t) in targets:
                captured[id(t)] = g
            node = t._node
            if node is None:
                continue
            if create_graph and not node.double:
                raise NotImplementedError(f"{node.name} does not support double backward")
            pgrads = node.backward(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise RuntimeError(f"{node.name}: gradient shape {pg.shape} != {p.shape}")
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    return captured


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` (numpy arrays) of every leaf."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got dims {root.dims}")
    order = _topo_order([root])
    leaves = {id(t): t for t in order if t._node is None}
    seed = Tensor(np.ones_like(root.data))
    captured = _run_backward(root, seed, set(leaves), create_graph=False)
    for key, g in captured.items():
        leaf = leaves[key]
        leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


def grad(output, inputs, grad_output=None, create_graph=False):
    """Gradients of ``output`` w.r.t. each of ``inputs`` as Tensors.

    Unused inputs get zero tensors. With ``create_graph`` the returned
    gradients are recorded and may be differentiated again.
    """
    if grad_output is None:
        if output.data.size != 1:
            raise ValueError("grad_output required for non-scalar output")
        grad_output = Tensor(np.ones_like(output.data))
    elif not isinstance(grad_output, Tensor):
        grad_output = Tensor(np.asarray(grad_output, dtype=output.dtype))
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if not output.requires_grad:
        res = [Tensor(np.zeros_like(x.data)) for x in inputs]
        return res[0] if single else res
    captured = _run_backward(output, grad_output, {id(x) for x in inputs}, create_graph)
    res = [captured.get(id(x), Tensor(np.zeros_like(x.data))) for x in inputs]
    return res[0] if single else res


# ---------------------------------------------------------------- broadcasting
def _reduce_shape(shape, target):
    """Axes to sum so that an array of ``shape`` collapses onto ``target``."""
    lead = len(shape) - len(target)
    axes = list(range(lead))
    for i, t in enumerate(target):
        if t == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes)


def sum_to(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes = _reduce_shape(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True)
    data = data.reshape(shape)

    def bw(g):
        return (broadcast_to(g, x.shape),)

    return _make(data, (x,), bw, "sum_to")


def broadcast_to(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()

    def bw(g):
        return (sum_to(g, x.shape),)

    return _make(data, (x,), bw, "broadcast_to")


def _coerce(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# ----------------------------------------------------------------- elementwise
def add(a, b):
    a, b = _coerce(a, b)
    data = a.data + b.data

    def bw(g):
        return sum_to(g, a.shape), sum_to(g, b.shape)

    return _make(data, (a, b), bw, "add")


def sub(a, b):
    a, b = _coerce(a, b)
    data = a.data - b.data

    def bw(g):
        return sum_to(g, a.shape), sum_to(neg(g), b.shape)

    return _make(data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _coerce(a, b)
    data = a.data * b.data

    def bw(g):
        ga = sum_to(g * b, a.shape) if a.requires_grad else None
        gb = sum_to(g * a, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw, "mul")


def div(a, b):
    a, b = _coerce(a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by zero in tensor div")
    data = a.data / b.data

    def bw(g):
        ga = sum_to(g / b, a.shape) if a.requires_grad else None
        gb = sum_to(neg(g * a / (b * b)), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw, "div")


def neg(a):
    def bw(g):
        return (neg(g),)

    return _make(-a.data, (a,), bw, "neg")


def square(a):
    def bw(g):
        return (g * a * 2.0,)

    return _make(a.data * a.data, (a,), bw, "square")


def abs_(a):
    sign = np.sign(a.data)

    def bw(g):
        return (g * Tensor(sign),)

    return _make(np.abs(a.data), (a,), bw, "abs")


def sqrt(a):
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative value")
    data = np.sqrt(a.data)
    # d sqrt / dx taken as 0 at x == 0 so zero-gradient norms stay finite.
    with np.errstate(divide="ignore"):
        inv = np.where(data > 0, 0.5 / np.where(data > 0, data, 1), 0).astype(data.dtype)

    def bw(g):
        return (g * Tensor(inv),)

    return _make(data, (a,), bw, "sqrt", double=False)


def exp(a):
    data = np.exp(a.data)
    out = None

    def bw(g):
        return (g * out,)

    out = _make(data, (a,), bw, "exp")
    return out


def log(a):
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")

    def bw(g):
        return (g / a,)

    return _make(np.log(a.data), (a,), bw, "log")


def where_const(cond, a, b):
    """``cond ? a : b`` with a constant boolean condition."""
    a, b = _coerce(a, b)
    c = np.asarray(cond, dtype=bool)
    data = np.where(c, a.data, b.data)
    cf = Tensor(c.astype(data.dtype))

    def bw(g):
        return sum_to(g * cf, a.shape), sum_to(g * (1.0 - cf), b.shape)

    return _make(data, (a, b), bw, "where")


# ----------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    if len(axes) == 0:
        return x
    data = x.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept), x.shape),)

    return _make(np.asarray(data), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    if len(axes) == 0:
        return x
    count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axes, keepdims) * (1.0 / count)


# ----------------------------------------------------------------- structural
def reshape(x, shape):
    shape = tuple(shape)
    data = x.data.reshape(shape)
    if data.shape == x.shape:
        return x

    def bw(g):
        return (reshape(g, x.shape),)

    return _make(data, (x,), bw, "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (transpose(g, inv),)

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw, "transpose")


def getitem(x, index):
    data = np.array(x.data[index], copy=True)

    def bw(g):
        return (_scatter_index(g, x.shape, index),)

    return _make(data, (x,), bw, "getitem")


def _scatter_index(g, shape, index):
    data = np.zeros(shape, dtype=g.dtype)
    data[index] = g.data

    def bw(gg):
        return (getitem(gg, index),)

    return _make(data, (g,), bw, "scatter_index")


def concat(tensors, axis=1):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        out = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(data, tuple(tensors), bw, "concat")


def matmul(a, b):
    a, b = _coerce(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")

    def bw(g):
        ga = g @ transpose(b, (1, 0)) if a.requires_grad else None
        gb = transpose(a, (1, 0)) @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")
