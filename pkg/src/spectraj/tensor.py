"""Dense float64 tensors with reverse-mode differentiation.

DiffTensor wraps a contiguous double-precision numpy array and records
every primitive application as a node of an implicit tape (nodes carry a
monotonically increasing id, so creation order is a topological order).
``backward`` on a scalar loss walks the reachable nodes once, newest
first, and accumulates exact gradients into every leaf tensor created
with ``requires_grad=True``. Gradients from repeated backward calls add
up until ``zero_grads`` resets them.

The primitive set is deliberately small: broadcasting elementwise
arithmetic, the activations used by the models, matmul over arbitrary
batch axes, shape surgery, reductions, same-padded temporal and spatial
convolutions, bilinear sampling of feature maps, and ``grad_check``, the
central-difference oracle that every other gradient in this package is
tested against.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from collections.abc import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

Array = np.ndarray

_node_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class TapeNode:
    """One recorded primitive application."""

    __slots__ = ("node_id", "op", "inputs", "outputs", "backward_fn")

    def __init__(self, op: str, inputs: tuple["DiffTensor", ...],
                 backward_fn: Callable[..., object]):
        self.node_id = next(_node_ids)
        self.op = op
        self.inputs = inputs
        self.outputs: list[DiffTensor] = []
        self.backward_fn = backward_fn


class DiffTensor:
    """A dense float64 array that can participate in differentiation.

    grad starts out absent (None) and is allocated on first accumulation;
    callers that need a defined accumulator before any backward has run
    should treat None as zeros.
    """

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._node: TapeNode | None = None

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
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"DiffTensor(shape={self.shape}{flag})"

    # operator sugar; the module-level functions do the work
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> DiffTensor:
    return value if isinstance(value, DiffTensor) else DiffTensor(value)


def constant(value) -> DiffTensor:
    return DiffTensor(value)


def parameter(value) -> DiffTensor:
    return DiffTensor(value, requires_grad=True)


def _apply(op: str, inputs: Sequence[DiffTensor], out_data: Array,
           backward_fn) -> DiffTensor:
    out = DiffTensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        node = TapeNode(op, tuple(inputs), backward_fn)
        node.outputs.append(out)
        out.requires_grad = True
        out._node = node
    return out


def custom_op(op: str, inputs: Sequence[DiffTensor], out_datas: Sequence[Array],
              backward_fn) -> tuple[DiffTensor, ...]:
    """Extension point for multi-output primitives (used by the eigensolver).

    backward_fn receives one gradient array per output (zeros when an
    output is unused) and must return one gradient-or-None per input.
    """
    outs = tuple(DiffTensor(d) for d in out_datas)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        node = TapeNode(op, tuple(inputs), backward_fn)
        for out in outs:
            out.requires_grad = True
            out._node = node
            node.outputs.append(out)
    return outs


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op: str, a: DiffTensor, b: DiffTensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply("add", (a, b), a.data + b.data, bw)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _apply("sub", (a, b), a.data - b.data, bw)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _apply("mul", (a, b), ad * bd, bw)


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g / bd, a.shape),
                _unbroadcast(-g * ad / (bd * bd), b.shape))

    return _apply("div", (a, b), ad / bd, bw)


def neg(a: DiffTensor) -> DiffTensor:
    return _apply("neg", (a,), -a.data, lambda g: (-g,))


def pow_scalar(a: DiffTensor, exponent: float) -> DiffTensor:
    """Elementwise power with a constant exponent."""
    p = float(exponent)
    ad = a.data

    def bw(g):
        return (g * p * ad ** (p - 1.0),)

    return _apply("pow", (a,), ad ** p, bw)


# ---------------------------------------------------------------------------
# activations and other nonlinearities

def exp(a: DiffTensor) -> DiffTensor:
    out = np.exp(a.data)
    return _apply("exp", (a,), out, lambda g: (g * out,))


def log(a: DiffTensor) -> DiffTensor:
    ad = a.data
    return _apply("log", (a,), np.log(ad), lambda g: (g / ad,))


def sqrt(a: DiffTensor) -> DiffTensor:
    out = np.sqrt(a.data)
    return _apply("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def tanh(a: DiffTensor) -> DiffTensor:
    out = np.tanh(a.data)
    return _apply("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a: DiffTensor) -> DiffTensor:
    # evaluated through exp of the negated magnitude so both tails are stable
    ad = a.data
    out = np.empty_like(ad)
    pos = ad >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", (a,), out, bw)


def clip(a: DiffTensor, lo: float, hi: float) -> DiffTensor:
    """Clamp values to [lo, hi]; gradient passes only inside the range."""
    ad = a.data
    inside = (ad > lo) & (ad < hi)

    def bw(g):
        return (g * inside,)

    return _apply("clip", (a,), np.clip(ad, lo, hi), bw)


def prelu(x: DiffTensor, slope: DiffTensor) -> DiffTensor:
    """Leaky rectifier with a learnable negative-side slope.

    slope broadcasts against x; the usual layout is one slope per
    trailing channel. Positive inputs pass through unchanged, negative
    inputs are scaled by the slope.
    """
    x, slope = as_tensor(x), as_tensor(slope)
    _check_broadcast("prelu", x, slope)
    xd = x.data
    neg_mask = xd < 0
    sb = np.broadcast_to(slope.data, np.broadcast_shapes(xd.shape, slope.data.shape))
    out = np.where(neg_mask, sb * xd, xd)

    def bw(g):
        gx = _unbroadcast(np.where(neg_mask, g * sb, g), x.shape)
        gs = _unbroadcast(np.where(neg_mask, g * xd, 0.0), slope.shape)
        return gx, gs

    return _apply("prelu", (x, slope), out, bw)


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    """Exponential normalization along one axis, max-shifted for stability."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _apply("softmax", (x,), out, bw)


# ---------------------------------------------------------------------------
# linear algebra and shape surgery

def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product over the last two axes with broadcast batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes do not broadcast, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _apply("matmul", (a, b), ad @ bd, bw)


def transpose(a: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def bw(g):
        return (g.transpose(inverse),)

    return _apply("transpose", (a,), a.data.transpose(axes).copy(), bw)


def reshape(a: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    shape = tuple(shape)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _apply("reshape", (a,), a.data.reshape(shape).copy(), bw)


def broadcast_to(a: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}")

    def bw(g):
        return (_unbroadcast(g, a.shape),)

    return _apply("broadcast_to", (a,), out, bw)


def take(a: DiffTensor, key) -> DiffTensor:
    """Basic (slice/int/ellipsis) indexing; gradient scatters back."""
    out = a.data[key]
    shape = a.shape

    def bw(g):
        buf = np.zeros(shape)
        buf[key] += g
        return (buf,)

    return _apply("take", (a,), np.array(out, copy=True), bw)


def concat(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.array(p, copy=True) for p in np.split(g, splits, axis=axis))

    return _apply("concat", tuple(tensors),
                  np.concatenate([t.data for t in tensors], axis=axis), bw)


def stack(tensors: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack needs at least one tensor")

    def bw(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.array(moved[i], copy=True) for i in range(len(tensors)))

    return _apply("stack", tuple(tensors),
                  np.stack([t.data for t in tensors], axis=axis), bw)


def sum_(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, shape).copy(),)

    return _apply("sum", (a,), np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), bw)


def mean(a: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    shape = a.shape
    count = a.size if axis is None else np.prod(
        [shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    scale = 1.0 / float(count)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g * scale, shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk * scale, shape).copy(),)

    return _apply("mean", (a,),
                  np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), bw)


# ---------------------------------------------------------------------------
# convolutions and sampling

def conv_time(x: DiffTensor, kernel: DiffTensor) -> DiffTensor:
    """Same-padded convolution along the leading time axis.

    x has shape [T, N, c_in], kernel [1, L, c_in, c_out] with odd L; the
    time axis is zero-padded so the output keeps length T. The singleton
    leading kernel axis marks this as a purely temporal filter.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3:
        raise ShapeError(f"conv_time input must be [T, N, c_in], got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[0] != 1:
        raise ShapeError(f"conv_time kernel must be [1, L, c_in, c_out], got {kernel.shape}")
    length = kernel.shape[1]
    if length % 2 == 0:
        raise ConfigError(f"conv_time kernel length must be odd, got {length}")
    if kernel.shape[2] != x.shape[2]:
        raise ShapeError(
            f"conv_time channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    t, n, c_in = x.shape
    c_out = kernel.shape[3]
    pad = (length - 1) // 2
    xp = np.zeros((t + 2 * pad, n, c_in))
    xp[pad:pad + t] = x.data
    kd = kernel.data[0]
    out = np.zeros((t, n, c_out))
    for tap in range(length):
        out += xp[tap:tap + t] @ kd[tap]

    def bw(g):
        gk = np.zeros((1, length, c_in, c_out))
        gxp = np.zeros_like(xp)
        for tap in range(length):
            gk[0, tap] = np.tensordot(xp[tap:tap + t], g, axes=([0, 1], [0, 1]))
            gxp[tap:tap + t] += g @ kd[tap].T
        return gxp[pad:pad + t].copy(), gk

    return _apply("conv_time", (x, kernel), out, bw)


def conv2d(x: DiffTensor, kernel: DiffTensor) -> DiffTensor:
    """Same-padded spatial convolution on an [H, W, c_in] feature map."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [H, W, c_in], got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [kh, kw, c_in, c_out], got {kernel.shape}")
    kh, kw, kc_in, c_out = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    if kc_in != x.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    h, w, c_in = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.zeros((h + 2 * ph, w + 2 * pw, c_in))
    xp[ph:ph + h, pw:pw + w] = x.data
    kd = kernel.data
    out = np.zeros((h, w, c_out))
    for u in range(kh):
        for v in range(kw):
            out += xp[u:u + h, v:v + w] @ kd[u, v]

    def bw(g):
        gk = np.zeros_like(kd)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                gk[u, v] = np.tensordot(xp[u:u + h, v:v + w], g, axes=([0, 1], [0, 1]))
                gxp[u:u + h, v:v + w] += g @ kd[u, v].T
        return gxp[ph:ph + h, pw:pw + w].copy(), gk

    return _apply("conv2d", (x, kernel), out, bw)


def bilinear_sample(features: DiffTensor, cols: Array, rows: Array) -> DiffTensor:
    """Sample an [H, W, C] map at fractional (col, row) positions.

    Positions are constants (numpy arrays); only the feature map carries
    gradient. Every position must satisfy 0 <= col <= W-1 and
    0 <= row <= H-1.
    """
    features = as_tensor(features)
    if features.ndim != 3:
        raise ShapeError(f"bilinear_sample map must be [H, W, C], got {features.shape}")
    cols = np.asarray(cols, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    h, w, _ = features.shape
    if cols.shape != rows.shape or cols.ndim != 1:
        raise ShapeError(f"positions must be matching 1-D arrays, got {cols.shape} and {rows.shape}")
    if np.any(cols < 0) or np.any(cols > w - 1) or np.any(rows < 0) or np.any(rows > h - 1):
        raise ContractError("bilinear_sample position outside the feature map")
    # clamp the base cell so positions exactly on the far edge stay valid
    c0 = np.clip(np.floor(cols).astype(int), 0, max(w - 2, 0))
    r0 = np.clip(np.floor(rows).astype(int), 0, max(h - 2, 0))
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fc = cols - c0
    fr = rows - r0
    fd = features.data
    w00 = ((1 - fr) * (1 - fc))[:, None]
    w01 = ((1 - fr) * fc)[:, None]
    w10 = (fr * (1 - fc))[:, None]
    w11 = (fr * fc)[:, None]
    out = w00 * fd[r0, c0] + w01 * fd[r0, c1] + w10 * fd[r1, c0] + w11 * fd[r1, c1]

    def bw(g):
        gf = np.zeros(features.shape)
        np.add.at(gf, (r0, c0), w00 * g)
        np.add.at(gf, (r0, c1), w01 * g)
        np.add.at(gf, (r1, c0), w10 * g)
        np.add.at(gf, (r1, c1), w11 * g)
        return (gf,)

    return _apply("bilinear_sample", (features,), out, bw)


# ---------------------------------------------------------------------------
# backward pass and gradient utilities

def _reachable_nodes(root: DiffTensor) -> tuple[list[TapeNode], list[DiffTensor]]:
    nodes: list[TapeNode] = []
    leaves: list[DiffTensor] = []
    seen_nodes: set[int] = set()
    seen_tensors: set[int] = {id(root)}
    stack = [root]
    while stack:
        t = stack.pop()
        node = t._node
        if node is None:
            if t.requires_grad:
                leaves.append(t)
            continue
        if id(node) in seen_nodes:
            continue
        seen_nodes.add(id(node))
        nodes.append(node)
        for inp in node.inputs:
            if id(inp) not in seen_tensors:
                seen_tensors.add(id(inp))
                stack.append(inp)
    nodes.sort(key=lambda n: n.node_id, reverse=True)
    return nodes, leaves


def backward(loss: DiffTensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires_grad leaf.

    The loss must be a single element. Node ids give a topological order
    for free, so each recorded primitive is visited exactly once even in
    diamond-shaped graphs.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes, leaves = _reachable_nodes(loss)
    messages: dict[int, Array] = {id(loss): np.ones(loss.shape)}
    tensors_by_id: dict[int, DiffTensor] = {id(leaf): leaf for leaf in leaves}
    for node in nodes:
        gouts = []
        pending = False
        for out in node.outputs:
            g = messages.pop(id(out), None)
            if g is None:
                g = np.zeros(out.shape)
            else:
                pending = True
            gouts.append(g)
        if not pending:
            continue
        gins = node.backward_fn(*gouts)
        if not isinstance(gins, tuple):
            gins = (gins,)
        if len(gins) != len(node.inputs):
            raise ContractError(
                f"op '{node.op}' returned {len(gins)} gradients for {len(node.inputs)} inputs")
        for inp, g in zip(node.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            g = np.asarray(g)
            if g.shape != inp.shape:
                raise ContractError(
                    f"op '{node.op}' produced gradient shape {g.shape} for input {inp.shape}")
            key = id(inp)
            cur = messages.get(key)
            messages[key] = g if cur is None else cur + g
    for leaf in leaves:
        g = messages.get(id(leaf))
        if g is None:
            continue
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    del tensors_by_id


def zero_grads(tensors: Sequence[DiffTensor]) -> None:
    for t in tensors:
        t.grad = None


def op_counts(root: DiffTensor) -> dict[str, int]:
    """Count recorded primitives reachable from a tensor, by op name."""
    nodes, _ = _reachable_nodes(root)
    counts: dict[str, int] = {}
    for node in nodes:
        counts[node.op] = counts.get(node.op, 0) + 1
    return counts


def grad_check(f: Callable[[DiffTensor], DiffTensor], x: DiffTensor,
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference grads.

    f must map x to a deterministic scalar DiffTensor without mutating x.
    Determinism is probed by evaluating twice; differing values raise a
    ContractError. The relative error of element i is
    |a_i - n_i| / max(|a_i|, |n_i|, 1e-8).
    """
    if h <= 0:
        raise ContractError(f"grad_check step must be positive, got {h}")
    base = f(x)
    if base.size != 1:
        raise ContractError(f"grad_check target must be scalar, got shape {base.shape}")
    with no_grad():
        probe = f(x)
    if probe.item() != base.item():
        raise ContractError("grad_check target is not deterministic")
    saved_grad = x.grad
    x.grad = None
    backward(base)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    x.grad = saved_grad

    numeric = np.zeros(x.size)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(x.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * h)
    numeric = numeric.reshape(x.shape)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int],
                   fan_in: int, fan_out: int) -> Array:
    """Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=tuple(shape))
