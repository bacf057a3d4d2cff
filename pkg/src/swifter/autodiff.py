"""Reverse-mode autodiff over numpy arrays.

A ``Tape`` records every operation whose inputs are tracked (parameters,
or values computed from them) while it is active:

    with Tape() as tape:
        loss = xe(model(x), y)
    grads = tape.backward(loss)      # {leaf Tensor: ndarray}

Tensors are thin wrappers around float64 ndarrays. Ops run as plain numpy
when no tape is active, so inference pays nothing beyond a thread-local
lookup. Gradded ops support arbitrary leading batch axes; backward sums
gradients over broadcast axes automatically.

All forward computations are metered through :mod:`swifter.flops` when a
meter is installed.
"""

import threading

import numpy as np

from . import flops
from .errors import ContractError, ShapeError

_stack = threading.local()


def _tapes() -> list:
    if not hasattr(_stack, "tapes"):
        _stack.tapes = []
    return _stack.tapes


def active_tape():
    tapes = _tapes()
    return tapes[-1] if tapes else None


class Tensor:
    """Dense float64 array plus an optional handle onto the recording tape."""

    __slots__ = ("data", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._node = None  # (tape, node_id) set when an op records this tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions do the real work
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def parameter(data, rng=None, shape=None, std: float = 0.02) -> Tensor:
    """A trainable leaf. Pass data directly or (rng, shape, std) to sample."""
    if data is None:
        data = rng.normal(0.0, std, size=shape)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Tape:
    """Ordered op records plus per-node gradient buffers after backward."""

    def __init__(self):
        self._parents = []  # tuple of parent node ids (None for untracked slots)
        self._backward = []  # callable(grad_out) -> tuple of parent grads, or None for leaves
        self._names = []
        self._leaf_ids = {}  # id(Tensor) -> node id
        self._leaves = {}  # node id -> Tensor, keeps leaf objects alive
        self._grads = None

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tapes().pop()
        assert popped is self
        return False

    def _leaf_node(self, t: Tensor) -> int:
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = self._push("leaf", (), None)
            self._leaf_ids[id(t)] = nid
            self._leaves[nid] = t
        return nid

    def _push(self, name, parents, backward_fn) -> int:
        self._names.append(name)
        self._parents.append(parents)
        self._backward.append(backward_fn)
        return len(self._names) - 1

    def _node_of(self, t: Tensor):
        if t._node is not None and t._node[0] is self:
            return t._node[1]
        if t.requires_grad:
            return self._leaf_node(t)
        return None

    def backward(self, loss: Tensor) -> dict:
        """Accumulate dLoss/dNode in reverse topological order.

        Returns a map from every leaf tensor registered on this tape to its
        gradient (zeros when the leaf does not reach the loss).
        """
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        n = len(self._names)
        grads: list = [None] * n
        if loss._node is not None and loss._node[0] is self:
            grads[loss._node[1]] = np.ones_like(loss.data)
            for nid in range(n - 1, -1, -1):
                g = grads[nid]
                bfn = self._backward[nid]
                if g is None or bfn is None:
                    continue
                for pid, pg in zip(self._parents[nid], bfn(g)):
                    if pid is None or pg is None:
                        continue
                    grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        self._grads = grads
        out = {}
        for nid, leaf in self._leaves.items():
            g = grads[nid]
            out[leaf] = g if g is not None else np.zeros_like(leaf.data)
        return out

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient buffer for any tensor touched by this tape (zeros if unreached)."""
        if self._grads is None:
            raise ContractError("call backward() before querying gradients")
        nid = None
        if t._node is not None and t._node[0] is self:
            nid = t._node[1]
        elif id(t) in self._leaf_ids:
            nid = self._leaf_ids[id(t)]
        if nid is None or self._grads[nid] is None:
            return np.zeros_like(t.data)
        return self._grads[nid]


def apply_op(name: str, out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    """Record a custom op. ``backward_fn(grad, needs)`` returns per-input grads.

    ``needs`` is a tuple of booleans saying which inputs are tracked; the
    backward may return None in untracked slots to skip dead work.
    """
    tape = active_tape()
    out = Tensor(out_data)
    if tape is None:
        return out
    node_ids = tuple(tape._node_of(t) for t in inputs)
    if all(nid is None for nid in node_ids):
        return out
    needs = tuple(nid is not None for nid in node_ids)
    nid = tape._push(name, node_ids, lambda g: backward_fn(g, needs))
    out._node = (tape, nid)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes that were broadcast up from ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _meter_elementwise(muls: int, adds: int = 0) -> None:
    m = flops.current_meter()
    if m is not None:
        m.elementwise(muls, adds)


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data + b.data
    _meter_elementwise(0, out.size)
    ash, bsh = a.data.shape, b.data.shape

    def backward(g, needs):
        return (
            _unbroadcast(g, ash) if needs[0] else None,
            _unbroadcast(g, bsh) if needs[1] else None,
        )

    return apply_op("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data - b.data
    _meter_elementwise(0, out.size)
    ash, bsh = a.data.shape, b.data.shape

    def backward(g, needs):
        return (
            _unbroadcast(g, ash) if needs[0] else None,
            _unbroadcast(-g, bsh) if needs[1] else None,
        )

    return apply_op("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    out = a.data * b.data
    _meter_elementwise(out.size)
    ad, bd = a.data, b.data

    def backward(g, needs):
        return (
            _unbroadcast(g * bd, ad.shape) if needs[0] else None,
            _unbroadcast(g * ad, bd.shape) if needs[1] else None,
        )

    return apply_op("mul", out, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data
    m = flops.current_meter()
    if m is not None:
        batch = int(np.prod(out.shape[:-2], dtype=np.int64)) if out.ndim > 2 else 1
        m.matmul(a.data.shape[-2], a.data.shape[-1], b.data.shape[-1], batch)
    ad, bd = a.data, b.data

    def backward(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        if needs[1]:
            gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return apply_op("matmul", out, (a, b), backward)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    _meter_elementwise(0, a.data.size)
    ash = a.data.shape

    def backward(g, needs):
        if axis is None:
            return (np.broadcast_to(g, ash).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ash).copy(),)

    return apply_op("sum", np.asarray(out), (a,), backward)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    ash = a.data.shape
    out = a.data.reshape(shape)

    def backward(g, needs):
        return (g.reshape(ash),)

    return apply_op("reshape", out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g, needs):
        return (g.transpose(inv),)

    return apply_op("transpose", out, (a,), backward)


def roll2d(a, dy: int, dx: int, axes=(0, 1)) -> Tensor:
    """Cyclic shift along two axes; backward rolls the gradient back."""
    a = astensor(a)
    out = np.roll(a.data, (dy, dx), axis=axes)

    def backward(g, needs):
        return (np.roll(g, (-dy, -dx), axis=axes),)

    return apply_op("roll2d", out, (a,), backward)


def pad_last(a, before: int, after: int, axis: int) -> Tensor:
    """Zero-pad one axis; backward crops."""
    a = astensor(a)
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    n = a.data.shape[axis]

    def backward(g, needs):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(before, before + n)
        return (g[tuple(sl)],)

    return apply_op("pad", out, (a,), backward)


def gather_rows(table, ids) -> Tensor:
    """Embedding lookup: table (V,H) indexed by an integer array."""
    table = astensor(table)
    ids = np.asarray(ids)
    out = table.data[ids]
    vshape = table.data.shape

    def backward(g, needs):
        gt = np.zeros(vshape)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, vshape[-1]))
        return (gt,)

    return apply_op("gather_rows", out, (table,), backward)


def take_along_last(a, idx) -> Tensor:
    """Pick one entry per row along the last axis (idx shape = a.shape[:-1])."""
    a = astensor(a)
    idx = np.asarray(idx)
    expanded = np.expand_dims(idx, -1)
    out = np.take_along_axis(a.data, expanded, axis=-1)[..., 0]
    ash = a.data.shape

    def backward(g, needs):
        ga = np.zeros(ash)
        np.put_along_axis(ga, expanded, np.expand_dims(g, -1), axis=-1)
        return (ga,)

    return apply_op("take_along_last", out, (a,), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh-form gelu; smooth, so its analytic gradient is exact for itself."""
    a = astensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    _meter_elementwise(6 * x.size, 3 * x.size)

    def backward(g, needs):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return apply_op("gelu", out, (a,), backward)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, then affine gain/bias."""
    a, gain, bias = astensor(a), astensor(gain), astensor(bias)
    h = a.data.shape[-1] if a.data.ndim else 0
    if h == 0:
        raise ShapeError("layer_norm needs a non-empty last axis")
    if gain.data.shape != (h,) or bias.data.shape != (h,):
        raise ShapeError("gain/bias must match the normalized axis")
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    out = xhat * gain.data + bias.data
    _meter_elementwise(4 * x.size, 4 * x.size)
    gd = gain.data

    def backward(g, needs):
        dxhat = g * gd
        # standard layer-norm backward, all reductions over the last axis
        dx = (
            dxhat - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) * ivar
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead) if needs[1] else None
        gbias = g.sum(axis=lead) if needs[2] else None
        return (dx if needs[0] else None, ggain, gbias)

    return apply_op("layer_norm", out, (a, gain, bias), backward)


def softmax(a) -> Tensor:
    """Rows over the last axis; max-subtraction guards overflow."""
    a = astensor(a)
    x = a.data
    if x.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    _meter_elementwise(3 * x.size, 2 * x.size)

    def backward(g, needs):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return apply_op("softmax", out, (a,), backward)


def log_softmax(a) -> Tensor:
    a = astensor(a)
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    _meter_elementwise(3 * x.size, 2 * x.size)
    sm = np.exp(out)

    def backward(g, needs):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return apply_op("log_softmax", out, (a,), backward)


def finite_diff_check(f, x: Tensor, h: float = 1e-6) -> float:
    """Max relative error between the taped gradient of ``f`` and central differences.

    ``f`` maps a Tensor to a scalar Tensor. The relative error denominator is
    |analytic| + 1e-12 per coordinate.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = f(probe)
    tape.backward(loss)
    analytic = tape.grad(probe)
    flat = probe.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(probe.data)).item()
        flat[i] = orig - h
        lo = f(Tensor(probe.data)).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)
    numeric = numeric.reshape(analytic.shape)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)))
