"""Minimal reverse-mode autodiff over numpy arrays.

Every differentiable computation in this package runs through the Tensor
class below.  The design is a classic dynamic tape: each op records its
parents and a backward closure on the output tensor, and ``backward()``
walks the graph in reverse topological order.  There is no graph reuse,
no higher-order grad, and no in-place op tracking -- none of that is
needed here, and keeping the surface small keeps it auditable.

Gradient buffers follow an ownership discipline: a node's ``.grad`` is
always exclusively owned by that node.  Backward closures pass
``own=True`` to ``accumulate`` only for arrays they allocated (or views
of the node's own grad, which dies right after), so no two tensors ever
share a writable grad buffer.

dtype policy: ops preserve the dtype of their inputs.  The training path
runs float32 end to end (which routes elementwise kernels to the numba
backend when enabled); finite-difference gradient checks cast parameters
to float64, which automatically falls through to the numpy reference
kernels.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval / rendering paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        if not isinstance(data, np.ndarray):
            # Preserve float widths (a numpy scalar from .mean() stays
            # float64); anything else becomes float32.
            data = np.asarray(data)
            if data.dtype not in (np.float32, np.float64):
                data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = ""

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag}, op={self._op!r})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, g: np.ndarray, own: bool = False) -> None:
        """Add ``g`` into this tensor's grad.

        ``own=True`` asserts the caller allocated ``g`` exclusively for
        this tensor (or it is a view of a dying buffer no one else will
        write), so it may be adopted without a copy.
        """
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backprop from this tensor; frees the tape as it goes."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit grad needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # Release saved activations / graph edges eagerly; large
            # attention buffers should die as soon as their grads flow.
            node._backward = None
            node._parents = ()
            if not node.requires_grad:
                node.grad = None

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _wrap(data: np.ndarray, parents, backward, op: str) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward
    out._op = op
    return out


def _needs_tape(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad or t._backward is not None for t in tensors)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- primitive ops -----------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out_data = a.data + b
        if not _needs_tape(a):
            return Tensor(out_data)

        def back(g, a=a):
            a.accumulate(_unbroadcast(g, a.data.shape), own=True)

        return _wrap(out_data, (a,), back, "add")
    out_data = a.data + b.data
    if not _needs_tape(a, b):
        return Tensor(out_data)

    def back(g, a=a, b=b):
        ga = _unbroadcast(g, a.data.shape)
        gb = _unbroadcast(g, b.data.shape)
        if gb is ga:
            gb = ga.copy()
        a.accumulate(ga, own=True)
        b.accumulate(gb, own=True)

    return _wrap(out_data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data
    if not _needs_tape(a, b):
        return Tensor(out_data)

    def back(g, a=a, b=b):
        b.accumulate(_unbroadcast(-g, b.data.shape), own=True)
        a.accumulate(_unbroadcast(g, a.data.shape), own=True)

    return _wrap(out_data, (a, b), back, "sub")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out_data = a.data * b
        if not _needs_tape(a):
            return Tensor(out_data)

        def back(g, a=a, b=b):
            a.accumulate(_unbroadcast(g * b, a.data.shape), own=True)

        return _wrap(out_data, (a,), back, "mul")
    out_data = a.data * b.data
    if not _needs_tape(a, b):
        return Tensor(out_data)

    def back(g, a=a, b=b):
        a.accumulate(_unbroadcast(g * b.data, a.data.shape), own=True)
        b.accumulate(_unbroadcast(g * a.data, b.data.shape), own=True)

    return _wrap(out_data, (a, b), back, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = np.matmul(a.data, b.data)
    if not _needs_tape(a, b):
        return Tensor(out_data)

    def back(g, a=a, b=b):
        if b.data.ndim == 2 and a.data.ndim >= 2:
            # Dense-layer case: collapse all batch dims before the weight
            # grad so we never materialise a per-batch [in, out] stack.
            a.accumulate(np.matmul(g, b.data.T), own=True)
            a2 = a.data.reshape(-1, a.data.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            b.accumulate(a2.T @ g2, own=True)
        else:
            da = np.matmul(g, np.swapaxes(b.data, -1, -2))
            db = np.matmul(np.swapaxes(a.data, -1, -2), g)
            a.accumulate(_unbroadcast(da, a.data.shape), own=True)
            b.accumulate(_unbroadcast(db, b.data.shape), own=True)

    return _wrap(out_data, (a, b), back, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)
    if not _needs_tape(a):
        return Tensor(out_data)

    def back(g, a=a):
        # View of this node's own dying grad buffer: safe to adopt.
        a.accumulate(np.ascontiguousarray(g).reshape(a.data.shape), own=True)

    return _wrap(out_data, (a,), back, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    out_data = np.transpose(a.data, axes)
    if not _needs_tape(a):
        return Tensor(out_data)
    inv = np.argsort(axes)

    def back(g, a=a, inv=tuple(inv)):
        a.accumulate(np.ascontiguousarray(np.transpose(g, inv)), own=True)

    return _wrap(out_data, (a,), back, "transpose")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _needs_tape(*tensors):
        return Tensor(out_data)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = list(np.cumsum(sizes)[:-1])

    def back(g, tensors=tuple(tensors), splits=splits, axis=axis):
        # Disjoint views of the dying grad buffer; adopting them is safe.
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t.accumulate(np.ascontiguousarray(piece), own=True)

    return _wrap(out_data, tuple(tensors), back, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    out_data = np.ascontiguousarray(a.data[tuple(index)])
    if not _needs_tape(a):
        return Tensor(out_data)

    def back(g, a=a, axis=axis, start=start, length=length):
        full = np.zeros_like(a.data)
        index = [slice(None)] * full.ndim
        index[axis] = slice(start, start + length)
        full[tuple(index)] = g
        a.accumulate(full, own=True)

    return _wrap(out_data, (a,), back, "narrow")


def repeat_new_axis(a: Tensor, k: int, axis: int) -> Tensor:
    """Insert a new axis of size k by repetition (e.g. [B,...] -> [B,k,...])."""
    expanded = np.expand_dims(a.data, axis)
    shape = list(expanded.shape)
    shape[axis] = k
    out_data = np.ascontiguousarray(np.broadcast_to(expanded, shape))
    if not _needs_tape(a):
        return Tensor(out_data)

    def back(g, a=a, axis=axis):
        a.accumulate(g.sum(axis=axis), own=True)

    return _wrap(out_data, (a,), back, "repeat")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    if not _needs_tape(a):
        return Tensor(out_data)

    def back(g, a=a, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        # Read-only broadcast view; accumulate must copy it.
        a.accumulate(np.broadcast_to(g, a.data.shape), own=False)

    return _wrap(out_data, (a,), back, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    if not _needs_tape(a):
        return Tensor(out_data)
    count = a.data.size // max(out_data.size, 1)

    def back(g, a=a, axis=axis, keepdims=keepdims, count=count):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape) / count, own=True)

    return _wrap(out_data, (a,), back, "mean")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Stable two-sided formulation.
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    if not _needs_tape(a):
        return Tensor(out_data)

    def back(g, a=a, y=out_data):
        a.accumulate(g * y * (1.0 - y), own=True)

    return _wrap(out_data, (a,), back, "sigmoid")


def gelu(a: Tensor) -> Tensor:
    y, t = kernels.gelu_forward(a.data)
    if not _needs_tape(a):
        return Tensor(y)

    def back(g, a=a, t=t):
        a.accumulate(kernels.gelu_backward(a.data, t, g), own=True)

    return _wrap(y, (a,), back, "gelu")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    out_data, xhat, rstd = kernels.layer_norm_forward(a.data, gain.data, bias.data, eps)
    if not _needs_tape(a, gain, bias):
        return Tensor(out_data)

    def back(g, a=a, gain=gain, bias=bias, xhat=xhat, rstd=rstd):
        dx, dgain, dbias = kernels.layer_norm_backward(g, xhat, rstd, gain.data)
        a.accumulate(dx, own=True)
        gain.accumulate(dgain, own=True)
        bias.accumulate(dbias, own=True)

    return _wrap(out_data, (a, gain, bias), back, "layer_norm")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Attention core on pre-split heads: [B, H, T, Dh] tensors in and out.

    The kernel layer streams one query row at a time and recomputes the
    probabilities in the backward pass, so no [B, H, Tq, Tk] probability
    buffer is ever materialised or saved on the tape.
    """
    dh = q.data.shape[-1]
    scale = 1.0 / np.sqrt(dh)
    qd = np.ascontiguousarray(q.data)
    kd = np.ascontiguousarray(k.data)
    vd = np.ascontiguousarray(v.data)
    out_data = kernels.attn_forward(qd, kd, vd, scale)
    if not _needs_tape(q, k, v):
        return Tensor(out_data)

    def back(g, q=q, k=k, v=v, qd=qd, kd=kd, vd=vd, scale=scale):
        dq, dk, dv = kernels.attn_backward(qd, kd, vd, np.ascontiguousarray(g), scale)
        q.accumulate(dq, own=True)
        k.accumulate(dk, own=True)
        v.accumulate(dv, own=True)

    return _wrap(out_data, (q, k, v), back, "attention")


def scale_gradient(a: Tensor, factor: float) -> Tensor:
    """Identity in the forward pass; multiplies the gradient by ``factor``."""
    if not _needs_tape(a):
        return Tensor(a.data)

    def back(g, a=a, factor=factor):
        if factor == 0.0:
            return
        a.accumulate(g * factor, own=True)

    return _wrap(a.data, (a,), back, "scale_grad")


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    diff = pred.data - target
    out_data = np.asarray(np.mean(diff * diff), dtype=pred.data.dtype)
    if not _needs_tape(pred):
        return Tensor(out_data)

    def back(g, pred=pred, diff=diff):
        pred.accumulate(diff * (g * (2.0 / diff.size)), own=True)

    return _wrap(out_data, (pred,), back, "mse")
