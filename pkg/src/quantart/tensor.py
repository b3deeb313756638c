"""Dense tensors with reverse-mode automatic differentiation.

Everything downstream (conv blocks, attention, quantization, losses) is
built from the ops here. Values are numpy arrays; each op records its
parents and a backward closure, and ``Tensor.backward`` replays the
graph in reverse topological order. Train-time code runs in float32,
gradient-check tests run the same graphs in float64.

Broadcasting follows numpy rules (scalars and size-1 axes); backward
sums gradients over the broadcast axes. ``stop_gradient`` emits a node
whose value is the input's value and whose backward contributes nothing.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True
_VALIDATE = False

FLOAT_DTYPES = (np.float32, np.float64)
DEFAULT_DTYPE = np.float32


def set_validation(enabled: bool) -> None:
    """Toggle finite-value checks at op boundaries (off by default)."""
    global _VALIDATE
    _VALIDATE = bool(enabled)


def validation_enabled() -> bool:
    return _VALIDATE


@contextlib.contextmanager
def validation(enabled: bool = True):
    global _VALIDATE
    old = _VALIDATE
    _VALIDATE = bool(enabled)
    try:
        yield
    finally:
        _VALIDATE = old


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference / frozen paths)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _check_finite(arr, op):
    if _VALIDATE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad, shape):
    # Sum the gradient of a broadcast result back down to `shape`.
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """n-dimensional float array, optionally tracked by the autodiff tape.

    ``data`` is treated as immutable once wrapped; ops allocate fresh
    arrays. ``grad`` is populated (as a numpy array of the value's shape)
    by ``backward`` for every node with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if _VALIDATE and not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor initialized with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = "leaf"

    # -- construction of op results ------------------------------------

    @classmethod
    def _result(cls, data, parents, backward_fn, op):
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward_fn = backward_fn if track else None
        out._op = op
        return out

    # -- basic introspection -------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op})"

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def _accumulate(self, grad):
        if grad.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {grad.shape} != value shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + grad

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other):
        a, b = self, self._coerce(other)
        out_data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._result(out_data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, self._coerce(other)
        out_data = a.data - b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor._result(out_data, (a, b), backward, "sub")

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, self._coerce(other)
        out_data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._result(out_data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, self._coerce(other)
        out_data = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._result(out_data, (a, b), backward, "div")

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(-g)

        return Tensor._result(-a.data, (a,), backward, "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self
        e = float(exponent)
        out_data = a.data ** e

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * e * a.data ** (e - 1.0))

        return Tensor._result(out_data, (a,), backward, "pow")

    def abs(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * np.sign(a.data))

        return Tensor._result(np.abs(a.data), (a,), backward, "abs")

    # -- transcendental -------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_data)

        return Tensor._result(out_data, (a,), backward, "exp")

    def log(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._accumulate(g / a.data)

        return Tensor._result(np.log(a.data), (a,), backward, "log")

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * 0.5 / out_data)

        return Tensor._result(out_data, (a,), backward, "sqrt")

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._result(out_data, (a,), backward, "tanh")

    def sigmoid(self):
        a = self
        out_data = _sigmoid(a.data)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._result(out_data, (a,), backward, "sigmoid")

    def log_sigmoid(self):
        # Stable log(sigmoid(x)) = -softplus(-x); grad is sigmoid(-x).
        a = self
        x = a.data
        out_data = -(np.log1p(np.exp(-np.abs(x))) + np.maximum(-x, 0.0))

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * _sigmoid(-x))

        return Tensor._result(out_data, (a,), backward, "log_sigmoid")

    def silu(self):
        a = self
        s = _sigmoid(a.data)
        out_data = a.data * s

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * s * (1.0 + a.data * (1.0 - s)))

        return Tensor._result(out_data, (a,), backward, "silu")

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

        return Tensor._result(out_data, (a,), backward, "sum")

    def mean(self, axis=None, keepdims=False):
        count = self.size if axis is None else _axis_count(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out_data = a.data.reshape(shape)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.reshape(a.shape))

        return Tensor._result(out_data, (a,), backward, "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inverse = tuple(np.argsort(axes))

        def backward(g):
            if a.requires_grad:
                a._accumulate(g.transpose(inverse))

        return Tensor._result(a.data.transpose(axes), (a,), backward, "transpose")

    # -- matmul ----------------------------------------------------------

    def __matmul__(self, other):
        a, b = self, self._coerce(other)
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul inner mismatch: {a.shape} @ {b.shape}")
        out_data = np.matmul(a.data, b.data)

        def backward(g):
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.shape))

        return Tensor._result(out_data, (a, b), backward, "matmul")

    def softmax(self, axis=-1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            if a.requires_grad:
                inner = (g * out_data).sum(axis=axis, keepdims=True)
                a._accumulate((g - inner) * out_data)

        return Tensor._result(out_data, (a,), backward, "softmax")

    # -- backward --------------------------------------------------------

    def backward(self):
        """Reverse-mode pass from this scalar; fills ``grad`` on the graph."""
        if self.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        graph = ComputationGraph.from_root(self)
        self.grad = np.ones_like(self.data)
        graph.run_backward()


class ComputationGraph:
    """Topologically ordered snapshot of the op nodes below a root."""

    def __init__(self, nodes):
        self.nodes = nodes  # topological order, root last

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputationGraph":
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run_backward(self):
        for node in reversed(self.nodes):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def backward(loss: Tensor, params: dict) -> dict:
    """Run backprop from ``loss`` and return gradients for named leaves.

    Leaves absent from the graph get zero gradients.
    """
    loss.backward()
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def stop_gradient(x: Tensor) -> Tensor:
    """Value of ``x`` with the backward contribution cut to exactly zero."""
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward_fn = None
    out._op = "stop_gradient"
    return out


def softmax(x: Tensor, axis=-1) -> Tensor:
    return x.softmax(axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


def gather_rows(entries: Tensor, indices) -> Tensor:
    """Pick rows of an (N, d) matrix; backward scatter-adds into the rows."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ValueError(f"indices must be flat, got shape {idx.shape}")
    if entries.ndim != 2:
        raise ValueError(f"entries must be 2-d, got shape {entries.shape}")
    a = entries
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return Tensor._result(out_data, (a,), backward, "gather_rows")


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsample of a (B, C, H, W) tensor."""
    if x.ndim != 4:
        raise ValueError(f"expected 4-d input, got shape {x.shape}")
    a = x
    out_data = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        if a.requires_grad:
            b, c, h2, w2 = g.shape
            a._accumulate(g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return Tensor._result(out_data, (a,), backward, "upsample_nearest2x")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-d cross-correlation (no kernel flip) over (B, C, H, W).

    Output spatial size is floor((H + 2*pad - k) / stride) + 1. Lowered
    to a batched matmul over im2col columns, so both directions run on
    BLAS.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 4-d, got shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-d, got shape {weight.shape}")
    bsz, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}"
        )
    if kh != kw:
        raise ValueError(f"only square kernels supported, got {weight.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    k = kh
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ValueError(
            f"kernel {k}x{k} larger than padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1

    if pad > 0:
        x_pad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        x_pad = x.data
    sb, sc, sh, sw = x_pad.strides
    windows = np.lib.stride_tricks.as_strided(
        x_pad,
        shape=(bsz, cin, k, k, h_out, w_out),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    cols = windows.reshape(bsz, cin * k * k, h_out * w_out)
    w2 = weight.data.reshape(cout, cin * k * k)
    out = np.matmul(w2, cols)  # (B, cout, L)
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"bias shape {bias.shape} != ({cout},)")
        out = out + bias.data[None, :, None]
    out_data = out.reshape(bsz, cout, h_out, w_out)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(bsz, cout, h_out * w_out)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(cout, cin, k, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)  # (B, cin*k*k, L)
            dwin = dcols.reshape(bsz, cin, k, k, h_out, w_out)
            dx_pad = np.zeros_like(x_pad)
            for i in range(k):
                hi = i + stride * (h_out - 1) + 1
                for j in range(k):
                    wj = j + stride * (w_out - 1) + 1
                    dx_pad[:, :, i:hi:stride, j:wj:stride] += dwin[:, :, i, j]
            if pad > 0:
                dx_pad = dx_pad[:, :, pad:pad + h, pad:pad + w]
            x._accumulate(dx_pad)

    return Tensor._result(out_data, parents, backward, "conv2d")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _axis_count(shape, axis):
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n
