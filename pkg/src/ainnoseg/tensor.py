"""Dense f64 tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure mapping the output
gradient to parent gradients. ``Tensor.backward`` walks the recorded graph in
reverse topological order, visiting each node once.

Shapes are explicit: apart from multiplication by a Python scalar or a
one-element tensor, operands must agree exactly.
"""

from __future__ import annotations

import contextlib
import contextvars
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, NumericError, ShapeError, ConfigError

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64, copy=True) if op == "leaf" else data
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values produced by {op!r}")
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return scale(self, other) if other.size == 1 and self.size != 1 else mul(self, other)
        return mul_scalar(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Populate ``.grad`` on every leaf reachable from this scalar.

        Leaf gradients accumulate across calls until cleared.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")
        order = topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes requiring grad, parents before children (iterative DFS)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    track = _grad_enabled.get() and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, False, (), None, op)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------- #
# elementwise
# --------------------------------------------------------------------------- #
def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def mul_scalar(x: Tensor, c: float) -> Tensor:
    return _node(x.data * c, (x,), lambda g: (g * c,), "mul_scalar")


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply ``x`` by a learnable one-element tensor ``s``."""
    if s.size != 1:
        raise ShapeError(f"scale: gate must have one element, got shape {s.shape}")
    sv = s.data.reshape(-1)[0]

    def backward(g):
        return g * sv, np.full(s.shape, np.sum(g * x.data))

    return _node(x.data * sv, (x, s), backward, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _node(out, (x,), lambda g: (g / x.data,), "log")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _node(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, g.item()),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _node(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, g.item() / n),), "mean")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(d != r for i, (d, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat on axis {axis}: incompatible shapes {ref} and {t.shape}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _node(
        np.concatenate([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=ax)),
        "concat",
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    """Transpose the two trailing axes."""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def channel_affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-channel ``x * weight[c] + bias[c]`` for (C,H,W) or (N,C,H,W) input."""
    c_axis = x.ndim - 3
    c = x.shape[c_axis]
    if weight.shape != (c,) or bias.shape != (c,):
        raise ShapeError(f"channel_affine: {x.shape} needs ({c},) params, got {weight.shape}, {bias.shape}")
    bshape = (c, 1, 1)
    w = weight.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != c_axis)

    def backward(g):
        return g * w, (g * x.data).sum(axis=red), g.sum(axis=red)

    return _node(x.data * w + bias.data.reshape(bshape), (x, weight, bias), backward, "channel_affine")


# --------------------------------------------------------------------------- #
# linear algebra
# --------------------------------------------------------------------------- #
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(M,K)@(K,N), or batched (B,M,K)@(B,K,N) with equal batch size."""
    if a.ndim != b.ndim or a.ndim not in (2, 3) or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for {x.ndim}-d tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), backward, "log_softmax")


# --------------------------------------------------------------------------- #
# spatial
# --------------------------------------------------------------------------- #
def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ConfigError(f"conv2d: (size {n} + 2*{pad} - {k}) / stride {stride} is not integral")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding.

    ``x`` is (C_in,H,W) or (N,C_in,H,W); ``w`` is (C_out,C_in,k,k) with k odd.
    """
    if x.ndim not in (3, 4) or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: bad operand shapes {x.shape}, {w.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c_in, h, wd = xd.shape
    c_out, wc, k, _ = w.shape
    if wc != c_in:
        raise ShapeError(f"conv2d: input has {c_in} channels, kernel {w.shape} expects {wc}")
    if k % 2 == 0:
        raise ConfigError(f"conv2d: kernel size must be odd, got {k}")
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(wd, k, stride, pad)
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    pointwise = k == 1 and pad == 0
    if pointwise:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        cols = xs.reshape(n, c_in, ho * wo)
        out = (w.data.reshape(c_out, c_in) @ cols).reshape(n, c_out, ho, wo)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gb = g if batched else g[None]
        if pointwise:
            gflat = gb.reshape(n, c_out, ho * wo)
            gw = np.tensordot(gflat, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
            gxs = (w.data.reshape(c_out, c_in).T @ gflat).reshape(n, c_in, ho, wo)
            if stride > 1:
                gx = np.zeros_like(xd)
                gx[:, :, ::stride, ::stride] = gxs
            else:
                gx = gxs
        else:
            gw = np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(gb, w.data, axes=([1], [0]))  # n,ho,wo,c_in,k,k
            gxp = np.zeros(xp.shape)
            span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
            for di in range(k):
                for dj in range(k):
                    gxp[:, :, di:di + span_h:stride, dj:dj + span_w:stride] += gcols[..., di, dj].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        gx = gx if batched else gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _node(out if batched else out[0], parents, backward, "conv2d")


@lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the bilinear weights of output i (half-pixel centres)."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize the two trailing axes; align-corners-false convention."""
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"bilinear_resize: output size must be positive, got {out_h}x{out_w}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return _node(x.data.copy(), (x,), lambda g: (g,), "resize")
    ry, rx = interp_matrix(h, out_h), interp_matrix(w, out_w)
    out = ry @ x.data @ rx.T
    return _node(out, (x,), lambda g: (ry.T @ g @ rx,), "resize")


# --------------------------------------------------------------------------- #
# optimisation
# --------------------------------------------------------------------------- #
class SGD:
    """Momentum SGD: ``v <- momentum*v + g; p <- p - lr*v``."""

    def __init__(self, params: Iterable[Tensor], lr: float, momentum: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} with shape {p.shape} has no gradient")
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# --------------------------------------------------------------------------- #
# finite-difference oracle
# --------------------------------------------------------------------------- #
def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``t.data``.

    With ``indices`` given (flat positions), only those entries are probed and
    the result is a 1-D array aligned with them.
    """
    flat = t.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            out.append((fp - fm) / (2 * h))
    res = np.array(out)
    return res.reshape(t.shape) if indices is None else res


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger of the two max magnitudes."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5, indices=None) -> float:
    """Worst relative error between backprop and central differences.

    ``indices`` optionally maps an input position to the flat entries to probe.
    """
    for t in inputs:
        t.grad = None
    f().backward()
    worst = 0.0
    for k, t in enumerate(inputs):
        sel = None if indices is None else indices.get(k)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if sel is not None:
            analytic = analytic.reshape(-1)[list(sel)]
        numeric = numerical_grad(f, t, h, sel)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
