"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded on the active :class:`Tape` (entered with ``with
Tape() as tape:``) whenever one of their inputs requires a gradient. Outside
a tape nothing is recorded, which is how inference runs.

Layout conventions: images and feature maps are ``[C, H, W]`` or batched
``[B, C, H, W]``; conv kernels are ``[C_out, C_in, kH, kW]``.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "softplus",
    "minimum",
    "tsum",
    "mean",
    "matmul",
    "reshape",
    "transpose",
    "index",
    "stack",
    "concat",
    "logsumexp",
    "conv2d",
    "xcorr_depthwise",
    "global_avg_pool",
    "l2_normalize",
]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "drci_active_tape", default=None
)


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in creation order, which is a topological order of the
    graph; :meth:`backward` walks them in reverse.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise RuntimeError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, node: "Tensor") -> None:
        node.grad_id = len(self.nodes)
        self.nodes.append(node)

    def backward(self, loss: "Tensor", wrt: Iterable["Tensor"] | None = None):
        """Backpropagate from a scalar ``loss``.

        Gradients are *added* into ``leaf.grad`` for every leaf that requires a
        gradient, so repeated calls accumulate until ``zero_grad`` is used.
        Returns ``{leaf: gradient}`` for ``wrt`` (default: every leaf reached);
        leaves in ``wrt`` that the loss does not depend on map to zeros.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        on_tape = (
            loss.grad_id is not None
            and loss.grad_id < len(self.nodes)
            and self.nodes[loss.grad_id] is loss
        )
        if not on_tape:
            raise ValueError("loss was not recorded on this tape")

        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        reached: dict[int, tuple[Tensor, np.ndarray]] = {}
        for node in reversed(self.nodes[: loss.grad_id + 1]):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    key = id(parent)
                    if key in reached:
                        reached[key] = (parent, reached[key][1] + pg)
                    else:
                        reached[key] = (parent, np.array(pg, dtype=np.float64))
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg

        for leaf, g in reached.values():
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

        if wrt is None:
            return {leaf: g for leaf, g in reached.values()}
        out = {}
        for leaf in wrt:
            hit = reached.get(id(leaf))
            out[leaf] = hit[1] if hit is not None else np.zeros_like(leaf.data)
        return out


def current_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def backward(loss: "Tensor", wrt: Iterable["Tensor"] | None = None):
    """Backpropagate ``loss`` on the currently active tape."""
    tape = current_tape()
    if tape is None:
        raise ValueError("backward called outside an active Tape")
    return tape.backward(loss, wrt)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "grad_id", "name", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise FloatingPointError("non-finite value in tensor data")
        self.data = np.asarray(arr, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.grad_id: int | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

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
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError(
            f"non-finite output from {getattr(backward_fn, '__qualname__', 'op').split('.')[0]}"
        )
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64, order="C")
    out.grad = None
    out.grad_id = None
    out.name = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape.record(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _add_backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _add_backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _sub_backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _sub_backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _mul_backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _mul_backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by a zero element")

    def _div_backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * a.data / b.data, b.shape)

    return _make(a.data / b.data, (a, b), _div_backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    p = float(p)
    if p == 0.0:
        return _make(np.ones_like(a.data), (a,), lambda g: (np.zeros_like(g),))
    if p != int(p) and np.any(a.data < 0):
        raise ValueError("fractional power of a negative value")

    def _power_backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(a.data**p, (a,), _power_backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Tensor:
    """``log(1 + exp(a))`` evaluated without overflow."""
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def _minimum_backward(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return _make(np.where(take_a, a.data, b.data), (a, b), _minimum_backward)


# reductions and shape ------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)

    def _sum_backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), _sum_backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D or 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 or b.ndim > 2:
        raise ValueError("matmul supports 1-D and 2-D operands only")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def _matmul_backward(g):
        ad = a.data if a.ndim == 2 else a.data[None, :]
        bd = b.data if b.ndim == 2 else b.data[:, None]
        gg = g.reshape(ad.shape[0], bd.shape[1])
        return (gg @ bd.T).reshape(a.shape), (ad.T @ gg).reshape(b.shape)

    return _make(a.data @ b.data, (a, b), _matmul_backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def _index_backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), _index_backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def _stack_backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, _stack_backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _concat_backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, _concat_backward)


def logsumexp(a, axis: int = -1) -> Tensor:
    """``log(sum(exp(a)))`` along one axis, shifted by the max for stability."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + m).squeeze(axis)

    def _logsumexp_backward(g):
        return (np.expand_dims(g, axis) * shifted / total,)

    return _make(out, (a,), _logsumexp_backward)


# convolution ------------------------------------------------------------------

def _batched(x: Tensor, ndim: int, what: str) -> bool:
    if x.ndim == ndim - 1:
        return False
    if x.ndim == ndim:
        return True
    raise ValueError(f"{what} must have {ndim - 1} or {ndim} dims, got shape {x.shape}")


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation form, as in deep-learning frameworks).

    ``x`` is ``[C_in, H, W]`` or ``[B, C_in, H, W]``; output spatial size is
    ``(H + 2*padding - kH) // stride + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be [C_out, C_in, kH, kW], got {kernel.shape}")
    batched = _batched(x, 4, "conv2d input")
    xb = x.data if batched else x.data[None]
    B, C, H, W = xb.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ValueError(f"conv2d channel mismatch: input has {C}, kernel expects {Ck}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1

    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ValueError(f"bias must have shape ({O},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def _conv2d_backward(g):
        gb = g if batched else g[None]
        gk = np.tensordot(gb, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(gb, kernel.data, axes=([1], [0]))  # B,Ho,Wo,C,kh,kw
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += (
                    gcols[..., i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding : padding + H, padding : padding + W]
        if not batched:
            gx = gx[0]
        grads = [gx, gk]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out if batched else out[0], parents, _conv2d_backward)


def xcorr_depthwise(search, template) -> Tensor:
    """Per-channel valid cross-correlation of ``template`` over ``search``.

    Shapes ``[C, Hs, Ws]`` and ``[C, Ht, Wt]`` (or with a shared leading batch
    dim) give ``[C, Hs-Ht+1, Ws-Wt+1]``.
    """
    search, template = as_tensor(search), as_tensor(template)
    batched = _batched(search, 4, "search feature")
    if _batched(template, 4, "template feature") != batched:
        raise ValueError("search and template must both be batched or both unbatched")
    s = search.data if batched else search.data[None]
    t = template.data if batched else template.data[None]
    if s.shape[:2] != t.shape[:2]:
        raise ValueError(f"batch/channel mismatch: search {s.shape}, template {t.shape}")
    Ht, Wt = t.shape[2:]
    if Ht > s.shape[2] or Wt > s.shape[3]:
        raise ValueError(f"template {Ht}x{Wt} larger than search {s.shape[2]}x{s.shape[3]}")
    h, w = s.shape[2] - Ht + 1, s.shape[3] - Wt + 1

    win = sliding_window_view(s, (Ht, Wt), axis=(2, 3))
    out = np.einsum("bchwuv,bcuv->bchw", win, t)

    def _xcorr_backward(g):
        gb = g if batched else g[None]
        gt = np.einsum("bchwuv,bchw->bcuv", win, gb)
        gs = np.zeros_like(s)
        for u in range(Ht):
            for v in range(Wt):
                gs[:, :, u : u + h, v : v + w] += gb * t[:, :, u, v, None, None]
        if not batched:
            return gs[0], gt[0]
        return gs, gt

    return _make(out if batched else out[0], (search, template), _xcorr_backward)


def global_avg_pool(x) -> Tensor:
    """Average over the two trailing spatial axes: ``[.., C, H, W] -> [.., C]``."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ValueError(f"global_avg_pool needs [.., C, H, W], got {x.shape}")
    return mean(x, axis=(-2, -1))


def l2_normalize(v, axis: int = -1) -> Tensor:
    v = as_tensor(v)
    norm = np.sqrt((v.data * v.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("cannot L2-normalize a zero vector")
    y = v.data / norm

    def _l2_normalize_backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)

    return _make(y, (v,), _l2_normalize_backward)
