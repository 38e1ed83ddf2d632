"""Dense tensors with a reverse-mode tape.

Every differentiable op builds a :class:`TapeNode` eagerly during the forward
pass; :meth:`Tensor.backward` walks the tape in reverse topological order and
frees it afterwards. Arithmetic is float32 by default. :func:`default_dtype`
switches to float64, which the gradient-check utilities use so finite
differences are not swamped by rounding.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

_state = {"dtype": np.float32, "grad_enabled": True}


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with."""
    previous = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape construction (inference / evaluation)."""
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def get_dtype():
    return _state["dtype"]


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    op: str
    inputs: tuple["Tensor", ...]
    backward_fn: BackwardFn
    saved: dict = field(default_factory=dict)


class Tensor:
    """A dense real array plus an optional gradient buffer."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=_state["dtype"]))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[TapeNode] = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ContractError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    # -- backprop ---------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor.

        Leaf gradients are accumulated (``+=``) across calls; the tape that
        produced ``self`` is freed afterwards.
        """
        if self.data.size != 1 or self.data.ndim > 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for tensor in reversed(order):
            grad = pending.pop(id(tensor), None)
            if grad is None:
                continue
            node = tensor._node
            if node is None:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                continue
            tensor.grad = grad
            for parent, parent_grad in zip(node.inputs, node.backward_fn(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad
            tensor._node = None


def _scalar_error(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value))


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in reversed(tensor._node.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def make_result(data: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of ``op``, recording a tape node if needed."""
    out = Tensor(data)
    if _state["grad_enabled"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; the gradient to each side is ``g * other``."""
    _check_same_shape(a, b, "mul")
    a_data, b_data = a.data, b.data
    return make_result(a_data * b_data, (a, b), "mul", lambda g: (g * b_data, g * a_data))


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")


def scale(a: Tensor, factor: float) -> Tensor:
    return make_result(a.data * factor, (a,), "scale", lambda g: (g * factor,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), "exp", lambda g: (g * out,))


# ---------------------------------------------------------------------------
# shape / reductions
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    original = a.shape
    return make_result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(original),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result(
        np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), "sum",
        lambda g: (np.full(shape, g, dtype=a.data.dtype),),
    )


def mean_over_axis(a: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along ``axis``; the axis is removed."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"mean_over_axis: axis {axis} out of range for rank {a.ndim}")
    axis = axis % a.ndim
    n = a.shape[axis]
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).astype(g.dtype, copy=True),)

    return make_result(a.data.mean(axis=axis, dtype=a.data.dtype), (a,), "mean", backward)


def flip(a: Tensor, axis: int = 0) -> Tensor:
    return make_result(
        np.flip(a.data, axis=axis).copy(), (a,), "flip",
        lambda g: (np.flip(g, axis=axis).copy(),),
    )


def permute_axis0(a: Tensor, order: Sequence[int]) -> Tensor:
    """``out[i] = a[order[i]]`` for a permutation ``order`` of axis 0."""
    order = np.asarray(order, dtype=np.intp)
    if sorted(order.tolist()) != list(range(a.shape[0])):
        raise ContractError(f"permute_axis0: {order.tolist()} is not a permutation of axis 0")
    inverse = np.argsort(order)
    return make_result(a.data[order], (a,), "permute", lambda g: (g[inverse],))


def repeat_axis0(a: Tensor, times: int) -> Tensor:
    """Stack ``times`` copies of ``a`` along a new leading axis."""
    if times < 1:
        raise ContractError("repeat count must be >= 1")
    out = np.broadcast_to(a.data, (times,) + a.shape).copy()
    return make_result(out, (a,), "repeat", lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x[B, D_in]`` and ``weight[D_out, D_in]``."""
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"linear: expected rank-2 input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input dim {x.shape[1]} != weight in-dim {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, "linear", backward)


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[B,C_in,H,W]`` with ``weight[C_out,C_in,k,k]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected rank-4 input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = weight.shape
    if c != c_in:
        raise DimensionError(f"conv2d: input channels (axis 1) {c} != weight channels (axis 1) {c_in}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ContractError("conv2d: stride must be >= 1 and padding >= 0")
    for axis, size in ((2, h), (3, w)):
        span = size + 2 * padding - k
        if span < 0 or span % stride:
            raise DimensionError(
                f"conv2d: axis {axis} of size {size} gives non-integral output "
                f"with k={k}, stride={stride}, padding={padding}"
            )
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dweight = (g2.T @ cols).reshape(weight.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
        dpad = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        dx = dpad[:, :, padding:padding + h, padding:padding + w] if padding else dpad
        return np.ascontiguousarray(dx), dweight

    return make_result(np.ascontiguousarray(out), (x, weight), "conv2d", backward)


def avg_pool2d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d: expected rank-4 input, got {x.shape}")
    n, c, h, w = x.shape
    for axis, size in ((2, h), (3, w)):
        if size < window or (size - window) % stride:
            raise DimensionError(
                f"avg_pool2d: axis {axis} of size {size} not divisible for window={window}, stride={stride}"
            )
    windows = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2:4]
    area = window * window
    out = windows.sum(axis=(4, 5)) / x.data.dtype.type(area)

    def backward(g):
        share = g / g.dtype.type(area)
        dx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(window):
            for j in range(window):
                dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
        return (dx,)

    return make_result(out.astype(x.data.dtype), (x,), "avg_pool2d", backward)


def channel_affine(x: Tensor, scale_: Tensor, shift: Tensor) -> Tensor:
    """Per-channel ``x * scale + shift`` for ``x[N,C,H,W]`` (bias-style broadcast)."""
    if x.ndim != 4 or scale_.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise DimensionError(
            f"channel_affine: input {x.shape} incompatible with scale {scale_.shape} / shift {shift.shape}"
        )
    s = scale_.data.reshape(1, -1, 1, 1)
    xd = x.data
    out = xd * s + shift.data.reshape(1, -1, 1, 1)

    def backward(g):
        return g * s, (g * xd).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result(out, (x, scale_, shift), "channel_affine", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), "log_softmax", backward)
