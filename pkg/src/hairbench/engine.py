"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: it supports exactly the operations the
hair-removal network and its reconstruction loss need (3x3 convolutions,
stride-2 transposed convolutions, channel concatenation, 2x2 max pooling,
separable window filtering and elementwise arithmetic).  Everything is
backed by numpy with a fixed summation order, so repeated runs with the
same inputs produce bit-identical results on the same platform.

A ``Tensor`` doubles as a node of the computation graph: it records the
op tag that produced it, references to its input nodes, and (after
``backward``) a gradient accumulator of the same shape as its value.
Every operation verifies that its output is finite; NaN or Inf is an
engine fault, never a value.

Graphs are single-writer: build and differentiate a graph from one
thread.  Sharing read-only parameter arrays across threads is fine.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractViolation, EngineFault, TrainingFault

__all__ = [
    "Tensor",
    "conv2d",
    "deconv2d",
    "concat_channels",
    "maxpool2d",
    "separable_filter2d",
    "backward",
    "AdamState",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
    "set_precision",
    "precision",
]

# Active storage dtype.  float64 is the default and is mandatory for
# gradient checks; float32 is permitted for training.  Reductions always
# accumulate in 64 bits regardless of the active mode.
_DTYPE = np.float64


def set_precision(mode: str) -> None:
    global _DTYPE
    if mode not in ("float32", "float64"):
        raise ContractViolation(f"precision must be 'float32' or 'float64', got {mode!r}")
    _DTYPE = np.float32 if mode == "float32" else np.float64


@contextmanager
def precision(mode: str):
    previous = "float32" if _DTYPE == np.float32 else "float64"
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(previous)


def active_dtype() -> np.dtype:
    return np.dtype(_DTYPE)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise EngineFault(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense N-d float64 array plus its place in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _op: str = "leaf", _parents: tuple["Tensor", ...] = ()):
        arr = np.asarray(data, dtype=_DTYPE)
        _check_finite(arr, _op)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = _op
        self.name = name
        self._parents = _parents
        self._backward = None  # callable(grad: ndarray) -> None, set by ops

    # ---- basic introspection -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{tag})"

    # ---- graph construction helpers ------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], op: str) -> "Tensor":
        rg = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=rg, _op=op, _parents=parents if rg else ())

    def _accum(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=_DTYPE)
        else:
            self.grad += grad

    # ---- elementwise arithmetic -----------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=_DTYPE))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data + other.data, (self, other), "add")

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor._result(-self.data, (self,), "neg")

        def back(g):
            if self.requires_grad:
                self._accum(-g)

        out._backward = back
        return out

    def __sub__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data - other.data, (self, other), "sub")

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g, other.shape))

        out._backward = back
        return out

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data * other.data, (self, other), "mul")

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor._result(self.data / other.data, (self, other), "div")

        def back(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / (other.data * other.data),
                                          other.shape))

        out._backward = back
        return out

    def abs(self):
        out = Tensor._result(np.abs(self.data), (self,), "abs")

        def back(g):
            if self.requires_grad:
                self._accum(g * np.sign(self.data))

        out._backward = back
        return out

    def relu(self):
        out = Tensor._result(np.maximum(self.data, 0.0), (self,), "relu")

        def back(g):
            if self.requires_grad:
                self._accum(g * (self.data > 0.0))

        out._backward = back
        return out

    def clamp(self, lo: float, hi: float):
        out = Tensor._result(np.clip(self.data, lo, hi), (self,), "clamp")

        def back(g):
            if self.requires_grad:
                inside = (self.data >= lo) & (self.data <= hi)
                self._accum(g * inside)

        out._backward = back
        return out

    # ---- reductions ------------------------------------------------------

    def sum(self):
        # 64-bit accumulation even in float32 mode
        out = Tensor._result(np.asarray(self.data.sum(dtype=np.float64)), (self,), "sum")

        def back(g):
            if self.requires_grad:
                self._accum(np.broadcast_to(g, self.shape).copy())

        out._backward = back
        return out

    def mean(self):
        n = self.data.size
        out = Tensor._result(np.asarray(self.data.mean(dtype=np.float64)), (self,), "mean")

        def back(g):
            if self.requires_grad:
                self._accum(np.broadcast_to(g / n, self.shape).copy())

        out._backward = back
        return out

    # ---- slicing ----------------------------------------------------------

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if not all(isinstance(s, slice) for s in idx):
            raise ContractViolation("tensor slicing supports slices only")
        out = Tensor._result(self.data[idx].copy(), (self,), "slice")

        def back(g):
            if self.requires_grad:
                buf = np.zeros_like(self.data)
                buf[idx] = g
                self._accum(buf)

        out._backward = back
        return out

    # ---- backward ----------------------------------------------------------

    def backward(self) -> None:
        backward(self)


# ---------------------------------------------------------------------------
# convolution core (shared by conv2d / deconv2d and their gradients)
# ---------------------------------------------------------------------------


def _out_hw(h: int, w: int, stride: int) -> tuple[int, int]:
    # 3x3 kernel, padding 1
    return (h + 2 - 3) // stride + 1, (w + 2 - 3) // stride + 1


def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    """[B,C,H,W] -> [B, C*9, Ho*Wo] patch matrix for a padded 3x3 window."""
    b, c, h, w = x.shape
    ho, wo = _out_hw(h, w, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((b, c, 3, 3, ho, wo), dtype=_DTYPE)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(b, c * 9, ho * wo)


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch columns back to image layout."""
    b, c, h, w = x_shape
    ho, wo = _out_hw(h, w, stride)
    cols6 = cols.reshape(b, c, 3, 3, ho, wo)
    xp = np.zeros((b, c, h + 2, w + 2), dtype=_DTYPE)
    for i in range(3):
        for j in range(3):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols6[:, :, i, j]
    return xp[:, :, 1:1 + h, 1:1 + w]


def _conv_forward(x: np.ndarray, k: np.ndarray, stride: int,
                  cols: np.ndarray | None = None) -> np.ndarray:
    b, c, h, w = x.shape
    f = k.shape[0]
    ho, wo = _out_hw(h, w, stride)
    if cols is None:
        cols = _im2col(x, stride)
    out = np.matmul(k.reshape(f, c * 9), cols)
    return out.reshape(b, f, ho, wo)


def _conv_input_grad(dy: np.ndarray, k: np.ndarray, stride: int,
                     x_shape: tuple[int, ...]) -> np.ndarray:
    b, f = dy.shape[:2]
    c = k.shape[1]
    cols = np.matmul(k.reshape(f, c * 9).T, dy.reshape(b, f, -1))
    return _col2im(cols, x_shape, stride)


def _conv_kernel_grad(dy: np.ndarray, x: np.ndarray, stride: int,
                      cols: np.ndarray | None = None) -> np.ndarray:
    b, f = dy.shape[:2]
    c = x.shape[1]
    if cols is None:
        cols = _im2col(x, stride)  # [B, C*9, Ho*Wo]
    dk = np.matmul(dy.reshape(b, f, -1), cols.transpose(0, 2, 1)).sum(axis=0)
    return dk.reshape(f, c, 3, 3)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlate `x` [B,C,H,W] with a 3x3 `kernel` [F,C,3,3].

    Padding is fixed at 1, so stride 1 preserves HxW and stride 2 halves
    even spatial dims.  Bias has shape [F].
    """
    if stride not in (1, 2):
        raise ContractViolation(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4:
        raise ContractViolation(f"conv2d: input must be 4-d, got shape {x.shape}")
    if kernel.data.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ContractViolation(f"conv2d: kernel must be [F,C,3,3], got {kernel.shape}")
    b, c, h, w = x.shape
    f, ck = kernel.shape[:2]
    if ck != c:
        raise ContractViolation(f"conv2d: kernel channels {ck} != input channels {c}")
    if bias.shape != (f,):
        raise ContractViolation(f"conv2d: bias shape {bias.shape} != ({f},)")
    if h % stride or w % stride:
        raise ContractViolation(f"conv2d: spatial dims {h}x{w} not divisible by stride {stride}")

    cols = _im2col(x.data, stride)
    y = _conv_forward(x.data, kernel.data, stride, cols=cols)
    y += bias.data.reshape(1, f, 1, 1)
    out = Tensor._result(y, (x, kernel, bias), "conv2d")
    # forward patch matrix is reused once by the kernel gradient, then freed
    cache = [cols] if kernel.requires_grad else []

    def back(g):
        if x.requires_grad:
            x._accum(_conv_input_grad(g, kernel.data, stride, x.shape))
        if kernel.requires_grad:
            kernel._accum(_conv_kernel_grad(g, x.data, stride,
                                            cols=cache.pop() if cache else None))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))

    out._backward = back
    return out


def deconv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Transposed 3x3 convolution with stride 2: [B,C,H,W] -> [B,F,2H,2W].

    Kernel layout is [C,F,3,3] (input channels first).  The map is the
    exact adjoint of ``conv2d(stride=2)``: for a shared kernel k with
    conv layout [F,C,3,3], <conv2d(x,k,0,2), y> == <x, deconv2d(y,k,0)>.
    """
    if x.data.ndim != 4:
        raise ContractViolation(f"deconv2d: input must be 4-d, got shape {x.shape}")
    if kernel.data.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ContractViolation(f"deconv2d: kernel must be [C,F,3,3], got {kernel.shape}")
    b, c, h, w = x.shape
    ck, f = kernel.shape[:2]
    if ck != c:
        raise ContractViolation(f"deconv2d: kernel channels {ck} != input channels {c}")
    if bias.shape != (f,):
        raise ContractViolation(f"deconv2d: bias shape {bias.shape} != ({f},)")

    out_shape = (b, f, 2 * h, 2 * w)
    y = _conv_input_grad(x.data, kernel.data, 2, out_shape)
    y += bias.data.reshape(1, f, 1, 1)
    out = Tensor._result(y, (x, kernel, bias), "deconv2d")

    def back(g):
        if x.requires_grad:
            x._accum(_conv_forward(g, kernel.data, 2))
        if kernel.requires_grad:
            kernel._accum(_conv_kernel_grad(x.data, g, 2))
        if bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))

    out._backward = back
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis: [B,C1,H,W] + [B,C2,H,W]."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ContractViolation("concat_channels: inputs must be 4-d")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ContractViolation(
            f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    c1 = a.shape[1]
    out = Tensor._result(np.concatenate([a.data, b.data], axis=1), (a, b), "concat")

    def back(g):
        if a.requires_grad:
            a._accum(g[:, :c1])
        if b.requires_grad:
            b._accum(g[:, c1:])

    out._backward = back
    return out


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first position."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractViolation(f"maxpool2d: spatial dims {h}x{w} must be even")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = Tensor._result(out_data, (x,), "maxpool2d")

    def back(g):
        if x.requires_grad:
            buf = np.zeros((b, c, h // 2, w // 2, 4), dtype=_DTYPE)
            np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
            buf = buf.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            x._accum(buf.reshape(b, c, h, w))

    out._backward = back
    return out


def _corr1d_valid(x: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, taps.size, axis=axis)
    return view @ taps


def separable_filter2d(x: Tensor, taps: np.ndarray) -> Tensor:
    """Valid-mode separable correlation of [B,C,H,W] with a 1-d tap vector
    applied along both spatial axes.  Channels are filtered independently."""
    taps = np.asarray(taps, dtype=_DTYPE)
    k = taps.size
    b, c, h, w = x.shape
    if h < k or w < k:
        raise ContractViolation(
            f"separable_filter2d: image {h}x{w} smaller than window {k}")
    y = _corr1d_valid(_corr1d_valid(x.data, taps, 2), taps, 3)
    out = Tensor._result(y, (x,), "sepfilter")
    rev = taps[::-1].copy()

    def back(g):
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            x._accum(_corr1d_valid(_corr1d_valid(gp, rev, 2), rev, 3))

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# reverse-mode sweep
# ---------------------------------------------------------------------------


def backward(root: Tensor) -> None:
    """Run the reverse sweep from a scalar `root`, filling ``grad`` on every
    node that requires gradients (leaf parameters included)."""
    if root.size != 1:
        raise ContractViolation(f"backward: root must be scalar, has shape {root.shape}")

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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node.grad is not None:
            _check_finite(node.grad, f"backward:{node.op}")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment estimates, one slot per named parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float):
    """One Adam update with bias correction, applied in place.

    Returns ``(params, state)``; the parameter arrays are mutated.  A NaN
    gradient is a training fault and is reported with the parameter name.
    """
    if lr <= 0:
        raise ContractViolation(f"adam_step: lr must be positive, got {lr}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=_DTYPE)
        if g.shape != p.shape:
            raise ContractViolation(
                f"adam_step: grad shape {g.shape} != param shape {p.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise TrainingFault(f"NaN/Inf gradient for parameter '{name}'")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

_MAGIC = b"HBCKPT1"


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    """Write named parameters: magic "HBCKPT1", then a length-prefixed list
    of (name, shape, raw little-endian float32) records."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as float64 arrays, in stored order."""
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ContractViolation(f"{path}: not a HBCKPT1 checkpoint")
        (count,) = struct.unpack("<I", f.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").astype(_DTYPE)
            params[name] = data.reshape(shape)
    return params
