"""Dense NCHW tensor kernels with reverse-mode automatic differentiation.

Design notes
------------
* Arrays are plain numpy, float32 for runtime and float64 for verification.
  Mixing the two in one expression raises :class:`PrecisionError`; promotion
  is never implicit.
* Every differentiable op records a backward closure on its output. Calling
  :meth:`Tensor.backward` on a scalar walks the graph once in reverse
  topological order and accumulates gradients into ``.grad``.
* Kernels are deterministic: no internal parallelism beyond what numpy's
  BLAS does, and repeated evaluation of the same graph on the same data
  yields identical bytes.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import PrecisionError, ShapeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values unchanged)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus an optional autograd tape node.

    ``requires_grad`` marks leaves that should accumulate into ``.grad``.
    Non-leaf tensors produced from tracked inputs carry a backward closure;
    their ``.grad`` is transient storage used during :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        if dtype is not None:
            dtype = np.dtype(dtype)
            if dtype not in SUPPORTED_DTYPES:
                raise PrecisionError(f"unsupported dtype {dtype}; use float32 or float64")
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if arr.dtype not in SUPPORTED_DTYPES:
                arr = arr.astype(np.float32)
        if any(d == 0 for d in arr.shape):
            raise ShapeError(f"zero-size dimension in shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's data, cut from the graph."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- graph machinery -----------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``.grad``.

        Only defined for scalar outputs (a loss)."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that is not part of a tracked graph")
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def abs(self):
        return absolute(self)

    __abs__ = abs

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)


# -- helpers -------------------------------------------------------------------


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_tensor(x, name: str) -> Tensor:
    if not isinstance(x, Tensor):
        raise TypeError(f"{name} must be a Tensor, got {type(x).__name__}")
    return x


def _check_same_dtype(*tensors: Tensor) -> np.dtype:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise PrecisionError(
                f"mixed precision operands: {dt} vs {t.data.dtype}; cast explicitly"
            )
    return dt


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


# -- elementwise ops -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor(a, "a"), _check_tensor(b, "b")
    _check_same_dtype(a, b)
    _broadcast_shape(a, b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor(a, "a"), _check_tensor(b, "b")
    _check_same_dtype(a, b)
    _broadcast_shape(a, b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _result(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with numpy broadcasting."""
    _check_tensor(a, "a"), _check_tensor(b, "b")
    _check_same_dtype(a, b)
    _broadcast_shape(a, b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(out_data, (a, b), backward)


def scale(x: Tensor, s) -> Tensor:
    """Multiply by a python scalar; the tensor dtype is preserved."""
    _check_tensor(x, "x")
    if isinstance(s, Tensor):
        raise TypeError("scale() takes a python number; use mul() for tensors")
    s = float(s)
    out_data = x.data * x.data.dtype.type(s)

    def backward(g):
        _accumulate(x, g * x.data.dtype.type(s))

    return _result(out_data, (x,), backward)


def absolute(x: Tensor) -> Tensor:
    _check_tensor(x, "x")
    out_data = np.abs(x.data)

    def backward(g):
        _accumulate(x, g * np.sign(x.data))

    return _result(out_data, (x,), backward)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    with np.errstate(over="ignore"):
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # extreme inputs round to exactly 0.0/1.0; pin the result inside the
    # open interval so downstream logs and strict comparisons stay safe
    info = np.finfo(out.dtype)
    return np.clip(out, info.tiny, 1.0 - info.epsneg, out=out)


def sigmoid(x: Tensor) -> Tensor:
    _check_tensor(x, "x")
    s = _stable_sigmoid(x.data)

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    return _result(s, (x,), backward)


def relu(x: Tensor) -> Tensor:
    _check_tensor(x, "x")
    out_data = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _result(out_data, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    _check_tensor(x, "x")
    z = x.data
    inner = _GELU_C * (z + _GELU_A * z**3)
    t = np.tanh(inner)
    out_data = 0.5 * z * (1.0 + t)
    out_data = out_data.astype(z.dtype, copy=False)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * z**2)
        local = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * dinner
        _accumulate(x, (g * local).astype(z.dtype, copy=False))

    return _result(out_data, (x,), backward)


# -- reductions ------------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(a % ndim for a in axis)
    if len(set(axes)) != len(axes):
        raise ShapeError(f"duplicate axes in {axis}")
    return axes


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool):
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_tensor(x, "x")
    axes = _normalize_axes(axis, x.ndim)
    out_data = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        _accumulate(x, _expand_reduced(g, x.shape, axes, keepdims).astype(x.data.dtype, copy=False))

    return _result(np.asarray(out_data), (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_tensor(x, "x")
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out_data = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        expanded = _expand_reduced(g, x.shape, axes, keepdims) / x.data.dtype.type(count)
        _accumulate(x, expanded.astype(x.data.dtype, copy=False))

    return _result(np.asarray(out_data), (x,), backward)


# -- shape ops -------------------------------------------------------------------


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    _check_tensor(x, "x")
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out_data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(out_data, (x,), backward)


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    _check_tensor(x, "x")
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"axes {axes} are not a permutation of 0..{x.ndim - 1}")
    out_data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(x, np.transpose(g, inverse))

    return _result(out_data, (x,), backward)


def transpose_last2(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return permute(x, axes)


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the two trailing axes symmetrically by ``pad``."""
    _check_tensor(x, "x")
    if pad < 0:
        raise ShapeError("pad must be non-negative")
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out_data = np.pad(x.data, width)

    def backward(g):
        sl = (Ellipsis, slice(pad, pad + x.shape[-2]), slice(pad, pad + x.shape[-1]))
        _accumulate(x, g[sl])

    return _result(out_data, (x,), backward)


def crop2d(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Slice a window out of the two trailing axes."""
    _check_tensor(x, "x")
    if top < 0 or left < 0 or height < 1 or width < 1:
        raise ShapeError("crop window must be positive and inside the tensor")
    if top + height > x.shape[-2] or left + width > x.shape[-1]:
        raise ShapeError(
            f"crop ({top},{left},{height},{width}) exceeds trailing dims {x.shape[-2:]}"
        )
    sl = (Ellipsis, slice(top, top + height), slice(left, left + width))
    out_data = x.data[sl].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        _accumulate(x, full)

    return _result(out_data, (x,), backward)


# -- matmul ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the two trailing axes."""
    _check_tensor(a, "a"), _check_tensor(b, "b")
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _result(out_data, (a, b), backward)


# -- convolutions ----------------------------------------------------------------


def _conv_checks(x: Tensor, weight: Tensor, bias, stride: int, padding: int, depthwise: bool):
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv expects 4D input/weight, got {x.shape} and {weight.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if padding < 0:
        raise ShapeError("padding must be >= 0")
    tensors = [x, weight] + ([bias] if bias is not None else [])
    _check_same_dtype(*tensors)
    n, c, h, w = x.shape
    if depthwise:
        if weight.shape[0] != c or weight.shape[1] != 1:
            raise ShapeError(
                f"depthwise weight must be ({c},1,k,k) for {c}-channel input, got {weight.shape}"
            )
    else:
        if weight.shape[1] != c:
            raise ShapeError(
                f"weight expects {weight.shape[1]} input channels, tensor has {c}"
            )
    k = weight.shape[2]
    if weight.shape[3] != k:
        raise ShapeError(f"only square kernels supported, got {weight.shape}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"kernel {k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
    return k


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation, weight layout (C_out, C_in, k, k)."""
    k = _conv_checks(x, weight, bias, stride, padding, depthwise=False)
    n, c, h, w = x.shape
    c_out = weight.shape[0]
    xp = np.pad(x.data, [(0, 0), (0, 0), (padding, padding), (padding, padding)]) \
        if padding else x.data
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    win = _windows(xp, k, stride)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h_out * w_out, c * k * k)
    w2 = weight.data.reshape(c_out, c * k * k)
    out2 = cols @ w2.T
    out_data = out2.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h_out * w_out, c_out)
        if weight.requires_grad:
            _accumulate(weight, (g2.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, h_out, w_out, c, k, k)
            hp, wp = xp.shape[2], xp.shape[3]
            dxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + h_out * stride:stride, j:j + w_out * stride:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            _accumulate(x, dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out_data, parents, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel 2D cross-correlation, weight layout (C, 1, k, k)."""
    k = _conv_checks(x, weight, bias, stride, padding, depthwise=True)
    n, c, h, w = x.shape
    xp = np.pad(x.data, [(0, 0), (0, 0), (padding, padding), (padding, padding)]) \
        if padding else x.data
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    win = _windows(xp, k, stride)
    wk = weight.data[:, 0]
    out_data = np.einsum("nchwij,cij->nchw", win, wk, optimize=True)
    out_data = np.ascontiguousarray(out_data)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    def backward(g):
        if weight.requires_grad:
            dw = np.einsum("nchw,nchwij->cij", g, win, optimize=True)
            _accumulate(weight, dw[:, None])
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            hp, wp = xp.shape[2], xp.shape[3]
            dxp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + h_out * stride:stride, j:j + w_out * stride:stride] += \
                        g * wk[None, :, i, j, None, None]
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            _accumulate(x, dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out_data, parents, backward)


# -- bilinear upsampling -----------------------------------------------------------


_INTERP_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def _interp_matrix(n_in: int, factor: int, dtype: np.dtype) -> np.ndarray:
    """Row-interpolation matrix U with out = U @ in, half-pixel centres,
    edge-clamped."""
    key = (n_in, factor, dtype.str)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    n_out = n_in * factor
    u = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        pos = (o + 0.5) / factor - 0.5
        pos = min(max(pos, 0.0), n_in - 1.0)
        i0 = int(math.floor(pos))
        frac = pos - i0
        i1 = min(i0 + 1, n_in - 1)
        u[o, i0] += 1.0 - frac
        u[o, i1] += frac
    u = u.astype(dtype)
    _INTERP_CACHE[key] = u
    return u


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Scale the two trailing axes by an integer factor, bilinear with
    half-pixel sample centres and edge clamping. factor 1 is the identity."""
    _check_tensor(x, "x")
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample expects NCHW, got {x.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ShapeError(f"factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return x
    h, w = x.shape[2], x.shape[3]
    uh = _interp_matrix(h, factor, x.data.dtype)
    uw = _interp_matrix(w, factor, x.data.dtype)
    out_data = np.matmul(np.matmul(uh, x.data), uw.T)

    def backward(g):
        _accumulate(x, np.matmul(np.matmul(uh.T, g), uw))

    return _result(out_data, (x,), backward)


# -- batch normalisation -------------------------------------------------------------


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation over (N, H, W).

    Training mode normalises by batch statistics (biased variance) and folds
    them into the running arrays in place: ``running = (1-m)*running +
    m*batch``. Eval mode normalises by the running statistics. The running
    arrays are state, not graph nodes.
    """
    _check_tensor(x, "x"), _check_tensor(gamma, "gamma"), _check_tensor(beta, "beta")
    _check_same_dtype(x, gamma, beta)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if n * h * w == 0:
        raise ShapeError("zero-size batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"running stats must have shape ({c},)")

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
        running_var *= (1.0 - momentum)
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var

    ivar = 1.0 / np.sqrt(var + eps)
    xc = x.data - mu[None, :, None, None]
    xhat = xc * ivar[None, :, None, None]
    out_data = (xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]) \
        .astype(x.data.dtype, copy=False)

    m = n * h * w

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                ivar_b = ivar[None, :, None, None]
                dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * ivar**3
                dmu = -(dxhat.sum(axis=(0, 2, 3))) * ivar \
                    + dvar * (-2.0 / m) * xc.sum(axis=(0, 2, 3))
                dx = dxhat * ivar_b \
                    + dvar[None, :, None, None] * 2.0 * xc / m \
                    + dmu[None, :, None, None] / m
            else:
                dx = dxhat * ivar[None, :, None, None]
            _accumulate(x, dx.astype(x.data.dtype, copy=False))

    return _result(out_data, (x, gamma, beta), backward)


# -- windowing ------------------------------------------------------------------------


def window_partition(x: Tensor, size: int, stride: int) -> Tensor:
    """Gather sliding windows from an NCHW map.

    Returns (N, n_windows, C, size, size) with windows ordered row-major by
    their top-left corner. Requires (H - size) and (W - size) divisible by
    ``stride``. Overlapping windows accumulate gradient additively.
    """
    _check_tensor(x, "x")
    if x.ndim != 4:
        raise ShapeError(f"window_partition expects NCHW, got {x.shape}")
    if size < 1 or stride < 1:
        raise ShapeError("size and stride must be >= 1")
    n, c, h, w = x.shape
    if h < size or w < size:
        raise ShapeError(f"window {size} exceeds map {h}x{w}")
    if (h - size) % stride or (w - size) % stride:
        raise ShapeError(
            f"windows of size {size} stride {stride} do not tile a {h}x{w} map")
    nh = (h - size) // stride + 1
    nw = (w - size) // stride + 1
    win = _windows(x.data, size, stride)  # N,C,nh,nw,size,size
    out_data = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, nh * nw, c, size, size)

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        for a in range(nh):
            for b in range(nw):
                dx[:, :, a * stride:a * stride + size, b * stride:b * stride + size] += \
                    g[:, a * nw + b]
        _accumulate(x, dx)

    return _result(out_data, (x,), backward)


# -- losses ---------------------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets: Tensor, reduction: str = "mean") -> Tensor:
    """Numerically stable binary cross-entropy on raw logits.

    Per element: max(z,0) - z*y + log(1 + exp(-|z|)). Targets are treated as
    constants; the gradient w.r.t. the logits is sigmoid(z) - y (scaled by
    1/size under mean reduction).
    """
    _check_tensor(logits, "logits"), _check_tensor(targets, "targets")
    _check_same_dtype(logits, targets)
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.requires_grad:
        raise ValueError("bce_with_logits does not differentiate through targets")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    z, y = logits.data, targets.data
    per_elem = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out_data = per_elem.sum() if reduction == "sum" else per_elem.mean()
    out_data = np.asarray(out_data, dtype=z.dtype)
    scale_f = 1.0 if reduction == "sum" else 1.0 / z.size

    def backward(g):
        if logits.requires_grad:
            local = (_stable_sigmoid(z) - y) * z.dtype.type(scale_f)
            _accumulate(logits, g * local)

    return _result(out_data, (logits,), backward)
