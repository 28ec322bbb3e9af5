"""Dense float32 tensors and the arithmetic kernels models are built from.

Kernels are pure functions: inputs are never mutated and repeated calls
on the same inputs return bit-identical results within a process. A
`Tensor` freezes its backing buffer, so weight tensors can be shared
across threads without copies.

Matrix products (conv2d via im2col, linear, attention) accumulate in
32-bit floats through the platform BLAS. Elementwise transcendentals
(gelu, sigmoid, softmax, layer_norm internals) evaluate in float64 and
round once to float32, which keeps them within a few ULP of an exact
evaluation without costing determinism.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, DimensionError

__all__ = [
    "Tensor",
    "conv2d",
    "linear",
    "layer_norm",
    "activation",
    "relu",
    "gelu",
    "sigmoid",
    "softmax",
    "scaled_dot_product_attention",
]


class Tensor:
    """An n-dimensional array of 32-bit floats, row-major, rank >= 1.

    The constructor copies its input; the backing numpy array is marked
    read-only. Use `.array` for zero-copy (read-only) access and
    `.numpy()` when a mutable copy is needed.
    """

    __slots__ = ("_array",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=np.float32, order="C")
        if shape is not None:
            arr = arr.reshape(tuple(shape))
        _check_shape(arr.shape)
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal: take ownership of a freshly computed array, no copy.
        out = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        _check_shape(arr.shape)
        arr.flags.writeable = False
        out._array = arr
        return out

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        _check_shape(tuple(shape))
        return cls._wrap(np.zeros(tuple(shape), dtype=np.float32))

    @property
    def array(self) -> np.ndarray:
        """Read-only view of the underlying float32 data."""
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(e) for e in self._array.shape)

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return int(self._array.size)

    def numpy(self) -> np.ndarray:
        return self._array.copy()

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return Tensor._wrap(self._array.reshape(tuple(shape)))

    def tolist(self):
        return self._array.tolist()

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs exactly one element, tensor has {self.size}")
        return float(self._array.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _check_shape(shape: tuple[int, ...]) -> None:
    if len(shape) < 1:
        raise DimensionError("tensors must have rank >= 1")
    for axis, extent in enumerate(shape):
        if extent < 1:
            raise DimensionError(f"axis {axis} has extent {extent}, every extent must be >= 1")


def _pair(value, name: str) -> tuple[int, int]:
    if isinstance(value, int):
        value = (value, value)
    pair = tuple(int(v) for v in value)
    if len(pair) != 2:
        raise ConfigError(f"{name} must be an int or a pair, got {value!r}")
    return pair


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """2-d convolution (cross-correlation), NCHW input, OIHW weight.

    `stride` and `padding` are ints or (height, width) pairs, padding is
    symmetric zero padding. `groups` splits channels the usual way:
    input channels must divide into `groups` equal parts and the weight
    carries C/groups input channels per filter.
    """
    if x.rank != 4:
        raise DimensionError(f"conv2d input must be rank 4 (N,C,H,W), got rank {x.rank}")
    if weight.rank != 4:
        raise DimensionError(f"conv2d weight must be rank 4 (O,C/g,KH,KW), got rank {weight.rank}")
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    if sh < 1 or sw < 1:
        raise ConfigError(f"stride components must be >= 1, got {(sh, sw)}")
    if ph < 0 or pw < 0:
        raise ConfigError(f"padding components must be >= 0, got {(ph, pw)}")
    if groups < 1:
        raise ConfigError(f"groups must be >= 1, got {groups}")

    n, c, h, w = x.shape
    out_ch, c_per_group, kh, kw = weight.shape
    if c % groups != 0:
        raise DimensionError(f"input channels {c} not divisible by groups {groups}")
    if out_ch % groups != 0:
        raise DimensionError(f"output channels {out_ch} not divisible by groups {groups}")
    if c_per_group != c // groups:
        raise DimensionError(
            f"weight expects {c_per_group} input channels per group, input provides {c // groups}"
        )
    if bias is not None and bias.shape != (out_ch,):
        raise DimensionError(f"bias shape {bias.shape} does not match {out_ch} output channels")

    hp, wp = h + 2 * ph, w + 2 * pw
    if hp < kh:
        raise DimensionError(f"padded height {hp} smaller than kernel height {kh}")
    if wp < kw:
        raise DimensionError(f"padded width {wp} smaller than kernel width {kw}")
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1

    xp = x.array
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw)))

    wgt = weight.array
    if groups == c and out_ch == c:
        # Depthwise: accumulate over kernel taps with shifted slices, which
        # avoids materialising an im2col buffer per channel.
        out = np.zeros((n, c, oh, ow), dtype=np.float32)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i : i + (oh - 1) * sh + 1 : sh, j : j + (ow - 1) * sw + 1 : sw]
                out += wgt[:, 0, i, j][None, :, None, None] * patch
    else:
        out = np.empty((n, out_ch, oh, ow), dtype=np.float32)
        o_per_group = out_ch // groups
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        for g in range(groups):
            win = windows[:, g * c_per_group : (g + 1) * c_per_group]
            cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c_per_group * kh * kw)
            wg = wgt[g * o_per_group : (g + 1) * o_per_group].reshape(o_per_group, -1)
            prod = cols @ wg.T
            out[:, g * o_per_group : (g + 1) * o_per_group] = (
                prod.reshape(n, oh, ow, o_per_group).transpose(0, 3, 1, 2)
            )

    if bias is not None:
        out = out + bias.array[None, :, None, None]
    return Tensor._wrap(out)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map y = x @ weight^T + bias for x of shape (N, D_in)."""
    if x.rank != 2:
        raise DimensionError(f"linear input must be rank 2 (N, D_in), got rank {x.rank}")
    if weight.rank != 2:
        raise DimensionError(f"linear weight must be rank 2 (D_out, D_in), got rank {weight.rank}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"input feature extent {x.shape[1]} does not match weight extent {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(
            f"bias shape {bias.shape} does not match {weight.shape[0]} output features"
        )
    out = x.array @ weight.array.T
    if bias is not None:
        out = out + bias.array
    return Tensor._wrap(out)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift.

    Uses the population variance (no Bessel correction); epsilon sits
    inside the square root.
    """
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    d = x.shape[-1]
    if gamma.shape != (d,):
        raise DimensionError(f"gamma shape {gamma.shape} does not match last extent {d}")
    if beta.shape != (d,):
        raise DimensionError(f"beta shape {beta.shape} does not match last extent {d}")
    a = x.array.astype(np.float64)
    mean = a.mean(axis=-1, keepdims=True)
    centred = a - mean
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    normed = centred / np.sqrt(var + epsilon)
    out = normed * gamma.array.astype(np.float64) + beta.array.astype(np.float64)
    return Tensor._wrap(out.astype(np.float32))


def relu(x: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(x.array, np.float32(0.0)))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    a = x.array.astype(np.float64)
    out = 0.5 * a * (1.0 + erf(a / np.sqrt(2.0)))
    return Tensor._wrap(out.astype(np.float32))


def _sigmoid64(a: np.ndarray) -> np.ndarray:
    # Overflow-safe: exp is only ever taken of a non-positive argument.
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    return Tensor._wrap(_sigmoid64(x.array.astype(np.float64)).astype(np.float32))


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    """Apply a named elementwise activation: relu, gelu, or sigmoid."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}, expected one of {sorted(_ACTIVATIONS)}")
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis (max subtraction)."""
    if not -x.rank <= axis < x.rank:
        raise DimensionError(f"axis {axis} out of range for rank {x.rank}")
    a = x.array.astype(np.float64)
    a = a - a.max(axis=axis, keepdims=True)
    e = np.exp(a)
    out = e / e.sum(axis=axis, keepdims=True)
    return Tensor._wrap(out.astype(np.float32))


def scaled_dot_product_attention(
    q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None
) -> Tensor:
    """softmax(q k^T / sqrt(d_k) + bias) v over (heads, length, depth) inputs.

    `bias` broadcasts nothing: it must be exactly (heads, length, length)
    when given. Output shape is (heads, length, depth_v).
    """
    for name, t in (("q", q), ("k", k), ("v", v)):
        if t.rank != 3:
            raise DimensionError(f"{name} must be rank 3 (heads, length, depth), got rank {t.rank}")
    heads, length, d_k = q.shape
    if k.shape != (heads, length, d_k):
        raise DimensionError(f"k shape {k.shape} does not match q shape {q.shape}")
    if v.shape[:2] != (heads, length):
        raise DimensionError(f"v shape {v.shape} does not match (heads, length) {(heads, length)}")
    if bias is not None and bias.shape != (heads, length, length):
        raise DimensionError(
            f"bias shape {bias.shape} must be {(heads, length, length)}"
        )
    scale = np.float32(1.0 / np.sqrt(d_k))
    scores = q.array @ k.array.transpose(0, 2, 1) * scale
    if bias is not None:
        scores = scores + bias.array
    weights = softmax(Tensor._wrap(scores), axis=-1)
    return Tensor._wrap(weights.array @ v.array)
