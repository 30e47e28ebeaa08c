"""Dense NCHW float32 kernels for the ResNet-50 forward pass.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 and rank 4
(n, c, h, w).  Every op validates its inputs and returns a fresh array; no
op mutates its arguments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import GeometryError, ShapeError

DTYPE = np.float32


@dataclass(frozen=True)
class ConvParams:
    kernel: np.ndarray  # (c_out, c_in, kh, kw)
    stride: int = 1
    padding: int = 0
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be 4-D, got shape {self.kernel.shape}")
        if self.stride < 1:
            raise GeometryError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise GeometryError(f"padding must be non-negative, got {self.padding}")
        if self.bias is not None and self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match c_out={self.kernel.shape[0]}"
            )


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ShapeError(f"batchnorm {name} shape {getattr(self, name).shape} != gamma shape {c}")
        if self.epsilon <= 0:
            raise ValueError("batchnorm epsilon must be positive")
        if np.any(self.running_var < 0):
            raise ValueError("batchnorm running_var has negative entries")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a contiguous float32 NCHW array."""
    t = np.ascontiguousarray(x, dtype=DTYPE)
    if t.ndim != 4:
        raise ShapeError(f"expected a 4-D NCHW tensor, got shape {t.shape}")
    return t


def output_size(size: int, k: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - k) // stride + 1
    if out < 1 or size + 2 * padding < k:
        raise GeometryError(
            f"window {k} with stride {stride} and padding {padding} does not fit input size {size}"
        )
    return out


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (n, c, oh, ow, kh, kw) strided view, no copy
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return v[:, :, ::stride, ::stride]


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold ``x`` into columns of shape (n, c*kh*kw, oh*ow).

    Rows are ordered c-major, then kh, then kw, matching a flattened
    (c_out, c_in, kh, kw) kernel.
    """
    n, c, h, w = x.shape
    oh = output_size(h, kh, stride, padding)
    ow = output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(x, kh, kw, stride)[:, :, :oh, :ow]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return cols


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """2-D cross-correlation with symmetric zero padding."""
    x = as_tensor(x)
    k = params.kernel
    c_out, c_in, kh, kw = k.shape
    n, c, h, w = x.shape
    if c != c_in:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {c_in}")
    oh = output_size(h, kh, params.stride, params.padding)
    ow = output_size(w, kw, params.stride, params.padding)
    wmat = np.ascontiguousarray(k, dtype=DTYPE).reshape(c_out, c_in * kh * kw)

    if kh == 1 and kw == 1 and params.padding == 0:
        src = x[:, :, :: params.stride, :: params.stride] if params.stride > 1 else x
        cols = np.ascontiguousarray(src).reshape(n, c, oh * ow)
    else:
        cols = im2col(x, kh, kw, params.stride, params.padding)

    out = np.empty((n, c_out, oh * ow), dtype=DTYPE)
    for i in range(n):
        np.matmul(wmat, cols[i], out=out[i])
    out = out.reshape(n, c_out, oh, ow)
    if params.bias is not None:
        out += params.bias.astype(DTYPE).reshape(1, c_out, 1, 1)
    return out


def batchnorm_infer(x: np.ndarray, params: BatchNormParams) -> np.ndarray:
    x = as_tensor(x)
    if params.channels != x.shape[1]:
        raise ShapeError(
            f"batchnorm: params cover {params.channels} channels, input has {x.shape[1]}"
        )
    inv = (params.gamma.astype(np.float64) / np.sqrt(params.running_var.astype(np.float64) + params.epsilon))
    scale = inv.astype(DTYPE).reshape(1, -1, 1, 1)
    shift = (params.beta.astype(np.float64) - params.running_mean.astype(np.float64) * inv)
    shift = shift.astype(DTYPE).reshape(1, -1, 1, 1)
    return x * scale + shift


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), DTYPE(0))


def maxpool2d(x: np.ndarray, kernel: Tuple[int, int], stride: int, padding: int = 0) -> np.ndarray:
    """Max pooling; padded cells hold -inf so they never win."""
    x = as_tensor(x)
    kh, kw = kernel
    n, c, h, w = x.shape
    if padding * 2 > min(kh, kw):
        raise GeometryError(f"maxpool padding {padding} too large for kernel {kernel}")
    oh = output_size(h, kh, stride, padding)
    ow = output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=-np.inf)
    win = _windows(x, kh, kw, stride)[:, :, :oh, :ow]
    return np.ascontiguousarray(win.max(axis=(4, 5)))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise GeometryError("global_avg_pool needs non-empty spatial dims")
    s = x.reshape(n, c, h * w).sum(axis=2, dtype=np.float64) / (h * w)
    return s.astype(DTYPE).reshape(n, c, 1, 1)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ weights + bias`` for an (n, d) input."""
    x = np.asarray(x)
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weights, got {x.shape} and {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input dim {x.shape[1]} != weight rows {weights.shape[0]}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias
