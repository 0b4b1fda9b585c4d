"""Dense tensor primitives: convolution, pooling, dense products and clipped ReLU.

All operations are pure functions on numpy arrays with (batch, channel,
height, width) layout for spatial data.  Every forward/adjoint pair here
satisfies the inner-product adjoint identity exactly (up to float rounding),
which is what the energy-gradient machinery built on top relies on.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(ArithmeticError):
    """A tensor contains NaN or Inf where only finite values are allowed."""


def ensure_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


@dataclass(frozen=True)
class ConvKernel:
    """Convolution weights of shape (out_channels, in_channels, kH, kW).

    Stride is fixed at 1; spatial downsampling is done by pooling.  Only
    3x3 (padding 1) and 1x1 (padding 0) kernels are supported.
    """

    weights: np.ndarray
    padding: int

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ValueError(f"kernel must be 4-d, got shape {self.weights.shape}")
        kh, kw = self.weights.shape[2:]
        if kh != kw or kh not in (1, 3):
            raise ValueError(f"kernel spatial size must be 1x1 or 3x3, got {kh}x{kw}")
        if self.padding != (kh - 1) // 2:
            raise ValueError(f"padding {self.padding} does not preserve size for {kh}x{kw}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]


@dataclass(frozen=True)
class PoolIndices:
    """Argmax positions of a 2x2 max-pool pass, flat index 0..3 per window
    in row-major window order."""

    indices: np.ndarray


def _windows(x, k, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # (N, C, H, W, k, k) view over the padded array
    return sliding_window_view(x, (k, k), axis=(2, 3))


def _im2col(x, k, pad):
    win = _windows(x, k, pad)
    n, c, h, w = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
    return cols, (n, h, w)


def conv2d(kernel, x):
    """Cross-correlation of x (N, C_in, H, W) with the kernel, stride 1,
    size-preserving zero padding.  Returns (N, C_out, H, W)."""
    w = kernel.weights
    if x.ndim != 4 or x.shape[1] != kernel.in_channels:
        raise ValueError(
            f"input shape {x.shape} incompatible with kernel {w.shape}"
        )
    k = w.shape[2]
    cols, (n, h, wid) = _im2col(x, k, kernel.padding)
    out = cols @ w.reshape(w.shape[0], -1).T
    return out.reshape(n, h, wid, w.shape[0]).transpose(0, 3, 1, 2)


def flip_kernel(kernel):
    """Spatially flipped kernel with in/out channels swapped; conv2d with it
    is the exact adjoint of conv2d with the original."""
    w = kernel.weights
    wt = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return ConvKernel(wt, kernel.padding)


def conv2d_transpose(kernel, y):
    """Exact adjoint of conv2d: maps (N, C_out, H, W) back to (N, C_in, H, W)
    so that dot(conv2d(w, a), b) == dot(a, conv2d_transpose(w, b))."""
    if y.ndim != 4 or y.shape[1] != kernel.out_channels:
        raise ValueError(
            f"input shape {y.shape} incompatible with kernel {kernel.weights.shape}"
        )
    return conv2d(flip_kernel(kernel), y)


def conv2d_weight_grad(kernel, x, u):
    """Gradient of dot(u, conv2d(w, x)) with respect to the kernel weights."""
    w = kernel.weights
    k = w.shape[2]
    cols, (n, h, wid) = _im2col(x, k, kernel.padding)
    u2 = u.transpose(0, 2, 3, 1).reshape(n * h * wid, w.shape[0])
    return (u2.T @ cols).reshape(w.shape)


def maxpool2(x):
    """2x2 max pooling with stride 2.  Returns the pooled tensor and the
    argmax indices; ties break to the first position in row-major window
    order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"spatial dims must be even for 2x2 pooling, got {h}x{w}")
    xv = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = xv.argmax(axis=-1)
    out = np.take_along_axis(xv, idx[..., None], axis=-1)[..., 0]
    return out, PoolIndices(idx.astype(np.int64))


def maxpool2_at(x, indices):
    """Gather x at fixed pooling positions (the linear map whose adjoint is
    inverse_maxpool2)."""
    n, c, h, w = x.shape
    xv = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    return np.take_along_axis(xv, indices.indices[..., None], axis=-1)[..., 0]


def inverse_maxpool2(y, indices):
    """Scatter pooled values back to their argmax positions, zero elsewhere.
    Exact adjoint of maxpool2_at with the same indices."""
    idx = indices.indices
    if y.shape != idx.shape:
        raise ValueError(f"pooled shape {y.shape} does not match indices {idx.shape}")
    if idx.min() < 0 or idx.max() > 3:
        raise ValueError("pool index outside 2x2 window")
    n, c, h, w = y.shape
    buf = np.zeros((n, c, h, w, 4), dtype=y.dtype)
    np.put_along_axis(buf, idx[..., None], y[..., None], axis=-1)
    return (
        buf.reshape(n, c, h, w, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * h, 2 * w)
    )


def dense(weights, x):
    """Per-sample matrix-vector product: (out, in) weights applied to x
    flattened to (N, in)."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weights.shape[1]:
        raise ValueError(f"input dim {x2.shape[1]} != weight in dim {weights.shape[1]}")
    return x2 @ weights.T


def dense_transpose(weights, y):
    """Exact adjoint of dense: maps (N, out) to (N, in)."""
    y2 = y.reshape(y.shape[0], -1)
    if y2.shape[1] != weights.shape[0]:
        raise ValueError(f"input dim {y2.shape[1]} != weight out dim {weights.shape[0]}")
    return y2 @ weights


def dense_weight_grad(x, u):
    """Gradient of dot(u, dense(w, x)) with respect to w: sum of per-sample
    outer products."""
    return u.reshape(u.shape[0], -1).T @ x.reshape(x.shape[0], -1)


def relu_alpha(x, alpha):
    """Clipped rectifier: elementwise clamp to [0, alpha]."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return np.clip(x, 0.0, alpha)
