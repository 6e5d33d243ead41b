"""Forward and backward kernels for the layer primitives.

All activations are rank-4 arrays laid out as (batch, height, width, channels).
Every function here is pure: inputs are never written to.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class ConvParams:
    """Kernel and bias of a convolution or transposed convolution.

    For ``conv2d`` the kernel is (kh, kw, in_channels, out_channels); for
    ``transposed_conv2d`` it is (kh, kw, out_channels, in_channels).
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"kernel must be rank 4, got shape {self.kernel.shape}")
        if self.kernel.shape[0] != self.kernel.shape[1]:
            raise ShapeError(f"kernel must be square, got shape {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[3],) and self.bias.shape != (self.kernel.shape[2],):
            raise ShapeError(f"bias shape {self.bias.shape} does not fit kernel {self.kernel.shape}")

    @property
    def size(self) -> int:
        return int(self.kernel.size + self.bias.size)


def check_tensor4(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be (batch, height, width, channels), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")


def same_padding(k: int) -> tuple[int, int]:
    """Zero padding (before, after) that keeps a stride-1 output the size of its input."""
    total = k - 1
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, h, w, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 "same" cross-correlation plus bias."""
    check_tensor4(x)
    k, _, cin, cout = kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    n, h, w, _ = x.shape
    lo, hi = same_padding(k)
    xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0)))
    cols = _im2col(xp, k, h, w).reshape(n * h * w, k * k * cin)
    out = cols @ kernel.reshape(k * k * cin, cout)
    out += bias
    return out.reshape(n, h, w, cout)


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, grad: np.ndarray):
    """Return (d_input, d_kernel, d_bias) for ``conv2d``."""
    k, _, cin, cout = kernel.shape
    n, h, w, _ = x.shape
    lo, hi = same_padding(k)
    xp = np.pad(x, ((0, 0), (lo, hi), (lo, hi), (0, 0)))
    cols = _im2col(xp, k, h, w).reshape(n * h * w, k * k * cin)
    g = grad.reshape(n * h * w, cout)
    d_kernel = (cols.T @ g).reshape(kernel.shape)
    d_bias = g.sum(axis=0)
    dcols = (g @ kernel.reshape(k * k * cin, cout).T).reshape(n, h, w, k, k, cin)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
    return dxp[:, lo:lo + h, lo:lo + w, :], d_kernel, d_bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 is taken as 0
    return np.where(x > 0, grad, 0).astype(grad.dtype, copy=False)


def maxpool2(x: np.ndarray):
    """2x2 max pooling with stride 2 and "same" padding.

    Returns ``(output, indices)``; ``indices`` holds the in-window position
    (0..3, row-major) of each maximum. Ties go to the lowest position.
    """
    check_tensor4(x)
    n, h, w, c = x.shape
    ho, wo = -(-h // 2), -(-w // 2)
    if (ho * 2, wo * 2) != (h, w):
        xp = np.full((n, ho * 2, wo * 2, c), -np.inf, dtype=x.dtype)
        xp[:, :h, :w, :] = x
    else:
        xp = x
    windows = xp.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(grad: np.ndarray, indices: np.ndarray, input_shape) -> np.ndarray:
    n, h, w, c = input_shape
    ho, wo = indices.shape[1], indices.shape[2]
    windows = np.zeros((n, ho, wo, c, 4), dtype=grad.dtype)
    np.put_along_axis(windows, indices[..., None], grad[..., None], axis=-1)
    full = windows.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * 2, wo * 2, c)
    return full[:, :h, :w, :]


def _deconv_geometry(h: int, k: int):
    # same-padding crop of the adjoint of a stride-2 "same" conv on a 2h input
    pad_total = max(k - 2, 0)
    top = pad_total // 2
    full = max(2 * (h - 1) + k, top + 2 * h)
    return top, full


def transposed_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-2 "same" transposed convolution; output is (2h, 2w).

    ``kernel`` is (kh, kw, out_channels, in_channels): each input pixel scatters
    ``x * kernel[i, j]`` to output position (2r + i - top, 2c + j - left).
    """
    check_tensor4(x)
    k, _, cout, cin = kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"transposed_conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    n, h, w, _ = x.shape
    top, full_h = _deconv_geometry(h, k)
    left, full_w = _deconv_geometry(w, k)
    contrib = (x.reshape(n * h * w, cin) @ kernel.reshape(k * k * cout, cin).T).reshape(n, h, w, k, k, cout)
    buf = np.zeros((n, full_h, full_w, cout), dtype=contrib.dtype)
    for i in range(k):
        for j in range(k):
            buf[:, i:i + 2 * h - 1:2, j:j + 2 * w - 1:2, :] += contrib[:, :, :, i, j, :]
    out = buf[:, top:top + 2 * h, left:left + 2 * w, :]
    return out + bias


def transposed_conv2d_backward(x: np.ndarray, kernel: np.ndarray, grad: np.ndarray):
    """Return (d_input, d_kernel, d_bias) for ``transposed_conv2d``."""
    k, _, cout, cin = kernel.shape
    n, h, w, _ = x.shape
    top, full_h = _deconv_geometry(h, k)
    left, full_w = _deconv_geometry(w, k)
    gbuf = np.zeros((n, full_h, full_w, cout), dtype=grad.dtype)
    gbuf[:, top:top + 2 * h, left:left + 2 * w, :] = grad
    gcols = np.empty((n, h, w, k, k, cout), dtype=grad.dtype)
    for i in range(k):
        for j in range(k):
            gcols[:, :, :, i, j, :] = gbuf[:, i:i + 2 * h - 1:2, j:j + 2 * w - 1:2, :]
    gcols = gcols.reshape(n * h * w, k * k * cout)
    xm = x.reshape(n * h * w, cin)
    d_input = (gcols @ kernel.reshape(k * k * cout, cin)).reshape(x.shape)
    d_kernel = (gcols.T @ xm).reshape(kernel.shape)
    d_bias = grad.sum(axis=(0, 1, 2))
    return d_input, d_kernel, d_bias


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"concat_channels spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=3)


def concat_backward(grad: np.ndarray, a_channels: int):
    return grad[..., :a_channels], grad[..., a_channels:]


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis."""
    if not np.all(np.isfinite(logits)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(logits))[0])
        raise ValueError(f"non-finite logit at index {bad}")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the channel softmax."""
    return probs * (grad - (grad * probs).sum(axis=-1, keepdims=True))
