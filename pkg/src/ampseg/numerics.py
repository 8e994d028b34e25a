"""Dense float64 kernels the rest of the package is built from.

Tensors are plain ``numpy.ndarray`` objects. A "Tensor3" is a
``(channels, height, width)`` array, a filter "Matrix" is
``(out_channels, in_channels)``, and a conv kernel is
``(out_channels, in_channels, kh, kw)``. Every function here is pure.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError, ZeroVectorError

NORM_EPS = 1e-12


def as_tensor3(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {t.shape}")
    return t


def conv1x1(features, filters):
    """Apply a bank of bias-free 1x1 filters: ``out[o] = sum_c W[o, c] * F[c]``."""
    features = as_tensor3(features)
    filters = np.asarray(filters, dtype=np.float64)
    if filters.ndim != 2 or filters.shape[1] != features.shape[0]:
        raise ShapeError(
            f"filters {filters.shape} incompatible with {features.shape[0]} input channels")
    c, h, w = features.shape
    return (filters @ features.reshape(c, h * w)).reshape(filters.shape[0], h, w)


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def conv2d(image, kernels, stride=1, pad=0):
    """Zero-padded 2-D cross-correlation (no kernel flip)."""
    image = as_tensor3(image)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4 or kernels.shape[1] != image.shape[0]:
        raise ShapeError(
            f"kernels {kernels.shape} incompatible with {image.shape[0]} input channels")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    _, h, w = image.shape
    _, _, kh, kw = kernels.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv output would be {oh}x{ow}")
    if pad:
        image = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    # (C, H', W', kh, kw) -> strided output positions
    patches = sliding_window_view(image, (kh, kw), axis=(1, 2))
    patches = patches[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.einsum("chwij,ocij->ohw", patches, kernels, optimize=True)


def relu(t):
    return np.maximum(np.asarray(t, dtype=np.float64), 0.0)


def _source_coords(n_in, n_out):
    # half-pixel centres, clamped to the valid sample range
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_matrix(n_in, n_out):
    """Dense ``(n_out, n_in)`` matrix of 1-D linear interpolation weights.

    ``bilinear_resize(t)[c] == Ry @ t[c] @ Rx.T`` up to rounding; used for
    the adjoint pass during fine-tuning.
    """
    lo, hi, frac = _source_coords(n_in, n_out)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(t, out_h, out_w):
    """Resize each channel with half-pixel-centre bilinear interpolation.

    Interpolation is written as ``a + f * (b - a)`` so constant inputs are
    reproduced exactly and an identity-size resize is a copy.
    """
    t = as_tensor3(t)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    _, h, w = t.shape
    if (h, w) == (out_h, out_w):
        return t.copy()
    lo, hi, f = _source_coords(h, out_h)
    a, b = t[:, lo, :], t[:, hi, :]
    rows = a + f[None, :, None] * (b - a)
    lo, hi, f = _source_coords(w, out_w)
    a, b = rows[:, :, lo], rows[:, :, hi]
    return a + f[None, None, :] * (b - a)


def bilinear_resize_adjoint(g, in_h, in_w):
    """Transpose of :func:`bilinear_resize` applied to a gradient map."""
    g = as_tensor3(g)
    _, out_h, out_w = g.shape
    if (in_h, in_w) == (out_h, out_w):
        return g.copy()
    ry = resize_matrix(in_h, out_h)
    rx = resize_matrix(in_w, out_w)
    return np.einsum("yi,cyx,xj->cij", ry, g, rx, optimize=True)


def softmax_channels(t):
    t = as_tensor3(t)
    e = np.exp(t - t.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def log_softmax_channels(t):
    t = as_tensor3(t)
    shifted = t - t.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def l2_normalize(v, eps=NORM_EPS):
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.dot(v, v))
    if not norm > eps:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:g}")
    return v / norm


def argmax_channels(t):
    """Per-pixel index of the largest channel; ties go to the lowest index."""
    return np.argmax(as_tensor3(t), axis=0)
