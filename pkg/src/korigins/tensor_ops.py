"""Raw numeric kernels: 2-D convolution, 2x2 max pooling, and 2x2 stride-2
transposed convolution, each with an exact backward pass.

Tensors are numpy arrays in batch x channel x height x width layout (the
batch axis is optional on the public wrappers). Convolution uses the
cross-correlation convention. "Same" padding pads with zeros, split
floor/ceil with the extra row/column on the bottom/right. All functions are
pure: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


def _pad_amounts(h: int, w: int, k: int, stride: int, padding: str):
    """Return (top, bottom, left, right, out_h, out_w)."""
    if padding == "valid":
        oh = (h - k) // stride + 1
        ow = (w - k) // stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"kernel {k} does not fit {h}x{w} input with valid padding")
        return 0, 0, 0, 0, oh, ow
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + k - h, 0)
        pw = max((ow - 1) * stride + k - w, 0)
        return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2, oh, ow
    raise ConfigError(f"padding must be 'same' or 'valid', got {padding!r}")


def _as_batched(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected rank 3 or 4 input, got rank {x.ndim}")


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: str = "same"):
    """Cross-correlate x (C_in,H,W or N,C_in,H,W) with kernels (C_out,C_in,k,k)."""
    x, squeeze = _as_batched(np.asarray(x))
    kernels = np.asarray(kernels)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"kernels must be (C_out, C_in, k, k), got {kernels.shape}")
    n, c, h, w = x.shape
    c_out, c_k, k, _ = kernels.shape
    if c != c_k:
        raise ShapeError(f"input has {c} channels but kernels expect {c_k}")
    if stride < 1 or k < 1:
        raise ConfigError(f"kernel size and stride must be >= 1, got k={k}, stride={stride}")
    bias = np.asarray(bias, dtype=x.dtype).reshape(-1)
    if bias.size != c_out:
        raise ShapeError(f"bias length {bias.size} != C_out {c_out}")

    pt, pb, pl, pr, oh, ow = _pad_amounts(h, w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
    kflat_t = kernels.reshape(c_out, c * k * k).T
    out = np.empty((n, c_out, oh, ow), dtype=x.dtype)
    for s, r0, r1 in _conv_chunks(n, oh, ow, c, k):
        band = xp[s : s + 1, :, r0 * stride : (r1 - 1) * stride + k, :]
        cols = _im2col(band, k, stride, r1 - r0, ow)
        # pixels-as-rows GEMM orientation runs much faster here than
        # kflat @ cols; BLAS consumes the transposed views without copying
        pix = (cols.T @ kflat_t).reshape(r1 - r0, ow, c_out)
        out[s, :, r0:r1, :] = pix.transpose(2, 0, 1)
    out += bias[None, :, None, None]
    return out[0] if squeeze else out


# patch-matrix buffers are capped near this many elements to bound memory
_COL_BUDGET = 24_000_000


def _conv_chunks(n, oh, ow, c, k):
    """Yield (sample, row_lo, row_hi) pieces whose patch matrices fit the budget."""
    rows = max(1, int(_COL_BUDGET // max(c * k * k * ow, 1)))
    for s in range(n):
        for r0 in range(0, oh, rows):
            yield s, r0, min(r0 + rows, oh)


def _im2col(xp, k, stride, oh, ow):
    """Patch matrix (C*k*k, N*Oh*Ow) of a padded input, for GEMM convolution."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    view = view[:, :, ::stride, ::stride]
    n, c = xp.shape[:2]
    return np.ascontiguousarray(view.transpose(1, 4, 5, 0, 2, 3)).reshape(
        c * k * k, n * oh * ow)


def conv2d_backward(x, kernels, upstream, stride: int = 1, padding: str = "same"):
    """Gradients of conv2d_forward; returns (grad_input, grad_kernels, grad_bias)."""
    x, squeeze = _as_batched(np.asarray(x))
    upstream, _ = _as_batched(np.asarray(upstream))
    kernels = np.asarray(kernels)
    n, c, h, w = x.shape
    c_out, _, k, _ = kernels.shape
    pt, pb, pl, pr, oh, ow = _pad_amounts(h, w, k, stride, padding)
    if upstream.shape != (n, c_out, oh, ow):
        raise ShapeError(f"upstream shape {upstream.shape} != forward output {(n, c_out, oh, ow)}")

    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x
    grad_b = upstream.sum(axis=(0, 2, 3))
    kflat = kernels.reshape(c_out, -1)
    grad_k = np.zeros_like(kernels)
    gxp = np.zeros_like(xp)
    for s, r0, r1 in _conv_chunks(n, oh, ow, c, k):
        in_lo = r0 * stride
        band = xp[s : s + 1, :, in_lo : (r1 - 1) * stride + k, :]
        cols = _im2col(band, k, stride, r1 - r0, ow)
        upf = np.ascontiguousarray(upstream[s, :, r0:r1, :]).reshape(c_out, -1)
        grad_k += (upf @ cols.T).reshape(kernels.shape)
        gcols = (kflat.T @ upf).reshape(c, k, k, r1 - r0, ow)
        gband = gxp[s, :, in_lo : (r1 - 1) * stride + k, :]
        for i in range(k):
            for j in range(k):
                gband[:, i : i + (r1 - r0 - 1) * stride + 1 : stride,
                         j : j + (ow - 1) * stride + 1 : stride] += gcols[:, i, j]
    grad_x = gxp[:, :, pt : pt + h, pl : pl + w]
    if squeeze:
        grad_x = grad_x[0]
    return grad_x, grad_k, grad_b


def maxpool2x2_forward(x):
    """2x2 stride-2 max pool; returns (output, argmax map with window-flat indices 0..3)."""
    x, squeeze = _as_batched(np.asarray(x))
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    windows = (x.reshape(n, c, h // 2, 2, w // 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h // 2, w // 2, 4))
    # argmax returns the first maximum: ties break toward the smallest flat index
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], arg[0]
    return out, arg


def maxpool2x2_backward(argmax, upstream):
    """Route upstream gradient to the argmax positions of the paired forward call."""
    argmax = np.asarray(argmax)
    upstream = np.asarray(upstream)
    squeeze = argmax.ndim == 3
    if squeeze:
        argmax, upstream = argmax[None], upstream[None]
    if upstream.shape != argmax.shape:
        raise ShapeError(f"upstream shape {upstream.shape} != argmax map shape {argmax.shape}")
    n, c, oh, ow = argmax.shape
    windows = np.zeros((n, c, oh, ow, 4), dtype=upstream.dtype)
    np.put_along_axis(windows, argmax[..., None], upstream[..., None], axis=-1)
    grad = (windows.reshape(n, c, oh, ow, 2, 2)
                   .transpose(0, 1, 2, 4, 3, 5)
                   .reshape(n, c, 2 * oh, 2 * ow))
    return grad[0] if squeeze else grad


def tconv2d_forward(x, kernels, bias, stride: int = 2):
    """2x2 stride-2 transposed convolution: kernels are (C_in, C_out, 2, 2).

    Doubles the spatial dims; exact linear adjoint of a stride-2 valid 2x2
    convolution. Only the 2x2/stride-2 configuration is supported.
    """
    x, squeeze = _as_batched(np.asarray(x))
    kernels = np.asarray(kernels)
    if stride != 2 or kernels.ndim != 4 or kernels.shape[2:] != (2, 2):
        raise ConfigError(f"only 2x2 kernels with stride 2 are supported, got "
                          f"shape {kernels.shape}, stride {stride}")
    n, c, h, w = x.shape
    c_in, c_out = kernels.shape[:2]
    if c != c_in:
        raise ShapeError(f"input has {c} channels but kernels expect {c_in}")
    bias = np.asarray(bias, dtype=x.dtype).reshape(-1)
    if bias.size != c_out:
        raise ShapeError(f"bias length {bias.size} != C_out {c_out}")

    out = np.empty((n, c_out, 2 * h, 2 * w), dtype=x.dtype)
    for di in range(2):
        for dj in range(2):
            piece = np.tensordot(kernels[:, :, di, dj], x, axes=([0], [1]))
            out[:, :, di::2, dj::2] = piece.transpose(1, 0, 2, 3)
    out += bias[None, :, None, None]
    return out[0] if squeeze else out


def tconv2d_backward(x, kernels, upstream):
    """Gradients of tconv2d_forward; returns (grad_input, grad_kernels, grad_bias)."""
    x, squeeze = _as_batched(np.asarray(x))
    upstream, _ = _as_batched(np.asarray(upstream))
    kernels = np.asarray(kernels)
    n, c, h, w = x.shape
    c_in, c_out = kernels.shape[:2]
    if upstream.shape != (n, c_out, 2 * h, 2 * w):
        raise ShapeError(f"upstream shape {upstream.shape} != forward output "
                         f"{(n, c_out, 2 * h, 2 * w)}")
    grad_b = upstream.sum(axis=(0, 2, 3))
    grad_k = np.empty_like(kernels)
    grad_x = np.zeros((c_in, n, h, w), dtype=x.dtype)
    for di in range(2):
        for dj in range(2):
            us = upstream[:, :, di::2, dj::2]
            grad_k[:, :, di, dj] = np.tensordot(x, us, axes=([0, 2, 3], [0, 2, 3]))
            grad_x += np.tensordot(kernels[:, :, di, dj], us, axes=([1], [1]))
    grad_x = grad_x.transpose(1, 0, 2, 3)
    if squeeze:
        grad_x = grad_x[0]
    return grad_x, grad_k, grad_b
