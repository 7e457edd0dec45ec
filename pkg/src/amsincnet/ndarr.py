"""Dense float64 kernels with explicit backward counterparts.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every kernel
checks its output for NaN/Inf and raises :class:`NonFiniteError` instead of
letting non-finite values leak downstream.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft

DTYPE = np.float64

# Upper bound on the im2col scratch block, in float64 elements (~4 MiB).
_IM2COL_BLOCK = 1 << 19
# Kernels at least this long use the FFT path when stride == 1.
FFT_MIN_KERNEL = 32


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class KernelTooLongError(ShapeError):
    """Convolution kernel is longer than the signal."""


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or Inf."""


def check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.isfinite(a).all():
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise NonFiniteError(f"{where}: {bad} non-finite value(s) in output of shape {a.shape}")
    return a


def asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def zeros(*shape: int) -> np.ndarray:
    return np.zeros(shape, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C[i,j] = sum_k A[i,k] B[k,j]."""
    a = asarray(a)
    b = asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul")


def conv_out_len(t: int, length: int, stride: int = 1) -> int:
    return (t - length) // stride + 1


def _check_conv(x: np.ndarray, k: np.ndarray, stride: int) -> None:
    if x.ndim != 3 or k.ndim != 3:
        raise ShapeError(f"conv1d: expected x[B,Cin,T] and k[Cout,Cin,L], got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(f"conv1d: channel mismatch, x {x.shape} vs k {k.shape}")
    if stride < 1:
        raise ShapeError(f"conv1d: stride must be positive, got {stride}")
    if k.shape[2] > x.shape[2]:
        raise KernelTooLongError(f"conv1d: kernel length {k.shape[2]} exceeds signal length {x.shape[2]}")


def _batch_block(x: np.ndarray, t_out: int, k: np.ndarray) -> int:
    per_item = max(1, t_out * k.shape[1] * k.shape[2])
    return max(1, min(x.shape[0], _IM2COL_BLOCK // per_item))


def _windows(x: np.ndarray, length: int, stride: int, t_out: int) -> np.ndarray:
    # [b, C, T', L] view -> [b, T', C, L]
    w = sliding_window_view(x, length, axis=2)[:, :, : (t_out - 1) * stride + 1 : stride, :]
    return w.transpose(0, 2, 1, 3)


def _use_fft(method: str, k: np.ndarray, stride: int) -> bool:
    if method not in ("auto", "direct", "fft"):
        raise ValueError(f"unknown conv method {method!r}")
    if method == "fft" and stride != 1:
        raise ShapeError("conv1d: the FFT path supports stride 1 only")
    return method == "fft" or (method == "auto" and stride == 1 and k.shape[2] >= FFT_MIN_KERNEL)


def _fft_len(t: int) -> int:
    # circular correlation of length >= T never wraps into the valid region
    return sp_fft.next_fast_len(t, real=True)


def conv1d_forward(x: np.ndarray, k: np.ndarray, stride: int = 1, method: str = "auto") -> np.ndarray:
    """Valid cross-correlation ``y[b,o,t] = sum_{c,l} x[b,c,t*stride+l] k[o,c,l]``.

    ``method`` selects im2col + GEMM (``"direct"``), FFT (``"fft"``, stride 1)
    or picks by kernel length (``"auto"``).
    """
    x = asarray(x)
    k = asarray(k)
    _check_conv(x, k, stride)
    if _use_fft(method, k, stride):
        n = _fft_len(x.shape[2])
        xf = sp_fft.rfft(x, n, axis=-1)
        kf = sp_fft.rfft(k, n, axis=-1).conj()
        yf = np.einsum("bcf,ocf->bof", xf, kf) if x.shape[1] > 1 else xf * kf[None, :, 0, :]
        y = sp_fft.irfft(yf, n, axis=-1)[..., : x.shape[2] - k.shape[2] + 1]
        return check_finite(np.ascontiguousarray(y), "conv1d_forward")
    bsz, cin, t = x.shape
    cout, _, length = k.shape
    t_out = conv_out_len(t, length, stride)
    kmat = k.reshape(cout, cin * length).T
    out = np.empty((bsz, t_out, cout), dtype=DTYPE)
    step = _batch_block(x, t_out, k)
    cols = np.empty((step, t_out, cin, length), dtype=DTYPE)
    for s in range(0, bsz, step):
        e = min(bsz, s + step)
        blk = cols[: e - s]
        np.copyto(blk, _windows(x[s:e], length, stride, t_out))
        np.matmul(blk.reshape(-1, cin * length), kmat, out=out[s:e].reshape(-1, cout))
    return check_finite(out.transpose(0, 2, 1).copy(), "conv1d_forward")


def conv1d_backward(
    grad_y: np.ndarray, x: np.ndarray, k: np.ndarray, stride: int = 1, need_x: bool = True,
    method: str = "auto",
) -> tuple[np.ndarray | None, np.ndarray]:
    """Gradients of :func:`conv1d_forward` w.r.t. ``x`` and ``k``.

    ``need_x=False`` skips the input gradient (returned as ``None``).
    """
    x = asarray(x)
    k = asarray(k)
    grad_y = asarray(grad_y)
    _check_conv(x, k, stride)
    bsz, cin, t = x.shape
    cout, _, length = k.shape
    t_out = conv_out_len(t, length, stride)
    if grad_y.shape != (bsz, cout, t_out):
        raise ShapeError(f"conv1d_backward: grad_y {grad_y.shape} does not match forward output {(bsz, cout, t_out)}")
    if _use_fft(method, k, stride):
        return _conv1d_backward_fft(grad_y, x, k, need_x)

    gy = np.ascontiguousarray(grad_y.transpose(0, 2, 1))  # [B, T', O]
    kmat = k.reshape(cout, cin * length)
    grad_k = np.zeros((cout, cin * length), dtype=DTYPE)
    grad_x = np.zeros_like(x) if need_x else None
    step = _batch_block(x, t_out, k)
    cols = np.empty((step, t_out, cin, length), dtype=DTYPE)
    for s in range(0, bsz, step):
        e = min(bsz, s + step)
        n = e - s
        blk = cols[:n]
        np.copyto(blk, _windows(x[s:e], length, stride, t_out))
        g2 = gy[s:e].reshape(-1, cout)
        grad_k += g2.T @ blk.reshape(-1, cin * length)
        if need_x:
            # [n, C*L, T'] keeps each tap's contribution contiguous in time
            dcols = np.matmul(kmat.T, grad_y[s:e]).reshape(n, cin, length, t_out)
            gx = grad_x[s:e]
            stop = (t_out - 1) * stride + 1
            for l in range(length):
                gx[:, :, l : l + stop : stride] += dcols[:, :, l, :]
    check_finite(grad_k, "conv1d_backward")
    if need_x:
        check_finite(grad_x, "conv1d_backward")
    return grad_x, grad_k.reshape(cout, cin, length)


def _conv1d_backward_fft(grad_y, x, k, need_x):
    t = x.shape[2]
    length = k.shape[2]
    n = _fft_len(t)
    xf = sp_fft.rfft(x, n, axis=-1)  # [B, C, F]
    gf = sp_fft.rfft(grad_y, n, axis=-1)  # [B, O, F]
    if x.shape[1] == 1:
        cross = np.einsum("bof,bf->of", gf.conj(), xf[:, 0])[:, None, :]
    else:
        cross = np.einsum("bof,bcf->ocf", gf.conj(), xf)
    grad_k = check_finite(sp_fft.irfft(cross, n, axis=-1)[..., :length].copy(), "conv1d_backward")
    if not need_x:
        return None, grad_k
    kf = sp_fft.rfft(k, n, axis=-1)
    gxf = np.einsum("bof,ocf->bcf", gf, kf)
    grad_x = sp_fft.irfft(gxf, n, axis=-1)[..., :t]
    return check_finite(np.ascontiguousarray(grad_x), "conv1d_backward"), grad_k


def maxpool1d(x: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling along the last axis.

    Returns the pooled tensor and the argmax cache (absolute time index of the
    winner in each window; the first maximal index wins ties).
    """
    if width <= 0:
        raise ShapeError(f"maxpool1d: width must be >= 1, got {width}")
    x = asarray(x)
    t_out = x.shape[-1] // width
    if t_out == 0:
        raise ShapeError(f"maxpool1d: width {width} exceeds length {x.shape[-1]}")
    win = x[..., : t_out * width].reshape(*x.shape[:-1], t_out, width)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    idx = arg + np.arange(t_out) * width
    return check_finite(y, "maxpool1d"), idx


def maxpool1d_backward(grad_y: np.ndarray, idx: np.ndarray, in_len: int) -> np.ndarray:
    grad_y = asarray(grad_y)
    if grad_y.shape != idx.shape:
        raise ShapeError(f"maxpool1d_backward: grad {grad_y.shape} vs cache {idx.shape}")
    grad_x = np.zeros((*grad_y.shape[:-1], in_len), dtype=DTYPE)
    np.put_along_axis(grad_x, idx, grad_y, axis=-1)
    return grad_x


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise ``log(sum(exp(x)))`` evaluated around the row maximum."""
    x = asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"logsumexp_rows: expected [N,C], got {x.shape}")
    mx = x.max(axis=1)
    out = mx + np.log(np.exp(x - mx[:, None]).sum(axis=1))
    return check_finite(out, "logsumexp_rows")


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = asarray(x)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return check_finite(e / e.sum(axis=1, keepdims=True), "softmax_rows")
