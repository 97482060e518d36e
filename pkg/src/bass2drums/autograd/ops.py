"""Structured graph ops: 2-D convolution, its transpose, instance norm.

Convolutions lower onto matrix multiplication: im2col gathers every kernel
window into a column, one GEMM produces all output pixels, and col2im (the
exact adjoint gather) scatters gradients back.  Shape arithmetic is strict:
a stride that does not evenly tile the padded input is an error rather than
an implicit crop, so layer stacks must be designed to divide exactly.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _accum


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(N,C,H,W) -> (C*k*k, N*Ho*Wo) patch matrix. Caller checked shapes."""
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]  # (N,C,Ho,Wo,k,k)
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto an (N,C,H,W) grid."""
    n, c, h, w = shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros(shape, dtype=cols.dtype)
    patches = cols.reshape(c, k, k, n, ho, wo).transpose(3, 0, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                patches[:, :, :, :, i, j]
            )
    return out


def _pad2d(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    if mode == "zeros":
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    if mode == "reflect":
        if p > x.shape[2] - 1 or p > x.shape[3] - 1:
            raise ValueError(f"reflect padding {p} too wide for input {x.shape[2:]}")
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    raise ValueError(f"unknown pad mode {mode!r}")


def _fold_axis_reflect(g: np.ndarray, axis: int, p: int, n: int) -> np.ndarray:
    """Adjoint of reflect padding along one axis: fold borders back inward."""
    g = np.moveaxis(g, axis, -1)
    core = g[..., p : p + n].copy()
    core[..., 1 : p + 1] += g[..., :p][..., ::-1]
    core[..., n - 1 - p : n - 1] += g[..., p + n :][..., ::-1]
    return np.moveaxis(core, -1, axis)


def _unpad2d_grad(g: np.ndarray, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return g
    if mode == "zeros":
        return g[:, :, p:-p, p:-p]
    n_h = g.shape[2] - 2 * p
    n_w = g.shape[3] - 2 * p
    return _fold_axis_reflect(_fold_axis_reflect(g, 2, p, n_h), 3, p, n_w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    """Cross-correlation of (N,C,H,W) input with (O,C,k,k) kernels.

    Output is (N,O,Ho,Wo) with Ho = (H + 2*padding - k)/stride + 1, which
    must come out integral.  pad_mode is "zeros" or "reflect".
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input must be (N,C,H,W), got {x.data.shape}")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ValueError(f"conv2d kernel must be (O,C,k,k), got {weight.data.shape}")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"input has {x.data.shape[1]} channels, "
                         f"kernel expects {weight.data.shape[1]}")
    if stride <= 0 or padding < 0:
        raise ValueError("stride must be positive and padding nonnegative")
    o, c, k, _ = weight.data.shape
    if bias is not None and bias.data.shape != (o,):
        raise ValueError(f"bias must have shape ({o},)")

    xp = _pad2d(x.data, padding, pad_mode)
    n, _, hp, wp = xp.shape
    if hp < k or wp < k:
        raise ValueError(f"padded input {hp}x{wp} smaller than kernel {k}")
    if (hp - k) % stride or (wp - k) % stride:
        raise ValueError(
            f"stride {stride} does not evenly tile padded input {hp}x{wp} "
            f"with kernel {k}"
        )
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    cols = _im2col(xp, k, stride)
    w2 = weight.data.reshape(o, -1)
    out_data = (w2 @ cols).reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    need_x = x.requires_grad
    need_w = weight.requires_grad
    need_b = bias is not None and bias.requires_grad
    need = need_x or need_w or need_b
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, requires_grad=need, _parents=parents)

    def backward(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(o, -1)
        if need_w:
            _accum(weight, (gmat @ cols.T).reshape(weight.data.shape))
        if need_b:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if need_x:
            gcols = w2.T @ gmat
            gx = _col2im(gcols, xp.shape, k, stride)
            _accum(x, _unpad2d_grad(gx, padding, pad_mode))

    out._backward_fn = backward if need else None
    return out


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *,
                     stride: int = 2, padding: int = 0) -> Tensor:
    """Transposed convolution (the exact adjoint of zero-padded conv2d).

    Input (N,C,H,W), kernel (C,O,k,k), output (N,O,Ho,Wo) with
    Ho = (H - 1)*stride + k - 2*padding.  With the same kernel array,
    stride and padding, <conv2d(x), y> == <x, conv_transpose2d(y)>.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv_transpose2d input must be (N,C,H,W), got {x.data.shape}")
    if weight.data.ndim != 4 or weight.data.shape[2] != weight.data.shape[3]:
        raise ValueError(f"kernel must be (C,O,k,k), got {weight.data.shape}")
    if x.data.shape[1] != weight.data.shape[0]:
        raise ValueError(f"input has {x.data.shape[1]} channels, "
                         f"kernel expects {weight.data.shape[0]}")
    if stride <= 0 or padding < 0:
        raise ValueError("stride must be positive and padding nonnegative")
    c, o, k, _ = weight.data.shape
    if bias is not None and bias.data.shape != (o,):
        raise ValueError(f"bias must have shape ({o},)")

    n, _, h, w = x.data.shape
    hf = (h - 1) * stride + k
    wf = (w - 1) * stride + k
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho <= 0 or wo <= 0:
        raise ValueError(f"padding {padding} consumes the whole {hf}x{wf} output")

    xmat = x.data.transpose(1, 0, 2, 3).reshape(c, -1)
    w2 = weight.data.reshape(c, -1)
    cols = w2.T @ xmat
    full = _col2im(cols, (n, o, hf, wf), k, stride)
    out_data = full[:, :, padding : hf - padding, padding : wf - padding]
    if padding:
        out_data = np.ascontiguousarray(out_data)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]

    need_x = x.requires_grad
    need_w = weight.requires_grad
    need_b = bias is not None and bias.requires_grad
    need = need_x or need_w or need_b
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, requires_grad=need, _parents=parents)

    def backward(g):
        if padding:
            gfull = np.zeros((n, o, hf, wf), dtype=g.dtype)
            gfull[:, :, padding : hf - padding, padding : wf - padding] = g
        else:
            gfull = g
        gcols = _im2col(gfull, k, stride)
        if need_w:
            _accum(weight, (xmat @ gcols.T).reshape(weight.data.shape))
        if need_b:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if need_x:
            gx = (w2 @ gcols).reshape(c, n, h, w).transpose(1, 0, 2, 3)
            _accum(x, gx)

    out._backward_fn = backward if need else None
    return out


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) plane to zero mean and unit variance,
    then scale and shift by the per-channel affine parameters."""
    if x.data.ndim != 4:
        raise ValueError(f"instance_norm input must be (N,C,H,W), got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h * w < 2:
        raise ValueError("instance_norm needs at least 2 spatial elements per plane")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"gamma and beta must have shape ({c},)")

    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    need_x = x.requires_grad
    need_g = gamma.requires_grad
    need_b = beta.requires_grad
    need = need_x or need_g or need_b
    out = Tensor(out_data, requires_grad=need, _parents=(x, gamma, beta))
    m = h * w

    def backward(g):
        if need_g:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if need_b:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if need_x:
            gh = g * gamma.data[None, :, None, None]
            gh_sum = gh.sum(axis=(2, 3), keepdims=True)
            ghx_sum = (gh * xhat).sum(axis=(2, 3), keepdims=True)
            gx = (inv / m) * (m * gh - gh_sum - xhat * ghx_sum)
            _accum(x, gx.astype(x.data.dtype, copy=False))

    out._backward_fn = backward if need else None
    return out
