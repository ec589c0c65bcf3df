"""Differentiable operations on :class:`~rawgat_st.tensor.Tensor`.

Layout conventions: convolutions and pooling are channel-first with an
optional leading batch axis, ``(B, C, L)`` / ``(B, C, H, W)``. Graph tensors
are ``(B, N, d)``: batch, nodes, features.

"same" padding for an even kernel extent puts the extra zero on the trailing
side, e.g. a height-2 kernel pads 0 rows above and 1 row below. This keeps the
frequency extent of the residual encoder fixed at 23 rows.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product following numpy broadcasting rules (ndim >= 2)."""
    a = _lift(a)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return make_result(out, (x,), backward)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def abs(x: Tensor) -> Tensor:  # noqa: A001
    out = np.abs(x.data)

    def backward(g):
        return (g * np.sign(x.data),)

    return make_result(out, (x,), backward)


def max(x: Tensor, axis: int) -> Tensor:  # noqa: A001
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_result(out, (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        return (g * out,)

    return make_result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_result(out, (x,), backward)


def selu(x: Tensor) -> Tensor:
    """lambda * x for x > 0, lambda * alpha * (exp(x) - 1) otherwise."""
    d = x.data
    lam = np.asarray(SELU_LAMBDA, dtype=d.dtype)
    scale = np.asarray(SELU_LAMBDA * SELU_ALPHA, dtype=d.dtype)
    out = np.minimum(d, 0.0).astype(d.dtype, copy=False)
    np.expm1(out, out=out)
    out *= scale
    pos = d > 0
    np.multiply(d, lam, out=out, where=pos)

    def backward(g):
        # on the negative side the slope is lambda*alpha*exp(x) = out + lambda*alpha
        slope = out + scale
        np.copyto(slope, lam, where=pos)
        slope *= g
        return (slope,)

    return make_result(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return make_result(out, tensors, backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along axis 1 per batch element: ``out[b, i] = x[b, index[b, i]]``.

    ``index`` is an integer array (B, K); it is not differentiated.
    """
    index = np.asarray(index)
    expand = index.reshape(index.shape + (1,) * (x.ndim - 2))
    out = np.take_along_axis(x.data, expand, axis=1)

    def backward(g):
        gx = np.zeros_like(x.data)
        for b in range(index.shape[0]):
            np.add.at(gx[b], index[b], g[b])
        return (gx,)

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map along the trailing axis: ``x @ weight + bias``; weight is (d, d')."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense expects trailing extent {weight.shape[0]}, got {x.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, backward)


def _batched(x: Tensor, unbatched_ndim: int) -> Tuple[Tensor, bool]:
    if x.ndim == unbatched_ndim:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != unbatched_ndim + 1:
        raise ShapeError(f"expected {unbatched_ndim}D or batched {unbatched_ndim + 1}D input, got {x.shape}")
    return x, False


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, bias: Optional[Tensor] = None) -> Tensor:
    """Valid (unpadded) 1-D cross-correlation.

    x: (C_in, L) or (B, C_in, L); kernels: (C_out, C_in, K).
    Output length is ``(L - K) // stride + 1``.
    """
    x, squeeze = _batched(x, 2)
    B, C_in, L = x.shape
    C_out, kc, K = kernels.shape
    if kc != C_in:
        raise ShapeError(f"conv1d: input has {C_in} channels, kernels expect {kc}")
    if L < K:
        raise ShapeError(f"conv1d: input length {L} shorter than kernel {K}")
    if stride < 1:
        raise ShapeError("conv1d: stride must be >= 1")
    L_out = (L - K) // stride + 1
    # (B, C_in, L_out, K) strided view
    win = sliding_window_view(x.data, K, axis=2)[:, :, ::stride][:, :, :L_out]
    w2 = kernels.data.reshape(C_out, C_in * K)
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, L_out, C_in * K)
    out = np.matmul(cols, w2.T).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        gx = gk = gb = None
        if kernels.requires_grad:
            gk = np.einsum("bol,blk->ok", g, cols).reshape(kernels.shape)
        if x.requires_grad:
            gcols = np.matmul(g.transpose(0, 2, 1), w2).reshape(B, L_out, C_in, K)
            gx = np.zeros_like(x.data)
            span = stride * (L_out - 1) + 1
            for k in range(K):
                gx[:, :, k : k + span : stride] += gcols[:, :, :, k].transpose(0, 2, 1)
        if bias is not None:
            gb = g.sum(axis=(0, 2))
            return gx, gk, gb
        return gx, gk

    out_t = make_result(out, parents, backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def _same_pad(k: int) -> Tuple[int, int]:
    total = k - 1
    return total // 2, total - total // 2


PaddingSpec = Union[str, Tuple[Tuple[int, int], Tuple[int, int]]]


def conv2d(
    x: Tensor,
    kernels: Tensor,
    stride: int = 1,
    padding: PaddingSpec = "valid",
    bias: Optional[Tensor] = None,
) -> Tensor:
    """2-D cross-correlation over (H, W).

    x: (C_in, H, W) or (B, C_in, H, W); kernels: (C_out, C_in, kh, kw).
    ``padding`` is "valid", "same" (stride 1 keeps H, W; odd remainder goes to
    the trailing side) or explicit ``((top, bottom), (left, right))``.
    """
    x, squeeze = _batched(x, 3)
    B, C_in, H, W = x.shape
    C_out, kc, kh, kw = kernels.shape
    if kc != C_in:
        raise ShapeError(f"conv2d: input has {C_in} channels, kernels expect {kc}")
    if padding == "valid":
        pads = ((0, 0), (0, 0))
    elif padding == "same":
        pads = (_same_pad(kh), _same_pad(kw))
    else:
        pads = tuple(tuple(p) for p in padding)
    Hp, Wp = H + pads[0][0] + pads[0][1], W + pads[1][0] + pads[1][1]
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: padded input {(Hp, Wp)} smaller than kernel {(kh, kw)}")
    # Shifted taps become contiguous windows of the flattened padded image:
    # tap (i, j) reads flat offset i * Wp + j. Rows are computed at full
    # padded width and the kw - 1 wrap-around columns are dropped afterwards.
    # Strides > 1 subsample the stride-1 result.
    H1, W1 = Hp - kh + 1, Wp - kw + 1
    Ho, Wo = (H1 - 1) // stride + 1, (W1 - 1) // stride + 1
    n = H1 * Wp
    flat = np.zeros((B, C_in, Hp * Wp + kw - 1), dtype=x.dtype)
    flat[:, :, : Hp * Wp].reshape(B, C_in, Hp, Wp)[
        :, :, pads[0][0] : pads[0][0] + H, pads[1][0] : pads[1][0] + W
    ] = x.data
    offsets = [i * Wp + j for i in range(kh) for j in range(kw)]
    # (C_out, taps * C_in) with the tap index major, matching the column layout
    wmat = np.ascontiguousarray(kernels.data.transpose(0, 2, 3, 1)).reshape(C_out, kh * kw * C_in)

    def columns(b: int) -> np.ndarray:
        return np.concatenate([flat[b, :, off : off + n] for off in offsets], axis=0)

    acc = np.empty((B, C_out, n), dtype=np.result_type(x.data, kernels.data))
    for b in range(B):
        np.matmul(wmat, columns(b), out=acc[b])
    out = acc.reshape(B, C_out, H1, Wp)[:, :, ::stride, :W1:stride]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        g_ext = np.zeros((B, C_out, H1, Wp), dtype=g.dtype)
        g_ext[:, :, ::stride, :W1:stride] = g
        g_ext = g_ext.reshape(B, C_out, n)
        gw = np.zeros_like(wmat) if kernels.requires_grad else None
        gflat = np.zeros_like(flat) if x.requires_grad else None
        for b in range(B):
            if gw is not None:
                gw += g_ext[b] @ columns(b).T
            if gflat is not None:
                gcol = wmat.T @ g_ext[b]
                for t, off in enumerate(offsets):
                    gflat[b, :, off : off + n] += gcol[t * C_in : (t + 1) * C_in]
        gk = None
        if gw is not None:
            gk = gw.reshape(C_out, kh, kw, C_in).transpose(0, 3, 1, 2).copy()
        gx = None
        if gflat is not None:
            gx = gflat[:, :, : Hp * Wp].reshape(B, C_in, Hp, Wp)[
                :, :, pads[0][0] : pads[0][0] + H, pads[1][0] : pads[1][0] + W
            ]
        if bias is not None:
            return gx, gk, g.sum(axis=(0, 2, 3))
        return gx, gk

    out_t = make_result(out, parents, backward)
    return reshape(out_t, out_t.shape[1:]) if squeeze else out_t


def maxpool2d(x: Tensor, window: Union[int, Tuple[int, int]]) -> Tensor:
    """Non-overlapping max pooling over the last two axes; trailing remainders are dropped.

    The gradient of each window is routed to its first maximal cell, so the
    routed mass equals the upstream mass exactly.
    """
    ph, pw = (window, window) if isinstance(window, int) else window
    H, W = x.shape[-2:]
    if H < ph or W < pw:
        raise ShapeError(f"maxpool2d: window {(ph, pw)} larger than input {(H, W)}")
    Ho, Wo = H // ph, W // pw
    lead = x.shape[:-2]
    crop = x.data[..., : Ho * ph, : Wo * pw]
    if ph == 1:
        blocks = crop.reshape(lead + (Ho, Wo, pw))
    else:
        blocks = crop.reshape(lead + (Ho, ph, Wo, pw))
        blocks = np.moveaxis(blocks, -3, -2).reshape(lead + (Ho, Wo, ph * pw))
    out = blocks.max(axis=-1)

    def backward(g):
        gb = np.zeros(lead + (Ho, Wo, ph * pw), dtype=g.dtype)
        taken = np.zeros(out.shape, dtype=bool)
        for c in range(ph * pw):
            hit = blocks[..., c] == out
            hit &= ~taken
            taken |= hit
            np.multiply(g, hit, out=gb[..., c])
        if ph > 1:
            gb = np.moveaxis(gb.reshape(lead + (Ho, Wo, ph, pw)), -2, -3)
        gx = np.zeros_like(x.data)
        gx[..., : Ho * ph, : Wo * pw] = gb.reshape(lead + (Ho * ph, Wo * pw))
        return (gx,)

    return make_result(out, (x,), backward)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    axis: int = 1,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalisation over every axis except ``axis``.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance for the running
    estimate). In eval mode the running statistics are used.
    """
    axis = axis % x.ndim
    red = tuple(a for a in range(x.ndim) if a != axis)
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    bshape = tuple(bshape)
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)
    n = x.data.size // x.shape[axis]

    if training:
        mu = x.data.mean(axis=red, keepdims=True)
        xhat = x.data - mu
        var = np.mean(np.square(xhat), axis=red, keepdims=True)
        inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
        xhat *= inv
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(-1)
    else:
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(bshape).astype(x.dtype, copy=False)
        xhat = (x.data - running_mean.reshape(bshape).astype(x.dtype)) * inv
    out = xhat * g_
    out += b_

    def backward(g):
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx = None
        if x.requires_grad:
            if training:
                # d/dx of the normalised output, with the two batch-mean terms
                # expressed through the gamma/beta gradient sums
                gx = xhat * (ggamma.reshape(bshape) / -n)
                gx += g
                gx -= gbeta.reshape(bshape) / n
                gx *= g_ * inv
            else:
                gx = g * (g_ * inv)
        return gx, ggamma, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)
