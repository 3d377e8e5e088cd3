"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for gradient
checking) and record a tape of backward closures as operations are applied.
Only the operations needed by the blending network are provided: elementwise
arithmetic, reductions, concat/slice, conv2d, batchnorm2d, the activation
heads, bilinear 2x upsampling, reflect padding and bilinear grid sampling.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    # -- autograd ---------------------------------------------------------

    def backward(self):
        """Populate .grad on every reachable requires_grad tensor.

        Only valid on scalar tensors; a second call on the same graph
        without rebuilding it is rejected.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        if self._done:
            raise RuntimeError("backward() already called on this graph; rebuild the graph first")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        self._done = True

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)


def astensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True) if g.dtype != t.data.dtype else g.copy()
    else:
        t.grad += g


def _make(data, parents, backward_fn) -> Tensor:
    """Create an op result, recording the tape only when needed."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    track = _GRAD_ENABLED and any(p.requires_grad or p._backward_fn is not None for p in parents)
    out = Tensor(data)
    if track:
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a, b = astensor(a), astensor(b)
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd)


def sub(a, b):
    a, b = astensor(a), astensor(b)
    data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), bwd)


def mul(a, b):
    a, b = astensor(a), astensor(b)
    data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd)


def div(a, b):
    a, b = astensor(a), astensor(b)
    data = a.data / b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), bwd)


def absolute(a):
    a = astensor(a)
    data = np.abs(a.data)

    def bwd(g):
        _accumulate(a, g * np.sign(a.data))

    return _make(data, (a,), bwd)


def square(a):
    return mul(a, a)


def tsum(a, axis=None, keepdims=False):
    a = astensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g, a.dtype))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(ge, a.shape).copy())

    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = astensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def relu(a):
    a = astensor(a)
    data = np.maximum(a.data, 0)

    def bwd(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), bwd)


def sigmoid(a):
    a = astensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), bwd)


def softmax(a, axis):
    """Numerically stable softmax; slices along `axis` sum to 1."""
    a = astensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), bwd)


# -- shape manipulation ---------------------------------------------------


def reshape(a, shape):
    a = astensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)
    orig = a.shape

    def bwd(g):
        _accumulate(a, g.reshape(orig))

    return _make(data, (a,), bwd)


def getitem(a, idx):
    a = astensor(a)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accumulate(a, full)

    return _make(data, (a,), bwd)


def concat(tensors, axis):
    tensors = [astensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        offs = np.cumsum([0] + sizes)
        for t, lo, hi in zip(tensors, offs[:-1], offs[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(data, tensors, bwd)


def stack(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _make(data, tensors, bwd)


def pad_reflect2d(a, pad_h, pad_w):
    """Reflect-pad the last two axes by (bottom, right) amounts.

    Asymmetric padding only on the far edges; used to round spatial dims up
    to a multiple of the encoder stride.
    """
    a = astensor(a)
    if pad_h == 0 and pad_w == 0:
        return a
    H, W = a.shape[-2], a.shape[-1]
    row_idx = np.concatenate([np.arange(H), H - 2 - np.arange(pad_h)]) if pad_h else np.arange(H)
    col_idx = np.concatenate([np.arange(W), W - 2 - np.arange(pad_w)]) if pad_w else np.arange(W)
    data = a.data[..., row_idx, :][..., :, col_idx]

    def bwd(g):
        gi = np.zeros(g.shape[:-2] + (H, g.shape[-1]), dtype=g.dtype)
        np.add.at(gi, (Ellipsis, row_idx, slice(None)), g)
        gx = np.zeros(g.shape[:-2] + (H, W), dtype=g.dtype)
        np.add.at(gx.transpose(*range(g.ndim - 2), -1, -2), (Ellipsis, col_idx, slice(None)),
                  gi.transpose(*range(g.ndim - 2), -1, -2))
        _accumulate(a, gx)

    return _make(data, (a,), bwd)


# -- convolution ----------------------------------------------------------

from scipy.linalg.blas import dgemm as _dgemm  # noqa: E402
from scipy.linalg.blas import sgemm as _sgemm  # noqa: E402


def _gemm_for(dtype):
    return _sgemm if dtype == np.float32 else _dgemm


# Stride-1 convolutions run as k*k shifted, in-place-accumulating GEMMs on
# the padded NHWC input flattened to (N*Hp*Wp, C). Positions that straddle
# row or image boundaries produce junk that the valid-region crop discards;
# nothing like an im2col matrix is ever materialized.


def _shift_gemm_fwd(xf, wt, Wp, k, rows_per_image):
    """Forward pass runs one image at a time so every GEMM has shapes that
    do not depend on the batch size; BLAS blocking then produces
    bit-identical results for batched and single-sample evaluation."""
    M, C = xf.shape
    Cout = wt.shape[-1]
    gemm = _gemm_for(xf.dtype)
    out = np.zeros((M, Cout), dtype=xf.dtype)
    for base in range(0, M, rows_per_image):
        xi = xf[base:base + rows_per_image]
        oi = out[base:base + rows_per_image]
        for i in range(k):
            for j in range(k):
                off = i * Wp + j
                L = rows_per_image - off
                gemm(1.0, wt[i, j].T, xi[off:off + L].T, 1.0, oi[:L].T, overwrite_c=1)
    return out


def _shift_gemm_dx(gf, wt, Wp, k, M, C):
    gemm = _gemm_for(gf.dtype)
    dx = np.zeros((M, C), dtype=gf.dtype)
    for i in range(k):
        for j in range(k):
            off = i * Wp + j
            L = M - off
            gemm(1.0, wt[i, j].T, gf[:L].T, 1.0, dx[off:off + L].T, trans_a=1, overwrite_c=1)
    return dx


def _shift_gemm_dw(gf, xf, Wp, k):
    M, C = xf.shape
    Cout = gf.shape[-1]
    gemm = _gemm_for(gf.dtype)
    dw = np.zeros((k, k, C, Cout), dtype=gf.dtype)
    for i in range(k):
        for j in range(k):
            off = i * Wp + j
            L = M - off
            gemm(1.0, gf[:L].T, xf[off:off + L].T, 1.0, dw[i, j].T, trans_b=1, overwrite_c=1)
    return dw


def _im2col(xp: np.ndarray, k: int, stride: int):
    """(N,C,Hp,Wp) padded input -> (N, Ho*Wo, C*k*k) patch matrix."""
    N, C, Hp, Wp = xp.shape
    Ho = (Hp - k) // stride + 1
    Wo = (Wp - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N, Ho * Wo, C * k * k)
    return np.ascontiguousarray(cols), Ho, Wo


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-D convolution (cross-correlation) over NCHW or CHW input.

    Output spatial dims follow floor((H + 2p - k)/s) + 1. Differentiable in
    the input, the weight and the bias.
    """
    x, weight = astensor(x), astensor(weight)
    bias = astensor(bias) if bias is not None else None
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects NCHW (or CHW) input and OIKK weight")
    N, C, H, W = xd.shape
    Cout, Cin, k, k2 = weight.shape
    if k != k2:
        raise ValueError("conv2d kernels must be square")
    if Cin != C:
        raise ValueError(f"conv2d channel mismatch: input has {C}, weight expects {Cin}")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    parents = (x, weight, bias) if bias is not None else (x, weight)

    if stride == 1:
        _, _, Hp, Wp = xp.shape
        Ho, Wo = Hp - k + 1, Wp - k + 1
        xf = np.ascontiguousarray(xp.transpose(0, 2, 3, 1)).reshape(-1, C)
        wt = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))
        of = _shift_gemm_fwd(xf, wt, Wp, k, Hp * Wp)
        if bias is not None:
            of += bias.data
        out = np.ascontiguousarray(
            of.reshape(N, Hp, Wp, Cout)[:, :Ho, :Wo].transpose(0, 3, 1, 2))
        if squeeze:
            out = out[0]

        def bwd(g):
            gd = g[None] if squeeze else g
            if bias is not None:
                _accumulate(bias, gd.sum(axis=(0, 2, 3)))
            # re-embed the output gradient in padded NHWC geometry so the
            # shifted-GEMM offsets line up with the forward pass
            gf = np.zeros((N, Hp, Wp, Cout), dtype=gd.dtype)
            gf[:, :Ho, :Wo] = gd.transpose(0, 2, 3, 1)
            gf = gf.reshape(-1, Cout)
            gw = _shift_gemm_dw(gf, xf, Wp, k)
            _accumulate(weight, gw.transpose(3, 2, 0, 1))
            gxf = _shift_gemm_dx(gf, wt, Wp, k, xf.shape[0], C)
            gxp = gxf.reshape(N, Hp, Wp, C).transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
            _accumulate(x, gx[0] if squeeze else np.ascontiguousarray(gx))

        return _make(out, parents, bwd)

    cols, Ho, Wo = _im2col(xp, k, stride)
    wmat = weight.data.reshape(Cout, -1)
    # per-sample matmul keeps GEMM shapes batch-size independent (see above)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.transpose(0, 2, 1).reshape(N, Cout, Ho, Wo)
    if squeeze:
        out = out[0]

    def bwd(g):
        gm = (g[None] if squeeze else g).transpose(0, 2, 3, 1).reshape(N, Ho * Wo, Cout)
        if bias is not None:
            _accumulate(bias, gm.sum(axis=(0, 1)))
        gw = gm.reshape(-1, Cout).T @ cols.reshape(N * Ho * Wo, -1)
        _accumulate(weight, gw.reshape(weight.shape))
        gcols = gm @ wmat  # (N, Ho*Wo, C*k*k)
        gcols = gcols.reshape(N, Ho, Wo, C, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[..., i, j]
        gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
        _accumulate(x, gx[0] if squeeze else gx)

    return _make(out, parents, bwd)


def batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Channelwise batch normalization over NCHW or CHW input.

    Train mode normalizes by batch statistics and updates the running
    stats in place (numpy arrays owned by the layer); eval mode uses the
    running stats. Differentiable in x, gamma, beta.
    """
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    N, C, H, W = xd.shape
    cshape = (1, C, 1, 1)

    if training:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        n = N * H * W
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        unbiased = var * (n / max(n - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean.reshape(cshape)) * inv_std.reshape(cshape)
    out = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)
    if squeeze:
        out = out[0]

    def bwd(g):
        gd = g[None] if squeeze else g
        _accumulate(gamma, (gd * xhat).sum(axis=(0, 2, 3)))
        _accumulate(beta, gd.sum(axis=(0, 2, 3)))
        gs = gamma.data.reshape(cshape) * inv_std.reshape(cshape)
        if training:
            m_g = gd.mean(axis=(0, 2, 3), keepdims=True)
            m_gx = (gd * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = gs * (gd - m_g - xhat * m_gx)
        else:
            gx = gs * gd
        _accumulate(x, gx[0] if squeeze else gx)

    return _make(out, (x, gamma, beta), bwd)


# -- resampling -----------------------------------------------------------


def _up1d(x: np.ndarray) -> np.ndarray:
    """Double the last axis with half-pixel-center bilinear weights.

    out[2i] = 0.25 x[i-1] + 0.75 x[i], out[2i+1] = 0.75 x[i] + 0.25 x[i+1],
    clamped at the ends (weights fold onto the edge sample).
    """
    n = x.shape[-1]
    out = np.empty(x.shape[:-1] + (2 * n,), dtype=x.dtype)
    ev = out[..., 0::2]
    od = out[..., 1::2]
    ev[..., 1:] = 0.25 * x[..., :-1] + 0.75 * x[..., 1:]
    ev[..., 0] = x[..., 0]
    od[..., :-1] = 0.75 * x[..., :-1] + 0.25 * x[..., 1:]
    od[..., -1] = x[..., -1]
    return out


def _up1d_grad(g: np.ndarray) -> np.ndarray:
    """Adjoint of `_up1d` along the last axis."""
    ge = g[..., 0::2]
    go = g[..., 1::2]
    gx = (0.75 * (ge + go)).astype(g.dtype)
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., -1] += 0.25 * go[..., -1]
    return gx


def bilinear_upsample2x(x):
    """Upsample the last two axes by 2 with half-pixel-center bilinear weights."""
    x = astensor(x)
    data = _up1d(np.swapaxes(_up1d(x.data), -1, -2))
    data = np.ascontiguousarray(np.swapaxes(data, -1, -2))

    def bwd(g):
        gr = np.swapaxes(_up1d_grad(np.swapaxes(g, -1, -2)), -1, -2)
        _accumulate(x, _up1d_grad(gr))

    return _make(data, (x,), bwd)


def bilinear_sample(x, xs: np.ndarray, ys: np.ndarray):
    """Sample a C×H×W tensor at real coordinates (xs, ys), zero outside.

    Returns (C×H'×W' tensor, H'×W' validity mask). Coordinate maps are
    constants (not differentiated); gradients flow into x by scatter.
    """
    x = astensor(x)
    C, H, W = x.shape
    valid = (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1)
    xc = np.clip(xs, 0, W - 1)
    yc = np.clip(ys, 0, H - 1)
    x0 = np.floor(xc).astype(np.int64)
    y0 = np.floor(yc).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (xc - x0).astype(x.dtype)
    fy = (yc - y0).astype(x.dtype)
    w00 = (1 - fx) * (1 - fy) * valid
    w01 = fx * (1 - fy) * valid
    w10 = (1 - fx) * fy * valid
    w11 = fx * fy * valid
    d = x.data
    data = (d[:, y0, x0] * w00 + d[:, y0, x1] * w01 +
            d[:, y1, x0] * w10 + d[:, y1, x1] * w11)

    def bwd(g):
        # scatter-add via bincount: much faster than np.add.at
        i00 = (y0 * W + x0).ravel()
        i01 = (y0 * W + x1).ravel()
        i10 = (y1 * W + x0).ravel()
        i11 = (y1 * W + x1).ravel()
        idx = np.concatenate([i00, i01, i10, i11])
        gx = np.empty((C, H * W), dtype=d.dtype)
        for c in range(C):
            wts = np.concatenate([(g[c] * w00).ravel(), (g[c] * w01).ravel(),
                                  (g[c] * w10).ravel(), (g[c] * w11).ravel()])
            gx[c] = np.bincount(idx, weights=wts, minlength=H * W)
        _accumulate(x, gx.reshape(C, H, W))

    return _make(data, (x,), bwd), valid.astype(x.dtype)
