"""Dense numpy kernels with hand-written backward passes.

All products go through :func:`bmm`, so a sample's result does not depend on what else
is in the batch. Allocations follow the input dtype; the model runs in float64.
"""
import numpy as np

from .errors import ShapeError


def bmm(x, w):
    """``x @ w`` computed one leading-axis item at a time.

    numpy may route a stacked product through different BLAS calls depending
    on the batch size; looping pins each sample to the same per-item call.
    """
    x = np.asarray(x)
    n_out = w.shape[-1]
    out = np.empty(x.shape[:-1] + (n_out,), dtype=np.result_type(x, w))
    if w.ndim == 2:
        for i, xi in enumerate(x):
            np.matmul(xi, w, out=out[i])
    else:
        for i, (xi, wi) in enumerate(zip(x, w)):
            np.matmul(xi, wi, out=out[i])
    return out


def softmax(x, axis=-1):
    e = x - x.max(axis=axis, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def silu(x):
    den = np.exp(-x)
    den += 1.0
    return np.divide(x, den, out=den)


def silu_backward(dout, x):
    s = 1.0 / (1.0 + np.exp(-x))
    return dout * (s + x * s * (1.0 - s))


def linear(x, w, b=None):
    y = bmm(x, w)
    if b is not None:
        y = y + b
    return y


def linear_backward(dout, x, w):
    """Returns ``(dx, dw, db)`` for ``y = x @ w + b`` with x of shape (..., in)."""
    dx = bmm(dout, w.T)
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dx, x2.T @ d2, d2.sum(axis=0)


def conv2d(x, w, b):
    """Stride 1, 'same' padding convolution. ``w`` is (Cout, Cin, k, k), k odd.

    A k x k kernel is applied as k*k products against shifted slices of the
    zero-padded, row-flattened input, which avoids an im2col copy. Rows of
    the result carry ``k - 1`` junk columns that are dropped.

    Returns ``(y, flat)``; ``flat`` is the padded input needed for backward.
    """
    cout, cin, k, _ = w.shape
    if x.ndim != 4 or x.shape[1] != cin:
        raise ShapeError(f"conv expects (B, {cin}, H, W), got {x.shape}")
    bsz, _, h, wd = x.shape
    if k == 1:
        flat = x.reshape(bsz, cin, h * wd)
        y = np.stack([w[:, :, 0, 0] @ xi for xi in flat]) + b[:, None]
        return y.reshape(bsz, cout, h, wd), flat
    p = k // 2
    wp = wd + 2 * p
    xp = np.zeros((bsz, cin, h + 2 * p + 1, wp), dtype=x.dtype)
    xp[:, :, p:p + h, p:p + wd] = x
    flat = xp.reshape(bsz, cin, -1)
    span = h * wp
    taps = [(i * wp + j, np.ascontiguousarray(w[:, :, i, j])) for i in range(k) for j in range(k)]
    y = np.empty((bsz, cout, span), dtype=x.dtype)
    tmp = np.empty((cout, span), dtype=x.dtype)
    for n in range(bsz):
        acc = y[n]
        off, wt = taps[0]
        np.matmul(wt, flat[n, :, off:off + span], out=acc)
        for off, wt in taps[1:]:
            np.matmul(wt, flat[n, :, off:off + span], out=tmp)
            acc += tmp
    y = y.reshape(bsz, cout, h, wp)[:, :, :, :wd] + b[:, None, None]
    return y, flat


def conv2d_backward(dout, flat, x_shape, w):
    cout, cin, k, _ = w.shape
    bsz, _, h, wd = x_shape
    db = dout.sum(axis=(0, 2, 3))
    if k == 1:
        d2 = dout.reshape(bsz, cout, h * wd)
        dw = sum(di @ xi.T for di, xi in zip(d2, flat)).reshape(w.shape)
        dx = np.stack([w[:, :, 0, 0].T @ di for di in d2])
        return dx.reshape(x_shape), dw, db
    p = k // 2
    wp = wd + 2 * p
    span = h * wp
    dpad = np.zeros((bsz, cout, h, wp))
    dpad[:, :, :, :wd] = dout
    dpad = dpad.reshape(bsz, cout, span)
    dw = np.zeros_like(w)
    dflat = np.zeros_like(flat)
    for i in range(k):
        for j in range(k):
            off = i * wp + j
            wt = np.ascontiguousarray(w[:, :, i, j].T)
            for n in range(bsz):
                dw[:, :, i, j] += dpad[n] @ flat[n, :, off:off + span].T
                dflat[n, :, off:off + span] += wt @ dpad[n]
    dx = dflat.reshape(bsz, cin, h + 2 * p + 1, wp)[:, :, p:p + h, p:p + wd]
    return dx, dw, db


def group_norm(x, gamma, beta, groups, eps=1e-5):
    bsz, c = x.shape[:2]
    if c % groups:
        raise ShapeError(f"{c} channels not divisible into {groups} groups")
    xg = x.reshape(bsz, groups, -1)
    xc = xg - xg.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(np.einsum("bgn,bgn->bg", xc, xc)[..., None] / xg.shape[-1] + eps)
    xc *= inv
    xhat = xc.reshape(x.shape)
    shape = (1, c) + (1,) * (x.ndim - 2)
    out = xhat * gamma.reshape(shape)
    out += beta.reshape(shape)
    return out, (xhat, inv, groups)


def group_norm_backward(dout, cache, gamma):
    xhat, inv, groups = cache
    bsz, c = dout.shape[:2]
    shape = (1, c) + (1,) * (dout.ndim - 2)
    axes = (0,) + tuple(range(2, dout.ndim))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = (dout * gamma.reshape(shape)).reshape(bsz, groups, -1)
    xh = xhat.reshape(bsz, groups, -1)
    n = xh.shape[-1]
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                    - xh * (dxhat * xh).sum(-1, keepdims=True))
    return dx.reshape(dout.shape), dgamma, dbeta


def avg_pool2(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avg_pool2_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25


def upsample2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_backward(dout):
    b, c, h, w = dout.shape
    return dout.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def attention(x, wq, wk, wv, wo):
    """Single-head self-attention over tokens ``x`` of shape (B, N, d).

    Returns ``(x + softmax(q k^T / sqrt(d)) v @ wo, cache)``.
    """
    d = x.shape[-1]
    if wq.shape != (d, d):
        raise ShapeError(f"feature width {d} does not match projection {wq.shape}")
    qkv = bmm(x, np.concatenate([wq, wk, wv], axis=1))
    q, k, v = qkv[..., :d], qkv[..., d:2 * d], qkv[..., 2 * d:]
    a = softmax(bmm(q * (1.0 / np.sqrt(d)), k.transpose(0, 2, 1)))
    o = bmm(a, v)
    return x + bmm(o, wo), (x, q, k, v, a, o)


def attention_backward(dout, cache, wq, wk, wv, wo):
    x, q, k, v, a, o = cache
    d = x.shape[-1]
    scale = 1.0 / np.sqrt(d)
    do, dwo, _ = linear_backward(dout, o, wo)
    da = bmm(do, v.transpose(0, 2, 1))
    dv = bmm(a.transpose(0, 2, 1), do)
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = bmm(ds, k)
    dk = bmm(ds.transpose(0, 2, 1), q)
    dx = dout.copy()
    grads = []
    for dproj, w in ((dq, wq), (dk, wk), (dv, wv)):
        dxi, dwi, _ = linear_backward(dproj, x, w)
        dx += dxi
        grads.append(dwi)
    return dx, grads[0], grads[1], grads[2], dwo


def timestep_embedding(t, dim):
    """Sinusoidal embedding; ``t`` is an array of shape (B,)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)
