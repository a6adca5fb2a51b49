"""Differentiable primitives.

Each function takes Tensors (or array-likes, promoted as constants) and
returns a Tensor whose backward closure yields exact analytic gradients.
"""
from __future__ import annotations

import builtins

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, numpy broadcasting rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis of ``x``.

    ``weight`` is (in_features, out_features); leading axes of ``x`` are batch.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    n_in, n_out = weight.shape
    x2 = x.data.reshape(-1, n_in)
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (n_out,))

    def backward(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out, copy=True), (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ: {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return make_result(out, tensors, backward)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return make_result(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: surviving units are scaled by 1/(1-p) so eval mode is identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: input shape {x.shape} needs gamma/beta of shape ({d},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    x: (B, C, H, W); weight: (F, C, kh, kw); bias: (F,). Zero padding of
    ``padding`` pixels on every side.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input shape {x.shape} incompatible with weight shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    B, C, H, W = x.shape
    F, _, kh, kw = weight.shape
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (F,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} != ({F},)")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} larger than padded input {(Hp, Wp)}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, kh, kw, Ho, Wo): one column per output pixel, kept in NCHW order
    cols = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * kh * kw, Ho * Wo)
    wmat = weight.data.reshape(F, C * kh * kw)
    out = (wmat @ cols).reshape(B, F, Ho, Wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        g3 = g.reshape(B, F, Ho * Wo)
        gw = None
        if weight.requires_grad:
            gw = (g3.transpose(1, 0, 2).reshape(F, -1) @ cols.transpose(1, 0, 2).reshape(C * kh * kw, -1).T)
            gw = gw.reshape(weight.shape)
        gx = None
        if x.requires_grad:
            dcols = (wmat.T @ g3).reshape(B, C, kh, kw, Ho, Wo)
            dxp = np.zeros((B, C, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, :, i, j]
            gx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


# ---------------------------------------------------------------------------
# attention and recurrence (compositions of the primitives above)
# ---------------------------------------------------------------------------

def scaled_dot_product_attention(q, k, v) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d)) v over the last two axes; returns (output, weights)."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    scores = matmul(q, transpose(k, _swap_last(k.ndim))) * (1.0 / np.sqrt(q.shape[-1]))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(x, w_qkv, b_qkv, w_out, b_out, n_heads: int) -> tuple[Tensor, Tensor]:
    """Self-attention over tokens of ``x`` (B, T, D) with ``n_heads`` heads.

    Returns the projected output (B, T, D) and the weights (B, heads, T, T).
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"multi_head_attention: expected (B, T, D) input, got {x.shape}")
    B, T, D = x.shape
    if D % n_heads:
        raise ShapeError(f"multi_head_attention: {n_heads} heads do not divide width {D}")
    dh = D // n_heads
    qkv = linear(x, w_qkv, b_qkv)  # (B, T, 3D)
    qkv = transpose(reshape(qkv, (B, T, 3, n_heads, dh)), (2, 0, 3, 1, 4))  # (3, B, h, T, dh)
    q, k, v = qkv[0], qkv[1], qkv[2]
    ctx, weights = scaled_dot_product_attention(q, k, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, T, D))
    return linear(ctx, w_out, b_out), weights


def gru_cell(x, h, w_x, u_zr, u_n, b) -> Tensor:
    """One GRU step.

    w_x: (in, 3H) input weights for [update | reset | candidate];
    u_zr: (H, 2H) recurrent weights for [update | reset];
    u_n: (H, H) recurrent weights for the candidate; b: (3H,).

        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        n = tanh(x Wn + (r * h) Un + bn)
        h' = (1 - z) * n + z * h
    """
    x, h = as_tensor(x), as_tensor(h)
    w_x = as_tensor(w_x)
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_cell: batch dimensions of x {x.shape} and h {h.shape} disagree")
    hidden = h.shape[1]
    if w_x.shape != (x.shape[1], 3 * hidden):
        raise ShapeError(f"gru_cell: input weight shape {w_x.shape} != ({x.shape[1]}, {3 * hidden})")
    return gru_step_from_projection(linear(x, w_x, b), h, u_zr, u_n)


def gru_step_from_projection(xw, h, u_zr, u_n) -> Tensor:
    """GRU step given the precomputed input projection ``xw`` = x W + b, shape (B, 3H)."""
    h = as_tensor(h)
    hidden = h.shape[1]
    u_zr, u_n = as_tensor(u_zr), as_tensor(u_n)
    if u_zr.shape != (hidden, 2 * hidden) or u_n.shape != (hidden, hidden):
        raise ShapeError(
            f"gru_cell: recurrent weight shapes {u_zr.shape}, {u_n.shape} do not match hidden size {hidden}"
        )
    hu = matmul(h, u_zr)
    z = sigmoid(xw[:, :hidden] + hu[:, :hidden])
    r = sigmoid(xw[:, hidden:2 * hidden] + hu[:, hidden:])
    n = tanh(xw[:, 2 * hidden:] + matmul(r * h, u_n))
    return n + z * (h - n)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def binary_cross_entropy(pred, target) -> Tensor:
    """Mean BCE between probabilities ``pred`` and 0/1 (or soft) ``target``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"binary_cross_entropy: prediction shape {pred.shape} != target shape {target.shape}")
    p, t = pred.data, target.data
    n = builtins.max(p.size, 1)
    pos = t > 0
    neg = t < 1
    with np.errstate(divide="ignore"):
        term = np.where(pos, t * np.log(np.where(pos, p, 1.0)), 0.0)
        term = term + np.where(neg, (1.0 - t) * np.log(np.where(neg, 1.0 - p, 1.0)), 0.0)
    loss = -term.sum() / n

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = np.where(pos, -t / np.where(pos, p, 1.0), 0.0)
            dp = dp + np.where(neg, (1.0 - t) / np.where(neg, 1.0 - p, 1.0), 0.0)
        return g * dp / n, None

    return make_result(np.asarray(loss), (pred, target), backward)


def binary_cross_entropy_with_logits(logits, target) -> Tensor:
    """Mean BCE of sigmoid(logits) against ``target``, computed without overflow."""
    logits, target = as_tensor(logits), as_tensor(target)
    if logits.shape != target.shape:
        raise ShapeError(
            f"binary_cross_entropy_with_logits: logit shape {logits.shape} != target shape {target.shape}"
        )
    z, t = logits.data, target.data
    n = builtins.max(z.size, 1)
    loss = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def backward(g):
        return g * (_sigmoid(z) - t) / n, None

    return make_result(np.asarray(loss), (logits, target), backward)


def one_hot(indices, depth: int) -> np.ndarray:
    """Constant one-hot encoding (indices are not differentiable)."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= depth):
        raise ValueError(f"one_hot: indices must lie in [0, {depth}), got range [{idx.min()}, {idx.max()}]")
    out = np.zeros(idx.shape + (depth,))
    np.put_along_axis(out, idx[..., None].astype(np.intp), 1.0, axis=-1)
    return out
