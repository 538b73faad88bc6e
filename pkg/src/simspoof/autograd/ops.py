"""Differentiable operations.

Elementwise ops follow numpy broadcasting; their backward sums the incoming
gradient over broadcast dimensions (:func:`unbroadcast`). Spatial ops work on
``C x H x W`` maps or batched ``B x C x H x W`` maps.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    if not isinstance(a, Tensor):
        ref = b.dtype if isinstance(b, Tensor) else None
        a = Tensor(np.asarray(a, dtype=ref))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None
    return a, b, shape


# -- binary elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b, _ = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b, _ = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b, _ = _pair(a, b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b, _ = _pair(a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by a tensor containing zeros")
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "div")


def maximum(a, b) -> Tensor:
    a, b, _ = _pair(a, b)
    pick_a = a.data >= b.data

    def backward(g):
        return unbroadcast(g * pick_a, a.shape), unbroadcast(g * ~pick_a, b.shape)

    return Tensor._from_op(np.where(pick_a, a.data, b.data), (a, b), backward, "maximum")


# -- unary elementwise --------------------------------------------------------

def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def selu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    pos = x > 0
    neg_part = SELU_SCALE * SELU_ALPHA * np.exp(np.minimum(x, 0.0))
    out = np.where(pos, SELU_SCALE * x, neg_part - SELU_SCALE * SELU_ALPHA)

    def backward(g):
        return (g * np.where(pos, SELU_SCALE, neg_part),)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (a,), backward, "selu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def arccos(a) -> Tensor:
    a = as_tensor(a)
    if np.any(np.abs(a.data) >= 1.0):
        raise ValueError("arccos argument must lie strictly inside (-1, 1)")
    x = a.data
    return Tensor._from_op(np.arccos(x), (a,), lambda g: (-g / np.sqrt(1.0 - x * x),), "arccos")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return Tensor._from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values; gradient passes only where the input was inside the bounds."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return Tensor._from_op(out, (a,), lambda g: (g * inside,), "clip")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "sigmoid": lambda a, b=None: sigmoid(a),
    "selu": lambda a, b=None: selu(a),
    "square": lambda a, b=None: square(a),
    "scale": scale,
}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch one of the named elementwise kinds."""
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


# -- reductions ---------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def amax(a, axis: int, keepdims=False) -> Tensor:
    """Maximum along one axis; gradient goes to the first maximal entry."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    if not keepdims:
        out = np.squeeze(out, axis)
    return Tensor._from_op(out, (a,), backward, "amax")


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.array(out, copy=True), (a,), backward, "getitem")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}: {exc}") from None
    return Tensor._from_op(out, tuple(tensors), backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ad, bd = a.data, b.data
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, bd)
            else:
                ga = g @ np.swapaxes(bd, -1, -2) if a.ndim > 1 else g @ bd.T
            ga = unbroadcast(np.asarray(ga), a.shape)
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(ad, g)
            elif b.ndim == 1:
                gb = np.swapaxes(ad, -1, -2) @ g
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
            gb = unbroadcast(np.asarray(gb), b.shape)
        return ga, gb

    return Tensor._from_op(np.asarray(out), (a, b), backward, "matmul")


def linear(x, W, b=None) -> Tensor:
    """``x @ W (+ b)`` with ``W`` stored as ``d x c``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    out = matmul(x, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
        out = add(out, b)
    return out


# -- convolution and pooling --------------------------------------------------

def _as_pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, kernels, bias=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``[B x] C_in x H x W`` with ``C_out x C_in x kh x kw`` kernels."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects 3-D/4-D input and 4-D kernels, got {x.shape} and {kernels.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernels.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input has {C} channels but kernels expect {Ck}")
    sh, sw = _as_pair(stride)
    ph, pw = _as_pair(padding)
    if sh < 1 or sw < 1:
        raise ValueError("conv2d stride must be positive")
    if kh > H + 2 * ph or kw > W + 2 * pw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {H + 2 * ph}x{W + 2 * pw}")
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    K = kernels.data
    N = Ho * Wo

    def tap(arr, i, j):
        return arr[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]

    # im2col in channel-first layout: cols[b, (c, i, j), n]
    cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = tap(xp, i, j)
    cols = cols.reshape(B, C * kh * kw, N)
    Kmat = K.reshape(O, -1).astype(xp.dtype, copy=False)
    out = (Kmat @ cols).reshape(B, O, Ho, Wo)

    def backward(g):
        gx = gk = None
        gf = g.reshape(B, O, N)
        if kernels.requires_grad:
            gk = np.zeros((O, C * kh * kw), dtype=g.dtype)
            for b in range(B):
                gk += gf[b] @ cols[b].T
            gk = gk.reshape(K.shape)
        if x.requires_grad:
            gcols = (Kmat.T @ gf).reshape(B, C, kh, kw, Ho, Wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    tap(gxp, i, j)[...] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
        return gx, gk

    y = Tensor._from_op(out, (x, kernels), backward, "conv2d")
    if bias is not None:
        y = add(y, reshape(as_tensor(bias), (1, O, 1, 1)))
    if unbatched:
        y = reshape(y, y.shape[1:])
    return y


def max_pool2d(x, window=2, stride=None) -> Tensor:
    """Max over ``window`` patches of the last two axes (floor mode).

    Gradient is routed to the lowest flat index inside each window on ties.
    """
    x = as_tensor(x)
    kh, kw = _as_pair(window)
    sh, sw = _as_pair(stride if stride is not None else (kh, kw))
    if kh < 1 or kw < 1:
        raise ValueError("max_pool2d window must be at least 1x1")
    H, W = x.shape[-2:]
    if kh > H or kw > W:
        raise ShapeError(f"max_pool2d window {kh}x{kw} does not fit input {H}x{W}")
    Ho = (H - kh) // sh + 1
    Wo = (W - kw) // sw + 1
    lead = x.shape[:-2]
    win = sliding_window_view(x.data, (kh, kw), axis=(-2, -1))[..., ::sh, ::sw, :, :]
    win = win[..., :Ho, :Wo, :, :].reshape(lead + (Ho, Wo, kh * kw))
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        di, dj = np.divmod(arg, kw)
        rows = np.arange(Ho)[:, None] * sh + di
        cols = np.arange(Wo)[None, :] * sw + dj
        flat = gx.reshape(-1, H * W)
        lin = (rows * W + cols).reshape(-1, Ho * Wo)
        np.add.at(flat, (np.arange(flat.shape[0])[:, None], lin), g.reshape(-1, Ho * Wo))
        return (flat.reshape(x.shape),)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def adaptive_avg_pool(x, target: int, axis: int = -1) -> Tensor:
    """Average ``axis`` down to ``target`` regions ``[floor(i*n/t), ceil((i+1)*n/t))``."""
    x = as_tensor(x)
    if target < 1:
        raise ValueError("adaptive_avg_pool target must be at least 1")
    axis = axis % x.ndim
    n = x.shape[axis]
    starts = [(i * n) // target for i in range(target)]
    ends = [-(-((i + 1) * n) // target) for i in range(target)]
    weights = np.zeros((n, target), dtype=x.dtype)
    for i, (s, e) in enumerate(zip(starts, ends)):
        weights[s:e, i] = 1.0 / (e - s)
    moved = transpose(x, tuple(a for a in range(x.ndim) if a != axis) + (axis,))
    pooled = matmul(moved, Tensor(weights))
    back = list(range(x.ndim - 1))
    back.insert(axis, x.ndim - 1)
    return transpose(pooled, tuple(back))


POOLS = {"max2d": max_pool2d, "adaptive_avg": adaptive_avg_pool}


def pool(kind: str, x, *args, **kwargs) -> Tensor:
    try:
        fn = POOLS[kind]
    except KeyError:
        raise ValueError(f"unknown pool kind {kind!r}") from None
    return fn(x, *args, **kwargs)


# -- recurrent ----------------------------------------------------------------

def _sig(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gru(x, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """Single-layer GRU over ``B x T x I`` with zero initial state.

    Weights are ``I x 3H`` and ``H x 3H`` with gate blocks ordered
    (reset, update, candidate). Returns all hidden states, ``B x T x H``.
    """
    x, w_ih, w_hh, b_ih, b_hh = (as_tensor(t) for t in (x, w_ih, w_hh, b_ih, b_hh))
    if x.ndim != 3:
        raise ShapeError(f"gru expects B x T x I input, got {x.shape}")
    B, T, I = x.shape
    if w_ih.shape[0] != I or w_ih.shape[1] % 3:
        raise ShapeError(f"gru input weight {w_ih.shape} incompatible with input size {I}")
    H = w_ih.shape[1] // 3
    if w_hh.shape != (H, 3 * H) or b_ih.shape != (3 * H,) or b_hh.shape != (3 * H,):
        raise ShapeError("gru weight/bias shapes inconsistent with hidden size")
    Wi, Wh, bi, bh = w_ih.data, w_hh.data, b_ih.data, b_hh.data
    gi_all = x.data @ Wi + bi
    hs = np.zeros((B, T + 1, H), dtype=gi_all.dtype)
    rs, zs, ns, hns = [], [], [], []
    for t in range(T):
        h = hs[:, t]
        gi = gi_all[:, t]
        gh = h @ Wh + bh
        r = _sig(gi[:, :H] + gh[:, :H])
        z = _sig(gi[:, H:2 * H] + gh[:, H:2 * H])
        hn = gh[:, 2 * H:]
        n = np.tanh(gi[:, 2 * H:] + r * hn)
        hs[:, t + 1] = (1.0 - z) * n + z * h
        rs.append(r)
        zs.append(z)
        ns.append(n)
        hns.append(hn)
    out = hs[:, 1:].copy()

    def backward(g):
        dWi = np.zeros_like(Wi)
        dWh = np.zeros_like(Wh)
        dbi = np.zeros_like(bi)
        dbh = np.zeros_like(bh)
        dx = np.zeros_like(x.data)
        dh_next = np.zeros((B, H), dtype=g.dtype)
        for t in reversed(range(T)):
            dh = g[:, t] + dh_next
            h = hs[:, t]
            r, z, n, hn = rs[t], zs[t], ns[t], hns[t]
            dn = dh * (1.0 - z)
            dz = dh * (h - n)
            dpre_n = dn * (1.0 - n * n)
            dr = dpre_n * hn
            dpre_r = dr * r * (1.0 - r)
            dpre_z = dz * z * (1.0 - z)
            dgi = np.concatenate([dpre_r, dpre_z, dpre_n], axis=1)
            dgh = np.concatenate([dpre_r, dpre_z, dpre_n * r], axis=1)
            dWi += x.data[:, t].T @ dgi
            dbi += dgi.sum(axis=0)
            dWh += h.T @ dgh
            dbh += dgh.sum(axis=0)
            dx[:, t] = dgi @ Wi.T
            dh_next = dh * z + dgh @ Wh.T
        return dx, dWi, dWh, dbi, dbh

    return Tensor._from_op(out, (x, w_ih, w_hh, b_ih, b_hh), backward, "gru")
