"""Recurrent cells, dilated causal convolutions and their reverse-mode passes.

Sequence tensors are laid out ``(batch, time, channels)``; recurrent
outputs may be transposed views of time-major storage.  Every backward
function takes the cache produced by the matching forward function and
returns the input gradient plus a dict of parameter gradients keyed like the
parameter dict (``Wx``, ``Wh``, ``b`` or ``K``, ``b``).
"""
import numpy as np
from scipy.special import expit

from ..exceptions import DomainError, ShapeError


def sigmoid(a):
    return expit(a)


def _gate(a, out=None):
    # tanh form of the logistic; several times faster than expit on large
    # arrays, and gates never need the far tails
    out = np.multiply(a, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def softplus(a):
    return np.logaddexp(0.0, a)


def _check_cell(x_t, h_prev, p, gates):
    x_t = np.atleast_2d(x_t)
    h_prev = np.atleast_2d(h_prev)
    d, h = p["Wx"].shape[0], p["Wh"].shape[0]
    if x_t.shape[-1] != d or h_prev.shape[-1] != h:
        raise ShapeError(f"cell expects input width {d} and state width {h}, got {x_t.shape[-1]} and {h_prev.shape[-1]}")
    if p["Wx"].shape[1] != gates * h or p["Wh"].shape != (h, gates * h) or p["b"].shape != (gates * h,):
        raise ShapeError("cell parameter shapes are inconsistent")
    if x_t.shape[0] != h_prev.shape[0]:
        raise ShapeError("input and state batch sizes differ")
    return x_t, h_prev


def _squeeze_like(out, ref):
    return out[0] if np.ndim(ref) == 1 else out


def rnn_cell_forward(x_t, h_prev, params):
    """``tanh(x Wx + h Wh + b)``; accepts single vectors or batches."""
    x, h = _check_cell(x_t, h_prev, params, 1)
    return _squeeze_like(np.tanh(x @ params["Wx"] + h @ params["Wh"] + params["b"]), h_prev)


def lstm_cell_forward(x_t, h_prev, c_prev, params):
    """Gated update with gate blocks ordered input, forget, output, candidate."""
    x, h = _check_cell(x_t, h_prev, params, 4)
    c = np.atleast_2d(c_prev)
    if c.shape != h.shape:
        raise ShapeError("cell state and hidden state shapes differ")
    H = h.shape[1]
    a = x @ params["Wx"] + h @ params["Wh"] + params["b"]
    i, f, o = _gate(a[:, :H]), _gate(a[:, H:2 * H]), _gate(a[:, 2 * H:3 * H])
    g = np.tanh(a[:, 3 * H:])
    c_t = f * c + i * g
    h_t = o * np.tanh(c_t)
    return _squeeze_like(h_t, h_prev), _squeeze_like(c_t, h_prev)


def gru_cell_forward(x_t, h_prev, params):
    """Update gate ``z``, reset gate ``r``; ``h = (1 - z) h_prev + z n``."""
    x, h = _check_cell(x_t, h_prev, params, 3)
    H = h.shape[1]
    ax = x @ params["Wx"] + params["b"]
    Wh = params["Wh"]
    zr = _gate(ax[:, :2 * H] + h @ Wh[:, :2 * H])
    z, r = zr[:, :H], zr[:, H:]
    n = np.tanh(ax[:, 2 * H:] + (r * h) @ Wh[:, 2 * H:])
    return _squeeze_like((1.0 - z) * h + z * n, h_prev)


# --------------------------------------------------------------------------
# sequence passes
#
# Caches are time-major so each step touches contiguous memory.  Every step
# multiplies a row block ``[h_prev, x_t, 1]`` by the stacked weights
# ``[Wh; Wx; b]``, which folds the input projection and bias into one GEMM and
# turns the weight gradient into a single product after the loop.


def _stack(p, cols=slice(None)):
    return np.concatenate([p["Wh"][:, cols], p["Wx"][:, cols], p["b"][None, cols]])


def _design(X, H, dtype):
    """``(T, N, H + D + 1)`` buffer of ``[h_prev, x_t, 1]`` rows; the state part is filled by the caller."""
    N, T, D = X.shape
    Z = np.empty((T, N, H + D + 1), dtype)
    Z[:, :, H:H + D] = X.transpose(1, 0, 2)
    Z[:, :, -1] = 1.0
    Z[0, :, :H] = 0.0
    return Z


def _stacked_grad(Z, dA):
    return Z.reshape(-1, Z.shape[2]).T @ dA.reshape(-1, dA.shape[2])


def _split_grad(dW, H, D):
    return {"Wx": dW[H:H + D], "Wh": dW[:H], "b": dW[H + D]}


def _input_grad(dA, Wx):
    T, N, _ = dA.shape
    return (dA.reshape(T * N, -1) @ Wx.T).reshape(T, N, -1).transpose(1, 0, 2)


# gated cells keep one contiguous (T, N, H) block per gate: elementwise work
# on column slices of a (N, n*H) array is several times slower


def _gate_weights(p, n):
    """Stacked weights as ``(n, H + D + 1, H)``, one slab per gate."""
    W = _stack(p)
    return np.ascontiguousarray(W.reshape(W.shape[0], n, -1).transpose(1, 0, 2))


def _gate_weight_grad(Z, dA):
    Zf = Z.reshape(-1, Z.shape[2]).T
    return np.concatenate([Zf @ dA[k].reshape(-1, dA.shape[3]) for k in range(len(dA))], axis=1)


def _gate_input_grad(dA, W, H, D):
    n, T, N, _ = dA.shape
    dX = sum(dA[k].reshape(T * N, H) @ W[k, H:H + D].T for k in range(n))
    return dX.reshape(T, N, D).transpose(1, 0, 2)


def _gate_state_grad(da, W, H):
    return sum(da[k] @ W[k, :H].T for k in range(len(da)))


def rnn_forward(X, p):
    N, T, D = X.shape
    H = p["Wh"].shape[0]
    dt = np.result_type(X, p["Wh"])
    W = _stack(p)
    Z = _design(X, H, dt)
    Hs = np.empty((T, N, H), dt)
    for t in range(T):
        h = Hs[t]
        np.matmul(Z[t], W, out=h)
        np.tanh(h, out=h)
        if t + 1 < T:
            Z[t + 1, :, :H] = h
    return Hs.transpose(1, 0, 2), (Z, Hs, W, D)


def rnn_backward(dHs, cache):
    Z, Hs, W, D = cache
    T, N, H = Hs.shape
    dHt = np.asarray(dHs).transpose(1, 0, 2)
    dA = np.empty_like(Hs)
    dh = np.zeros((N, H), Hs.dtype)
    WhT = W[:H].T
    for t in range(T - 1, -1, -1):
        dh = dh + dHt[t]
        da = dA[t]
        np.multiply(dh, 1.0 - Hs[t] ** 2, out=da)
        if t:
            dh = da @ WhT
    return _input_grad(dA, W[H:H + D]), _split_grad(_stacked_grad(Z, dA), H, D)


def lstm_forward(X, p):
    N, T, D = X.shape
    H = p["Wh"].shape[0]
    dt = np.result_type(X, p["Wh"])
    W = _gate_weights(p, 4)
    Z = _design(X, H, dt)
    Hs = np.empty((T, N, H), dt)
    Cs = np.empty((T, N, H), dt)
    G = np.empty((4, T, N, H), dt)  # post-activation gates i, f, o, g
    c_prev = np.zeros((N, H), dt)
    for t in range(T):
        np.matmul(Z[t], W, out=G[:, t])
        i, f, o, cand = G[:, t]
        for gate in (i, f, o):
            _gate(gate, out=gate)
        np.tanh(cand, out=cand)
        c = Cs[t]
        np.multiply(f, c_prev, out=c)
        c += i * cand
        h = Hs[t]
        np.tanh(c, out=h)
        h *= o
        if t + 1 < T:
            Z[t + 1, :, :H] = h
        c_prev = c
    return Hs.transpose(1, 0, 2), (Z, Cs, G, W, D)


def lstm_backward(dHs, cache):
    Z, Cs, G, W, D = cache
    T, N, H = Cs.shape
    dHt = np.asarray(dHs).transpose(1, 0, 2)
    dA = np.empty_like(G)
    dh = np.zeros((N, H), Cs.dtype)
    dc = np.zeros((N, H), Cs.dtype)
    zeros = dc.copy()
    for t in range(T - 1, -1, -1):
        i, f, o, cand = G[:, t]
        c_prev = Cs[t - 1] if t > 0 else zeros
        tc = np.tanh(Cs[t])
        dh = dh + dHt[t]
        dc = dc + dh * o * (1.0 - tc**2)
        di, df, do, dg = dA[:, t]
        np.multiply(dc * cand, i * (1.0 - i), out=di)
        np.multiply(dc * c_prev, f * (1.0 - f), out=df)
        np.multiply(dh * tc, o * (1.0 - o), out=do)
        np.multiply(dc * i, 1.0 - cand**2, out=dg)
        dc = dc * f
        if t:
            dh = _gate_state_grad(dA[:, t], W, H)
    dW = _gate_weight_grad(Z, dA)
    return _gate_input_grad(dA, W, H, D), _split_grad(dW, H, D)


def gru_forward(X, p):
    N, T, D = X.shape
    H = p["Wh"].shape[0]
    dt = np.result_type(X, p["Wh"])
    Wzr = _gate_weights(p, 3)[:2]
    Wn = _stack(p, slice(2 * H, 3 * H))
    Z = _design(X, H, dt)   # [h_prev, x, 1] feeds the z, r gates
    Zn = _design(X, H, dt)  # [r * h_prev, x, 1] feeds the candidate
    Hs = np.empty((T, N, H), dt)
    Gzr = np.empty((2, T, N, H), dt)
    Gn = np.empty((T, N, H), dt)
    h_prev = np.zeros((N, H), dt)
    for t in range(T):
        np.matmul(Z[t], Wzr, out=Gzr[:, t])
        z, r = Gzr[:, t]
        _gate(z, out=z)
        _gate(r, out=r)
        np.multiply(r, h_prev, out=Zn[t, :, :H])
        n = Gn[t]
        np.matmul(Zn[t], Wn, out=n)
        np.tanh(n, out=n)
        h = Hs[t]
        np.subtract(n, h_prev, out=h)
        h *= z
        h += h_prev
        if t + 1 < T:
            Z[t + 1, :, :H] = h
        h_prev = h
    return Hs.transpose(1, 0, 2), (Z, Zn, Hs, Gzr, Gn, Wzr, Wn, D)


def gru_backward(dHs, cache):
    Z, Zn, Hs, Gzr, Gn, Wzr, Wn, D = cache
    T, N, H = Hs.shape
    dHt = np.asarray(dHs).transpose(1, 0, 2)
    UnT = Wn[:H].T
    dAzr = np.empty_like(Gzr)
    dAn = np.empty_like(Gn)
    dh = np.zeros((N, H), Hs.dtype)
    zeros = dh.copy()
    for t in range(T - 1, -1, -1):
        z, r = Gzr[:, t]
        n = Gn[t]
        h_prev = Hs[t - 1] if t > 0 else zeros
        dh = dh + dHt[t]
        dan = dAn[t]
        np.multiply(dh * z, 1.0 - n**2, out=dan)
        d_rh = dan @ UnT
        dz, dr = dAzr[:, t]
        np.multiply(dh * (n - h_prev), z * (1.0 - z), out=dz)
        np.multiply(d_rh * h_prev, r * (1.0 - r), out=dr)
        if t:
            dh = dh * (1.0 - z) + d_rh * r + _gate_state_grad(dAzr[:, t], Wzr, H)
    dW1, dW2 = _gate_weight_grad(Z, dAzr), _stacked_grad(Zn, dAn)
    grads = {
        "Wx": np.concatenate([dW1[H:H + D], dW2[H:H + D]], axis=1),
        "Wh": np.concatenate([dW1[:H], dW2[:H]], axis=1),
        "b": np.concatenate([dW1[H + D], dW2[H + D]]),
    }
    dX = _gate_input_grad(dAzr, Wzr, H, D) + _input_grad(dAn, Wn[H:H + D])
    return dX, grads


RECURRENT_PASSES = {
    "rnn": (rnn_forward, rnn_backward),
    "lstm": (lstm_forward, lstm_backward),
    "gru": (gru_forward, gru_backward),
}


# --------------------------------------------------------------------------
# dilated causal convolution


def _shift(X, s):
    """Delay along time by ``s`` steps with zero fill (causal padding)."""
    if s == 0:
        return X
    out = np.zeros_like(X)
    if s < X.shape[1]:
        out[:, s:] = X[:, :-s]
    return out


def _unshift(dY, s):
    if s == 0:
        return dY
    out = np.zeros_like(dY)
    if s < dY.shape[1]:
        out[:, :-s] = dY[:, s:]
    return out


def causal_conv_forward(X, K, b, dilation):
    """``y[t] = sum_k X[t - k*dilation] K[k] + b`` with zeros before the sequence start."""
    z = K.shape[0]
    Y = np.broadcast_to(b, X.shape[:2] + (K.shape[2],)).copy()
    for k in range(z):
        Y += _shift(X, k * dilation) @ K[k]
    return Y


def causal_conv_backward(dY, X, K, dilation):
    z = K.shape[0]
    dX = np.zeros_like(X)
    dK = np.empty_like(K)
    for k in range(z):
        s = k * dilation
        dK[k] = np.tensordot(_shift(X, s), dY, axes=([0, 1], [0, 1]))
        dX += _unshift(dY @ K[k].T, s)
    return dX, dK, dY.sum(axis=(0, 1))


def tcn_forward(x, params, dropout_mode="infer", dropout=0.0, activation="relu", rng=None, return_cache=False):
    """Stack of dilated causal convolutions; layer ``i`` uses dilation ``2**i``.

    ``x`` is ``(time,)``, ``(batch, time)`` or ``(batch, time, channels)``.
    ``params`` is a sequence of ``(K, b)`` pairs with ``K`` shaped
    ``(kernel, in_channels, filters)``.  The nonlinearity and inverted
    dropout sit between layers, so the last layer's output is affine;
    dropout only runs in ``"train"`` mode.
    """
    if dropout_mode not in ("train", "infer"):
        raise DomainError(f"dropout_mode must be 'train' or 'infer', got {dropout_mode!r}")
    X = np.asarray(x)
    squeeze = X.ndim
    if X.ndim == 1:
        X = X[None, :, None]
    elif X.ndim == 2:
        X = X[:, :, None]
    if X.shape[1] < 1:
        raise ShapeError("empty input sequence")
    caches = []
    h = X
    last = len(params) - 1
    for i, (K, b) in enumerate(params):
        if K.shape[1] != h.shape[2]:
            raise ShapeError(f"layer {i} expects {K.shape[1]} channels, got {h.shape[2]}")
        pre = causal_conv_forward(h, K, b, 2**i)
        hidden = i < last
        out = np.maximum(pre, 0.0) if activation == "relu" and hidden else pre
        mask = None
        if dropout_mode == "train" and dropout > 0.0 and hidden:
            keep = 1.0 - dropout
            mask = (rng.random(out.shape) < keep).astype(out.dtype) / keep
            out = out * mask
        caches.append((h, K, pre, mask, hidden))
        h = out
    if return_cache:
        return h, (caches, activation)
    if squeeze == 1:
        return h[0]
    return h


def tcn_backward(dOut, cache):
    caches, activation = cache
    grads = []
    d = dOut
    for i in range(len(caches) - 1, -1, -1):
        h_in, K, pre, mask, hidden = caches[i]
        if mask is not None:
            d = d * mask
        if activation == "relu" and hidden:
            d = d * (pre > 0)
        d, dK, db = causal_conv_backward(d, h_in, K, 2**i)
        grads.append((dK, db))
    return d, grads[::-1]
