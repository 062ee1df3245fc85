"""Layer primitives with explicit forward and backward passes.

Activations are laid out (B, C, L, T): batch, channels, frequency rows,
frames.  Convolutions act along L only (kernel (K, 1)), so every frame is
processed independently until the recurrent stage.  Each ``*_forward``
returns ``(output, cache)``; the matching ``*_backward`` consumes the
cache and the output gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def conv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def convt_out_len(length: int, kernel: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (length - 1) * stride - 2 * padding + kernel + output_padding


# -- convolution along frequency ---------------------------------------------------

def conv_forward(x, w, b, stride, padding):
    """x (B, Cin, L, T), w (Cout, Cin, K), b (Cout,) -> (B, Cout, Lout, T)."""
    B, Cin, L, T = x.shape
    Cout, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (0, 0)))
    Lout = conv_out_len(L, K, stride, padding)
    # (B, Cin, Lout, T, K)
    cols = sliding_window_view(xp, K, axis=2)[:, :, ::stride][:, :, :Lout]
    cols = cols.transpose(0, 2, 3, 1, 4).reshape(B * Lout * T, Cin * K)
    out = cols @ w.reshape(Cout, Cin * K).T + b
    out = out.reshape(B, Lout, T, Cout).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (cols, x.shape, w, stride, padding)


def conv_backward(dout, cache):
    cols, xshape, w, stride, padding = cache
    B, Cin, L, T = xshape
    Cout, _, K = w.shape
    Lout = dout.shape[2]
    d2 = dout.transpose(0, 2, 3, 1).reshape(B * Lout * T, Cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(Cout, Cin * K)).reshape(B, Lout, T, Cin, K)
    dxp = np.zeros((B, Cin, L + 2 * padding, T), dtype=dout.dtype)
    span = stride * (Lout - 1) + 1
    for k in range(K):
        dxp[:, :, k:k + span:stride, :] += dcols[..., k].transpose(0, 3, 1, 2)
    return dxp[:, :, padding:padding + L, :], dw, db


def convt_forward(x, w, b, stride, padding, output_padding=0):
    """Transposed convolution; x (B, Cin, L, T), w (Cin, Cout, K)."""
    B, Cin, L, T = x.shape
    _, Cout, K = w.shape
    Lout = convt_out_len(L, K, stride, padding, output_padding)
    full_len = (L - 1) * stride + K
    if padding + Lout > full_len:
        raise ValueError("output_padding too large for this kernel")
    xf = x.transpose(0, 2, 3, 1).reshape(B * L * T, Cin)
    y = (xf @ w.reshape(Cin, Cout * K)).reshape(B, L, T, Cout, K)
    full = np.zeros((B, Cout, full_len, T), dtype=y.dtype)
    span = stride * (L - 1) + 1
    for k in range(K):
        full[:, :, k:k + span:stride, :] += y[..., k].transpose(0, 3, 1, 2)
    out = full[:, :, padding:padding + Lout, :] + b[None, :, None, None]
    return np.ascontiguousarray(out), (xf, x.shape, w, stride, padding, full_len)


def convt_backward(dout, cache):
    xf, xshape, w, stride, padding, full_len = cache
    B, Cin, L, T = xshape
    _, Cout, K = w.shape
    Lout = dout.shape[2]
    db = dout.sum(axis=(0, 2, 3))
    gfull = np.zeros((B, Cout, full_len, T), dtype=dout.dtype)
    gfull[:, :, padding:padding + Lout, :] = dout
    span = stride * (L - 1) + 1
    gcols = np.empty((B, L, T, Cout, K), dtype=dout.dtype)
    for k in range(K):
        gcols[..., k] = gfull[:, :, k:k + span:stride, :].transpose(0, 2, 3, 1)
    g2 = gcols.reshape(B * L * T, Cout * K)
    dw = (xf.T @ g2).reshape(w.shape)
    dx = (g2 @ w.reshape(Cin, Cout * K).T).reshape(B, L, T, Cin).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx), dw, db


# -- batch normalisation -------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1):
    """Per-channel normalisation over (batch, frequency, time).

    Returns (out, cache, (new_running_mean, new_running_var)).
    """
    if train:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        unbiased = var * n / max(n - 1, 1)
        new_stats = ((1 - momentum) * running_mean + momentum * mu,
                     (1 - momentum) * running_var + momentum * unbiased)
    else:
        mu, var = running_mean, running_var
        new_stats = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, train), new_stats


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    n = dout.shape[0] * dout.shape[2] * dout.shape[3]
    s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    dx = (inv_std[None, :, None, None] / n) * (n * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# -- pointwise ---------------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dout, y):
    return dout * (1.0 - y * y)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- recurrent and dense -------------------------------------------------------------------

def gru_forward(x, w_ih, w_hh, b_ih, b_hh):
    """Single GRU layer over time; x (B, T, D) -> (B, T, H).

    Gate order in the stacked matrices is (reset, update, candidate):
      r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
      z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
      n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
      h' = (1 - z) * n + z * h
    """
    B, T, D = x.shape
    H = w_hh.shape[1]
    gi = (x.reshape(B * T, D) @ w_ih.T + b_ih).reshape(B, T, 3 * H)
    h = np.zeros((B, H), dtype=x.dtype)
    hs = np.empty((B, T, H), dtype=x.dtype)
    h_prev = np.empty((B, T, H), dtype=x.dtype)
    r_all = np.empty((B, T, H), dtype=x.dtype)
    z_all = np.empty((B, T, H), dtype=x.dtype)
    n_all = np.empty((B, T, H), dtype=x.dtype)
    ghn_all = np.empty((B, T, H), dtype=x.dtype)
    w_hh_t = np.ascontiguousarray(w_hh.T)
    for t in range(T):
        gh = h @ w_hh_t + b_hh
        g = gi[:, t]
        r = sigmoid(g[:, :H] + gh[:, :H])
        z = sigmoid(g[:, H:2 * H] + gh[:, H:2 * H])
        ghn = gh[:, 2 * H:]
        n = np.tanh(g[:, 2 * H:] + r * ghn)
        h_prev[:, t] = h
        h = (1.0 - z) * n + z * h
        hs[:, t] = h
        r_all[:, t], z_all[:, t], n_all[:, t], ghn_all[:, t] = r, z, n, ghn
    return hs, (x, w_ih, w_hh, h_prev, r_all, z_all, n_all, ghn_all)


def gru_backward(dhs, cache):
    x, w_ih, w_hh, h_prev, r_all, z_all, n_all, ghn_all = cache
    B, T, D = x.shape
    H = w_hh.shape[1]
    dgi = np.empty((B, T, 3 * H), dtype=dhs.dtype)
    dgh = np.empty((B, T, 3 * H), dtype=dhs.dtype)
    carry = np.zeros((B, H), dtype=dhs.dtype)
    for t in range(T - 1, -1, -1):
        r, z, n, ghn, hp = r_all[:, t], z_all[:, t], n_all[:, t], ghn_all[:, t], h_prev[:, t]
        dh = dhs[:, t] + carry
        dn_pre = dh * (1.0 - z) * (1.0 - n * n)
        dz_pre = dh * (hp - n) * z * (1.0 - z)
        dr_pre = dn_pre * ghn * r * (1.0 - r)
        dgi[:, t, :H] = dr_pre
        dgi[:, t, H:2 * H] = dz_pre
        dgi[:, t, 2 * H:] = dn_pre
        dgh[:, t, :H] = dr_pre
        dgh[:, t, H:2 * H] = dz_pre
        dgh[:, t, 2 * H:] = dn_pre * r
        carry = dh * z + dgh[:, t] @ w_hh
    dgi2 = dgi.reshape(B * T, 3 * H)
    dgh2 = dgh.reshape(B * T, 3 * H)
    dw_ih = dgi2.T @ x.reshape(B * T, D)
    dw_hh = dgh2.T @ h_prev.reshape(B * T, H)
    db_ih = dgi2.sum(axis=0)
    db_hh = dgh2.sum(axis=0)
    dx = (dgi2 @ w_ih).reshape(B, T, D)
    return dx, dw_ih, dw_hh, db_ih, db_hh


def linear_forward(x, w, b):
    """x (..., Din), w (Dout, Din)."""
    return x @ w.T + b, x


def linear_backward(dout, x, w):
    d2 = dout.reshape(-1, dout.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    dw = d2.T @ x2
    db = d2.sum(axis=0)
    return dout @ w, dw, db
