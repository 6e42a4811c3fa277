"""Fused LSTM sequence primitive.

One graph node covers a whole masked sequence; its adjoint is hand-written
backpropagation through time. Gate layout along the last axis of the weight
matrices is ``[input, forget, candidate, output]``.
"""
from __future__ import annotations

import numpy as np

from . import tensor as _tensor
from .tensor import ShapeError, Tensor, _make, _sigmoid


def lstm_scan(
    x: Tensor,
    w_in: Tensor,
    w_rec: Tensor,
    bias: Tensor,
    mask: np.ndarray | None = None,
    reverse: bool = False,
) -> Tensor:
    """Run an LSTM over ``x`` (B, T, n) and return hidden states (B, T, h).

    ``mask`` (B, T) marks valid frames. On a masked-out frame the carried
    (h, c) state passes through unchanged and the emitted state is zero, so
    padding placed after the valid prefix never reaches a valid frame in
    either direction.
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm_scan expects (B, T, n) input, got {x.shape}")
    B, T, n = x.shape
    h4 = w_rec.shape[1]
    h = h4 // 4
    if w_in.shape != (n, h4) or w_rec.shape != (h, h4) or bias.shape != (h4,):
        raise ShapeError(
            f"lstm_scan: input {x.shape} vs weights {w_in.shape}, {w_rec.shape}, {bias.shape}"
        )
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=np.float64)
    if m.shape != (B, T):
        raise ShapeError(f"lstm_scan: mask {m.shape} vs input {x.shape}")
    dense = bool(m.all())

    xw = x.data @ w_in.data + bias.data
    U = w_rec.data
    steps = range(T - 1, -1, -1) if reverse else range(T)
    out = np.zeros((B, T, h))
    h_t = np.zeros((B, h))
    c_t = np.zeros((B, h))
    cache = {}
    keep = _tensor._RECORDING and (x.requires_grad or w_in.requires_grad or w_rec.requires_grad or bias.requires_grad)
    for t in steps:
        z = xw[:, t] + h_t @ U
        gates = _sigmoid(z)
        i = gates[:, :h]
        f = gates[:, h:2 * h]
        g = np.tanh(z[:, 2 * h:3 * h])
        o = gates[:, 3 * h:]
        c_new = f * c_t + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if keep:
            cache[t] = (h_t, c_t, i, f, g, o, tc)
        if dense:
            out[:, t] = h_t = h_new
            c_t = c_new
            continue
        mt = m[:, t:t + 1]
        out[:, t] = mt * h_new
        h_t = mt * h_new + (1.0 - mt) * h_t
        c_t = mt * c_new + (1.0 - mt) * c_t

    def backward(grad_out):
        dxw = np.zeros_like(xw)
        dU = np.zeros_like(U)
        dh = np.zeros((B, h))
        dc = np.zeros((B, h))
        for t in reversed(list(steps)):
            h_prev, c_prev, i, f, g, o, tc = cache[t]
            mt = m[:, t:t + 1]
            dh_new = mt * (dh + grad_out[:, t])
            dc_new = mt * dc
            dh_prev = (1.0 - mt) * dh
            dc_prev = (1.0 - mt) * dc
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc_new * g * i * (1.0 - i),
                    dc_new * c_prev * f * (1.0 - f),
                    dc_new * i * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dc_prev = dc_prev + dc_new * f
            dxw[:, t] = dz
            dU += h_prev.T @ dz
            dh = dh_prev + dz @ U.T
            dc = dc_prev
        dx = dxw @ w_in.data.T
        dW = x.data.reshape(-1, n).T @ dxw.reshape(-1, h4)
        db = dxw.reshape(-1, h4).sum(axis=0)
        return dx, dW, dU, db

    return _make(out, (x, w_in, w_rec, bias), backward)
