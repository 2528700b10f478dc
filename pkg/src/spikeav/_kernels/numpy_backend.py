"""Numpy reference implementations of the hot kernels.

Convolution runs as chunked im2col + BLAS matmul; the membrane scans are
plain time loops over vectorized elementwise updates. The compiled extension
in ``_core.pyx`` implements the same contracts.
"""

import numpy as np

NAME = "numpy"

_CHUNK = 512   # images per im2col slab, bounds temporary memory


def _im2col(xp, k, stride, oh, ow):
    """[N,C,Hp,Wp] padded input -> [N, C*k*k, oh*ow] patch matrix."""
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for kh in range(k):
        for kw in range(k):
            cols[:, :, kh, kw] = xp[:, :, kh:kh + stride * oh:stride,
                                    kw:kw + stride * ow:stride]
    return cols.reshape(n, c * k * k, oh * ow)


def conv2d_forward(x, w, b, stride=1, pad=0, cache=None):
    """Cross-correlation of [N,C,H,W] with [OC,C,k,k] weights.

    Passing a dict as ``cache`` stashes the patch matrices so a following
    backward can skip rebuilding them.
    """
    n, c, h, ww = x.shape
    oc, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (ww + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w2 = w.reshape(oc, -1)
    out = np.empty((n, oc, oh * ow), dtype=np.float64)
    saved = [] if cache is not None else None
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        cols = _im2col(x[lo:hi], k, stride, oh, ow)
        out[lo:hi] = w2 @ cols
        if saved is not None:
            saved.append(cols)
    if cache is not None:
        cache["cols"] = saved
    out = out.reshape(n, oc, oh, ow)
    if b is not None:
        out += b[:, None, None]
    return out


def conv2d_backward(g, x, w, stride=1, pad=0, need_gx=True, cache=None):
    """Gradients of conv2d_forward; returns (gx, gw, gb)."""
    n, c, h, ww = x.shape
    oc, _, k, _ = w.shape
    _, _, oh, ow = g.shape
    hp, wp = h + 2 * pad, ww + 2 * pad
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w2 = w.reshape(oc, -1)
    gw = np.zeros((oc, c * k * k), dtype=np.float64)
    gx_pad = np.zeros((n, c, hp, wp), dtype=np.float64) if need_gx else None
    g2 = g.reshape(n, oc, oh * ow)
    saved = cache.pop("cols", None) if cache else None
    for ci, lo in enumerate(range(0, n, _CHUNK)):
        hi = min(lo + _CHUNK, n)
        cols = (saved[ci] if saved is not None
                else _im2col(x[lo:hi], k, stride, oh, ow))
        # batched GEMM over images; transposes are views, no big copies
        gw += np.matmul(cols, g2[lo:hi].transpose(0, 2, 1)).sum(axis=0).T
        if need_gx:
            gcols = (w2.T @ g2[lo:hi]).reshape(hi - lo, c, k, k, oh, ow)
            for kh in range(k):
                for kw in range(k):
                    gx_pad[lo:hi, :, kh:kh + stride * oh:stride,
                           kw:kw + stride * ow:stride] += gcols[:, :, kh, kw]
    gx = None
    if need_gx:
        gx = gx_pad[:, :, pad:hp - pad, pad:wp - pad] if pad else gx_pad
    gb = g.sum(axis=(0, 2, 3))
    return gx, gw.reshape(w.shape), gb


def lif_scan_forward(currents, tau, v_th):
    """Threshold scan over axis 0. Returns (spikes, pre-reset potentials)."""
    t_steps = currents.shape[0]
    u_pre = np.empty_like(currents)
    spikes = np.empty_like(currents)
    u = np.zeros(currents.shape[1:], dtype=np.float64)
    for t in range(t_steps):
        u = tau * u + currents[t]
        s = (u >= v_th).astype(np.float64)
        u_pre[t] = u
        spikes[t] = s
        u = u * (1.0 - s)
    return spikes, u_pre


def lif_scan_backward(g_spikes, u_pre, spikes, tau, v_th, gamma):
    """Reverse scan: surrogate through the threshold, reset factor constant."""
    t_steps = g_spikes.shape[0]
    g_currents = np.empty_like(g_spikes)
    g_next = np.zeros(g_spikes.shape[1:], dtype=np.float64)
    inv_g2 = 1.0 / (gamma * gamma)
    for t in range(t_steps - 1, -1, -1):
        h = inv_g2 * np.maximum(0.0, gamma - np.abs(u_pre[t] - v_th))
        gu = g_spikes[t] * h + tau * (1.0 - spikes[t]) * g_next
        g_currents[t] = gu
        g_next = gu
    return g_currents


def _soft_spike(u, v_th, gamma):
    z = (u - v_th) / gamma
    out = np.where(z <= -1.0, 0.0,
                   np.where(z >= 1.0, 1.0,
                            np.where(z < 0.0, 0.5 * (1.0 + z) ** 2,
                                     1.0 - 0.5 * (1.0 - z) ** 2)))
    return out


def lif_scan_relaxed_forward(currents, tau, v_th, gamma):
    """Differentiable scan: ramp activation, reset by (1 - soft spike)."""
    t_steps = currents.shape[0]
    u_pre = np.empty_like(currents)
    soft = np.empty_like(currents)
    u = np.zeros(currents.shape[1:], dtype=np.float64)
    for t in range(t_steps):
        u = tau * u + currents[t]
        s = _soft_spike(u, v_th, gamma)
        u_pre[t] = u
        soft[t] = s
        u = u * (1.0 - s)
    return soft, u_pre


def lif_scan_relaxed_backward(g_soft, u_pre, soft, tau, v_th, gamma):
    """Exact reverse scan of the relaxed forward (product rule included)."""
    t_steps = g_soft.shape[0]
    g_currents = np.empty_like(g_soft)
    g_next = np.zeros(g_soft.shape[1:], dtype=np.float64)
    inv_g2 = 1.0 / (gamma * gamma)
    for t in range(t_steps - 1, -1, -1):
        h = inv_g2 * np.maximum(0.0, gamma - np.abs(u_pre[t] - v_th))
        du_post = (1.0 - soft[t]) - u_pre[t] * h
        gu = g_soft[t] * h + tau * g_next * du_post
        g_currents[t] = gu
        g_next = gu
    return g_currents
