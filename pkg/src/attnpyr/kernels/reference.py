"""Numpy kernel backend.

Convolutions are evaluated as k*k shifted einsum accumulations (an im2col
variant that never materializes the column matrix); pooling slices the
input on a stride grid. Shapes follow the conventions of the compiled
backend exactly: x is (B, C, H, W), w is (Cout, Cin, k, k), all f64.
Pooling uses floor semantics: trailing rows/columns that do not fill a
window are dropped.
"""

import numpy as np


def _out_extent(extent, k, stride, pad=0):
    return (extent + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, stride, pad):
    b, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = _out_extent(h, k, stride, pad)
    wo = _out_extent(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((b, cout, ho, wo))
    for u in range(k):
        for v in range(k):
            patch = xp[:, :, u : u + (ho - 1) * stride + 1 : stride,
                       v : v + (wo - 1) * stride + 1 : stride]
            out += np.einsum("bcij,oc->boij", patch, w[:, :, u, v])
    return out


def conv2d_backward_input(dy, w, stride, pad, h, wd):
    b = dy.shape[0]
    cout, cin, k, _ = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros((b, cin, h + 2 * pad, wd + 2 * pad))
    for u in range(k):
        for v in range(k):
            dxp[:, :, u : u + (ho - 1) * stride + 1 : stride,
                v : v + (wo - 1) * stride + 1 : stride] += np.einsum(
                "boij,oc->bcij", dy, w[:, :, u, v])
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad].copy()
    return dxp


def conv2d_backward_weight(dy, x, stride, pad, k):
    ho, wo = dy.shape[2], dy.shape[3]
    cin = x.shape[1]
    cout = dy.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    dw = np.zeros((cout, cin, k, k))
    for u in range(k):
        for v in range(k):
            patch = xp[:, :, u : u + (ho - 1) * stride + 1 : stride,
                       v : v + (wo - 1) * stride + 1 : stride]
            dw[:, :, u, v] = np.einsum("boij,bcij->oc", dy, patch)
    return dw


def avg_pool2d_forward(x, k, stride):
    h, wd = x.shape[2], x.shape[3]
    ho = _out_extent(h, k, stride)
    wo = _out_extent(wd, k, stride)
    out = np.zeros((x.shape[0], x.shape[1], ho, wo))
    for u in range(k):
        for v in range(k):
            out += x[:, :, u : u + (ho - 1) * stride + 1 : stride,
                     v : v + (wo - 1) * stride + 1 : stride]
    return out / (k * k)


def avg_pool2d_backward(dy, k, stride, h, wd):
    ho, wo = dy.shape[2], dy.shape[3]
    dx = np.zeros((dy.shape[0], dy.shape[1], h, wd))
    g = dy / (k * k)
    for u in range(k):
        for v in range(k):
            dx[:, :, u : u + (ho - 1) * stride + 1 : stride,
               v : v + (wo - 1) * stride + 1 : stride] += g
    return dx
