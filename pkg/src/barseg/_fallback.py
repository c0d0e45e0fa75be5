"""Pure NumPy versions of the kernels in ``_kernels.pyx``.

Same signatures and output layouts as the compiled module; selected
automatically when the extension is not built.
"""
from __future__ import annotations

import numpy as np


def _out_size(n: int, k: int, stride: int, dilation: int, pad: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _tap_slice(k: int, n_out: int, stride: int, dilation: int) -> slice:
    start = k * dilation
    return slice(start, start + stride * (n_out - 1) + 1, stride)


def im2col(x, kh, kw, stride, dilation, pad):
    B, C, H, W = x.shape
    Ho = _out_size(H, kh, stride, dilation, pad)
    Wo = _out_size(W, kw, stride, dilation, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((C, kh, kw, B, Ho, Wo), dtype=x.dtype)
    for ky in range(kh):
        sy = _tap_slice(ky, Ho, stride, dilation)
        for kx in range(kw):
            sx = _tap_slice(kx, Wo, stride, dilation)
            cols[:, ky, kx] = xp[:, :, sy, sx].transpose(1, 0, 2, 3)
    return cols.reshape(C * kh * kw, B * Ho * Wo)


def col2im(cols, B, C, H, W, kh, kw, stride, dilation, pad):
    Ho = _out_size(H, kh, stride, dilation, pad)
    Wo = _out_size(W, kw, stride, dilation, pad)
    c6 = cols.reshape(C, kh, kw, B, Ho, Wo)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for ky in range(kh):
        sy = _tap_slice(ky, Ho, stride, dilation)
        for kx in range(kw):
            sx = _tap_slice(kx, Wo, stride, dilation)
            xp[:, :, sy, sx] += c6[:, ky, kx].transpose(1, 0, 2, 3)
    if pad:
        xp = xp[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(xp)


def depthwise_forward(x, w, stride, dilation, pad):
    B, C, H, W = x.shape
    kh, kw = w.shape[1:]
    Ho = _out_size(H, kh, stride, dilation, pad)
    Wo = _out_size(W, kw, stride, dilation, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
    for ky in range(kh):
        sy = _tap_slice(ky, Ho, stride, dilation)
        for kx in range(kw):
            sx = _tap_slice(kx, Wo, stride, dilation)
            out += w[None, :, ky, kx, None, None] * xp[:, :, sy, sx]
    return out


def depthwise_backward(x, w, gout, stride, dilation, pad):
    B, C, H, W = x.shape
    kh, kw = w.shape[1:]
    Ho, Wo = gout.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    gxp = np.zeros(xp.shape, dtype=x.dtype)
    gw = np.zeros((C, kh, kw), dtype=x.dtype)
    for ky in range(kh):
        sy = _tap_slice(ky, Ho, stride, dilation)
        for kx in range(kw):
            sx = _tap_slice(kx, Wo, stride, dilation)
            gw[:, ky, kx] = np.einsum("bchw,bchw->c", gout, xp[:, :, sy, sx])
            gxp[:, :, sy, sx] += w[None, :, ky, kx, None, None] * gout
    if pad:
        gxp = gxp[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(gxp), gw


def label8(binary):
    """Two-pass 8-connected labeling; labels numbered in row-major discovery order."""
    H, W = binary.shape
    labels = np.zeros((H, W), dtype=np.int32)
    parent = [0]

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    ys, xs = np.nonzero(binary)
    for y, x in zip(ys.tolist(), xs.tolist()):
        cur = 0
        for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
            ny, nx = y + dy, x + dx
            if ny < 0 or nx < 0 or nx >= W:
                continue
            nb = int(labels[ny, nx])
            if not nb:
                continue
            if cur == 0:
                cur = nb
            else:
                a, b = find(cur), find(nb)
                if a < b:
                    parent[b] = a
                elif b < a:
                    parent[a] = b
        if cur == 0:
            cur = len(parent)
            parent.append(cur)
        labels[y, x] = cur

    remap = np.zeros(len(parent), dtype=np.int32)
    count = 0
    for i in range(1, len(parent)):
        if find(i) == i:
            count += 1
            remap[i] = count
    for i in range(1, len(parent)):
        remap[i] = remap[find(i)]
    return remap[labels], count
