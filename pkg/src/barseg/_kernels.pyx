# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution and component labeling.

Every function here has a NumPy twin in ``barseg._fallback`` with the same
signature and bit-compatible semantics (up to float summation order).
"""
import numpy as np
cimport numpy as cnp
cimport cython
from cython cimport floating

cnp.import_array()


cdef inline void _valid_range(Py_ssize_t n_out, Py_ssize_t n_in, int stride, Py_ssize_t off,
                              Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output indices o with 0 <= o*stride + off < n_in
    cdef Py_ssize_t a = 0, b = n_out
    while a < n_out and a * stride + off < 0:
        a += 1
    while b > a and (b - 1) * stride + off >= n_in:
        b -= 1
    lo[0] = a
    hi[0] = b


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int dilation, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    cdef Py_ssize_t n = B * Ho * Wo
    dtype = np.float32 if floating is float else np.float64
    cols_arr = np.empty((C * kh * kw, n), dtype=dtype)
    cdef floating[:, ::1] cols = cols_arr
    cdef Py_ssize_t c, ky, kx, b, oy, ox, iy, row, col, ox0, ox1, off
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for c in range(C):
            for ky in range(kh):
                for kx in range(kw):
                    row = (c * kh + ky) * kw + kx
                    off = kx * dilation - pad
                    _valid_range(Wo, W, stride, off, &ox0, &ox1)
                    for b in range(B):
                        for oy in range(Ho):
                            iy = oy * stride + ky * dilation - pad
                            dst = &cols[row, (b * Ho + oy) * Wo]
                            if iy < 0 or iy >= H:
                                for ox in range(Wo):
                                    dst[ox] = 0
                                continue
                            src = &x[b, c, iy, 0]
                            for ox in range(ox0):
                                dst[ox] = 0
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    dst[ox] = src[ox + off]
                            else:
                                for ox in range(ox0, ox1):
                                    dst[ox] = src[ox * stride + off]
                            for ox in range(ox1, Wo):
                                dst[ox] = 0
    return cols_arr


def col2im(floating[:, ::1] cols, Py_ssize_t B, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int kh, int kw, int stride, int dilation, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t c, ky, kx, b, oy, ox, iy, row, ox0, ox1, off
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for c in range(C):
            for ky in range(kh):
                for kx in range(kw):
                    row = (c * kh + ky) * kw + kx
                    off = kx * dilation - pad
                    _valid_range(Wo, W, stride, off, &ox0, &ox1)
                    for b in range(B):
                        for oy in range(Ho):
                            iy = oy * stride + ky * dilation - pad
                            if iy < 0 or iy >= H:
                                continue
                            src = &cols[row, (b * Ho + oy) * Wo]
                            dst = &out[b, c, iy, 0]
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    dst[ox + off] += src[ox]
                            else:
                                for ox in range(ox0, ox1):
                                    dst[ox * stride + off] += src[ox]
    return out_arr


def depthwise_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                      int stride, int dilation, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t Ho = (H + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((B, C, Ho, Wo), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, ky, kx, oy, ox, iy, ox0, ox1, off
    cdef floating wv
    cdef floating* dst
    cdef const floating* src
    with nogil:
        for b in range(B):
            for c in range(C):
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[c, ky, kx]
                        off = kx * dilation - pad
                        _valid_range(Wo, W, stride, off, &ox0, &ox1)
                        for oy in range(Ho):
                            iy = oy * stride + ky * dilation - pad
                            if iy < 0 or iy >= H:
                                continue
                            dst = &out[b, c, oy, 0]
                            src = &x[b, c, iy, 0]
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    dst[ox] += wv * src[ox + off]
                            else:
                                for ox in range(ox0, ox1):
                                    dst[ox] += wv * src[ox * stride + off]
    return out_arr


def depthwise_backward(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                       floating[:, :, :, ::1] gout, int stride, int dilation, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t Ho = gout.shape[2], Wo = gout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((B, C, H, W), dtype=dtype)
    gw_arr = np.zeros((C, kh, kw), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, c, ky, kx, oy, ox, iy, ox0, ox1, off
    cdef floating wv, acc
    cdef floating* gdst
    cdef const floating* gsrc
    cdef const floating* src
    with nogil:
        for b in range(B):
            for c in range(C):
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[c, ky, kx]
                        acc = 0
                        off = kx * dilation - pad
                        _valid_range(Wo, W, stride, off, &ox0, &ox1)
                        for oy in range(Ho):
                            iy = oy * stride + ky * dilation - pad
                            if iy < 0 or iy >= H:
                                continue
                            gsrc = &gout[b, c, oy, 0]
                            src = &x[b, c, iy, 0]
                            gdst = &gx[b, c, iy, 0]
                            if stride == 1:
                                for ox in range(ox0, ox1):
                                    acc = acc + gsrc[ox] * src[ox + off]
                                    gdst[ox + off] += wv * gsrc[ox]
                            else:
                                for ox in range(ox0, ox1):
                                    acc = acc + gsrc[ox] * src[ox * stride + off]
                                    gdst[ox * stride + off] += wv * gsrc[ox]
                        gw[c, ky, kx] += acc
    return gx_arr, gw_arr


cdef Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t root = i, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


cdef void _union(Py_ssize_t[::1] parent, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
    elif b < a:
        parent[a] = b


def label8(cnp.uint8_t[:, ::1] binary):
    """Two-pass 8-connected labeling; labels numbered in row-major discovery order."""
    cdef Py_ssize_t H = binary.shape[0], W = binary.shape[1]
    labels_arr = np.zeros((H, W), dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    parent_arr = np.arange(H * W + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t y, x, nxt = 1, cur, nb
    cdef int dy, dx
    for y in range(H):
        for x in range(W):
            if binary[y, x] == 0:
                continue
            cur = 0
            for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                if 0 <= y + dy and 0 <= x + dx < W:
                    nb = labels[y + dy, x + dx]
                    if nb:
                        if cur == 0:
                            cur = nb
                        else:
                            _union(parent, cur, nb)
            if cur == 0:
                cur = nxt
                nxt += 1
            labels[y, x] = <int>cur
    # provisional labels are issued in row-major order and unions keep the
    # smaller root, so roots ordered by value give discovery order
    remap_arr = np.zeros(nxt, dtype=np.int32)
    cdef int[::1] remap = remap_arr
    cdef int count = 0
    cdef Py_ssize_t i
    for i in range(1, nxt):
        if _find(parent, i) == i:
            count += 1
            remap[i] = count
    for y in range(H):
        for x in range(W):
            if labels[y, x]:
                labels[y, x] = remap[_find(parent, labels[y, x])]
    return labels_arr, count
