"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np


def naive_conv2d(x, w, b, stride, dilation, groups):
    """Direct dilated cross-correlation with zero padding, looping over every tap."""
    B, Cin, H, W = x.shape
    Cout, cin_g, kh, kw = w.shape
    pad = dilation * (kh - 1) // 2
    Ho = (H + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    cout_g = Cout // groups
    out = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    for n in range(B):
        for co in range(Cout):
            gi = co // cout_g
            for oy in range(Ho):
                for ox in range(Wo):
                    acc = 0.0 if b is None else float(b[co])
                    for ci in range(cin_g):
                        c = gi * cin_g + ci
                        for ky in range(kh):
                            iy = oy * stride + ky * dilation - pad
                            if not 0 <= iy < H:
                                continue
                            for kx in range(kw):
                                ix = ox * stride + kx * dilation - pad
                                if 0 <= ix < W:
                                    acc += float(w[co, ci, ky, kx]) * float(x[n, c, iy, ix])
                    out[n, co, oy, ox] = acc
    return out


def central_diff(f, x, step, index_iter=None):
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    indices = index_iter if index_iter is not None else np.ndindex(*x.shape)
    for idx in indices:
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * step)
    return grad


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def hull_edge_sweep_area(points):
    """Smallest bounding-box area over orientations aligned to every point-pair direction.

    Hull edges are a subset of all point pairs, so this brute force covers
    every candidate orientation without computing a hull.
    """
    pts = np.asarray(points, dtype=np.float64)
    best = math.inf
    for i, j in itertools.combinations(range(len(pts)), 2):
        d = pts[j] - pts[i]
        n = math.hypot(*d)
        if n == 0:
            continue
        u = d / n
        v = np.array([-u[1], u[0]])
        a, c = pts @ u, pts @ v
        best = min(best, (a.max() - a.min()) * (c.max() - c.min()))
    if best == math.inf:
        best = 0.0
    return best


def bfs_components(binary):
    """8-connected components by flood fill; returns list of sets of (row, col)."""
    binary = np.asarray(binary).astype(bool)
    H, W = binary.shape
    seen = np.zeros_like(binary)
    comps = []
    for r in range(H):
        for c in range(W):
            if binary[r, c] and not seen[r, c]:
                stack, comp = [(r, c)], set()
                seen[r, c] = True
                while stack:
                    y, x = stack.pop()
                    comp.add((y, x))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = y + dy, x + dx
                            if 0 <= ny < H and 0 <= nx < W and binary[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                comps.append(comp)
    return comps
