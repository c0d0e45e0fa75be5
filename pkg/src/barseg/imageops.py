"""Small raster helpers: affine warps, rotation with canvas expansion, resizing, blur.

Pixel (row r, col c) sits at continuous coordinate (x=c, y=r); y points down.
A positive rotation angle maps the x axis onto (cos a, sin a), i.e. it turns
clockwise on screen.
"""
from __future__ import annotations

import math

import numpy as np


def rotation_matrix(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def apply_affine(points: np.ndarray, A: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ A.T + t


def sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, order: int, fill: float) -> np.ndarray:
    """Read ``img`` at continuous coordinates; order 0 = nearest, 1 = bilinear.

    Taps outside the image read ``fill``.
    """
    H, W = img.shape
    # a one-pixel border of ``fill`` lets every tap be gathered without masking
    Wp = W + 2
    if order == 0:
        padded = np.pad(img, 1, constant_values=fill).ravel()
        xi = np.clip(np.floor(xs + 0.5).astype(np.int64) + 1, 0, W + 1)
        yi = np.clip(np.floor(ys + 0.5).astype(np.int64) + 1, 0, H + 1)
        return padded[yi * Wp + xi]
    padded = np.pad(img.astype(np.float64), 1, constant_values=fill).ravel()
    fx0, fy0 = np.floor(xs), np.floor(ys)
    fx, fy = xs - fx0, ys - fy0
    xa = np.clip(fx0.astype(np.int64) + 1, 0, W + 1)
    xb = np.clip(fx0.astype(np.int64) + 2, 0, W + 1)
    ya = np.clip(fy0.astype(np.int64) + 1, 0, H + 1) * Wp
    yb = np.clip(fy0.astype(np.int64) + 2, 0, H + 1) * Wp
    top = padded[ya + xa] * (1 - fx) + padded[ya + xb] * fx
    bottom = padded[yb + xa] * (1 - fx) + padded[yb + xb] * fx
    return top * (1 - fy) + bottom * fy


def warp(img: np.ndarray, A: np.ndarray, t: np.ndarray, out_shape, order: int, fill: float) -> np.ndarray:
    """Output pixel p takes the source value at ``A^-1 (p - t)``."""
    Ho, Wo = out_shape
    Ainv = np.linalg.inv(A)
    ys, xs = np.mgrid[0:Ho, 0:Wo].astype(np.float64)
    dst = np.stack([xs.ravel() - t[0], ys.ravel() - t[1]])
    sx, sy = Ainv @ dst
    out = sample(img, sx.reshape(Ho, Wo), sy.reshape(Ho, Wo), order, fill)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(img.dtype)


def rotation_affine(shape, angle_deg: float):
    """Affine (A, t) rotating about the image centre, plus the expanded output shape."""
    H, W = shape
    A = rotation_matrix(angle_deg)
    corners = np.array([[-0.5, -0.5], [W - 0.5, -0.5], [W - 0.5, H - 0.5], [-0.5, H - 0.5]])
    c_in = np.array([(W - 1) / 2, (H - 1) / 2])
    rc = (corners - c_in) @ A.T
    span = rc.max(axis=0) - rc.min(axis=0)
    Wo, Ho = (max(1, int(math.ceil(s - 1e-6))) for s in span)
    c_out = np.array([(Wo - 1) / 2, (Ho - 1) / 2])
    return A, c_out - A @ c_in, (Ho, Wo)


def rotate(img: np.ndarray, angle_deg: float, order: int, fill: float):
    """Rotate with canvas expansion; returns (image, A, t) with the forward point map."""
    q = angle_deg / 90.0
    if abs(q - round(q)) < 1e-12:
        k = int(round(q)) % 4
        A, t, _ = rotation_affine(img.shape, 90.0 * k)
        return np.ascontiguousarray(np.rot90(img, -k)), np.round(A), np.round(t * 2) / 2
    A, t, shape = rotation_affine(img.shape, angle_deg)
    return warp(img, A, t, shape, order, fill), A, t


def resize(img: np.ndarray, out_shape, order: int) -> np.ndarray:
    """Resize with pixel-centre alignment."""
    H, W = img.shape
    Ho, Wo = out_shape
    if (Ho, Wo) == (H, W):
        return img.copy()
    sx, sy = W / Wo, H / Ho
    ys, xs = np.mgrid[0:Ho, 0:Wo].astype(np.float64)
    src_x = (xs + 0.5) * sx - 0.5
    src_y = (ys + 0.5) * sy - 0.5
    if order == 1:
        src_x = np.clip(src_x, 0, W - 1)
        src_y = np.clip(src_y, 0, H - 1)
    out = sample(img, src_x, src_y, order, 0)
    if np.issubdtype(img.dtype, np.integer):
        out = np.clip(np.rint(out), 0, np.iinfo(img.dtype).max)
    return out.astype(img.dtype)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.astype(np.float64)
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    src = np.pad(img.astype(np.float64), radius, mode="edge")
    tmp = sum(k[i] * src[:, i:i + img.shape[1]] for i in range(len(k)))
    return sum(k[i] * tmp[i:i + img.shape[0], :] for i in range(len(k)))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
