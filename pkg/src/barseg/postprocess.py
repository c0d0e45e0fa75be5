"""Segmentation map -> rotated, typed detection rectangles.

Pipeline: threshold the detection channel, label 8-connected superpixel
components, drop components smaller than ``t_area``, fit a minimum-area
rectangle around each, average the class channels over the component, and
scale the rectangle by the network stride into image coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .network import SCALE, SegmentationMap


@dataclass(frozen=True)
class RotatedRect:
    """Rectangle as (center, size, angle).

    ``angle`` is in degrees within [-90, 0) and gives the direction of the
    edge whose length is ``width``; ``height`` is measured along the
    perpendicular. Coordinates are (x right, y down).
    """

    cx: float
    cy: float
    width: float
    height: float
    angle: float

    @property
    def center(self) -> tuple[float, float]:
        return self.cx, self.cy

    @property
    def area(self) -> float:
        return self.width * self.height

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        a = math.radians(self.angle)
        u = np.array([math.cos(a), math.sin(a)])
        return u, np.array([-u[1], u[0]])

    def corners(self) -> np.ndarray:
        u, v = self.axes()
        c = np.array([self.cx, self.cy])
        hw, hh = self.width / 2, self.height / 2
        return np.array([c - u * hw - v * hh, c + u * hw - v * hh, c + u * hw + v * hh, c - u * hw + v * hh])

    def ordered_corners(self) -> np.ndarray:
        """Corners clockwise on screen (y down), starting from the topmost-then-leftmost."""
        pts = self.corners()
        c = pts.mean(axis=0)
        ang = np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0])  # increasing = clockwise on screen
        pts = pts[np.argsort(ang, kind="stable")]
        start = min(range(4), key=lambda i: (round(pts[i, 1], 9), round(pts[i, 0], 9)))
        return np.roll(pts, -start, axis=0)

    def scaled(self, factor: float) -> RotatedRect:
        return RotatedRect(self.cx * factor, self.cy * factor, self.width * factor, self.height * factor, self.angle)

    def contains(self, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        u, v = self.axes()
        d = pts - np.array([self.cx, self.cy])
        return (np.abs(d @ u) <= self.width / 2 + tol) & (np.abs(d @ v) <= self.height / 2 + tol)

    def rasterize(self, shape: tuple[int, int]) -> np.ndarray:
        """Boolean mask of pixels whose centers fall inside the rectangle."""
        H, W = shape
        out = np.zeros((H, W), dtype=bool)
        pts = self.corners()
        x0 = max(int(math.floor(pts[:, 0].min())) - 1, 0)
        x1 = min(int(math.ceil(pts[:, 0].max())) + 1, W)
        y0 = max(int(math.floor(pts[:, 1].min())) - 1, 0)
        y1 = min(int(math.ceil(pts[:, 1].max())) + 1, H)
        if x0 >= x1 or y0 >= y1:
            return out
        ys, xs = np.mgrid[y0:y1, x0:x1]
        centers = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
        out[y0:y1, x0:x1] = self.contains(centers, tol=0.0).reshape(ys.shape)
        return out


@dataclass
class Component:
    label: int
    pixels: np.ndarray  # (n, 2) rows of (row, col)

    @property
    def area(self) -> int:
        return len(self.pixels)


@dataclass
class DetectedObject:
    rect: RotatedRect
    class_id: int | None
    class_probs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    component_area: int = 0


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


def connected_components(binary: np.ndarray) -> tuple[np.ndarray, list[Component]]:
    """8-connected labeling; label ids follow row-major order of first pixel."""
    b = np.ascontiguousarray(np.asarray(binary) != 0, dtype=np.uint8)
    labels, count = backend.kernels.label8(b)
    labels = np.asarray(labels)
    if count == 0:
        return labels, []
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    order = np.argsort(flat[fg], kind="stable")
    fg = fg[order]
    splits = np.searchsorted(flat[fg], np.arange(2, count + 1))
    W = labels.shape[1]
    comps = []
    for i, idx in enumerate(np.split(fg, splits)):
        comps.append(Component(i + 1, np.stack([idx // W, idx % W], axis=1)))
    return labels, comps


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise in (x, y), collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=np.float64)


def _rect_from_frame(e: np.ndarray, a_lo: float, a_hi: float, b_lo: float, b_hi: float) -> RotatedRect:
    n = np.array([-e[1], e[0]])
    c = e * (a_lo + a_hi) / 2 + n * (b_lo + b_hi) / 2
    len_e, len_n = float(a_hi - a_lo), float(b_hi - b_lo)
    phi = math.degrees(math.atan2(e[1], e[0]))
    phi = (phi + 90.0) % 180.0 - 90.0  # into [-90, 90)
    if phi < 0:
        return RotatedRect(float(c[0]), float(c[1]), len_e, len_n, phi)
    return RotatedRect(float(c[0]), float(c[1]), len_n, len_e, phi - 90.0)


def min_area_rect(points) -> RotatedRect:
    """Minimum-area enclosing rectangle by rotating calipers over the convex hull."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("min_area_rect needs at least one point")
    hull = convex_hull(pts)
    n = len(hull)
    if n == 1:
        return RotatedRect(float(hull[0, 0]), float(hull[0, 1]), 0.0, 0.0, -90.0)
    if n == 2:
        d = hull[1] - hull[0]
        e = d / np.hypot(*d)
        a = hull @ e
        b = float(hull[0] @ np.array([-e[1], e[0]]))
        return _rect_from_frame(e, a.min(), a.max(), b, b)

    def proj(idx, axis):
        return float(hull[idx % n] @ axis)

    best = None
    j = k = l = None
    for i in range(n):
        d = hull[(i + 1) % n] - hull[i]
        e = d / math.hypot(d[0], d[1])
        nrm = np.array([-e[1], e[0]])  # inward for a CCW hull
        j = i + 1 if j is None else max(j, i + 1)
        while proj(j + 1, e) > proj(j, e):
            j += 1
        k = j if k is None else max(k, j)
        while proj(k + 1, nrm) > proj(k, nrm):
            k += 1
        l = k if l is None else max(l, k)
        while proj(l + 1, e) < proj(l, e):
            l += 1
        a_hi, a_lo = proj(j, e), proj(l, e)
        b_lo, b_hi = proj(i, nrm), proj(k, nrm)
        area = (a_hi - a_lo) * (b_hi - b_lo)
        if best is None or area < best[0]:
            best = (area, e, a_lo, a_hi, b_lo, b_hi)
    _, e, a_lo, a_hi, b_lo, b_hi = best
    return _rect_from_frame(e, a_lo, a_hi, b_lo, b_hi)


def cell_corners(pixels: np.ndarray) -> np.ndarray:
    """Corner points (x, y) of unit cells given as (row, col) rows."""
    rc = np.asarray(pixels)
    x, y = rc[:, 1], rc[:, 0]
    pts = np.concatenate([np.stack([x + dx, y + dy], axis=1) for dx in (0, 1) for dy in (0, 1)])
    return np.unique(pts, axis=0).astype(np.float64)


def detect_objects(seg: SegmentationMap, threshold: float = 0.5, t_area: int = 20,
                   scale: int = SCALE, index: int = 0) -> list[DetectedObject]:
    """Run the postprocessing pipeline on image ``index`` of a segmentation map."""
    prob = seg.detect_prob[index, 0]
    _, comps = connected_components(binarize(prob, threshold))
    out = []
    for comp in comps:
        if comp.area < t_area:
            continue
        # rectangle around whole cells so that scaling covers the 4x4 pixel blocks
        rect = min_area_rect(cell_corners(comp.pixels)).scaled(scale)
        if seg.class_prob is not None:
            probs = seg.class_prob[index][:, comp.pixels[:, 0], comp.pixels[:, 1]].astype(np.float64).mean(axis=1)
            cls = int(np.argmax(probs))
        else:
            probs, cls = np.zeros(0), None
        out.append(DetectedObject(rect, cls, probs, comp.area))
    return out


def detect_batch(seg: SegmentationMap, threshold: float = 0.5, t_area: int = 20,
                 scale: int = SCALE) -> list[list[DetectedObject]]:
    return [detect_objects(seg, threshold, t_area, scale, b) for b in range(seg.detect_prob.shape[0])]
