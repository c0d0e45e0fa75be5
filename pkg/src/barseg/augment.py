"""Stochastic training augmentation applied jointly to image, mask and objects.

Steps, each drawn independently in this order: return the sample untouched
(p=0.1); free rotation in [-45, 45] degrees; rotation by 90/180/270; a crop
that keeps every object; photometric noise. The image is resampled
bilinearly, the mask with nearest neighbour.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imageops


@dataclass
class ObjectAnnotation:
    class_id: int
    polygon: np.ndarray  # (k, 2) points (x, y); pixel (r, c) spans [c, c+1] x [r, r+1]

    def to_json(self, names: list[str] | None = None) -> dict:
        out = {"class": int(self.class_id), "polygon": [[round(float(x), 3), round(float(y), 3)] for x, y in self.polygon]}
        if names is not None and 0 <= self.class_id < len(names):
            out["name"] = names[self.class_id]
        return out


@dataclass
class Sample:
    """Grayscale image, class mask (0 background, c+1 for class c) and object list."""

    image: np.ndarray
    mask: np.ndarray
    objects: list[ObjectAnnotation] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.image.shape != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ")

    def copy(self) -> Sample:
        return Sample(self.image.copy(), self.mask.copy(),
                      [ObjectAnnotation(o.class_id, o.polygon.copy()) for o in self.objects])


@dataclass(frozen=True)
class AugmentConfig:
    p_identity: float = 0.1
    p_rot_free: float = 0.5
    p_rot_90: float = 0.5
    p_crop: float = 0.5
    p_photometric: float = 0.7
    max_rotation: float = 45.0
    max_ar_change: float = 1.7

    def __post_init__(self) -> None:
        for name in ("p_identity", "p_rot_free", "p_rot_90", "p_crop", "p_photometric"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")


def rotate_sample(sample: Sample, angle_degrees: float) -> Sample:
    """Rotate about the centre onto an expanded canvas.

    Image border is filled with the mean intensity, mask border with
    background. Multiples of 90 degrees are exact pixel permutations.
    """
    fill = float(sample.image.mean())
    img, A, t = imageops.rotate(sample.image, angle_degrees, order=1, fill=fill)
    mask, _, _ = imageops.rotate(sample.mask, angle_degrees, order=0, fill=0)
    # polygons use pixel-edge coordinates, the warp uses pixel centres
    objs = [ObjectAnnotation(o.class_id, imageops.apply_affine(o.polygon - 0.5, A, t) + 0.5)
            for o in sample.objects]
    return Sample(img, mask, objs)


def object_bbox(sample: Sample) -> tuple[int, int, int, int] | None:
    """(x0, y0, x1, y1) exclusive box around all object pixels, or None."""
    ys, xs = np.nonzero(sample.mask)
    if len(xs) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def random_crop(sample: Sample, rng: np.random.Generator, max_ar_change: float = 1.7,
                attempts: int = 10) -> Sample:
    """Crop that contains every object and keeps the aspect ratio within a factor."""
    box = object_bbox(sample)
    if box is None:
        return sample
    H, W = sample.mask.shape
    bx0, by0, bx1, by1 = box
    ar0 = W / H
    for _ in range(attempts):
        cw = int(rng.integers(bx1 - bx0, W + 1))
        lo = max(by1 - by0, int(np.ceil(cw / (ar0 * max_ar_change))))
        hi = min(H, int(np.floor(cw * max_ar_change / ar0)))
        if lo > hi:
            continue
        ch = int(rng.integers(lo, hi + 1))
        x0 = int(rng.integers(max(0, bx1 - cw), min(bx0, W - cw) + 1))
        y0 = int(rng.integers(max(0, by1 - ch), min(by0, H - ch) + 1))
        ratio = (cw / ch) / ar0
        if not (1 / max_ar_change <= ratio <= max_ar_change):
            continue
        offset = np.array([x0, y0], dtype=np.float64)
        return Sample(
            sample.image[y0:y0 + ch, x0:x0 + cw].copy(),
            sample.mask[y0:y0 + ch, x0:x0 + cw].copy(),
            [ObjectAnnotation(o.class_id, o.polygon - offset) for o in sample.objects],
        )
    return sample


def photometric(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Contrast, brightness, blur and noise, each applied with probability 0.5."""
    img = image.astype(np.float64)
    if rng.random() < 0.5:
        m = img.mean()
        img = (img - m) * rng.uniform(0.75, 1.25) + m
    if rng.random() < 0.5:
        img = img + rng.uniform(-25, 25)
    if rng.random() < 0.5:
        img = imageops.gaussian_blur(img, rng.uniform(0.0, 1.0))
    if rng.random() < 0.5:
        img = img + rng.normal(0.0, rng.uniform(0.0, 10.0), img.shape)
    return imageops.to_uint8(img)


def augment(sample: Sample, config: AugmentConfig, rng: np.random.Generator) -> Sample:
    if rng.random() < config.p_identity:
        return sample
    out = sample
    if rng.random() < config.p_rot_free:
        out = rotate_sample(out, rng.uniform(-config.max_rotation, config.max_rotation))
    if rng.random() < config.p_rot_90:
        out = rotate_sample(out, 90.0 * int(rng.integers(1, 4)))
    if rng.random() < config.p_crop:
        out = random_crop(out, rng, config.max_ar_change)
    if rng.random() < config.p_photometric:
        out = Sample(photometric(out.image, rng), out.mask, out.objects)
    return out
