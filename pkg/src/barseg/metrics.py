"""Detection-quality metrics: Jaccard index, image-level detection rate,
object-level recall/precision and type-classification accuracy.

Detections are rasterized onto the full-resolution grid (pixel-center
inclusion) and compared against ground-truth masks; ground-truth objects
are the 8-connected components of the mask.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .postprocess import DetectedObject, RotatedRect, connected_components

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))


def jaccard(G: np.ndarray, F: np.ndarray) -> float:
    G = np.asarray(G, dtype=bool)
    F = np.asarray(F, dtype=bool)
    if G.shape != F.shape:
        raise ValueError(f"mask shapes differ: {G.shape} vs {F.shape}")
    union = np.count_nonzero(G | F)
    if union == 0:
        return 1.0
    return np.count_nonzero(G & F) / union


def gt_objects_from_mask(mask: np.ndarray) -> list[np.ndarray]:
    """Boolean masks, one per 8-connected component of the nonzero pixels."""
    mask = np.asarray(mask)
    labels, comps = connected_components(mask != 0)
    return [labels == c.label for c in comps]


def gt_classes(mask: np.ndarray, objects: list[np.ndarray]) -> list[int]:
    """Majority class per object, reading mask values as class + 1."""
    out = []
    for obj in objects:
        vals = np.asarray(mask)[obj].astype(np.int64)
        out.append(int(np.bincount(vals).argmax()) - 1)
    return out


def _rect_of(det) -> RotatedRect:
    return det.rect if isinstance(det, DetectedObject) else det


def detections_mask(detections: Sequence, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for d in detections:
        out |= _rect_of(d).rasterize(shape)
    return out


def detection_rate(jaccards: Sequence[float], T: float) -> float:
    if len(jaccards) == 0:
        raise ValueError("detection rate of an empty dataset is undefined")
    return float(np.mean([j >= T for j in jaccards]))


def match_objects(gt_objects: list[np.ndarray], det_masks: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """For each GT object: index of the detection with the highest Jaccard, and that value.

    Index is -1 (Jaccard 0) when there are no detections.
    """
    best_idx = np.full(len(gt_objects), -1, dtype=np.int64)
    best_j = np.zeros(len(gt_objects))
    for gi, g in enumerate(gt_objects):
        for di, f in enumerate(det_masks):
            j = jaccard(g, f)
            if j > best_j[gi]:
                best_j[gi], best_idx[gi] = j, di
    return best_idx, best_j


def _greedy_one_to_one(gt_objects, det_masks) -> tuple[np.ndarray, np.ndarray]:
    pairs = sorted(
        ((jaccard(g, f), gi, di) for gi, g in enumerate(gt_objects) for di, f in enumerate(det_masks)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    best_idx = np.full(len(gt_objects), -1, dtype=np.int64)
    best_j = np.zeros(len(gt_objects))
    used = set()
    for j, gi, di in pairs:
        if best_idx[gi] >= 0 or di in used or j <= 0:
            continue
        best_idx[gi], best_j[gi] = di, j
        used.add(di)
    return best_idx, best_j


def object_precision_recall(gt_objects_per_image: Sequence[list[np.ndarray]],
                            detections_per_image: Sequence[Sequence], T: float,
                            one_to_one: bool = False) -> tuple[float, float]:
    """(precision, recall) at Jaccard threshold ``T``.

    Each GT object is matched to its best-Jaccard detection; the count of GT
    objects reaching ``T`` is divided by the total GT count (recall) and by the
    total detection count (precision). A detection may be the best match of
    several GT objects unless ``one_to_one`` is set.
    """
    hits = n_gt = n_det = 0
    for gts, dets in zip(gt_objects_per_image, detections_per_image):
        n_gt += len(gts)
        n_det += len(dets)
        if not gts:
            continue
        shape = gts[0].shape
        masks = [_rect_of(d).rasterize(shape) for d in dets]
        _, best_j = (_greedy_one_to_one if one_to_one else match_objects)(gts, masks)
        hits += int(np.count_nonzero(best_j >= T))
    recall = hits / n_gt if n_gt else 1.0
    precision = min(hits / n_det, 1.0) if n_det else 1.0
    return precision, recall


def classification_accuracy(matched_pairs: Sequence[tuple[int, int | None]]) -> float | None:
    """Share of correctly detected objects whose predicted type is right.

    ``matched_pairs`` holds ``(true_class, predicted_class)`` for GT objects
    detected at the chosen threshold. Returns None when there are none.
    """
    if len(matched_pairs) == 0:
        return None
    return sum(1 for t, p in matched_pairs if p is not None and t == p) / len(matched_pairs)


@dataclass
class EvalResult:
    jaccards: list[float]
    thresholds: list[float]
    detection_rate: dict[float, float]
    recall: dict[float, float]
    precision: dict[float, float]
    accuracy: dict[float, float | None]
    n_images: int
    n_gt_objects: int
    n_detections: int
    extra: dict = field(default_factory=dict)

    @property
    def mean_jaccard(self) -> float:
        return float(np.mean(self.jaccards)) if self.jaccards else 0.0

    def to_dict(self) -> dict:
        def keyed(d):
            return {f"{t:g}": v for t, v in d.items()}

        return {
            "n_images": self.n_images,
            "n_gt_objects": self.n_gt_objects,
            "n_detections": self.n_detections,
            "mean_jaccard": self.mean_jaccard,
            "thresholds": list(self.thresholds),
            "detection_rate": keyed(self.detection_rate),
            "recall": keyed(self.recall),
            "precision": keyed(self.precision),
            "classification_accuracy": keyed(self.accuracy),
            "per_image_jaccard": list(self.jaccards),
        }


def evaluate(gt_masks: Sequence[np.ndarray], detections: Sequence[Sequence],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS, one_to_one: bool = False) -> EvalResult:
    """Score detections against class-valued GT masks (0 background, c+1 class c)."""
    if len(gt_masks) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if len(gt_masks) != len(detections):
        raise ValueError(f"{len(gt_masks)} masks but {len(detections)} detection lists")
    thresholds = [float(t) for t in thresholds]
    jaccards, per_image = [], []
    n_gt = n_det = 0
    for mask, dets in zip(gt_masks, detections):
        mask = np.asarray(mask)
        det_masks = [_rect_of(d).rasterize(mask.shape) for d in dets]
        union = np.zeros(mask.shape, dtype=bool)
        for m in det_masks:
            union |= m
        jaccards.append(jaccard(mask != 0, union))
        objs = gt_objects_from_mask(mask)
        classes = gt_classes(mask, objs)
        matcher = _greedy_one_to_one if one_to_one else match_objects
        idx, best_j = matcher(objs, det_masks) if objs else (np.zeros(0, int), np.zeros(0))
        pred = [getattr(d, "class_id", None) for d in dets]
        per_image.append((classes, idx, best_j, pred))
        n_gt += len(objs)
        n_det += len(dets)

    D, R, P, A = {}, {}, {}, {}
    for T in thresholds:
        D[T] = detection_rate(jaccards, T)
        hits, pairs = 0, []
        for classes, idx, best_j, pred in per_image:
            for c, di, j in zip(classes, idx, best_j):
                if j >= T:
                    hits += 1
                    pairs.append((c, pred[di]))
        R[T] = hits / n_gt if n_gt else 1.0
        P[T] = min(hits / n_det, 1.0) if n_det else 1.0
        A[T] = classification_accuracy(pairs)
    return EvalResult(jaccards, thresholds, D, R, P, A, len(gt_masks), n_gt, n_det)
