"""Detection loss with hard negative mining, plus masked classification loss.

The detection term is a weighted sum of three binary cross-entropies: the
mean over positive superpixels, the mean over all negatives, and the mean
over the ``k`` most confidently wrong negatives, where ``k`` is the number of
positives in the image. Classification cross-entropy is averaged over
positive superpixels only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import SegmentationMap

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w_p: float = 15.0
    w_n: float = 1.0
    w_h: float = 5.0
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if min(self.w_p, self.w_n, self.w_h, self.alpha) < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")


@dataclass
class SuperpixelTargets:
    """Per-superpixel labels; arrays are ``(h, w)`` or batched ``(B, h, w)``.

    ``class_id`` is only meaningful where ``detect`` is 1.
    """

    detect: np.ndarray
    class_id: np.ndarray

    def __post_init__(self) -> None:
        self.detect = np.asarray(self.detect).astype(np.uint8)
        self.class_id = np.asarray(self.class_id).astype(np.int64)
        if self.detect.shape != self.class_id.shape:
            raise ValueError(f"detect {self.detect.shape} and class_id {self.class_id.shape} differ")

    @classmethod
    def stack(cls, items: list[SuperpixelTargets]) -> SuperpixelTargets:
        return cls(np.stack([t.detect for t in items]), np.stack([t.class_id for t in items]))

    def __getitem__(self, i) -> SuperpixelTargets:
        return SuperpixelTargets(self.detect[i], self.class_id[i])


@dataclass
class LossBreakdown:
    L_p: float = 0.0
    L_n: float = 0.0
    L_h: float = 0.0
    L_det: float = 0.0
    L_cls: float = 0.0
    L_total: float = 0.0
    k: int = 0

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in ("L_p", "L_n", "L_h", "L_det", "L_cls", "L_total", "k")}


def hard_negative_indices(prob: np.ndarray, positive: np.ndarray, k: int) -> np.ndarray:
    """Flat indices of the ``k`` negatives with the highest probability.

    Ties go to the lowest flat index. If fewer than ``k`` negatives exist,
    all of them are returned.
    """
    p = prob.ravel()
    neg = np.flatnonzero(positive.ravel() == 0)
    if k <= 0 or neg.size == 0:
        return neg[:0]
    if k >= neg.size:
        return neg
    order = np.argsort(-p[neg], kind="stable")
    return neg[order[:k]]


def _bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    pc = np.clip(p.astype(np.float64), EPS, 1 - EPS)
    return -(y * np.log(pc) + (1 - y) * np.log(1 - pc))


def _detection_terms(prob: np.ndarray, detect: np.ndarray, weights: LossWeights, with_grad: bool):
    if prob.shape != detect.shape:
        raise ValueError(f"prediction shape {prob.shape} != target shape {detect.shape}")
    y = (detect > 0).astype(np.float64)
    flat_p, flat_y = prob.ravel(), y.ravel()
    bce = _bce(flat_p, flat_y)
    pos = np.flatnonzero(flat_y == 1)
    neg = np.flatnonzero(flat_y == 0)
    k = int(pos.size)
    hard = hard_negative_indices(prob, detect > 0, k)
    L_p = float(bce[pos].mean()) if pos.size else 0.0
    L_n = float(bce[neg].mean()) if neg.size else 0.0
    L_h = float(bce[hard].mean()) if hard.size else 0.0
    out = LossBreakdown(L_p, L_n, L_h, weights.w_p * L_p + weights.w_n * L_n + weights.w_h * L_h, k=k)
    if not with_grad:
        return out, None
    coef = np.zeros(flat_p.size)
    if pos.size:
        coef[pos] += weights.w_p / pos.size
    if neg.size:
        coef[neg] += weights.w_n / neg.size
    if hard.size:
        coef[hard] += weights.w_h / hard.size
    # d BCE / d logit = p - y for a sigmoid output; zero where the clamp is active
    inside = (flat_p > EPS) & (flat_p < 1 - EPS)
    grad = coef * (flat_p - flat_y) * inside
    return out, grad.reshape(prob.shape)


def detection_loss(pred: np.ndarray, targets: SuperpixelTargets | np.ndarray,
                   weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Detection part of the loss for a single ``(h, w)`` probability map."""
    detect = targets.detect if isinstance(targets, SuperpixelTargets) else np.asarray(targets)
    out, _ = _detection_terms(np.asarray(pred), detect, weights, with_grad=False)
    out.L_total = out.L_det
    return out


def _classification_terms(class_prob: np.ndarray, targets: SuperpixelTargets, with_grad: bool):
    n = class_prob.shape[0]
    if class_prob.shape[1:] != targets.detect.shape:
        raise ValueError(f"class map {class_prob.shape[1:]} != target shape {targets.detect.shape}")
    mask = targets.detect > 0
    cls = targets.class_id[mask]
    if cls.size and (cls.min() < 0 or cls.max() >= n):
        raise ValueError(f"class_id outside [0, {n}) on positive superpixels")
    if not cls.size:
        return 0.0, (np.zeros(class_prob.shape) if with_grad else None)
    q = class_prob[:, mask].astype(np.float64)  # (N, npos)
    q_true = q[cls, np.arange(cls.size)]
    loss = float(-np.log(np.clip(q_true, EPS, 1 - EPS)).mean())
    if not with_grad:
        return loss, None
    g = q.copy()
    g[cls, np.arange(cls.size)] -= 1
    g *= ((q_true > EPS) & (q_true < 1 - EPS)) / cls.size
    grad = np.zeros(class_prob.shape)
    grad[:, mask] = g
    return loss, grad


def classification_loss(class_prob: np.ndarray, targets: SuperpixelTargets) -> float:
    """Mean cross-entropy over positive superpixels of one ``(N, h, w)`` map."""
    loss, _ = _classification_terms(np.asarray(class_prob), targets, with_grad=False)
    return loss


def total_loss(seg: SegmentationMap, targets: SuperpixelTargets, weights: LossWeights = LossWeights(),
               with_grad: bool = False):
    """Per-image loss averaged over the batch.

    With ``with_grad`` returns ``(breakdown, grad)`` where ``grad`` is the
    gradient of the batch-mean total w.r.t. the network logits,
    shape ``(B, 1 + N, h, w)``.
    """
    det = seg.detect_prob
    if targets.detect.ndim == 2:
        targets = SuperpixelTargets(targets.detect[None], targets.class_id[None])
    B = det.shape[0]
    if targets.detect.shape != (B,) + det.shape[2:]:
        raise ValueError(f"targets {targets.detect.shape} do not match prediction {det.shape}")
    n = seg.n_classes
    grad = np.zeros((B, 1 + n) + det.shape[2:]) if with_grad else None
    acc = LossBreakdown()
    for b in range(B):
        part, g_det = _detection_terms(det[b, 0], targets.detect[b], weights, with_grad)
        cls_loss = 0.0
        if n:
            cls_loss, g_cls = _classification_terms(seg.class_prob[b], targets[b], with_grad)
            if with_grad:
                grad[b, 1:] = weights.alpha * g_cls / B
        if with_grad:
            grad[b, 0] = g_det / B
        acc.L_p += part.L_p / B
        acc.L_n += part.L_n / B
        acc.L_h += part.L_h / B
        acc.L_det += part.L_det / B
        acc.L_cls += cls_loss / B
        acc.k += part.k
    acc.L_total = acc.L_det + weights.alpha * acc.L_cls
    return (acc, grad) if with_grad else acc
