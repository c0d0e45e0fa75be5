"""Training loop: size policy, size-grouped batching, Adam, two-phase schedule, checkpoints.

Each epoch walks a fresh permutation of the training set in chunks. A
chunk is augmented, resized to the size policy, grouped into batches of
identical image size, and the batches are consumed in shuffled order.
All randomness for epoch ``e`` comes from generators seeded with
``(seed, e)``, so a run resumed at an epoch boundary follows the same
trajectory as an uninterrupted one.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import imageops
from .augment import AugmentConfig, ObjectAnnotation, Sample, augment
from .data import mask_to_superpixel_targets
from .loss import LossBreakdown, LossWeights, SuperpixelTargets, total_loss
from .metrics import evaluate
from .network import (SCALE, NetworkConfig, SegmentationNet, WeightFileError, head, pad_to_multiple,
                      preprocess, read_weights, write_weights)
from .postprocess import detect_batch

log = logging.getLogger(__name__)

OPT_MAGIC = b"BOPT"
OPT_VERSION = 1
CHECKPOINT_SCHEMA = "barseg.checkpoint/1"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs1: int = 70
    lr1: float = 1e-3
    epochs2: int = 70
    lr2: float = 1e-4
    chunk_size: int = 3000
    max_side: int = 1024
    size_multiple: int = 64
    weights: LossWeights = LossWeights()
    seed: int = 0
    channels: int = 24
    augment: bool = True
    val_fraction: float = 0.1
    threshold: float = 0.5
    t_area: int = 20

    def __post_init__(self) -> None:
        for name in ("batch_size", "chunk_size", "max_side", "size_multiple", "channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs1 < 0 or self.epochs2 < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.max_side % self.size_multiple:
            raise ValueError(f"max_side {self.max_side} is not divisible by size_multiple {self.size_multiple}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    @property
    def total_epochs(self) -> int:
        return self.epochs1 + self.epochs2

    def lr_for_epoch(self, epoch: int) -> float:
        return self.lr1 if epoch < self.epochs1 else self.lr2

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["weights"] = dataclasses.asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {', '.join(sorted(unknown))}")
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


# ------------------------------------------------------------------ sizing

def training_size(h: int, w: int, max_side: int = 1024, multiple: int = 64) -> tuple[int, int]:
    s = min(1.0, max_side / max(h, w))

    def snap(x: float) -> int:
        m = max(1, math.floor(x / multiple + 0.5)) * multiple
        return m if m <= max_side else max(multiple, math.floor(x / multiple) * multiple)

    return snap(h * s), snap(w * s)


def resize_for_training(sample: Sample, max_side: int = 1024, multiple: int = 64) -> Sample:
    """Aspect-preserving downscale to ``max_side``, then snap each side to ``multiple``."""
    H, W = sample.image.shape
    Ho, Wo = training_size(H, W, max_side, multiple)
    if (Ho, Wo) == (H, W):
        return sample
    scale = np.array([Wo / W, Ho / H])
    return Sample(
        imageops.resize(sample.image, (Ho, Wo), order=1),
        imageops.resize(sample.mask, (Ho, Wo), order=0),
        [ObjectAnnotation(o.class_id, o.polygon * scale) for o in sample.objects],
    )


def make_batches(sizes: Sequence[tuple[int, int]], batch_size: int, rng: np.random.Generator,
                 chunk_size: int | None = None) -> list[list[int]]:
    """Group positions by exact image size into batches of at most ``batch_size``.

    Positions are taken in the given order, ``chunk_size`` at a time; batch
    order is shuffled within each chunk.
    """
    n = len(sizes)
    chunk_size = chunk_size or max(n, 1)
    out = []
    for start in range(0, n, chunk_size):
        groups: dict[tuple[int, int], list[int]] = {}
        for i in range(start, min(start + chunk_size, n)):
            groups.setdefault(tuple(sizes[i]), []).append(i)
        batches = [idx[j:j + batch_size] for idx in groups.values() for j in range(0, len(idx), batch_size)]
        for j in rng.permutation(len(batches)):
            out.append(batches[j])
    return out


# --------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    skipped: int = 0

    @classmethod
    def for_params(cls, params) -> OptimizerState:
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def optimizer_step(params, grads: Sequence[np.ndarray], state: OptimizerState, lr: float) -> bool:
    """One bias-corrected Adam update in place. Returns False if skipped for a non-finite gradient."""
    if len(grads) != len(state.m):
        raise ValueError(f"{len(grads)} gradients for {len(state.m)} accumulators")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("non-finite gradient in tensor %d at step %d; update skipped", i, state.step + 1)
            return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


# ------------------------------------------------------------- checkpoints

def write_optimizer(state: OptimizerState, fh) -> None:
    fh.write(OPT_MAGIC)
    fh.write(struct.pack("<HQQ", OPT_VERSION, state.step, state.skipped))
    fh.write(struct.pack("<ddd", state.beta1, state.beta2, state.eps))
    fh.write(struct.pack("<I", len(state.m)))
    for m, v in zip(state.m, state.v):
        for arr in (m, v):
            fh.write(struct.pack("<I", arr.size))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_optimizer(fh, params) -> OptimizerState | None:
    magic = fh.read(4)
    if not magic:
        return None
    if magic != OPT_MAGIC:
        raise WeightFileError(f"bad optimizer section magic {magic!r}")
    version, step, skipped = struct.unpack("<HQQ", fh.read(18))
    if version != OPT_VERSION:
        raise WeightFileError(f"unsupported optimizer section version {version}")
    b1, b2, eps = struct.unpack("<ddd", fh.read(24))
    (count,) = struct.unpack("<I", fh.read(4))
    if count != len(params):
        raise WeightFileError(f"optimizer state has {count} tensors, model has {len(params)}")
    ms, vs = [], []
    for p in params:
        pair = []
        for _ in range(2):
            (size,) = struct.unpack("<I", fh.read(4))
            if size != p.data.size:
                raise WeightFileError(f"optimizer tensor size {size} does not match parameter {p.shape}")
            buf = fh.read(4 * size)
            if len(buf) != 4 * size:
                raise WeightFileError("optimizer section truncated")
            pair.append(np.frombuffer(buf, "<f4").reshape(p.shape).astype(p.data.dtype))
        ms.append(pair[0])
        vs.append(pair[1])
    return OptimizerState(ms, vs, step, b1, b2, eps, skipped)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(path, model: SegmentationNet, state: OptimizerState | None, meta: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        write_weights(model, fh)
        if state is not None:
            write_optimizer(state, fh)
    tmp.replace(path)
    meta = {"schema": CHECKPOINT_SCHEMA, **meta}
    sidecar_path(path).write_text(json.dumps(meta, indent=1, default=_json_default))


def load_checkpoint(path, expected: NetworkConfig | None = None):
    """(model, optimizer state or None, metadata dict); metadata is empty without a sidecar."""
    path = Path(path)
    with open(path, "rb") as fh:
        model = read_weights(fh, expected)
        state = read_optimizer(fh, model.parameters())
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.is_file() else {}
    return model, state, meta


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------- training

@dataclass
class Batch:
    images: np.ndarray  # (B, 1, H, W) float32
    targets: SuperpixelTargets


def build_batch(samples: Sequence[Sample]) -> Batch:
    images = preprocess(np.stack([s.image for s in samples]))
    targets = SuperpixelTargets.stack([mask_to_superpixel_targets(s.mask) for s in samples])
    return Batch(images, targets)


def train_step(model: SegmentationNet, state: OptimizerState, batch: Batch, lr: float,
               weights: LossWeights = LossWeights()) -> tuple[LossBreakdown, bool]:
    logits, cache = model.forward_logits(batch.images, keep_cache=True)
    seg = head(logits)
    breakdown, grad = total_loss(seg, batch.targets, weights, with_grad=True)
    model.backward(cache, grad)
    params = model.parameters()
    applied = optimizer_step(params, [p.grad for p in params], state, lr)
    return breakdown, applied


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (train, val) index split; at least one validation item when n > 1."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    order = rng.permutation(n)
    n_val = int(round(n * fraction))
    if fraction > 0 and n > 1:
        n_val = max(1, n_val)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def epoch_rngs(seed: int, epoch: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(order/batching generator, augmentation generator) for one epoch."""
    ss = np.random.SeedSequence([seed, epoch])
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def epoch_batches(samples: Sequence[Sample], config: TrainConfig, epoch: int,
                  augment_config: AugmentConfig = AugmentConfig()):
    """Yield the prepared batches of one epoch in consumption order."""
    order_rng, aug_rng = epoch_rngs(config.seed, epoch)
    perm = order_rng.permutation(len(samples))
    for start in range(0, len(perm), config.chunk_size):
        chunk = []
        for i in perm[start:start + config.chunk_size]:
            s = samples[int(i)]
            if config.augment:
                s = augment(s, augment_config, aug_rng)
            chunk.append(resize_for_training(s, config.max_side, config.size_multiple))
        for idx in make_batches([s.image.shape for s in chunk], config.batch_size, order_rng):
            yield build_batch([chunk[i] for i in idx])


def predict(model: SegmentationNet, image: np.ndarray):
    """Segmentation map of one uint8 image of any size (padded to a multiple of 4)."""
    return model.forward(preprocess(pad_to_multiple(np.asarray(image), SCALE)))


def validate(model: SegmentationNet, samples: Sequence[Sample], config: TrainConfig) -> dict:
    dets, losses = [], []
    for s in samples:
        seg = predict(model, s.image)
        losses.append(total_loss(seg, mask_to_superpixel_targets(s.mask), config.weights).L_total)
        dets.append(detect_batch(seg, config.threshold, config.t_area)[0])
    res = evaluate([s.mask for s in samples], dets, thresholds=[config.threshold])
    T = config.threshold
    return {
        "loss": float(np.mean(losses)),
        "mean_jaccard": res.mean_jaccard,
        "detection_rate": res.detection_rate[T],
        "recall": res.recall[T],
        "precision": res.precision[T],
        "accuracy": res.accuracy[T],
        "n_detections": res.n_detections,
        "n_gt_objects": res.n_gt_objects,
    }


def _score(val: dict) -> float:
    return val["recall"] + val["precision"] + 0.5 * (val["accuracy"] or 0.0)


@dataclass
class TrainResult:
    model: SegmentationNet
    best_model: SegmentationNet
    state: OptimizerState
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def train(config: TrainConfig, train_set: Sequence[Sample], val_set: Sequence[Sample] | None = None,
          n_classes: int = 0, class_names: Sequence[str] | None = None, checkpoint: str | Path | None = None,
          resume: str | Path | None = None, callback: Callable[[dict], None] | None = None,
          augment_config: AugmentConfig = AugmentConfig()) -> TrainResult:
    """Run both learning-rate phases.

    ``checkpoint`` receives the best-validation model (``<checkpoint>.last``
    the latest epoch, usable with ``resume``). Without a validation set the
    last epoch counts as best.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    class_names = list(class_names or [])
    n_classes = n_classes or len(class_names)
    net_cfg = NetworkConfig(channels=config.channels, n_classes=n_classes)
    history: list[dict] = []
    best_score, best_epoch = -math.inf, -1
    if resume is not None:
        model, state, meta = load_checkpoint(resume, net_cfg)
        if state is None:
            raise WeightFileError(f"{resume} has no optimizer state to resume from")
        history = list(meta.get("history", []))
        best_epoch = meta.get("best_epoch", -1)
        best_score = meta.get("best_score", -math.inf)
    else:
        model = SegmentationNet(net_cfg, seed=config.seed)
        state = OptimizerState.for_params(model.parameters())
    best_model = model.copy()
    if resume is not None and checkpoint is not None and Path(checkpoint).is_file():
        best_model = load_checkpoint(checkpoint, net_cfg)[0]

    def meta(epoch_done: int, best: bool) -> dict:
        return {"config": config.to_dict(), "class_names": class_names, "epochs_done": epoch_done,
                "history": history, "best_epoch": best_epoch, "best_score": best_score,
                "network": dataclasses.asdict(net_cfg), "is_best": best}

    for epoch in range(len(history), config.total_epochs):
        lr = config.lr_for_epoch(epoch)
        t0 = time.perf_counter()
        acc = LossBreakdown()
        n_images = steps = skipped = 0
        for batch in epoch_batches(train_set, config, epoch, augment_config):
            bd, applied = train_step(model, state, batch, lr, config.weights)
            B = batch.images.shape[0]
            for k in ("L_p", "L_n", "L_h", "L_det", "L_cls", "L_total"):
                setattr(acc, k, getattr(acc, k) + getattr(bd, k) * B)
            n_images += B
            steps += 1
            skipped += not applied
        loss = {k: getattr(acc, k) / max(n_images, 1) for k in ("L_p", "L_n", "L_h", "L_det", "L_cls", "L_total")}
        entry = {"epoch": epoch + 1, "phase": 1 if epoch < config.epochs1 else 2, "lr": lr, "steps": steps,
                 "skipped": skipped, "images": n_images, "loss": loss}
        if val_set:
            entry["val"] = validate(model, val_set, config)
            score = _score(entry["val"])
        else:
            score = -loss["L_total"]
        entry["seconds"] = time.perf_counter() - t0
        history.append(entry)
        is_best = score > best_score
        if is_best:
            best_score, best_epoch = score, epoch + 1
            best_model = model.copy()
        if checkpoint is not None:
            ck = Path(checkpoint)
            save_checkpoint(ck.with_name(ck.name + ".last"), model, state, meta(epoch + 1, False))
            if is_best:
                save_checkpoint(ck, model, state, meta(epoch + 1, True))
        if callback is not None:
            callback(entry)
    if checkpoint is not None:
        if best_epoch < 0:
            save_checkpoint(checkpoint, model, state, meta(len(history), True))
        else:
            # best weights stay, the sidecar gets the complete history
            side = meta(len(history), True)
            sidecar_path(checkpoint).write_text(json.dumps({"schema": CHECKPOINT_SCHEMA, **side}, indent=1,
                                                           default=_json_default))
    return TrainResult(model, best_model, state, history, best_epoch)
