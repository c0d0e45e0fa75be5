"""Command-line interface: ``barseg generate | train | eval | detect | bench``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input. JSON outputs
carry a versioned ``schema`` field. ``--config FILE`` reads a JSON object
of option defaults for the chosen subcommand (keys are the long option
names with dashes replaced by underscores); explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import backend, data, trainer
from .data import DatasetError, SymbologyKind
from .loss import LossWeights
from .metrics import DEFAULT_THRESHOLDS, evaluate
from .network import SCALE, NetworkConfig, SegmentationNet, WeightFileError, pad_to_multiple, preprocess
from .postprocess import DetectedObject, detect_objects

log = logging.getLogger("barseg")

EVAL_SCHEMA = "barseg.eval/1"
DETECT_SCHEMA = "barseg.detect/1"
BENCH_SCHEMA = "barseg.bench/1"

EXIT_OK, EXIT_FAILURE, EXIT_INVALID = 0, 1, 2


class InvalidInput(Exception):
    """Raised for bad arguments or input files; maps to exit code 2."""


# ------------------------------------------------------------------ helpers

def _thresholds(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from exc
    if not values or any(not 0.0 <= t <= 1.0 for t in values):
        raise argparse.ArgumentTypeError("thresholds must lie in [0, 1]")
    return values


def _emit(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=1, default=trainer._json_default)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def load_model(path: str) -> tuple[SegmentationNet, dict]:
    try:
        model, _, meta = trainer.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise InvalidInput(f"checkpoint not found: {path}") from exc
    except WeightFileError as exc:
        raise InvalidInput(f"{path}: {exc}") from exc
    return model, meta


def class_names_for(model: SegmentationNet, meta: dict) -> list[str]:
    names = list(meta.get("class_names") or [])
    n = model.config.n_classes
    if len(names) != n:
        names = [SymbologyKind(i).label if i < len(SymbologyKind) else f"class{i}" for i in range(n)]
    return names


def detection_json(det: DetectedObject, names: list[str]) -> dict:
    r = det.rect
    return {
        "vertices": [[round(float(x), 3), round(float(y), 3)] for x, y in r.ordered_corners()],
        "center": [round(r.cx, 3), round(r.cy, 3)],
        "size": [round(r.width, 3), round(r.height, 3)],
        "angle": round(r.angle, 3),
        "class_id": det.class_id,
        "class_name": names[det.class_id] if det.class_id is not None and det.class_id < len(names) else None,
        "class_probs": [round(float(p), 5) for p in det.class_probs],
        "component_area": int(det.component_area),
    }


PALETTE = [(255, 40, 40), (40, 200, 40), (40, 120, 255), (255, 170, 0), (200, 0, 200), (0, 200, 200)]


def draw_overlay(image: np.ndarray, dets: list[DetectedObject], names: list[str], path: Path) -> None:
    from PIL import Image, ImageDraw

    im = Image.fromarray(image, mode="L").convert("RGB")
    draw = ImageDraw.Draw(im)
    for d in dets:
        color = PALETTE[(d.class_id or 0) % len(PALETTE)]
        pts = [tuple(map(float, p)) for p in d.rect.ordered_corners()]
        draw.line(pts + [pts[0]], fill=color, width=2)
        label = names[d.class_id] if d.class_id is not None and d.class_id < len(names) else "barcode"
        x, y = pts[0]
        draw.text((max(0.0, x), max(0.0, y - 12)), label, fill=color)
    im.save(path)


def run_detector(model: SegmentationNet, image: np.ndarray, threshold: float = 0.5,
                 t_area: int = 20) -> list[DetectedObject]:
    """Detections in original image coordinates; the image is padded right/bottom with its median."""
    fill = int(np.median(image)) if image.size else 0
    seg = model.forward(preprocess(pad_to_multiple(image, SCALE, fill)))
    return detect_objects(seg, threshold, t_area)


# ----------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    try:
        kinds = [SymbologyKind.from_label(k) for k in args.classes.split(",")] if args.classes else list(SymbologyKind)
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc
    if args.count < 0:
        raise InvalidInput("--count must be non-negative")
    size = args.size or 256
    samples = data.generate_samples(args.count, args.seed, (size, size), kinds, args.max_symbols)
    manifest = data.write_dataset(samples, args.out, [k.label for k in kinds], ext=args.format)
    print(f"wrote {args.count} scenes to {manifest}")
    return EXIT_OK


def _train_config(args) -> trainer.TrainConfig:
    try:
        return trainer.TrainConfig(
            batch_size=args.batch_size, epochs1=args.epochs, lr1=args.lr, epochs2=args.epochs2, lr2=args.lr2,
            chunk_size=args.chunk_size, max_side=args.max_side, size_multiple=args.size_multiple,
            weights=LossWeights(args.w_p, args.w_n, args.w_h, args.alpha), seed=args.seed,
            channels=args.channels, augment=not args.no_augment, val_fraction=args.val_fraction,
            threshold=args.threshold, t_area=args.t_area,
        )
    except ValueError as exc:
        raise InvalidInput(str(exc)) from exc


def cmd_train(args) -> int:
    cfg = _train_config(args)
    manifest = data.read_manifest(args.manifest)
    samples = manifest.samples()
    if not samples:
        raise InvalidInput(f"{args.manifest}: no records")
    if args.val_manifest:
        train_set, val_set = samples, data.load_dataset(args.val_manifest)
    else:
        tr, va = trainer.split_validation(len(samples), cfg.val_fraction, cfg.seed)
        train_set, val_set = [samples[i] for i in tr], [samples[i] for i in va]
    names = manifest.class_names
    n_classes = len(names) if names else int(max(int(s.mask.max()) for s in samples))

    def report(h):
        line = f"epoch {h['epoch']:3d} phase {h['phase']} lr {h['lr']:.0e} loss {h['loss']['L_total']:.4f}"
        if "val" in h:
            v = h["val"]
            acc = "n/a" if v["accuracy"] is None else f"{v['accuracy']:.3f}"
            line += f" val_loss {v['loss']:.4f} R {v['recall']:.3f} P {v['precision']:.3f} acc {acc}"
        print(line + f" ({h['seconds']:.1f}s)", flush=True)

    res = trainer.train(cfg, train_set, val_set, n_classes=n_classes, class_names=names,
                        checkpoint=args.out, resume=args.resume, callback=report)
    print(f"best epoch {res.best_epoch}; checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    manifest = data.read_manifest(args.manifest)
    if not manifest.records:
        raise InvalidInput(f"{args.manifest}: no records to evaluate")
    if manifest.class_names and len(manifest.class_names) != model.config.n_classes:
        raise InvalidInput(f"checkpoint has {model.config.n_classes} classes, manifest declares "
                           f"{len(manifest.class_names)} ({', '.join(manifest.class_names)})")
    masks, dets = [], []
    for i in range(len(manifest.records)):
        s = manifest.load(i)
        masks.append(s.mask)
        dets.append(run_detector(model, s.image, args.threshold, args.t_area))
    res = evaluate(masks, dets, args.thresholds, one_to_one=args.one_to_one)
    report = {"schema": EVAL_SCHEMA, "checkpoint": str(args.checkpoint), "manifest": str(args.manifest),
              "threshold": args.threshold, "t_area": args.t_area, "one_to_one": args.one_to_one,
              "class_names": class_names_for(model, meta), **res.to_dict()}
    report["curve"] = [{"T": T, "D": res.detection_rate[T], "R": res.recall[T], "P": res.precision[T]}
                       for T in res.thresholds]
    _emit(report, args.out)
    return EXIT_OK


def cmd_detect(args) -> int:
    model, meta = load_model(args.checkpoint)
    names = class_names_for(model, meta)
    overlay = Path(args.overlay) if args.overlay else None
    if overlay:
        overlay.mkdir(parents=True, exist_ok=True)
    images, failures = [], 0
    t_all = time.perf_counter()
    for path in args.images:
        try:
            img = data.read_gray(path)
        except DatasetError as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        t0 = time.perf_counter()
        dets = run_detector(model, img, args.threshold, args.t_area)
        dt = time.perf_counter() - t0
        if overlay:
            draw_overlay(img, dets, names, overlay / f"{Path(path).stem}_overlay.png")
        images.append({"path": str(path), "width": img.shape[1], "height": img.shape[0],
                       "seconds": round(dt, 4), "detections": [detection_json(d, names) for d in dets]})
    if args.images and failures == len(args.images):
        raise InvalidInput("no input image could be read")
    report = {"schema": DETECT_SCHEMA,
              "model": {"checkpoint": str(args.checkpoint), "channels": model.config.channels,
                        "n_classes": model.config.n_classes, "class_names": names},
              "threshold": args.threshold, "t_area": args.t_area, "images": images,
              "total_seconds": round(time.perf_counter() - t_all, 4)}
    _emit(report, args.out)
    return EXIT_OK


def bench_forward(model: SegmentationNet, size: int, iterations: int = 30, warmup: int = 3,
                  seed: int = 0) -> np.ndarray:
    """Wall-clock seconds of ``iterations`` forward passes at ``size`` x ``size``."""
    x = preprocess(np.random.default_rng(seed).integers(0, 256, (size, size), dtype=np.uint8))
    for _ in range(warmup):
        model.forward(x)
    times = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        model.forward(x)
        times.append(time.perf_counter() - t0)
    return np.array(times)


def cmd_bench(args) -> int:
    size = args.size or 512
    if size <= 0 or size % 4:
        raise InvalidInput("--size must be a positive multiple of 4")
    if args.iterations < 1:
        raise InvalidInput("--iterations must be positive")
    if args.checkpoint:
        model, _ = load_model(args.checkpoint)
    else:
        model = SegmentationNet(NetworkConfig(), seed=args.seed)
    t = bench_forward(model, size, args.iterations, args.warmup, args.seed) * 1e3
    stats = {"schema": BENCH_SCHEMA, "resolution": f"{size}x{size}", "threads": args.threads,
             "iterations": int(t.size), "backend": backend.name, "mean_ms": float(t.mean()),
             "median_ms": float(np.median(t)), "p95_ms": float(np.percentile(t, 95))}
    if args.json:
        _emit(stats, None)
    else:
        print(f"resolution {stats['resolution']}  threads {args.threads}  iterations {t.size}  backend {backend.name}")
        print(f"mean {stats['mean_ms']:.2f} ms  median {stats['median_ms']:.2f} ms  p95 {stats['p95_ms']:.2f} ms")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="barseg", description="Barcode detection by semantic segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option defaults")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")

    def detection(sp):
        sp.add_argument("--threshold", type=float, default=0.5, help="detection probability threshold")
        sp.add_argument("--t-area", type=int, default=20, help="minimum component size in superpixels")

    g = sub.add_parser("generate", help="write a synthetic dataset")
    common(g)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--classes", default="", help="comma-separated symbologies (default: all four)")
    g.add_argument("--size", type=int, default=256, help="square canvas side")
    g.add_argument("--max-symbols", type=int, default=3)
    g.add_argument("--format", choices=("pgm", "png"), default="pgm")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model from a manifest")
    common(t)
    detection(t)
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--out", required=True, help="checkpoint path (best validation model)")
    t.add_argument("--resume", help="checkpoint (.last) to continue from")
    t.add_argument("--epochs", type=int, default=70, help="phase 1 epochs")
    t.add_argument("--epochs2", type=int, default=70, help="phase 2 epochs")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr2", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--chunk-size", type=int, default=3000)
    t.add_argument("--max-side", type=int, default=1024)
    t.add_argument("--size-multiple", type=int, default=64)
    t.add_argument("--channels", type=int, default=24)
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--w-p", type=float, default=15.0)
    t.add_argument("--w-n", type=float, default=1.0)
    t.add_argument("--w-h", type=float, default=5.0)
    t.add_argument("--alpha", type=float, default=1.0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a manifest")
    common(e)
    detection(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--thresholds", type=_thresholds, default=list(DEFAULT_THRESHOLDS),
                   help="comma-separated Jaccard thresholds (default 0.1..0.9)")
    e.add_argument("--one-to-one", action="store_true", help="greedy one-to-one matching for P/R")
    e.add_argument("--out", help="write the JSON report here instead of stdout")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("detect", help="detect barcodes in images")
    common(d)
    detection(d)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("images", nargs="*")
    d.add_argument("--overlay", help="directory for annotated images")
    d.add_argument("--out", help="write the JSON report here instead of stdout")
    d.set_defaults(func=cmd_detect)

    b = sub.add_parser("bench", help="forward-pass latency")
    common(b)
    b.add_argument("--checkpoint", help="model to time (default: freshly initialized)")
    b.add_argument("--size", type=int, default=512)
    b.add_argument("--iterations", type=int, default=30)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)
    return p


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read --config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            parser.error("--config must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest for a in sub._actions}
        unknown = set(overrides) - dests - {"help"}
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(sorted(unknown))}")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except (InvalidInput, DatasetError, WeightFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
