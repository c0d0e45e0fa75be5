"""Synthetic barcode scenes and dataset I/O.

Scenes are built from four symbology kinds rendered as binary module
images, rotated, and pasted onto a textured background. The class mask
covers the bar/module region of each symbol (quiet zones excluded) with
value ``class_id + 1``.

Files: 8-bit grayscale PGM or PNG images, PGM masks with the same class
encoding, and a JSONL manifest, one record per line::

    {"image": "img_00000.pgm", "mask": "mask_00000.pgm",
     "classes": ["EAN13", ...], "objects": [{"class": 0, "name": "EAN13", "polygon": [[x, y], ...]}]}

Paths are relative to the manifest directory.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from . import imageops
from .augment import ObjectAnnotation, Sample
from .loss import SuperpixelTargets
from .network import SCALE
from .postprocess import connected_components, min_area_rect


class SymbologyKind(enum.IntEnum):
    EAN13 = 0
    BARS1D = 1
    MATRIX2D = 2
    STACKED2D = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, name: str) -> SymbologyKind:
        for kind, label in _LABELS.items():
            if label.lower() == name.lower() or kind.name.lower() == name.lower():
                return kind
        raise ValueError(f"unknown symbology {name!r}; choose from {', '.join(_LABELS.values())}")


_LABELS = {
    SymbologyKind.EAN13: "EAN13",
    SymbologyKind.BARS1D: "Bars1D",
    SymbologyKind.MATRIX2D: "Matrix2D",
    SymbologyKind.STACKED2D: "Stacked2D",
}
ALL_KINDS = tuple(SymbologyKind)


class DatasetError(ValueError):
    """Bad manifest record or image/mask file."""


# --------------------------------------------------------------------- EAN-13

_L_CODES = ("0001101", "0011001", "0010011", "0111101", "0100011",
            "0110001", "0101111", "0111011", "0110111", "0001011")
_R_CODES = tuple("".join("1" if b == "0" else "0" for b in code) for code in _L_CODES)
_G_CODES = tuple(code[::-1] for code in _R_CODES)
_PARITY = ("LLLLLL", "LLGLGG", "LLGGLG", "LLGGGL", "LGLLGG",
           "LGGLLG", "LGGGLL", "LGLGLG", "LGLGGL", "LGGLGL")
QUIET_1D = 10
BARS1D_RUNS = (9, 17)  # Bars1D has 2k + 1 runs, k drawn from this range
BARS1D_TYPICAL = 85  # modules incl. quiet zones for a typical Bars1D symbol


def ean13_check_digit(digits12: str) -> int:
    if len(digits12) != 12 or not digits12.isdigit():
        raise ValueError(f"expected 12 digits, got {digits12!r}")
    s = sum(int(d) * (3 if i % 2 else 1) for i, d in enumerate(digits12))
    return (10 - s % 10) % 10


def encode_ean13(digits: str) -> np.ndarray:
    """95 modules (1 = bar) for a 13-digit EAN code with a valid check digit."""
    if not isinstance(digits, str) or len(digits) != 13 or not digits.isascii() or not digits.isdigit():
        raise ValueError(f"EAN-13 needs exactly 13 digits, got {digits!r}")
    if ean13_check_digit(digits[:12]) != int(digits[12]):
        raise ValueError(f"bad check digit in {digits}")
    parity = _PARITY[int(digits[0])]
    left = "".join((_L_CODES if p == "L" else _G_CODES)[int(d)] for p, d in zip(parity, digits[1:7]))
    right = "".join(_R_CODES[int(d)] for d in digits[7:])
    bits = "101" + left + "01010" + right + "101"
    return np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")


def random_ean13(rng: np.random.Generator) -> str:
    body = "".join(str(d) for d in rng.integers(0, 10, 12))
    return body + str(ean13_check_digit(body))


# ------------------------------------------------------------------ rendering

FINDER = 7
PDF_START = "11111111010101000"
PDF_STOP = "111111101000101001"


def _bars_image(modules: np.ndarray, px: int, height: int, quiet: int) -> tuple[np.ndarray, np.ndarray]:
    """Ink image (1 = dark) of a 1-D module row, plus its tight mask."""
    row = np.concatenate([np.zeros(quiet, np.uint8), modules, np.zeros(quiet, np.uint8)])
    ink = np.repeat(np.repeat(row[None, :], height, axis=0), px, axis=1)
    mask = np.zeros_like(ink, dtype=bool)
    mask[:, quiet * px:(quiet + len(modules)) * px] = True
    return ink, mask


def _random_runs(rng: np.random.Generator, n_runs: int, lo: int = 1, hi: int = 4) -> np.ndarray:
    widths = rng.integers(lo, hi + 1, n_runs)
    return np.concatenate([np.full(w, 1 - (i % 2), np.uint8) for i, w in enumerate(widths)])


def _pdf_codeword(rng: np.random.Generator) -> str:
    # 4 bars and 4 spaces, widths 1..6, total 17 modules
    while True:
        w = rng.integers(1, 7, 8)
        if w.sum() == 17:
            return "".join(("1" if i % 2 == 0 else "0") * int(x) for i, x in enumerate(w))


def finder_pattern() -> np.ndarray:
    f = np.ones((FINDER, FINDER), np.uint8)
    f[1:-1, 1:-1] = 0
    f[2:-2, 2:-2] = 1
    return f


def render_symbol(kind: SymbologyKind, rng: np.random.Generator, module_px: int = 2,
                  height_px: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render one symbol; returns (ink, mask).

    ``ink`` is uint8 with 1 for dark modules and 0 for light ones, including
    the quiet zone. ``mask`` marks the bar/module region only.
    """
    kind = SymbologyKind(kind)
    px = int(module_px)
    if px < 1:
        raise ValueError("module_px must be positive")
    if kind is SymbologyKind.EAN13:
        height = height_px or 50
        bits = encode_ean13(random_ean13(rng))
        ink, mask = _bars_image(bits, px, height, QUIET_1D)
        # data bars stop short of the guard bars
        guard = np.zeros(95, bool)
        guard[[0, 1, 2, 45, 46, 47, 48, 49, 92, 93, 94]] = True
        short = np.repeat(~guard, px)
        cut = max(height - 5 * px, height // 2)
        ink[cut:, QUIET_1D * px:(QUIET_1D + 95) * px][:, short] = 0
        return ink, mask
    if kind is SymbologyKind.BARS1D:
        height = height_px or 40
        n_runs = 2 * int(rng.integers(BARS1D_RUNS[0], BARS1D_RUNS[1])) + 1  # odd: starts and ends with a bar
        return _bars_image(_random_runs(rng, n_runs), px, height, QUIET_1D)
    if kind is SymbologyKind.MATRIX2D:
        n = int(rng.choice([21, 25]))
        quiet = 4
        grid = rng.integers(0, 2, (n, n)).astype(np.uint8)
        f = finder_pattern()
        for r0, c0 in ((0, 0), (0, n - FINDER), (n - FINDER, 0)):
            r1, c1 = max(r0 - 1, 0), max(c0 - 1, 0)
            grid[r1:r0 + FINDER + 1, c1:c0 + FINDER + 1] = 0  # separator
            grid[r0:r0 + FINDER, c0:c0 + FINDER] = f
        grid[FINDER + 1:n - FINDER - 1, 6] = np.arange(FINDER + 1, n - FINDER - 1) % 2 == 0
        grid[6, FINDER + 1:n - FINDER - 1] = np.arange(FINDER + 1, n - FINDER - 1) % 2 == 0
        grid[n - 4, n - 4] = 0  # no finder centre in the fourth corner
        full = np.pad(grid, quiet)
        ink = np.repeat(np.repeat(full, px, axis=0), px, axis=1)
        mask = np.zeros(ink.shape, bool)
        mask[quiet * px:(quiet + n) * px, quiet * px:(quiet + n) * px] = True
        return ink, mask
    # stacked: rows of start / codewords / stop, each row 4 modules tall
    quiet = 2
    n_rows = int(rng.integers(3, 9))
    n_words = int(rng.integers(1, 4))
    row_h = 4
    rows = []
    for _ in range(n_rows):
        bits = PDF_START + "".join(_pdf_codeword(rng) for _ in range(n_words)) + PDF_STOP
        rows.append(np.frombuffer(bits.encode(), np.uint8) - ord("0"))
    grid = np.repeat(np.stack(rows), row_h, axis=0)
    full = np.pad(grid, quiet)
    ink = np.repeat(np.repeat(full, px, axis=0), px, axis=1)
    mask = np.zeros(ink.shape, bool)
    mask[quiet * px:(quiet + grid.shape[0]) * px, quiet * px:(quiet + grid.shape[1]) * px] = True
    return ink, mask


# ------------------------------------------------------------------- scenes

@dataclass(frozen=True)
class SymbolPlacement:
    kind: SymbologyKind
    module_px: int
    angle: float  # degrees, positive turns clockwise on screen
    center: tuple[float, float]  # (x, y) requested centre
    height_px: int | None = None
    dark: int = 20
    light: int = 235


@dataclass(frozen=True)
class SceneSpec:
    canvas: tuple[int, int]  # (H, W)
    background: str  # flat | gradient | noise
    levels: tuple[int, int]
    symbols: tuple[SymbolPlacement, ...]
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    clutter: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}")
        if min(self.canvas) < 1:
            raise ValueError("canvas must be non-empty")


BACKGROUNDS = ("flat", "gradient", "noise")
PLACEMENT_RETRIES = 50
MARGIN = 6


def _size_options(kind: SymbologyKind, limit: int, rng: np.random.Generator) -> tuple[int, int | None]:
    """Pick (module_px, height_px) so the symbol comfortably fits a canvas side of ``limit``."""
    # 1-px bars alias badly once rotated and strided, so prefer the largest module that fits
    if kind is SymbologyKind.EAN13:
        choices = [p for p in (1, 2, 3) if (95 + 2 * QUIET_1D) * p <= 0.95 * limit] or [1]
        px = max(choices) if rng.random() < 0.8 else min(choices)
        return px, int(rng.integers(28, 56)) + (px - 1) * 12
    if kind is SymbologyKind.BARS1D:
        choices = [p for p in (1, 2, 3) if BARS1D_TYPICAL * p <= 0.8 * limit] or [1]
        px = max(choices) if rng.random() < 0.8 else min(choices)
        return px, int(rng.integers(24, 50)) + (px - 1) * 12
    if kind is SymbologyKind.MATRIX2D:
        choices = [p for p in (2, 3, 4) if 33 * p <= 0.6 * limit] or [1]
        return int(rng.choice(choices)), None
    choices = [p for p in (1, 2) if 90 * p <= 0.9 * limit] or [1]
    return int(max(choices) if rng.random() < 0.7 else min(choices)), None


def random_scene_spec(rng: np.random.Generator, canvas: tuple[int, int] = (256, 256),
                      kinds: Sequence[SymbologyKind] = ALL_KINDS, max_symbols: int = 3) -> SceneSpec:
    H, W = canvas
    symbols = []
    for _ in range(int(rng.integers(1, max_symbols + 1))):
        kind = SymbologyKind(kinds[int(rng.integers(len(kinds)))])
        px, height = _size_options(kind, min(H, W), rng)
        dark = int(rng.integers(0, 80))
        light = int(min(255, dark + rng.integers(110, 256)))
        symbols.append(SymbolPlacement(kind, px, float(rng.uniform(-90, 90)),
                                       (float(rng.uniform(0, W)), float(rng.uniform(0, H))), height, dark, light))
    lo = int(rng.integers(40, 200))
    hi = int(min(255, lo + rng.integers(0, 80)))
    return SceneSpec(
        canvas=(H, W),
        background=str(rng.choice(BACKGROUNDS)),
        levels=(lo, hi),
        symbols=tuple(symbols),
        noise_sigma=float(rng.uniform(0, 8)),
        blur_sigma=float(rng.uniform(0, 1.0)) if rng.random() < 0.5 else 0.0,
        clutter=int(rng.integers(0, 5)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = spec.canvas
    lo, hi = spec.levels
    if spec.background == "flat":
        return np.full((H, W), (lo + hi) / 2.0)
    if spec.background == "gradient":
        a = rng.uniform(0, 2 * np.pi)
        ys, xs = np.mgrid[0:H, 0:W]
        d = xs * np.cos(a) + ys * np.sin(a)
        d = (d - d.min()) / max(np.ptp(d), 1e-9)
        return lo + (hi - lo) * d
    coarse = rng.uniform(lo, hi, (max(2, H // 32), max(2, W // 32)))
    return imageops.resize(coarse, (H, W), order=1)


def _draw_clutter(img: np.ndarray, rng: np.random.Generator, count: int) -> None:
    H, W = img.shape
    ys, xs = np.mgrid[0:H, 0:W]
    for _ in range(count):
        level = rng.uniform(0, 255)
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        shape = rng.integers(3)
        if shape == 0:  # ellipse
            rx, ry = rng.uniform(4, W / 6), rng.uniform(4, H / 6)
            sel = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1
        elif shape == 1:  # rotated thick line
            a = rng.uniform(0, np.pi)
            length, half = rng.uniform(W / 8, W / 2), rng.uniform(1, 3)
            u = (xs - cx) * np.cos(a) + (ys - cy) * np.sin(a)
            v = -(xs - cx) * np.sin(a) + (ys - cy) * np.cos(a)
            sel = (np.abs(u) <= length / 2) & (np.abs(v) <= half)
        else:  # box
            w, h = rng.uniform(6, W / 5), rng.uniform(6, H / 5)
            sel = (np.abs(xs - cx) <= w / 2) & (np.abs(ys - cy) <= h / 2)
        img[sel] = level


def _dilate(b: np.ndarray, r: int) -> np.ndarray:
    out = b.copy()
    for d in range(1, r + 1):
        out[d:, :] |= b[:-d, :]
        out[:-d, :] |= b[d:, :]
    tmp = out.copy()
    for d in range(1, r + 1):
        out[:, d:] |= tmp[:, :-d]
        out[:, :-d] |= tmp[:, d:]
    return out


def _rotate_symbol(ink: np.ndarray, tight: np.ndarray, angle: float):
    """Rotate ink, support and mask together; also map the tight rectangle."""
    alpha, A, t = imageops.rotate(np.ones(ink.shape), angle, order=1, fill=0.0)
    ink_r, _, _ = imageops.rotate(ink.astype(np.float64), angle, order=1, fill=0.0)
    mask_r, _, _ = imageops.rotate(tight.astype(np.uint8), angle, order=0, fill=0)
    rows, cols = np.nonzero(tight)
    x0, x1, y0, y1 = cols.min(), cols.max() + 1, rows.min(), rows.max() + 1
    rect = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)
    poly = imageops.apply_affine(rect - 0.5, A, t) + 0.5
    return ink_r, alpha, mask_r.astype(bool), poly


def compose_scene(spec: SceneSpec) -> Sample:
    """Render a scene; symbols that cannot be placed without collision are dropped."""
    rng = np.random.default_rng(spec.seed)
    H, W = spec.canvas
    img = _background(spec, rng)
    _draw_clutter(img, rng, spec.clutter)
    mask = np.zeros((H, W), np.uint8)
    taken = np.zeros((H, W), bool)
    objects = []
    for sym in spec.symbols:
        ink, tight = render_symbol(sym.kind, rng, sym.module_px, sym.height_px)
        ink_r, alpha, mask_r, poly = _rotate_symbol(ink, tight, sym.angle)
        h, w = alpha.shape
        if h > H or w > W:
            continue
        foot = _dilate(alpha > 0, MARGIN)
        cx, cy = sym.center
        spot = None
        for attempt in range(PLACEMENT_RETRIES + 1):
            if attempt:
                cx, cy = rng.uniform(w / 2, W - w / 2), rng.uniform(h / 2, H - h / 2)
            x0 = int(round(cx - w / 2))
            y0 = int(round(cy - h / 2))
            if x0 < 0 or y0 < 0 or x0 + w > W or y0 + h > H:
                continue
            if not np.any(taken[y0:y0 + h, x0:x0 + w] & foot):
                spot = (x0, y0)
                break
        if spot is None:
            continue
        x0, y0 = spot
        region = (slice(y0, y0 + h), slice(x0, x0 + w))
        tone = sym.light + (sym.dark - sym.light) * ink_r
        img[region] = img[region] * (1 - alpha) + tone * alpha
        mask[region][mask_r] = int(sym.kind) + 1
        taken[region] |= foot
        objects.append(ObjectAnnotation(int(sym.kind), poly + np.array([x0, y0])))
    if spec.blur_sigma > 0:
        img = imageops.gaussian_blur(img, spec.blur_sigma)
    if spec.noise_sigma > 0:
        img = img + rng.normal(0, spec.noise_sigma, img.shape)
    return Sample(imageops.to_uint8(img), mask, objects)


def remap_classes(sample: Sample, kinds: Sequence[SymbologyKind]) -> Sample:
    """Renumber classes so that ``kinds[i]`` becomes class ``i``."""
    lut = np.zeros(len(SymbologyKind) + 1, np.uint8)
    for i, k in enumerate(kinds):
        lut[int(k) + 1] = i + 1
    objs = [ObjectAnnotation(kinds.index(SymbologyKind(o.class_id)), o.polygon) for o in sample.objects]
    return Sample(sample.image, lut[sample.mask], objs)


def generate_samples(count: int, seed: int, canvas: tuple[int, int] = (256, 256),
                     kinds: Sequence[SymbologyKind] = ALL_KINDS, max_symbols: int = 3) -> Iterable[Sample]:
    """Deterministic stream of scenes; classes numbered in the order of ``kinds``."""
    kinds = [SymbologyKind(k) for k in kinds]
    for child in np.random.SeedSequence(seed).spawn(count):
        spec = random_scene_spec(np.random.default_rng(child), canvas, kinds, max_symbols)
        yield remap_classes(compose_scene(spec), kinds)


# ----------------------------------------------------------------- targets

def pad_mask(mask: np.ndarray, multiple: int = SCALE) -> np.ndarray:
    H, W = mask.shape
    ph, pw = -H % multiple, -W % multiple
    return np.pad(mask, ((0, ph), (0, pw))) if ph or pw else mask


def mask_to_superpixel_targets(mask: np.ndarray, scale: int = SCALE, coverage: float = 0.5) -> SuperpixelTargets:
    """Per-block targets: positive when at least ``coverage`` of the block is object.

    The class of a positive block is its most frequent object class (lowest
    id on ties). Masks are padded with background to a multiple of ``scale``.
    """
    m = pad_mask(np.asarray(mask), scale)
    h, w = m.shape[0] // scale, m.shape[1] // scale
    blocks = m.reshape(h, scale, w, scale).transpose(0, 2, 1, 3).reshape(h, w, scale * scale)
    frac = np.count_nonzero(blocks, axis=2) / (scale * scale)
    detect = frac >= coverage
    n_vals = int(m.max()) + 1 if m.size else 1
    class_id = np.zeros((h, w), np.int64)
    if n_vals > 1:
        counts = np.stack([(blocks == v).sum(axis=2) for v in range(1, n_vals)], axis=-1)
        class_id = counts.argmax(axis=-1)
    return SuperpixelTargets(detect.astype(np.uint8), np.where(detect, class_id, 0))


# ---------------------------------------------------------------------- I/O

def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Load an image as 8-bit grayscale (colour converted with BT.601 integer luma)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.int64)
                return np.clip(arr, 0, 255).astype(np.uint8)
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except (OSError, SyntaxError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc


def write_gray(path: str | os.PathLike, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("only 8-bit images are written")
    Image.fromarray(arr, mode="L").save(path)


@dataclass
class ManifestRecord:
    image: Path
    mask: Path
    objects: list[ObjectAnnotation] = field(default_factory=list)


@dataclass
class DatasetManifest:
    path: Path
    records: list[ManifestRecord]
    class_names: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def load(self, index: int) -> Sample:
        rec = self.records[index]
        image = read_gray(rec.image)
        mask = read_gray(rec.mask)
        if image.shape != mask.shape:
            raise DatasetError(f"{rec.mask}: mask {mask.shape[::-1]} does not match image {image.shape[::-1]}")
        if self.class_names and int(mask.max()) > len(self.class_names):
            raise DatasetError(f"{rec.mask}: mask value {int(mask.max())} exceeds {len(self.class_names)} classes")
        return Sample(image, mask, list(rec.objects))

    def samples(self) -> list[Sample]:
        return [self.load(i) for i in range(len(self.records))]


def read_manifest(path: str | os.PathLike, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing manifest: {path}")
    root = path.parent
    records, names = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
                image, mask = root / rec["image"], root / rec["mask"]
                objs = [ObjectAnnotation(int(o["class"]), np.asarray(o.get("polygon", []), np.float64).reshape(-1, 2))
                        for o in rec.get("objects", [])]
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{where}: malformed record ({exc})") from exc
            for name in rec.get("classes", []):
                if name not in names:
                    names.append(name)
            for o in rec.get("objects", []):
                if "name" in o and o["name"] not in names:
                    names.append(o["name"])
            if check_files:
                for p in (image, mask):
                    if not p.is_file():
                        raise DatasetError(f"{where}: missing file {p}")
            records.append(ManifestRecord(image, mask, objs))
    if names:
        for rec in records:
            for o in rec.objects:
                if not 0 <= o.class_id < len(names):
                    raise DatasetError(f"{path}: class id {o.class_id} outside declared classes {names}")
    return DatasetManifest(path, records, names)


def load_dataset(path: str | os.PathLike) -> list[Sample]:
    return read_manifest(path).samples()


def write_dataset(samples: Iterable[Sample], out_dir: str | os.PathLike, class_names: Sequence[str],
                  ext: str = "pgm", manifest_name: str = "manifest.jsonl") -> Path:
    """Write images, masks and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / manifest_name
    names = list(class_names)
    with open(manifest, "w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            img_name, mask_name = f"img_{i:05d}.{ext}", f"mask_{i:05d}.pgm"
            write_gray(out / img_name, s.image)
            write_gray(out / mask_name, s.mask)
            rec = {"image": img_name, "mask": mask_name, "classes": names,
                   "objects": [o.to_json(names) for o in s.objects]}
            fh.write(json.dumps(rec) + "\n")
    return manifest


def objects_from_mask(mask: np.ndarray) -> list[ObjectAnnotation]:
    """One object per 8-connected component, polygon = min-area rectangle through its pixel centres."""
    labels, comps = connected_components(mask != 0)
    out = []
    for c in comps:
        values = mask[c.pixels[:, 0], c.pixels[:, 1]].astype(np.int64)
        cls = int(np.bincount(values).argmax()) - 1
        out.append(ObjectAnnotation(cls, min_area_rect(c.pixels[:, ::-1] + 0.5).corners()))
    return out


def load_benchmark_pair(image_path: str | os.PathLike, mask_path: str | os.PathLike) -> Sample:
    """Image plus binary ground-truth mask; every nonzero pixel becomes class 0."""
    image = read_gray(image_path)
    raw = read_gray(mask_path)
    if image.shape != raw.shape:
        raise DatasetError(f"{mask_path}: mask {raw.shape[1]}x{raw.shape[0]} does not match "
                           f"image {image.shape[1]}x{image.shape[0]} ({image_path})")
    mask = (raw != 0).astype(np.uint8)
    return Sample(image, mask, objects_from_mask(mask))
