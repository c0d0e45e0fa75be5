import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from barseg import data
from barseg.data import (DatasetError, SceneSpec, SymbolPlacement, SymbologyKind, compose_scene,
                         encode_ean13, ean13_check_digit, mask_to_superpixel_targets, render_symbol)
from barseg.postprocess import cell_corners, connected_components, min_area_rect

# EAN-13 tables typed independently of the encoder, for decoding
L = {"0001101": 0, "0011001": 1, "0010011": 2, "0111101": 3, "0100011": 4,
     "0110001": 5, "0101111": 6, "0111011": 7, "0110111": 8, "0001011": 9}
G = {"0100111": 0, "0110011": 1, "0011011": 2, "0100001": 3, "0011101": 4,
     "0111001": 5, "0000101": 6, "0010001": 7, "0001001": 8, "0010111": 9}
R = {"1110010": 0, "1100110": 1, "1101100": 2, "1000010": 3, "1011100": 4,
     "1001110": 5, "1010000": 6, "1000100": 7, "1001000": 8, "1110100": 9}
FIRST = {"LLLLLL": 0, "LLGLGG": 1, "LLGGLG": 2, "LLGGGL": 3, "LGLLGG": 4,
         "LGGLLG": 5, "LGGGLL": 6, "LGLGLG": 7, "LGLGGL": 8, "LGGLGL": 9}


def decode_ean13(bits) -> str:
    s = "".join(map(str, bits))
    assert s[:3] == "101" and s[45:50] == "01010" and s[-3:] == "101"
    digits, parity = [], ""
    for i in range(6):
        w = s[3 + 7 * i:10 + 7 * i]
        if w in L:
            digits.append(L[w]); parity += "L"
        else:
            digits.append(G[w]); parity += "G"
    for i in range(6):
        digits.append(R[s[50 + 7 * i:57 + 7 * i]])
    return str(FIRST[parity]) + "".join(map(str, digits))


def check_digit_oracle(d12):
    total = sum(int(c) * w for c, w in zip(d12, [1, 3] * 6))
    return (10 - total % 10) % 10


def test_check_digit_known():
    assert ean13_check_digit("590123412345") == 7


@given(st.text("0123456789", min_size=12, max_size=12))
def test_check_digit_matches_oracle(d12):
    assert ean13_check_digit(d12) == check_digit_oracle(d12)


def test_encode_accepts_and_rejects():
    assert len(encode_ean13("4006381333931")) == 95
    for bad in ("4006381333932", "400638133393", "40063813339311", "40063813339a1", "４００６３８１３３３９３１"):
        with pytest.raises(ValueError):
            encode_ean13(bad)


@given(st.text("0123456789", min_size=12, max_size=12))
def test_encode_roundtrip_and_structure(d12):
    code = d12 + str(check_digit_oracle(d12))
    bits = encode_ean13(code)
    assert len(bits) == 95
    assert list(bits[:3]) == [1, 0, 1] and list(bits[-3:]) == [1, 0, 1]
    assert decode_ean13(bits) == code
    # each digit has 2 bars and 2 spaces
    for i in list(range(3, 45, 7)) + list(range(50, 92, 7)):
        w = bits[i:i + 7]
        assert np.count_nonzero(np.diff(w)) + 1 == 4


def test_ean13_render_width():
    ink, mask = render_symbol(SymbologyKind.EAN13, np.random.default_rng(0), module_px=2, height_px=50)
    assert ink.shape == (50, 95 * 2 + 2 * data.QUIET_1D * 2)
    cols = np.nonzero(mask.any(axis=0))[0]
    assert cols.min() == 20 and cols.max() == 20 + 190 - 1


@pytest.mark.parametrize("kind", list(SymbologyKind))
def test_render_mask_single_component(kind):
    for seed in range(5):
        ink, mask = render_symbol(kind, np.random.default_rng(seed), module_px=2)
        assert ink.shape == mask.shape
        assert len(connected_components(mask)[1]) == 1
        # quiet zone holds no ink
        assert not ink[~mask].any()


def test_matrix_has_three_finders():
    f = data.finder_pattern()
    for seed in range(20):
        ink, mask = render_symbol(SymbologyKind.MATRIX2D, np.random.default_rng(seed), module_px=1)
        rows, cols = np.nonzero(mask)
        grid = ink[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
        n = grid.shape[0]
        corners = [grid[:7, :7], grid[:7, n - 7:], grid[n - 7:, :7], grid[n - 7:, n - 7:]]
        assert [np.array_equal(c, f) for c in corners] == [True, True, True, False]


def test_stacked_row_count():
    for seed in range(20):
        ink, mask = render_symbol(SymbologyKind.STACKED2D, np.random.default_rng(seed), module_px=1)
        rows = np.nonzero(mask.any(axis=1))[0]
        assert (len(rows) // 4) in range(3, 9)


def spec_with(symbols, canvas=(200, 300), seed=3, **kw):
    return SceneSpec(canvas, kw.pop("background", "flat"), (120, 160), tuple(symbols), seed=seed, **kw)


def test_compose_two_symbols():
    spec = spec_with([
        SymbolPlacement(SymbologyKind.EAN13, 1, 0.0, (80, 60), 40),
        SymbolPlacement(SymbologyKind.MATRIX2D, 2, 20.0, (220, 140)),
    ])
    s = compose_scene(spec)
    labels, comps = connected_components(s.mask)
    assert len(comps) == 2
    values = sorted(int(s.mask[c.pixels[0, 0], c.pixels[0, 1]]) for c in comps)
    assert values == [1, 3]
    assert [o.class_id for o in s.objects] == [0, 2]


def test_compose_deterministic():
    rng = np.random.default_rng(9)
    spec = data.random_scene_spec(rng)
    a, b = compose_scene(spec), compose_scene(spec)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
    x = list(data.generate_samples(3, 42))
    y = list(data.generate_samples(3, 42))
    for p, q in zip(x, y):
        assert np.array_equal(p.image, q.image) and np.array_equal(p.mask, q.mask)


def angle_diff_mod90(a, b):
    d = (a - b) % 90
    return min(d, 90 - d)


@pytest.mark.parametrize("kind", [SymbologyKind.EAN13, SymbologyKind.BARS1D, SymbologyKind.STACKED2D])
def test_rotated_symbol_angle(kind):
    spec = spec_with([SymbolPlacement(kind, 2, 30.0, (150, 100), 40)], canvas=(240, 300))
    s = compose_scene(spec)
    (comp,) = connected_components(s.mask)[1]
    rect = min_area_rect(cell_corners(comp.pixels))
    assert angle_diff_mod90(rect.angle, 30.0) <= 3.0


def test_dropped_symbol_when_it_cannot_fit():
    spec = spec_with([SymbolPlacement(SymbologyKind.EAN13, 2, 0.0, (10, 10), 40)], canvas=(60, 60))
    s = compose_scene(spec)
    assert s.objects == [] and not s.mask.any()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generator_roundtrip(seed):
    rng = np.random.default_rng(seed)
    spec = data.random_scene_spec(rng)
    s = compose_scene(spec)
    labels, comps = connected_components(s.mask)
    assert len(comps) == len(s.objects)
    # union of objects equals nonzero mask, and each object matches one component
    for obj in s.objects:
        poly_rect = min_area_rect(obj.polygon)
        best = None
        for c in comps:
            # rectangle through pixel centres (x = col + 0.5, y = row + 0.5)
            r = min_area_rect(c.pixels[:, ::-1] + 0.5)
            if np.hypot(r.cx - poly_rect.cx, r.cy - poly_rect.cy) < 3:
                best = r
        assert best is not None
        assert angle_diff_mod90(best.angle, poly_rect.angle) <= 3.0
        assert abs(best.area - poly_rect.area) <= 0.10 * poly_rect.area
    assert len(s.objects) <= len(spec.symbols)
    assert {int(v) for v in np.unique(s.mask)} - {0} == {o.class_id + 1 for o in s.objects}


def test_superpixel_targets_examples():
    t = mask_to_superpixel_targets(np.ones((8, 8), np.uint8))
    assert t.detect.shape == (2, 2) and t.detect.all()
    half = np.zeros((4, 4), np.uint8)
    half[:2] = 3
    t = mask_to_superpixel_targets(half)
    assert t.detect[0, 0] == 1 and t.class_id[0, 0] == 2
    t = mask_to_superpixel_targets(np.zeros((12, 8), np.uint8))
    assert t.detect.shape == (3, 2) and not t.detect.any()


def test_superpixel_targets_padding_and_majority():
    m = np.zeros((6, 6), np.uint8)
    m[:4, :4] = 1
    m[0, :3] = 2
    t = mask_to_superpixel_targets(m)
    assert t.detect.shape == (2, 2)
    assert t.detect.tolist() == [[1, 0], [0, 0]]
    assert t.class_id[0, 0] == 0  # 13 ones vs 3 twos


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.data())
def test_superpixel_targets_match_loop(h, w, d):
    m = np.array(d.draw(st.lists(st.integers(0, 3), min_size=16 * h * w, max_size=16 * h * w)),
                 np.uint8).reshape(4 * h, 4 * w)
    t = mask_to_superpixel_targets(m)
    for i in range(h):
        for j in range(w):
            blk = m[4 * i:4 * i + 4, 4 * j:4 * j + 4]
            pos = np.count_nonzero(blk) >= 8
            assert t.detect[i, j] == pos
            if pos:
                counts = [np.count_nonzero(blk == v) for v in (1, 2, 3)]
                assert t.class_id[i, j] == int(np.argmax(counts))


def test_dataset_roundtrip(tmp_path):
    names = [k.label for k in SymbologyKind]
    samples = list(data.generate_samples(4, 7))
    manifest = data.write_dataset(samples, tmp_path, names)
    lines = manifest.read_text().splitlines()
    assert len(lines) == 4
    rec = json.loads(lines[0])
    assert set(rec) >= {"image", "mask", "objects"}
    m = data.read_manifest(manifest)
    assert m.class_names == names
    loaded = m.samples()
    for a, b in zip(samples, loaded):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)
        assert [o.class_id for o in a.objects] == [o.class_id for o in b.objects]
        for p, q in zip(a.objects, b.objects):
            assert np.allclose(p.polygon, q.polygon, atol=1e-3)


def test_missing_mask_is_reported(tmp_path):
    manifest = data.write_dataset(list(data.generate_samples(2, 1)), tmp_path, ["a", "b", "c", "d"])
    (tmp_path / "mask_00001.pgm").unlink()
    with pytest.raises(DatasetError, match="mask_00001.pgm"):
        data.read_manifest(manifest)


def test_malformed_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text('{"image": "x.pgm"}\n')
    with pytest.raises(DatasetError, match="m.jsonl:1"):
        data.read_manifest(p)


def test_benchmark_pair(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (480, 640), dtype=np.uint8)
    mask = np.zeros((480, 640), np.uint8)
    mask[10:50, 10:100] = 255
    mask[200:260, 300:400] = 255
    data.write_gray(tmp_path / "i.pgm", img)
    data.write_gray(tmp_path / "m.pgm", mask)
    data.write_gray(tmp_path / "blank.pgm", np.zeros_like(mask))
    s = data.load_benchmark_pair(tmp_path / "i.pgm", tmp_path / "m.pgm")
    assert s.mask.shape == (480, 640)
    assert len(s.objects) == 2 and all(o.class_id == 0 for o in s.objects)
    assert set(np.unique(s.mask)) == {0, 1}
    assert data.load_benchmark_pair(tmp_path / "i.pgm", tmp_path / "blank.pgm").objects == []
    data.write_gray(tmp_path / "small.pgm", mask[:100])
    with pytest.raises(DatasetError, match="small.pgm"):
        data.load_benchmark_pair(tmp_path / "i.pgm", tmp_path / "small.pgm")


def test_color_image_uses_bt601_luma(tmp_path):
    from PIL import Image
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[..., 0], rgb[..., 1], rgb[..., 2] = 200, 100, 50
    Image.fromarray(rgb).save(tmp_path / "c.png")
    g = data.read_gray(tmp_path / "c.png")
    expected = (200 * 299 + 100 * 587 + 50 * 114) // 1000
    assert abs(int(g[0, 0]) - expected) <= 1


def test_pgm_is_p5(tmp_path):
    data.write_gray(tmp_path / "a.pgm", np.zeros((3, 4), np.uint8))
    assert (tmp_path / "a.pgm").read_bytes()[:2] == b"P5"


def test_symbology_labels():
    assert SymbologyKind.from_label("ean13") is SymbologyKind.EAN13
    assert [k.label for k in SymbologyKind] == ["EAN13", "Bars1D", "Matrix2D", "Stacked2D"]
    with pytest.raises(ValueError):
        SymbologyKind.from_label("qr")


def test_class_subset_remap():
    kinds = [SymbologyKind.MATRIX2D, SymbologyKind.EAN13]
    for s in data.generate_samples(5, 3, kinds=kinds):
        assert set(np.unique(s.mask)) <= {0, 1, 2}
        assert all(o.class_id in (0, 1) for o in s.objects)
