import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from barseg import imageops
from barseg.augment import (AugmentConfig, ObjectAnnotation, Sample, augment, object_bbox,
                            photometric, random_crop, rotate_sample)


def square_sample(H=40, W=60, box=(10, 12, 30, 32), cls=1):
    img = np.full((H, W), 200, np.uint8)
    mask = np.zeros((H, W), np.uint8)
    x0, y0, x1, y1 = box
    img[y0:y1, x0:x1] = 30
    mask[y0:y1, x0:x1] = cls + 1
    poly = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float)
    return Sample(img, mask, [ObjectAnnotation(cls, poly)])


def same(a: Sample, b: Sample) -> bool:
    return (np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)
            and len(a.objects) == len(b.objects)
            and all(np.array_equal(p.polygon, q.polygon) for p, q in zip(a.objects, b.objects)))


def test_config_rejects_bad_probability():
    with pytest.raises(ValueError):
        AugmentConfig(p_crop=1.5)


def test_sample_shape_mismatch():
    with pytest.raises(ValueError):
        Sample(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))


def test_augment_deterministic():
    s = square_sample()
    for seed in range(20):
        a = augment(s, AugmentConfig(), np.random.default_rng(seed))
        b = augment(s, AugmentConfig(), np.random.default_rng(seed))
        assert same(a, b)


def test_identity_branch_returns_input():
    s = square_sample()
    out = augment(s, AugmentConfig(p_identity=1.0), np.random.default_rng(0))
    assert same(out, s)


def test_identity_branch_frequency():
    s = square_sample(8, 8, (2, 2, 6, 6))
    # the photometric step always builds a new Sample, so only the identity branch returns ``s``
    cfg = AugmentConfig(p_rot_free=0, p_rot_90=0, p_crop=0, p_photometric=1)
    rng = np.random.default_rng(123)
    hits = sum(augment(s, cfg, rng) is s for _ in range(10_000))
    assert abs(hits / 10_000 - 0.1) <= 0.01


def test_rotate_180_twice_is_identity():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (13, 21), dtype=np.uint8)
    s = Sample(img, (img > 128).astype(np.uint8))
    back = rotate_sample(rotate_sample(s, 180), 180)
    assert np.array_equal(back.image, s.image)
    assert np.array_equal(back.mask, s.mask)


def test_rotate_90_permutation():
    H, W = 5, 7
    img = np.arange(H * W, dtype=np.uint8).reshape(H, W)
    out = rotate_sample(Sample(img, np.zeros_like(img)), 90).image
    assert out.shape == (W, H)
    for r in range(H):
        for c in range(W):
            assert out[c, H - 1 - r] == img[r, c]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rotate_90_multiples_keep_histogram(k):
    rng = np.random.default_rng(k)
    mask = rng.integers(0, 5, (11, 17)).astype(np.uint8)
    out = rotate_sample(Sample(mask.copy(), mask), 90 * k)
    assert np.array_equal(np.bincount(out.mask.ravel(), minlength=5), np.bincount(mask.ravel(), minlength=5))


def test_rotate_45_preserves_mask_area():
    s = square_sample(100, 100, (25, 25, 75, 75))
    out = rotate_sample(s, 45)
    before, after = np.count_nonzero(s.mask), np.count_nonzero(out.mask)
    assert abs(after - before) / before < 0.02


def test_rotate_fill_is_mean_intensity():
    s = square_sample()
    out = rotate_sample(s, 30)
    assert out.image[0, 0] == int(np.rint(s.image.mean()))
    assert out.mask[0, 0] == 0


@pytest.mark.parametrize("angle", [90, 180, 270, 17, -33])
def test_rotated_polygon_tracks_mask(angle):
    s = square_sample()
    out = rotate_sample(s, angle)
    poly = out.objects[0].polygon
    ys, xs = np.nonzero(out.mask)
    # pixel-edge polygon encloses the pixel centres of the rotated mask
    assert xs.min() + 0.5 >= poly[:, 0].min() - 1 and xs.max() + 0.5 <= poly[:, 0].max() + 1
    assert ys.min() + 0.5 >= poly[:, 1].min() - 1 and ys.max() + 0.5 <= poly[:, 1].max() + 1
    if angle % 90 == 0:
        x0, y0, x1, y1 = object_bbox(out)
        assert np.allclose(sorted(set(poly[:, 0])), [x0, x1])
        assert np.allclose(sorted(set(poly[:, 1])), [y0, y1])


def test_crop_forced_identity_when_object_fills_image():
    s = square_sample(30, 40, (0, 0, 40, 30))
    out = random_crop(s, np.random.default_rng(0))
    assert same(out, s)


def test_crop_without_objects_is_identity():
    s = Sample(np.zeros((8, 8), np.uint8), np.zeros((8, 8), np.uint8))
    assert random_crop(s, np.random.default_rng(0)) is s


def test_crop_constraints_640x480():
    s = square_sample(480, 640, (270, 190, 370, 290))
    rng = np.random.default_rng(5)
    for _ in range(200):
        out = random_crop(s, rng)
        h, w = out.mask.shape
        assert 0.784 <= w / h <= 2.267 + 1e-9
        assert np.count_nonzero(out.mask) == 100 * 100
        assert np.array_equal(out.mask[out.mask > 0], s.mask[s.mask > 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 60), st.integers(8, 60), st.data())
def test_crop_retains_all_object_pixels(H, W, data):
    x0 = data.draw(st.integers(0, W - 1))
    y0 = data.draw(st.integers(0, H - 1))
    x1 = data.draw(st.integers(x0 + 1, W))
    y1 = data.draw(st.integers(y0 + 1, H))
    s = square_sample(H, W, (x0, y0, x1, y1))
    out = random_crop(s, np.random.default_rng(data.draw(st.integers(0, 2**32 - 1))))
    assert np.count_nonzero(out.mask) == np.count_nonzero(s.mask)
    h, w = out.mask.shape
    assert 1 / 1.7 - 1e-9 <= (w / h) / (W / H) <= 1.7 + 1e-9
    # polygon moved with the crop
    bx = object_bbox(out)
    assert np.allclose(out.objects[0].polygon.min(axis=0), bx[:2])


def test_photometric_keeps_dtype_and_range():
    img = np.random.default_rng(0).integers(0, 256, (32, 32), dtype=np.uint8)
    for seed in range(10):
        out = photometric(img, np.random.default_rng(seed))
        assert out.dtype == np.uint8 and out.shape == img.shape


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_augment_keeps_image_mask_consistent(seed):
    s = square_sample()
    out = augment(s, AugmentConfig(), np.random.default_rng(seed))
    assert out.image.shape == out.mask.shape
    assert out.image.dtype == np.uint8
    assert set(np.unique(out.mask)) <= {0, 2}
    assert np.count_nonzero(out.mask) > 0


def test_resize_nearest_and_bilinear():
    img = np.arange(16, dtype=np.uint8).reshape(4, 4)
    up = imageops.resize(img, (8, 8), order=0)
    assert np.array_equal(up[::2, ::2], img)
    assert imageops.resize(img, (4, 4), order=1) is not img
    flat = np.full((10, 10), 77, np.uint8)
    assert np.all(imageops.resize(flat, (7, 13), order=1) == 77)


def test_gaussian_blur_preserves_constant():
    flat = np.full((9, 9), 50.0)
    assert np.allclose(imageops.gaussian_blur(flat, 1.3), 50.0)
