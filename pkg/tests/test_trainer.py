import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from threadpoolctl import threadpool_limits

from barseg import data, trainer
from barseg.augment import ObjectAnnotation, Sample
from barseg.network import NetworkConfig, SegmentationNet, load_weights
from barseg.tensor import Tensor
from barseg.trainer import (OptimizerState, TrainConfig, make_batches, optimizer_step, resize_for_training,
                            training_size)


def blank(h, w):
    poly = np.array([[1, 1], [w - 1, 1], [w - 1, h - 1], [1, h - 1]], float)
    mask = np.zeros((h, w), np.uint8)
    mask[1:h - 1, 1:w - 1] = 1
    return Sample(np.zeros((h, w), np.uint8), mask, [ObjectAnnotation(0, poly)])


@pytest.mark.parametrize("hw, expected", [((480, 640), (512, 640)), ((1024, 2048), (512, 1024)),
                                          ((64, 64), (64, 64)), ((10, 10), (64, 64)),
                                          ((1000, 1000), (1024, 1024)), ((1023, 700), (1024, 704))])
def test_training_size(hw, expected):
    assert training_size(*hw) == expected


@settings(max_examples=200)
@given(st.integers(1, 4000), st.integers(1, 4000))
def test_training_size_properties(h, w):
    H, W = training_size(h, w)
    assert H % 64 == 0 and W % 64 == 0
    assert 64 <= H <= 1024 and 64 <= W <= 1024


def test_resize_for_training_scales_polygons():
    s = blank(480, 640)
    out = resize_for_training(s)
    assert out.image.shape == (512, 640)
    assert np.allclose(out.objects[0].polygon[2], [639, 479 * 512 / 480])
    assert set(np.unique(out.mask)) == {0, 1}
    assert resize_for_training(blank(64, 64)).image.shape == (64, 64)


def test_make_batches_same_size():
    batches = make_batches([(64, 64)] * 16, 8, np.random.default_rng(0))
    assert sorted(len(b) for b in batches) == [8, 8]
    assert sorted(i for b in batches for i in b) == list(range(16))


def test_make_batches_never_mixes_sizes():
    sizes = [(512, 640)] * 9 + [(512, 512)] * 7
    order = np.random.default_rng(1).permutation(16)
    sizes = [sizes[i] for i in order]
    batches = make_batches(sizes, 8, np.random.default_rng(0))
    assert all(len({sizes[i] for i in b}) == 1 for b in batches)
    assert sorted(len(b) for b in batches) == [1, 7, 8]  # partial batches kept


def test_make_batches_deterministic_and_chunked():
    sizes = [(64, 64), (128, 64)] * 20
    a = make_batches(sizes, 4, np.random.default_rng(3), chunk_size=10)
    b = make_batches(sizes, 4, np.random.default_rng(3), chunk_size=10)
    assert a == b
    # batches never straddle chunks
    for batch in a:
        assert len({i // 10 for i in batch}) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([(64, 64), (64, 128), (128, 64)]), max_size=40), st.integers(1, 9))
def test_make_batches_partition(sizes, bs):
    batches = make_batches(sizes, bs, np.random.default_rng(0))
    assert sorted(i for b in batches for i in b) == list(range(len(sizes)))
    assert all(1 <= len(b) <= bs for b in batches)


def params_of(*arrays):
    return [Tensor(np.array(a, dtype=np.float64)) for a in arrays]


def test_adam_zero_gradient_is_noop():
    ps = params_of([1.0, -2.0])
    st_ = OptimizerState.for_params(ps)
    optimizer_step(ps, [np.zeros(2)], st_, 1e-3)
    assert np.array_equal(ps[0].data, [1.0, -2.0])


@pytest.mark.parametrize("g", [1e-3, 0.5, -7.0])
def test_adam_first_step_magnitude(g):
    ps = params_of([0.0])
    st_ = OptimizerState.for_params(ps)
    optimizer_step(ps, [np.array([g])], st_, 1e-3)
    expected = -1e-3 * g / (abs(g) + 1e-8)
    assert ps[0].data[0] == pytest.approx(expected, rel=1e-6)


def test_adam_descends_quadratic():
    A = np.diag([1.0, 10.0])
    ps = params_of([3.0, -2.0])
    st_ = OptimizerState.for_params(ps)
    f = lambda x: 0.5 * x @ A @ x
    before = f(ps[0].data)
    for _ in range(2):
        optimizer_step(ps, [A @ ps[0].data], st_, 0.1)
    assert f(ps[0].data) < before


def test_adam_skips_non_finite(caplog):
    ps = params_of([1.0])
    st_ = OptimizerState.for_params(ps)
    with caplog.at_level(logging.WARNING, logger="barseg.trainer"):
        applied = optimizer_step(ps, [np.array([np.nan])], st_, 1e-3)
    assert not applied and st_.step == 0 and st_.skipped == 1
    assert ps[0].data[0] == 1.0
    assert "non-finite" in caplog.text


def test_config_validation_and_dict_roundtrip():
    with pytest.raises(ValueError):
        TrainConfig(max_side=1000)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(epochs1=3, lr2=5e-5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})


def test_lr_schedule():
    cfg = TrainConfig(epochs1=2, epochs2=3)
    assert [cfg.lr_for_epoch(e) for e in range(5)] == [1e-3, 1e-3, 1e-4, 1e-4, 1e-4]


def test_split_validation():
    tr, va = trainer.split_validation(50, 0.1, 0)
    assert len(va) == 5 and len(tr) == 45 and not set(tr) & set(va)
    assert np.array_equal(va, trainer.split_validation(50, 0.1, 0)[1])


@pytest.fixture(scope="module")
def tiny_set():
    return list(data.generate_samples(8, 21, canvas=(128, 128), max_symbols=2))


DESK = dict(epochs1=2, epochs2=2, batch_size=4, max_side=128, size_multiple=64, seed=5)


def test_desk_training_smoke(tmp_path, tiny_set):
    cfg = TrainConfig(**DESK)
    seen = []
    with threadpool_limits(1):
        res = trainer.train(cfg, tiny_set[:6], tiny_set[6:], n_classes=4, class_names=list("abcd"),
                            checkpoint=tmp_path / "m.bseg", callback=seen.append)
    assert len(res.history) == 4 == len(seen)
    assert [h["lr"] for h in res.history] == [1e-3, 1e-3, 1e-4, 1e-4]
    assert all("val" in h and 0 <= h["val"]["recall"] <= 1 for h in res.history)
    model = load_weights(tmp_path / "m.bseg", NetworkConfig(n_classes=4))
    assert model.config.n_classes == 4
    _, state, meta = trainer.load_checkpoint(tmp_path / "m.bseg")
    assert state is not None and meta["schema"] == trainer.CHECKPOINT_SCHEMA
    assert len(meta["history"]) == 4 and meta["class_names"] == list("abcd")
    assert (tmp_path / "m.bseg.last").is_file()


def test_checkpoint_roundtrip_preserves_optimizer(tmp_path, tiny_set):
    m = SegmentationNet(NetworkConfig(n_classes=4), seed=1)
    st_ = OptimizerState.for_params(m.parameters())
    with threadpool_limits(1):
        trainer.train_step(m, st_, trainer.build_batch(tiny_set[:2]), 1e-3)
    trainer.save_checkpoint(tmp_path / "c", m, st_, {"x": 1})
    m2, st2, meta = trainer.load_checkpoint(tmp_path / "c")
    assert meta["x"] == 1 and st2.step == st_.step
    for a, b in zip(st_.m + st_.v, st2.m + st2.v):
        assert np.array_equal(a, b)
    for a, b in zip(m.parameters(), m2.parameters()):
        assert np.array_equal(a.data, b.data)


def test_resume_matches_uninterrupted_steps(tmp_path, tiny_set):
    batches = [trainer.build_batch(tiny_set[i:i + 2]) for i in (0, 2, 4, 6)]
    with threadpool_limits(1):
        a = SegmentationNet(NetworkConfig(n_classes=4), seed=2)
        sa = OptimizerState.for_params(a.parameters())
        for b in batches:
            trainer.train_step(a, sa, b, 1e-3)

        c = SegmentationNet(NetworkConfig(n_classes=4), seed=2)
        sc = OptimizerState.for_params(c.parameters())
        trainer.train_step(c, sc, batches[0], 1e-3)
        trainer.save_checkpoint(tmp_path / "r", c, sc, {})
        c, sc, _ = trainer.load_checkpoint(tmp_path / "r")
        for b in batches[1:]:
            trainer.train_step(c, sc, b, 1e-3)
    for p, q in zip(a.parameters(), c.parameters()):
        assert np.array_equal(p.data, q.data)


def test_resume_at_epoch_boundary(tmp_path, tiny_set):
    cfg = TrainConfig(**{**DESK, "epochs1": 1, "epochs2": 1})
    with threadpool_limits(1):
        full = trainer.train(cfg, tiny_set, n_classes=4)
        first = trainer.train(TrainConfig(**{**DESK, "epochs1": 1, "epochs2": 0}), tiny_set, n_classes=4,
                              checkpoint=tmp_path / "a.bseg")
        assert len(first.history) == 1
        resumed = trainer.train(cfg, tiny_set, n_classes=4, resume=tmp_path / "a.bseg.last")
    assert len(resumed.history) == 2
    for p, q in zip(full.model.parameters(), resumed.model.parameters()):
        assert np.array_equal(p.data, q.data)


def test_training_is_deterministic(tiny_set):
    cfg = TrainConfig(**{**DESK, "epochs1": 1, "epochs2": 0})
    with threadpool_limits(1):
        a = trainer.train(cfg, tiny_set, n_classes=4).model
        b = trainer.train(cfg, tiny_set, n_classes=4).model
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p.data, q.data)


def test_epoch_batches_homogeneous(tiny_set):
    cfg = TrainConfig(**{**DESK, "max_side": 256})
    for b in trainer.epoch_batches(tiny_set, cfg, 0):
        B, _, H, W = b.images.shape
        assert B <= cfg.batch_size and H % 64 == 0 and W % 64 == 0
        assert b.targets.detect.shape == (B, H // 4, W // 4)


def test_overfit_small_set():
    samples = list(data.generate_samples(4, 5, canvas=(128, 128), max_symbols=2))
    m = SegmentationNet(NetworkConfig(n_classes=4), seed=0)
    st_ = OptimizerState.for_params(m.parameters())
    batch = trainer.build_batch(samples)
    with threadpool_limits(1):
        first, _ = trainer.train_step(m, st_, batch, 1e-3)
        for _ in range(59):
            last, _ = trainer.train_step(m, st_, batch, 1e-3)
    assert last.L_total < 0.5 * first.L_total


def test_train_rejects_empty():
    with pytest.raises(ValueError):
        trainer.train(TrainConfig(), [])
