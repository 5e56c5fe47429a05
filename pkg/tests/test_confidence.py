import numpy as np
import pytest

from confadapt import autodiff as ad, confidence, stereo, synth
from confadapt.errors import EmptyDataset, ShapeMismatch
from confadapt.formats import INVALID

from oracles import auc_pairwise


def test_lrc_values():
    d_left = np.array([[0.0, 0.0, 0.0, 2.0, 2.0, 2.0]])
    d_right = np.array([[2.0, 5.0, 0.5, 0.0, 0.0, 0.0]])
    conf = confidence.lrc_confidence(d_left, d_right)
    # x=3 looks at x_r=1 (|2-5|=3 -> 0), x=4 at x_r=2 (1.5 -> 0.5), x=5 at x_r=3 (2 -> 1/3)
    np.testing.assert_allclose(conf[0, 3:], [0.0, 0.5, 1 / 3], rtol=1e-6)
    # d=0 pixels look straight across: |0-2|, |0-5|, |0-0.5|
    np.testing.assert_allclose(conf[0, :3], [1 / 3, 0.0, 5 / 6], rtol=1e-6)


def test_lrc_consistent_pixel_and_sentinels():
    d = np.full((2, 6), 2.0, np.float32)
    conf = confidence.lrc_confidence(d, d)
    assert np.all(conf[:, 2:] == 1.0) and np.all(conf[:, :2] == 0.0)
    d_bad = d.copy()
    d_bad[0, 4] = INVALID
    assert confidence.lrc_confidence(d_bad, d)[0, 4] == 0.0
    assert np.all(confidence.lrc_confidence(np.full((2, 3), INVALID), np.full((2, 3), INVALID)) == 0)
    with pytest.raises(ShapeMismatch):
        confidence.lrc_confidence(d, d[:, :3])


def test_confnet_zero_weights_half():
    net = confidence.ConfNet(zero=True)
    out = net(np.random.default_rng(0).uniform(0, 30, (9, 11)))
    assert out.shape == (9, 11) and np.all(out == 0.5)


def test_confnet_range_and_sentinels():
    net = confidence.ConfNet(seed=3)
    d = np.random.default_rng(1).uniform(0, 30, (10, 12))
    d[:, :3] = INVALID
    out = net(d)
    assert np.all((out > 0) & (out < 1))


def test_confnet_shift_equivariance_interior():
    net = confidence.ConfNet(seed=4)
    d = np.random.default_rng(2).uniform(0, 30, (20, 24))
    a = net(d)
    b = net(np.roll(d, 3, axis=1))
    np.testing.assert_allclose(b[:, 3 + 5:-5], a[:, 5:-8], rtol=1e-5, atol=1e-6)


def test_confnet_checkpoint_roundtrip(tmp_path):
    net = confidence.ConfNet(seed=5, d_max=24)
    net.save(tmp_path / "c.ckpt")
    back = confidence.ConfNet.load(tmp_path / "c.ckpt")
    assert back.d_max == 24 and back.same_weights(net)
    with pytest.raises(ShapeMismatch):
        from confadapt.model import TinyDispNet
        TinyDispNet.load(tmp_path / "c.ckpt")


def test_confnet_gradcheck():
    rng = np.random.default_rng(6)
    d = rng.uniform(0, 20, (8, 10))
    gt = d + np.where(rng.random((8, 10)) < 0.5, 0.0, 5.0)
    net = confidence.ConfNet(seed=1, d_max=20)
    rep = ad.grad_check(lambda: confidence.confnet_loss(net, d, gt), net.params, max_entries=30)
    assert rep.passed, rep.lines()


def _toy_dataset(offset, n=3):
    rng = np.random.default_rng(7)
    return [(g + offset, g) for g in (rng.uniform(0, 20, (12, 12)).astype(np.float32) for _ in range(n))]


def test_confnet_learns_all_correct():
    data = _toy_dataset(0.0)
    net = confidence.confnet_train(data, epochs=40, lr=1e-2, d_max=32)
    assert np.mean([net(d).mean() for d, _ in data]) >= 0.9


def test_confnet_learns_all_wrong():
    data = _toy_dataset(10.0)
    net = confidence.confnet_train(data, epochs=40, lr=1e-2, d_max=32)
    assert np.mean([net(d).mean() for d, _ in data]) <= 0.1


def test_confnet_training_deterministic_and_decreasing():
    data = [(stereo.match_stereo(s.left, s.right, "AD", 24), s.gt)
            for s in synth.generate_set("A", 3, seed=40)]
    log_a, log_b = [], []
    a = confidence.confnet_train(data, epochs=3, seed=2, d_max=24, log=log_a)
    b = confidence.confnet_train(data, epochs=3, seed=2, d_max=24, log=log_b)
    assert a.same_weights(b) and log_a == log_b
    assert log_a[-1] <= log_a[0]
    assert confidence.DEFAULT_EPOCHS == 14


def test_confnet_empty_dataset():
    with pytest.raises(EmptyDataset):
        confidence.confnet_train([])


def test_outlier_auc_matches_pairwise_definition():
    rng = np.random.default_rng(8)
    gt = rng.uniform(0, 20, (10, 10))
    d = gt + np.where(rng.random((10, 10)) < 0.3, 6.0, 0.5)
    conf = np.round(rng.random((10, 10)), 1)  # with ties
    outlier = np.abs(d - gt) > 3
    assert confidence.outlier_auc(conf, d, gt) == pytest.approx(auc_pairwise(1 - conf, outlier))
    assert confidence.outlier_auc(1.0 - outlier, d, gt) == 1.0


def test_correctness_labels_threshold():
    target, labelled = confidence.correctness_labels(np.array([[3.0, 4.0, INVALID]]),
                                                     np.zeros((1, 3)))
    assert target.tolist() == [[1.0, 0.0, 0.0]] and labelled.tolist() == [[True, True, False]]
