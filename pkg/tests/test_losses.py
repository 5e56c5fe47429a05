import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confadapt import autodiff as ad, losses
from confadapt.errors import ArgumentError, ShapeMismatch
from confadapt.formats import INVALID


def leaf(x, name="pred"):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


def test_lc_zero_when_prediction_matches():
    labels = np.array([[1.0, 2.0], [3.0, INVALID]])
    conf = np.array([[0.9, 0.95], [0.2, 1.0]])
    pred = np.array([[1.0, 2.0], [7.0, 9.0]])
    assert losses.confidence_guided_loss(pred, labels, conf, 0.5).item() == 0.0


def test_lc_two_pixel_hand_value():
    out = losses.confidence_guided_loss(np.array([[2.0, 100.0]]), np.zeros((1, 2)),
                                        np.array([[1.0, 0.0]]), 0.5)
    assert out.item() == 2.0


def test_lc_uniform_conf_and_residual():
    out = losses.confidence_guided_loss(np.full((3, 4), 5.5), np.full((3, 4), 4.0),
                                        np.full((3, 4), 0.7), 0.5)
    assert abs(out.item() - 0.7 * 1.5) <= 1e-12


def test_lc_sentinel_excluded_even_at_full_confidence():
    out = losses.confidence_guided_loss(np.array([[1.0, 50.0]]), np.array([[1.0, INVALID]]),
                                        np.ones((1, 2)), 0.0)
    assert out.item() == 0.0


def test_lc_empty_mask_returns_zero():
    assert losses.confidence_guided_loss(np.ones((2, 2)), np.zeros((2, 2)),
                                         np.full((2, 2), 0.3), 0.9).item() == 0.0


def test_lc_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        losses.confidence_guided_loss(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 3)), 0.5)


def test_lc_is_one_homogeneous():
    rng = np.random.default_rng(0)
    labels, conf = rng.uniform(0, 9, (6, 6)), rng.random((6, 6))
    resid = rng.normal(size=(6, 6))
    base = losses.confidence_guided_loss(labels + resid, labels, conf, 0.3).item()
    for s in (0.0, 0.5, 3.0):
        scaled = losses.confidence_guided_loss(labels + s * resid, labels, conf, 0.3).item()
        assert scaled == pytest.approx(s * base, rel=1e-12, abs=1e-12)


def test_lc_masked_pixels_get_zero_gradient():
    rng = np.random.default_rng(1)
    labels, conf = rng.uniform(0, 9, (5, 5)), rng.random((5, 5))
    pred = leaf(rng.uniform(0, 9, (5, 5)))
    ad.backward(losses.confidence_guided_loss(pred, labels, conf, 0.6))
    assert np.all(pred.grad[conf <= 0.6] == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.lists(st.floats(0, 0.999), min_size=2, max_size=8))
def test_support_mask_monotone_in_tau(seed, taus):
    rng = np.random.default_rng(seed)
    labels = np.where(rng.random((6, 7)) < 0.2, INVALID, rng.uniform(0, 10, (6, 7)))
    conf = rng.random((6, 7))
    sizes = [losses.support_mask(labels, conf, t).sum() for t in sorted(taus)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


def test_soft_gate_penalty_monotone_and_divergent():
    labels = np.zeros((2, 2))
    conf = np.full((2, 2), 0.5)
    vals = [losses.learnable_tau_loss(labels, labels, conf, ad.Tensor(np.array(t))).item()
            for t in (0.1, 0.5, 0.9, 0.999, 0.999999)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 13


def test_soft_gate_approaches_hard_mask():
    rng = np.random.default_rng(2)
    labels = rng.uniform(0, 10, (8, 8))
    pred = labels + rng.normal(size=(8, 8))
    conf = np.where(rng.random((8, 8)) < 0.5, rng.uniform(0.0, 0.4, (8, 8)), rng.uniform(0.6, 1.0, (8, 8)))
    tau = 0.5
    hard = losses.hard_tau_loss(pred, labels, conf, tau).item()
    soft = losses.learnable_tau_loss(pred, labels, conf, ad.Tensor(np.array(tau)), k=500).item()
    assert soft == pytest.approx(hard, rel=1e-9)
    softer = losses.learnable_tau_loss(pred, labels, conf, ad.Tensor(np.array(tau)), k=50).item()
    assert abs(softer - hard) < 1e-2


def test_soft_gate_tau_gradient_nonzero():
    rng = np.random.default_rng(3)
    logit = leaf(np.array(1.0), "tau")
    labels = rng.uniform(0, 5, (6, 6))
    loss = losses.learnable_tau_loss(labels + 1.0, labels, rng.random((6, 6)), ad.sigmoid(logit))
    ad.backward(loss)
    assert logit.grad != 0


def test_penalty_alone_decreases_tau():
    logit = leaf(np.array(2.0), "tau")
    empty = np.full((3, 3), INVALID)
    opt = ad.Adam([logit], lr=0.05)
    taus = []
    for _ in range(5):
        opt.zero_grad()
        tau = ad.sigmoid(logit)
        taus.append(tau.item())
        ad.backward(losses.learnable_tau_loss(np.zeros((3, 3)), empty, np.ones((3, 3)), tau))
        opt.step()
    assert all(a > b for a, b in zip(taus, taus[1:]))


def test_smoothness_values():
    flat = np.full((6, 7), 0.5)
    assert losses.smoothness_loss(np.full((6, 7), 3.0), flat).item() == 0.0
    ramp = np.tile(np.arange(7.0), (6, 1))
    assert abs(losses.smoothness_loss(ramp, flat).item() - 8.0) <= 1e-6


def test_smoothness_edge_aware():
    step = np.zeros((6, 8))
    step[:, 4:] = 5.0
    edge_img = np.where(step > 0, 1.0, 0.0)
    on_edge = losses.smoothness_loss(step, edge_img).item()
    on_flat = losses.smoothness_loss(step, np.zeros((6, 8))).item()
    assert on_edge < on_flat


def test_ssim_identity_and_recon_identity():
    img = np.random.default_rng(4).random((7, 9))
    np.testing.assert_allclose(losses.ssim_map(ad.Tensor(img), ad.Tensor(img)).data, 1.0, atol=1e-12)
    assert losses.reconstruction_loss(img, img, np.zeros((7, 9))).item() <= 1e-6


def test_recon_integer_shift():
    left = np.random.default_rng(5).random((6, 16))
    right = np.zeros_like(left)
    right[:, :13] = left[:, 3:]
    right[:, 13:] = 0.5
    rmap = losses.reconstruction_map(left, right, np.full((6, 16), 3.0)).data
    assert np.abs(rmap[1:-1, 4:-1]).max() <= 1e-6


def test_recon_bounded_and_nonnegative():
    rng = np.random.default_rng(6)
    for _ in range(5):
        val = losses.reconstruction_loss(rng.random((6, 6)), rng.random((6, 6)),
                                         rng.uniform(0, 5, (6, 6))).item()
        assert 0.0 <= val <= 1.0


def test_total_loss_combination():
    cfg = losses.LossConfig(lambda_smooth=0.0, lambda_recon=0.0)
    assert losses.total_loss(ad.Tensor(np.array(2.0)), ad.Tensor(np.array(5.0)),
                             ad.Tensor(np.array(7.0)), cfg).item() == 2.0
    cfg = losses.LossConfig(lambda_smooth=0.1, lambda_recon=0.1)
    val = losses.total_loss(ad.Tensor(np.array(2.0)), ad.Tensor(np.array(5.0)),
                            ad.Tensor(np.array(7.0)), cfg).item()
    assert val == pytest.approx(3.2)
    zero = ad.Tensor(np.array(0.0))
    assert losses.total_loss(zero, zero, zero, cfg).item() == 0.0


def test_presets():
    c = losses.LossConfig.preset("stereo", "AD", "complete")
    assert (c.tau, c.lambda_smooth, c.lambda_recon, c.alpha) == (0.8, 0.1, 0.1, 0.85)
    assert losses.LossConfig.preset("stereo", "SGM").tau == 0.9
    m = losses.LossConfig.preset("mono", "AD")
    assert (m.tau, m.lambda_smooth, m.lambda_recon) == (0.8, 0.1, 0.01)
    assert losses.LossConfig.preset("mono", "SGM").tau == 0.9
    masked = losses.LossConfig.preset("stereo", "AD", "masked")
    assert (masked.tau, masked.lambda_smooth, masked.lambda_recon) == (0.8, 0.0, 0.0)
    reg = losses.LossConfig.preset("stereo", "AD", "regression")
    assert reg.tau == 0.0 and not reg.use_confidence
    assert losses.LossConfig.preset(variant="learned").tau_init == 0.99


@pytest.mark.parametrize("kw", [dict(lambda_smooth=-1), dict(alpha=1.5), dict(tau=1.0),
                                dict(gate_k=0), dict(tau_mode="sometimes")])
def test_loss_config_validation(kw):
    with pytest.raises(ArgumentError):
        losses.LossConfig(**kw)


def test_taunet_zero_weights_and_range():
    assert losses.TauNet(zero=True)(np.random.default_rng(0).random((8, 8))).item() == 0.5
    net = losses.TauNet(width=8, seed=1)
    a = net(np.random.default_rng(1).random((8, 8))).item()
    b = net(np.random.default_rng(2).random((8, 8)) * 0.2).item()
    assert 0 < a < 1 and 0 < b < 1 and a != b


def test_taunet_translation_invariance():
    net = losses.TauNet(width=8, seed=2)
    patch = np.random.default_rng(3).random((6, 6))
    big_a = np.full((40, 40), 0.5)
    big_b = big_a.copy()
    big_a[5:11, 5:11] = patch
    big_b[20:26, 17:23] = patch
    assert net(big_a).item() == pytest.approx(net(big_b).item(), abs=1e-6)


@pytest.mark.parametrize("name", ["hard", "soft", "smooth", "recon"])
def test_loss_gradchecks(name):
    rng = np.random.default_rng(7)
    h, w = 8, 12
    labels = rng.uniform(0, 6, (h, w))
    conf = rng.random((h, w))
    img_l, img_r = rng.random((h, w)), rng.random((h, w))
    pred = leaf(rng.uniform(0.3, 5.0, (h, w)))
    logit = leaf(np.array(0.2), "tau")
    fns = {
        "hard": (lambda: losses.confidence_guided_loss(pred, labels, conf, 0.4), [pred]),
        "soft": (lambda: losses.learnable_tau_loss(pred, labels, conf, ad.sigmoid(logit)), [pred, logit]),
        "smooth": (lambda: losses.smoothness_loss(pred, img_l), [pred]),
        "recon": (lambda: losses.reconstruction_loss(img_l, img_r, pred), [pred]),
    }
    f, params = fns[name]
    rep = ad.grad_check(f, params, eps=1e-3, tol=1e-4)
    assert rep.passed, rep.lines()
