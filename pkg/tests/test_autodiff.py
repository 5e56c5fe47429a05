import numpy as np
import pytest

from confadapt import autodiff as ad
from confadapt.errors import NonFiniteValue, NotScalar, ShapeMismatch


def leaf(x, name="x"):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


def test_mean_grad():
    x = leaf(np.arange(6.0).reshape(2, 3))
    ad.backward(ad.mean(x))
    np.testing.assert_allclose(x.grad, np.full((2, 3), 1 / 6))


def test_square_grad():
    x = leaf([3.0])
    ad.backward(ad.sum(ad.mul(x, x)))
    assert x.grad.tolist() == [6.0]


def test_backward_accumulates():
    x = leaf([2.0])
    ad.backward(ad.sum(x))
    ad.backward(ad.sum(x))
    assert x.grad.tolist() == [2.0]


def test_backward_needs_scalar():
    with pytest.raises(NotScalar):
        ad.backward(leaf([1.0, 2.0]))


def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteValue):
        ad.log(leaf([0.0]))


def test_float32_preserved_with_python_scalars():
    x = ad.Tensor(np.ones(3, np.float32), requires_grad=True)
    assert ad.mul(ad.add(x, 1.0), 0.5).dtype == np.float32


def test_abs_subgradient_zero():
    x = leaf([0.0, -2.0, 3.0])
    ad.backward(ad.sum(ad.abs(x)))
    assert x.grad.tolist() == [0.0, -1.0, 1.0]


def test_sobel_constant_and_ramp():
    assert np.all(ad.sobel_x(np.full((5, 6), 0.3)).data == 0)
    ramp = np.tile(np.arange(6.0), (5, 1))
    np.testing.assert_array_equal(ad.sobel_x(ramp).data[1:-1, 1:-1], 8.0)
    np.testing.assert_array_equal(ad.sobel_y(ramp.T).data[1:-1, 1:-1], 8.0)


def test_bilinear_warp_integer_shift():
    img = np.random.default_rng(0).random((4, 10))
    out = ad.bilinear_warp(img, np.full((4, 10), 3.0)).data
    np.testing.assert_array_equal(out[:, 3:], img[:, :7])
    np.testing.assert_array_equal(out[:, :3], np.repeat(img[:, :1], 3, axis=1))


def test_bilinear_warp_grads_reach_both_operands():
    rng = np.random.default_rng(1)
    img = leaf(rng.random((5, 9)), "img")
    d = leaf(rng.uniform(0.2, 3.7, (5, 9)), "disp")
    rep = ad.grad_check(lambda: ad.mean(ad.mul(ad.bilinear_warp(img, d), img)), [img, d])
    assert rep.passed, rep.lines()
    assert np.abs(d.grad).sum() == 0  # grads restored after the check
    ad.backward(ad.mean(ad.bilinear_warp(img, d)))
    assert np.abs(img.grad).sum() > 0 and np.abs(d.grad).sum() > 0


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(2)
    x = rng.random((2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = ad.conv2d(x, w, b, stride=2).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")
    ref = np.zeros((3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[o, i, j] = (xp[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_conv2d_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradcheck(stride):
    rng = np.random.default_rng(3)
    x = leaf(rng.random((2, 7, 6)), "x")
    w = leaf(rng.standard_normal((3, 2, 3, 3)), "w")
    b = leaf(rng.standard_normal(3), "b")
    target = rng.random((3, 4 if stride == 2 else 7, 3 if stride == 2 else 6))
    rep = ad.grad_check(lambda: ad.mean(ad.mul(ad.conv2d(x, w, b, stride), target)), [x, w, b])
    assert rep.passed, rep.lines()


def test_random_five_op_graph_gradcheck():
    rng = np.random.default_rng(4)
    a = leaf(rng.uniform(0.5, 2.0, (3, 4)), "a")
    b = leaf(rng.uniform(-1.0, 1.0, (3, 4)), "b")

    def f():
        t = ad.mul(ad.exp(ad.mul(b, 0.5)), a)
        t = ad.add(t, ad.log(a))
        t = ad.leaky_relu(ad.sub(t, 1.0))
        t = ad.div(ad.sigmoid(t), ad.add(a, 1.0))
        return ad.mean(ad.abs(ad.sub(t, 0.3)))

    rep = ad.grad_check(f, [a, b], eps=1e-3, tol=1e-4)
    assert rep.passed and rep.max_rel_error < 1e-4, rep.lines()


def test_spatial_ops_gradcheck():
    rng = np.random.default_rng(5)
    x = leaf(rng.random((2, 4, 6)), "x")
    y = leaf(rng.random((1, 4, 6)), "y")
    keep = rng.random((3, 5, 7)) > 0.4

    def f():
        t = ad.concat([ad.sobel_x(x), ad.box3(y)])
        t = ad.add(t, ad.concat([ad.sobel_y(x), y]))
        t = ad.crop(ad.upsample2x(t), 5, 7)
        g = ad.avg_pool_global(ad.mul(t, t))
        return ad.add(ad.sum(g), ad.masked_mean(t, keep))

    rep = ad.grad_check(f, [x, y])
    assert rep.passed, rep.lines()


def test_bce_with_logits_value_and_grad():
    z = leaf([[0.0, 2.0, -3.0]])
    t = np.array([[1.0, 0.0, 1.0]])
    mask = np.array([[True, True, False]])
    loss = ad.bce_with_logits(z, t, mask)
    assert loss.item() == pytest.approx((np.log(2) + np.log1p(np.exp(2.0))) / 2)
    rep = ad.grad_check(lambda: ad.bce_with_logits(z, t, mask), [z])
    assert rep.passed


def test_masked_mean_empty_is_zero():
    x = leaf([1.0, 2.0])
    m = ad.masked_mean(x, np.zeros(2, bool))
    ad.backward(m)
    assert m.item() == 0.0 and x.grad.tolist() == [0.0, 0.0]


def test_adam_zero_gradient_keeps_params():
    p = leaf([1.0, -2.0])
    opt = ad.Adam([p])
    opt.step([np.zeros(2)])
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_magnitude_is_lr():
    p = leaf([1.0, -2.0])
    opt = ad.Adam([p], lr=1e-3)
    assert opt.lr == 1e-3 and (opt.beta1, opt.beta2, opt.eps) == (0.9, 0.999, 1e-8)
    opt.step([np.array([0.5, -4.0])])
    np.testing.assert_allclose(p.data, [1.0 - 1e-3, -2.0 + 1e-3], rtol=0, atol=1e-10)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.Adam([leaf([1.0, 2.0])]).step([np.zeros(3)])


def test_gradcheck_detects_wrong_gradient():
    x = leaf([1.0, 2.0])

    def broken():
        out = ad.sum(ad.mul(x, x))
        out._backward = lambda g: (g * 3 * x.data, None)
        return out

    assert not ad.grad_check(broken, [x]).passed


def test_graph_does_not_mutate_inputs():
    arr = np.random.default_rng(0).random((3, 3))
    keep = arr.copy()
    ad.backward(ad.mean(ad.sobel_x(leaf(arr))))
    np.testing.assert_array_equal(arr, keep)
