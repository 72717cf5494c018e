import numpy as np
import pytest

from attn_inpaint import functional as F
from attn_inpaint import tensor as T
from attn_inpaint.oracle import naive_conv
from attn_inpaint.tensor import Tensor, precision

from conftest import fd_check

REFLECT, ZERO = F.PaddingMode.REFLECT, F.PaddingMode.ZERO


@pytest.mark.parametrize("case", range(20))
def test_conv2d_matches_naive(case):
    rng = np.random.default_rng(case)
    k = [1, 3, 5][case % 3]
    stride, dilation = 1 + case % 2, 1 + (case // 2) % 2
    mode = "reflect" if case % 4 < 2 else "zero"
    size = int(rng.integers(dilation * (k // 2) + 2, 11))
    x = rng.uniform(-1, 1, (2, 3, size, size)).astype(np.float32)
    w = rng.uniform(-1, 1, (4, 3, k, k)).astype(np.float32)
    got = F.conv2d(Tensor(x), Tensor(w), stride=stride, dilation=dilation, padding=F.PaddingMode(mode)).data
    ref = naive_conv(x, w, stride, dilation, mode=mode)
    assert np.max(np.abs(got - ref)) <= 1e-5


def test_dilated_conv_on_ramp_matches_hand_sums():
    ramp = np.arange(25.0).reshape(1, 1, 5, 5)
    out = F.conv2d(Tensor(ramp), Tensor(np.ones((1, 1, 3, 3))), dilation=2, padding=ZERO).data[0, 0]
    # centre: rows/cols {0, 2, 4} -> 3*5*6 + 3*6 ; corner: values 0, 2, 10, 12
    assert out[2, 2] == 108.0
    assert out[0, 0] == 24.0
    np.testing.assert_array_equal(out, naive_conv(ramp, np.ones((1, 1, 3, 3)), 1, 2)[0, 0])


def test_identity_kernel_is_identity(rng):
    x = rng.normal(size=(1, 2, 7, 7))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1
    with precision("float64"):
        out = F.conv2d(Tensor(x), Tensor(w), padding=REFLECT).data
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("mode,stride,dilation", [(REFLECT, 2, 1), (ZERO, 1, 2), (REFLECT, 1, 3)])
def test_conv_elu_gradients(mode, stride, dilation, rng):
    w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))
    x = rng.uniform(-1, 1, (1, 2, 8, 8))
    with precision("float64"):
        w = Tensor(w.data.astype(np.float64))
        err = fd_check(lambda t: T.mean(F.elu(F.conv2d(t, w, stride=stride, dilation=dilation,
                                                         padding=mode))), x)
    assert err < 1e-6


def test_conv_filter_gradient_and_double_backward(rng):
    x = Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)).astype(np.float64))

    def penalty(w):
        xi = Tensor(x.data, requires_grad=True)
        y = T.sum_(F.leaky_relu(F.conv2d(xi, w, padding=ZERO)))
        (g,) = T.grad(y, [xi], create_graph=True)
        return T.sum_(g * g)

    assert fd_check(penalty, rng.uniform(-1, 1, (3, 2, 3, 3))) < 1e-6


def test_transposed_conv_is_adjoint_of_conv(rng):
    x = rng.normal(size=(1, 2, 9, 9))
    w = rng.normal(size=(3, 2, 3, 3))
    y = rng.normal(size=(1, 3, 5, 5))
    with precision("float64"):
        cx = F.conv2d(Tensor(x), Tensor(w), stride=2, padding=ZERO).data
        ty = F.transposed_conv2d(Tensor(y), Tensor(w), stride=2, padding=1, output_size=(9, 9)).data
    assert np.isclose(np.sum(cx * y), np.sum(x * ty))


def test_reflect_pad_mirrors_without_edge_repeat():
    x = Tensor(np.arange(4.0).reshape(1, 1, 1, 4))
    out = F.pad(x, (0, 0, 2, 2), REFLECT).data.ravel()
    np.testing.assert_array_equal(out, [2, 1, 0, 1, 2, 3, 2, 1])


def test_reflect_pad_rejects_pad_wider_than_input():
    with pytest.raises(ValueError):
        F.pad(Tensor(np.zeros((1, 1, 3, 3))), (3, 3, 0, 0), REFLECT)


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        F.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def test_resize_round_trip_and_divisibility():
    x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
    up = F.resize_nearest(x, 2)
    assert up.shape == (1, 1, 8, 8)
    np.testing.assert_array_equal(F.resize_nearest(up, 0.5).data, x.data)
    with pytest.raises(ValueError):
        F.resize_nearest(Tensor(np.zeros((1, 1, 5, 5))), 0.5)


def test_resize_gradient(rng):
    assert fd_check(lambda t: T.sum_(T.square(F.resize_nearest(F.resize_nearest(t, 2), 0.25))),
                    rng.normal(size=(1, 1, 8, 8))) < 1e-7


def test_channel_softmax_sums_to_one(rng):
    s = F.channel_softmax(Tensor(rng.normal(size=(1, 7, 3, 3))), 10.0).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_clip_and_activations():
    x = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]))
    np.testing.assert_array_equal(F.clip(x, -1, 1).data, [-1, -0.5, 0, 0.5, 1])
    np.testing.assert_allclose(F.elu(x).data[:2], np.exp([-2.0, -0.5]) - 1, rtol=1e-6)
    np.testing.assert_allclose(F.leaky_relu(x, 0.2).data, [-0.4, -0.1, 0, 0.5, 2.0], rtol=1e-6)


def test_unfold_patches_row_major(rng):
    x = rng.normal(size=(1, 2, 5, 5)).astype(np.float32)
    p = F.unfold_patches(Tensor(x), 3, stride=1, pad_size=1).data
    assert p.shape == (25, 2, 3, 3)
    np.testing.assert_array_equal(p[2 * 5 + 3], x[0, :, 1:4, 2:5])


def test_kernel_perturbation_hook_shifts_output(monkeypatch):
    monkeypatch.setattr(F, "KERNEL_PERTURBATION", 0.5)
    out = F.conv2d(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 3, 3)))).data
    assert np.all(out == 0.5)
