import math

import numpy as np
import pytest

from attn_inpaint import losses as L
from attn_inpaint import tensor as T
from attn_inpaint.masking import BBox, box_mask
from attn_inpaint.tensor import Tensor, precision

from conftest import fd_check


def test_discount_weights_decay_from_box_sides():
    M = L.build_discount_mask(BBox(1, 2, 5, 4), 0.5, (8, 8)).weights[0, 0]
    assert M[0].sum() == 0 and M[:, :2].sum() == 0
    assert M[1, 2] == 1.0  # on the boundary
    assert M[3, 3] == 0.5 and M[3, 4] == 0.5
    assert M[5, 5] == 1.0 and M[6, 5] == 0.0


def test_discount_mask_rejects_bad_input():
    with pytest.raises(ValueError):
        L.build_discount_mask(BBox(0, 0, 0, 3))
    with pytest.raises(ValueError):
        L.build_discount_mask(BBox(0, 0, 3, 3), gamma=1.5)
    with pytest.raises(ValueError):
        L.build_discount_mask(BBox(5, 5, 4, 4), image_shape=(6, 6))


def test_discounted_l1_normalises_by_weight_sum():
    M = L.build_discount_mask(BBox(0, 0, 3, 3), 0.5, (3, 3))
    pred = Tensor(np.ones((1, 3, 3, 3)))
    got = L.discounted_l1(pred, np.zeros((1, 3, 3, 3)), M)
    assert math.isclose(float(got.data), 1.0)  # weighted mean over pixels and channels


def test_discounted_l1_gradient(rng):
    M = L.build_discount_mask(BBox(1, 1, 4, 3), 0.9, (6, 6))
    target = rng.normal(size=(2, 3, 6, 6))
    assert fd_check(lambda t: L.discounted_l1(t, target, M), rng.normal(size=(2, 3, 6, 6))) < 1e-7


def test_critic_and_generator_adversarial_losses():
    real, fake = Tensor(np.array([[2.0], [4.0]])), Tensor(np.array([[1.0], [0.0]]))
    assert float(L.critic_loss(real, fake).data) == -2.5
    assert float(L.generator_adv_loss(fake).data) == -0.5


def _linear_critic(w):
    wt = Tensor(w)
    return lambda x: T.sum_(x * wt, axis=(1, 2, 3))


def test_gp_zero_for_unit_gradient_on_hole(rng):
    m = box_mask((6, 6), BBox(1, 1, 3, 3))[None, None]
    w = rng.normal(size=(1, 1, 6, 6)) * (1 - m)
    w /= np.linalg.norm(w)
    w = w + 5.0 * m  # gradient outside the hole is masked away
    with precision("float64"):
        gp = L.gradient_penalty(_linear_critic(w), rng.normal(size=(2, 1, 6, 6)),
                                rng.normal(size=(2, 1, 6, 6)), m, rng=rng)
    assert float(gp.data) <= 1e-12


def test_gp_sum_over_hole_critic():
    m = box_mask((5, 5), BBox(2, 1, 2, 2))[None, None]
    with precision("float64"):
        gp = L.gradient_penalty(_linear_critic(1.0 - m), np.zeros((3, 1, 5, 5)), np.ones((3, 1, 5, 5)),
                                m, L.GpConfig(10.0), t=np.array([0.1, 0.5, 0.9]))
    assert abs(float(gp.data) - 10.0) <= 1e-12


def test_gp_requires_hole_and_randomness():
    with pytest.raises(ValueError):
        L.gradient_penalty(_linear_critic(np.ones((1, 1, 2, 2))), np.zeros((1, 1, 2, 2)),
                           np.zeros((1, 1, 2, 2)), np.ones((1, 1, 2, 2)), t=[0.5])
    with pytest.raises(ValueError):
        L.gradient_penalty(_linear_critic(np.ones((1, 1, 2, 2))), np.zeros((1, 1, 2, 2)),
                           np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)))
    with pytest.raises(ValueError):
        L.GpConfig(0.0)


def test_gp_is_differentiable_in_critic_weights(rng):
    m = box_mask((4, 4), BBox(1, 1, 2, 2))[None, None]
    xr, xf = rng.normal(size=(2, 1, 4, 4)), rng.normal(size=(2, 1, 4, 4))

    def f(w):
        critic = lambda x: T.sum_(T.square(x * w), axis=(1, 2, 3))  # noqa: E731
        return L.gradient_penalty(critic, xr, xf, m, t=np.array([0.3, 0.7]))

    assert fd_check(f, rng.normal(size=(1, 1, 4, 4))) < 1e-6


def test_interpolate_endpoints():
    a, b = np.zeros((2, 1, 2, 2)), np.ones((2, 1, 2, 2))
    out = L.interpolate(a, b, [0.0, 1.0])
    np.testing.assert_array_equal(out[0], 0)
    np.testing.assert_array_equal(out[1], 1)


def test_metrics_identity_and_known_values():
    x = np.zeros((3, 4, 4))
    ident = L.eval_metrics(x, x)
    assert ident["l1_pct"] == 0 and ident["psnr"] == L.PSNR_INF
    off = L.eval_metrics(x, x + 0.2)  # 0.1 in [0, 1] units
    assert math.isclose(off["l1_pct"], 10.0)
    assert math.isclose(off["l2_pct"], 1.0)
    assert math.isclose(off["psnr"], 20.0)
    assert off["tv"] == 0.0
