import re

import numpy as np

from attn_inpaint import oracle as O
from attn_inpaint.checks import run_all


def test_finite_diff_of_sum_is_ones(rng):
    x = rng.normal(size=(3, 2))
    np.testing.assert_allclose(O.finite_diff_grad(lambda a: a.sum(), x), 1.0, atol=1e-9)


def test_finite_diff_of_sum_of_squares(rng):
    x = rng.normal(size=(4,))
    np.testing.assert_allclose(O.finite_diff_grad(lambda a: (a * a).sum(), x), 2 * x, atol=1e-8)


def test_naive_conv_identity_kernel(rng):
    x = rng.normal(size=(1, 1, 4, 5))
    np.testing.assert_array_equal(O.naive_conv(x, np.array([[[[1.0]]]])), x)


def test_naive_propagate_radius_zero_identity(rng):
    s = rng.normal(size=(4, 2, 2))
    centers = [(0, 0), (0, 1), (1, 0), (1, 1)]
    np.testing.assert_array_equal(O.naive_propagate(s, centers, 0), s)


def test_report_is_pure_and_formatted():
    a = O.compare("x/1", [1.0, 2.0], [1.0, 2.5], 0.1)
    b = O.compare("x/1", [1.0, 2.0], [1.0, 2.5], 0.1)
    assert a == b and not a.passed
    assert a.line() == "CASE x/1 max_abs=5.000e-01 max_rel=2.000e-01 FAIL"
    assert O.compare("y", [1.0], [1.0], 0.0).passed
    assert not O.compare("z", [1.0], [[1.0]], 1.0).passed


def test_suite_passes_on_fresh_build():
    reports = run_all()
    assert len(reports) >= 30
    pattern = re.compile(r"^CASE \S+ max_abs=\S+ max_rel=\S+ (PASS|FAIL)$")
    for r in reports:
        assert pattern.match(r.line())
        assert r.passed, r.line()
