"""Autodiff op oracles and gradient checks.

Value oracles are hand-derived or computed against scipy/numpy directly;
gradients are verified with the independent finite-difference checker.
"""

import numpy as np
import pytest
import scipy.special
from hypothesis import given, settings
from hypothesis import strategies as st

from tedeval import autodiff as ad
from tedeval.errors import NumericError
from tedeval.gradcheck import finite_diff_check, tensor_fn

RNG = np.random.default_rng(1234)


# ---------------------------------------------------------------- value oracles

def test_layer_norm_hand_oracle():
    # mean 2, population std sqrt(2/3): [1,2,3] -> +-sqrt(3/2), 0
    out = ad.layer_norm(ad.Tensor([1.0, 2.0, 3.0])).data
    expected = np.array([-np.sqrt(1.5), 0.0, np.sqrt(1.5)])
    np.testing.assert_allclose(out, expected, atol=1e-5)


def test_softmax_hand_oracle():
    out = ad.softmax(ad.Tensor([np.log(2.0), 0.0])).data
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-12)


def test_gelu_matches_exact_erf_form():
    x = RNG.normal(size=50)
    expected = x * 0.5 * (1 + scipy.special.erf(x / np.sqrt(2)))
    np.testing.assert_allclose(ad.gelu(ad.Tensor(x)).data, expected, atol=1e-12)


def test_erf_matches_scipy():
    x = RNG.normal(size=50) * 2
    np.testing.assert_allclose(ad.Tensor(x).erf().data,
                               scipy.special.erf(x), atol=1e-12)


def test_logsumexp_matches_scipy():
    x = RNG.normal(size=(4, 7)) * 10
    np.testing.assert_allclose(ad.logsumexp(ad.Tensor(x), axis=-1).data,
                               scipy.special.logsumexp(x, axis=-1), atol=1e-12)


def test_l2_normalize_rows_unit_norm():
    x = RNG.normal(size=(5, 9))
    out = ad.l2_normalize(ad.Tensor(x)).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_zeros_and_renormalizes():
    x = ad.Tensor(RNG.normal(size=(2, 5)))
    mask = np.array([True, True, False, True, False])
    out = ad.masked_softmax(x, mask).data
    assert np.all(out[:, ~mask] == 0.0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_large_masked_logits_no_overflow():
    x = np.array([0.0, 1.0, 1e9])
    mask = np.array([True, True, False])
    out = ad.masked_softmax(ad.Tensor(x), mask).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [*ad.softmax(ad.Tensor(x[:2])).data, 0.0],
                               atol=1e-12)


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
       st.floats(-50, 50))
def test_softmax_shift_invariance(values, shift):
    x = np.array(values)
    a = ad.softmax(ad.Tensor(x)).data
    b = ad.softmax(ad.Tensor(x + shift)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_non_finite_input_raises():
    with pytest.raises(NumericError):
        ad.Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        ad.Tensor([1e6]).exp()  # overflow to inf is caught


def test_weighted_sum_value():
    alpha = np.array([0.2, 0.8])
    stack = RNG.normal(size=(2, 3, 4))
    out = ad.weighted_sum(ad.Tensor(alpha), stack).data
    np.testing.assert_allclose(out, np.tensordot(alpha, stack, axes=1),
                               atol=1e-12)


def test_no_grad_builds_no_graph():
    with ad.no_grad():
        t = ad.parameter(np.ones(3))
        out = (t * 2.0).sum()
    assert not out.requires_grad


# ------------------------------------------------------------- gradient checks

def _check(build, shapes, n_points=5, tol=1e-6):
    fn = tensor_fn(build, shapes)
    size = sum(int(np.prod(s)) for s in shapes.values())
    for i in range(n_points):
        point = np.random.default_rng(100 + i).normal(size=size)
        assert finite_diff_check(fn, point) < tol


def test_grad_elementwise_chain():
    _check(lambda lv: (lv["x"].tanh() * (lv["x"] * 0.3).exp()
                       + ad.gelu(lv["x"])).sum(), {"x": (7,)})


def test_grad_matmul_mean():
    _check(lambda lv: (lv["a"] @ lv["b"]).mean(), {"a": (3, 4), "b": (4, 2)})


def test_grad_layer_norm():
    up = np.random.default_rng(7).normal(size=(2, 6))
    _check(lambda lv: (ad.layer_norm(lv["x"]) * up).sum(), {"x": (2, 6)})


def test_grad_masked_softmax():
    mask = np.array([True, False, True, True, False])
    up = np.random.default_rng(8).normal(size=(3, 5))
    _check(lambda lv: (ad.masked_softmax(lv["x"], mask) * up).sum(),
           {"x": (3, 5)})


def test_grad_getitem_and_concat():
    idx = (np.arange(3), np.arange(3))
    _check(lambda lv: ad.concat([lv["a"], lv["b"]], axis=0)[idx].sum(),
           {"a": (2, 3), "b": (2, 3)})


def test_grad_logsumexp():
    _check(lambda lv: ad.logsumexp(lv["x"], axis=-1).sum(), {"x": (4, 5)})


def test_grad_l2_normalize():
    up = np.random.default_rng(9).normal(size=(3, 4))
    _check(lambda lv: (ad.l2_normalize(lv["x"]) * up).sum(), {"x": (3, 4)})


def test_grad_weighted_sum_alpha():
    stack = np.random.default_rng(10).normal(size=(3, 2, 4))
    up = np.random.default_rng(11).normal(size=(2, 4))
    _check(lambda lv: (ad.weighted_sum(ad.softmax(lv["w"]), stack) * up).sum(),
           {"w": (3,)})


def test_backward_accumulates_over_reuse():
    x = ad.parameter(np.array([2.0]))
    y = x * x + x * 3.0
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0])  # 2x + 3
