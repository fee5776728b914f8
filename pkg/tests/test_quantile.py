import numpy as np
import pytest
from hypothesis import given, strategies as st

from survquant.errors import AllZeroWeights, LengthMismatch, NaNInput
from survquant.quantile import (
    QuantileSpec,
    check_loss,
    estimating_equation,
    weighted_quantile,
    weighted_quantile_batch,
)

values_st = st.lists(st.integers(-50, 50).map(float), min_size=1, max_size=60)
tau_st = st.floats(0.01, 0.99)


def test_unweighted_median():
    assert weighted_quantile([1, 2, 3], [1, 1, 1], 0.5) == 2


def test_heavy_top_weight():
    assert weighted_quantile([1, 2, 3], [1, 1, 8], 0.5) == 3


def test_errors():
    with pytest.raises(AllZeroWeights):
        weighted_quantile([1, 2], [0, 0], 0.5)
    with pytest.raises(NaNInput):
        weighted_quantile([1, np.nan], [1, 1], 0.5)
    with pytest.raises(NaNInput):
        weighted_quantile([1, 2], [1, np.nan], 0.5)
    with pytest.raises(LengthMismatch):
        weighted_quantile([1, 2], [1], 0.5)
    with pytest.raises(ValueError):
        QuantileSpec(1.0)


def test_psi_limits():
    v = np.arange(10.0)
    assert estimating_equation(v, np.ones(10), 0.3, -1.0) == pytest.approx(-0.3)
    assert estimating_equation(v, np.ones(10), 0.3, 100.0) == pytest.approx(0.7)


def test_psi_at_root_bounded_by_jump():
    v = np.random.default_rng(0).normal(size=101)
    q = weighted_quantile(v, np.ones(101), 0.5)
    assert abs(estimating_equation(v, np.ones(101), 0.5, q)) <= 1 / 101


@given(values_st, tau_st, st.integers(0, 2**31))
def test_root_brackets_zero(vals, tau, seed):
    v = np.array(vals)
    w = np.random.default_rng(seed).uniform(0.01, 5.0, v.size)
    q = weighted_quantile(v, w, tau)
    assert estimating_equation(v, w, tau, q) >= -1e-12 * w.sum()
    below = v[v < q]
    if below.size:
        assert estimating_equation(v, w, tau, below.max()) < 0


@given(values_st, tau_st, st.integers(0, 2**31))
def test_psi_monotone(vals, tau, seed):
    v = np.array(vals)
    w = np.random.default_rng(seed).uniform(0.0, 5.0, v.size)
    w[0] += 0.1
    grid = np.linspace(-60, 60, 200)
    psi = estimating_equation(v, w, tau, grid)
    assert (np.diff(psi) >= 0).all()


@given(values_st, tau_st, st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_weight_scale_invariance(vals, tau, c, seed):
    v = np.array(vals)
    w = np.random.default_rng(seed).uniform(0.01, 5.0, v.size)
    assert weighted_quantile(v, w, tau) == weighted_quantile(v, c * w, tau)


@given(values_st, tau_st, st.sampled_from([0.5, 2.0, 4.0]), st.sampled_from([-3.0, 0.0, 7.0]))
def test_affine_equivariance(vals, tau, c, d):
    v = np.array(vals)
    w = np.ones(v.size)
    assert weighted_quantile(c * v + d, w, tau) == c * weighted_quantile(v, w, tau) + d


@given(values_st, tau_st, st.integers(0, 2**31))
def test_minimizes_check_loss(vals, tau, seed):
    v = np.array(vals)
    w = np.random.default_rng(seed).uniform(0.01, 5.0, v.size)
    q = weighted_quantile(v, w, tau)
    losses = check_loss(v, w, tau, np.unique(v))
    assert check_loss(v, w, tau, q) <= losses.min() + 1e-9 * (1 + abs(losses.min()))


def test_batch_matches_scalar():
    rng = np.random.default_rng(4)
    v = rng.normal(size=50)
    W = rng.uniform(0, 2, (7, 50))
    W[3] = 0.0
    out = weighted_quantile_batch(v, W, 0.4)
    for b in range(7):
        if b == 3:
            assert np.isnan(out[b])
        else:
            assert out[b] == weighted_quantile(v, W[b], 0.4)
