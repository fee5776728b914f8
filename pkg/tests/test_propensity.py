import numpy as np
import pytest
from hypothesis import given, strategies as st

from survquant.errors import DimensionMismatch, RankDeficient, Separation
from survquant.propensity import (
    PropensityModel,
    fit_logistic,
    fit_logistic_batch,
    log_likelihood,
    predict,
    score_contributions,
)


def two_by_two():
    # (A, L) counts: (1,1)=70, (0,1)=30, (1,0)=30, (0,0)=70
    L = np.repeat([1, 1, 0, 0], [70, 30, 30, 70]).astype(float)
    A = np.repeat([1, 0, 1, 0], [70, 30, 30, 70]).astype(float)
    return np.column_stack([np.ones_like(L), L]), A


def test_intercept_only_half_split():
    m = fit_logistic(np.ones((10, 1)), np.array([1, 0] * 5))
    assert abs(m.theta[0]) < 1e-12
    assert predict(m, [1.0], 1) == pytest.approx(0.5)


def test_two_by_two_closed_form():
    X, A = two_by_two()
    m = fit_logistic(X, A, design_spec=("const", "L"))
    assert m.theta[1] == pytest.approx(np.log(70 * 70 / (30 * 30)), abs=1e-6)
    assert m.theta[0] == pytest.approx(np.log(30 / 70), abs=1e-6)
    assert m.converged
    assert predict(m, [1, 1], 1) == pytest.approx(0.7, abs=1e-6)
    assert predict(m, [1, 0], 0) == pytest.approx(0.7, abs=1e-6)


def test_score_identity_at_mle():
    X, A = two_by_two()
    m = fit_logistic(X, A)
    U = score_contributions(m, X, A)
    assert np.abs(U.sum(axis=0)).max() < 1e-7


def test_single_subject_score():
    m = PropensityModel(np.zeros(1), True, 0, np.eye(1), ("const",), 1.0)
    assert score_contributions(m, np.ones((1, 1)), np.array([1.0]))[0, 0] == 0.5


def test_separation_detected():
    L = np.linspace(-1, 1, 40)
    with pytest.raises(Separation):
        fit_logistic(np.column_stack([np.ones(40), L]), (L > 0).astype(float))


def test_rank_deficient():
    L = np.random.default_rng(0).normal(size=30)
    X = np.column_stack([np.ones(30), L, 2 * L])
    with pytest.raises(RankDeficient):
        fit_logistic(X, (L > 0.3).astype(float) * 0 + np.arange(30) % 2)


def test_dimension_mismatch():
    X, A = two_by_two()
    m = fit_logistic(X, A)
    with pytest.raises(DimensionMismatch):
        predict(m, [1.0, 0.0, 1.0], 1)
    with pytest.raises(DimensionMismatch):
        fit_logistic(X, A[:-1])


def test_unit_weights_equal_unweighted_fit():
    X, A = two_by_two()
    a = fit_logistic(X, A)
    b = fit_logistic(X, A, np.ones(len(A)))
    np.testing.assert_array_equal(a.theta, b.theta)


def _random_problem(seed, n=300):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, n)])
    p = 1 / (1 + np.exp(-(X @ np.array([0.2, 0.8, -0.5]))))
    return X, (rng.random(n) < p).astype(float)


@pytest.mark.parametrize("seed", range(5))
def test_fisher_info_matches_finite_differences(seed):
    X, A = _random_problem(seed)
    m = fit_logistic(X, A)

    def total_score(t):
        return X.T @ (A - 1 / (1 + np.exp(-(X @ t))))

    h = 1e-6
    J = np.column_stack([(total_score(m.theta + h * e) - total_score(m.theta - h * e)) / (2 * h)
                         for e in np.eye(3)])
    np.testing.assert_allclose(-J, m.fisher_info, rtol=1e-5)
    assert np.allclose(m.fisher_info, m.fisher_info.T)
    assert np.linalg.eigvalsh(m.fisher_info).min() > -1e-10


@given(st.integers(0, 10**6))
def test_probabilities_strictly_inside_unit_interval(seed):
    X, A = _random_problem(seed, 80)
    try:
        m = fit_logistic(X, A)
    except (Separation, RankDeficient):
        return
    p = m.prob_treated(X)
    assert ((p > 0) & (p < 1)).all()
    # the MLE beats nearby parameters
    ll = log_likelihood(m.theta, X, A)
    for d in np.eye(3) * 1e-3:
        assert ll >= log_likelihood(m.theta + d, X, A)


def test_batch_matches_weighted_fits():
    X, A = _random_problem(1, 200)
    X = np.column_stack([np.ones(200), np.round(X[:, 1]), X[:, 2]])
    rng = np.random.default_rng(3)
    counts = rng.multinomial(200, np.full(200, 1 / 200), size=6).astype(float)
    theta, ok = fit_logistic_batch(X, A, counts)
    assert ok.all()
    for b in range(6):
        ref = fit_logistic(X, A, counts[b])
        np.testing.assert_allclose(theta[b], ref.theta, atol=1e-8)


def test_batch_flags_separated_rows():
    L = np.array([0.0, 0, 1, 1])
    X = np.column_stack([np.ones(4), L])
    A = np.array([0.0, 1, 0, 1])
    counts = np.array([[1, 1, 1, 1], [1, 0, 0, 1]], dtype=float)
    theta, ok = fit_logistic_batch(X, A, counts)
    assert ok[0] and not ok[1]
    assert np.isnan(theta[1]).all()
