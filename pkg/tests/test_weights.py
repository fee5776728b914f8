import numpy as np
import pytest

from survquant import LongitudinalCohort, QuantilePipeline
from survquant.errors import EmptyStratum, HistoryMismatch, LengthMismatch, PositivityViolation
from survquant.propensity import PropensityModel, fit_logistic
from survquant.simulate import PointDGP, TimeVaryingDGP, gen_point, gen_time_varying
from survquant.weights import (
    WeightVector,
    at_risk,
    combine,
    default_design,
    fit_ipcw_models,
    fit_visit_models,
    ipcw,
    iptw_point,
    iptw_time_varying,
    on_regimen,
    positivity_report,
    recorded_regimen,
    regimen_weights,
    write_weights_csv,
)

from conftest import make_cohort


def const_model(p, names=("const",)):
    theta = np.zeros(len(names))
    theta[0] = np.log(p / (1 - p))
    return PropensityModel(theta, True, 0, np.eye(len(names)), tuple(names), 100.0)


def test_point_weights_reciprocal_and_zero(toy_point):
    wv = iptw_point(toy_point, 1, const_model(0.5))
    np.testing.assert_allclose(wv.w, [2, 2, 0, 0, 2, 0])
    assert wv.n_zero == 3 and wv.min_ps == pytest.approx(0.5)


def test_decedent_uses_factors_before_death(toy_tv):
    # P(A_0 = 1) = 0.4, P(A_1 = 1) = 0.25 for everyone
    p = np.column_stack([np.full(4, 0.4), np.full(4, 0.25)])
    wv = regimen_weights(toy_tv, (1, 1), p, strict=False)
    assert wv.w[1] == pytest.approx(2.5)   # died in (0, 1]: baseline factor only
    assert wv.w[2] == pytest.approx(10.0)  # died in (1, 2]: both factors
    assert wv.w[0] == pytest.approx(10.0)
    assert wv.w[3] == 0.0                  # switched at visit 1


def test_survivor_product_of_reciprocals(toy_tv):
    p = np.column_stack([np.full(4, 0.5), np.full(4, 0.25)])
    assert regimen_weights(toy_tv, (1, 1), p).w[0] == pytest.approx(8.0)


def test_positivity_strict_and_warn(toy_point):
    with pytest.raises(PositivityViolation):
        iptw_point(toy_point, 1, const_model(0.005))
    with pytest.warns(UserWarning):
        wv = iptw_point(toy_point, 1, const_model(0.005), strict=False)
    assert wv.w.max() == pytest.approx(200.0)


def test_randomized_mean_one():
    rng = np.random.default_rng(0)
    n = 100_000
    A = (rng.random(n) < 0.5).astype(float)
    c = LongitudinalCohort(None, np.zeros((n, 2)), A[:, None], np.zeros((n, 1, 1)), rng.normal(size=n))
    wv = iptw_point(c, 1, const_model(0.5))
    assert wv.w[A == 1].mean() == pytest.approx(2.0)
    assert wv.w.mean() == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("regimen", [(0, 0), (1, 1)])
def test_time_varying_mean_one(regimen):
    dgp = TimeVaryingDGP()
    c = gen_time_varying(100_000, dgp, seed=2)
    known = regimen_weights(c, regimen, dgp.propensity(c))
    assert known.w.mean() == pytest.approx(1.0, abs=0.03)
    est = iptw_time_varying(c, regimen, fit_visit_models(c, regimen))
    assert est.w.mean() == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("a", [0, 1])
def test_point_mean_one(a):
    c = gen_point(100_000, seed=8)
    m = fit_visit_models(c, (a,))[0]
    assert iptw_point(c, a, m).w.mean() == pytest.approx(1.0, abs=0.03)


def test_k0_time_varying_equals_point():
    c = gen_point(2000, seed=1)
    models = fit_visit_models(c, (1,))
    np.testing.assert_array_equal(iptw_time_varying(c, (1,), models).w, iptw_point(c, 1, models[0]).w)


def test_post_death_fields_never_read():
    c = gen_time_varying(3000, seed=4)
    early = c.dead[:, 1] == 1
    A = c.treatment.copy()
    L = c.covariates.copy()
    A[early, 1] = 1.0
    L[early, 1, 0] = 99.0
    mutated = LongitudinalCohort(c.subject_ids, c.dead, A, L, c.outcome)
    for reg in [(1, 1), (0, 0)]:
        w1 = iptw_time_varying(c, reg, fit_visit_models(c, reg)).w
        w2 = iptw_time_varying(mutated, reg, fit_visit_models(mutated, reg)).w
        np.testing.assert_array_equal(w1, w2)


def test_default_design_and_strata():
    c = gen_time_varying(500, seed=0)
    assert default_design(c, 0) == ["const", "L_1[0]"]
    assert default_design(c, 1) == ["const", "L_1[0]", "L_1[1]"]
    rows = at_risk(c, (1, 1), 1)
    assert (c.treatment[rows, 0] == 1).all() and (c.dead[rows, 1] == 0).all()


def test_unweighted_population_drops_early_deaths(toy_tv):
    np.testing.assert_array_equal(on_regimen(toy_tv, (1, 1)), [True, True, True, False])
    np.testing.assert_array_equal(recorded_regimen(toy_tv, (1, 1)), [True, False, True, False])


def test_empty_stratum():
    c = make_cohort([[0, 0]] * 3, np.ones((3, 1)), np.zeros((3, 1, 1)), [1.0, 2.0, 3.0])
    with pytest.raises(EmptyStratum):
        fit_visit_models(c, (1,))


def test_history_mismatch(toy_tv):
    # a visit-0 model cannot condition on the visit-1 covariate
    future = const_model(0.5, ("const", "L_1[1]"))
    with pytest.raises(HistoryMismatch):
        iptw_time_varying(toy_tv, (1, 1), [future, const_model(0.5)])


def _ipcw_cohort():
    """Baseline arm a_0 = 1 throughout; visit 1 'decision' is staying on treatment."""
    nan = np.nan
    dead = [[0, 1, 1], [0, 0, 0], [0, 0, 0], [0, 0, 1], [0, 0, 0], [0, 0, 0]]
    A = [[1, nan], [1, 1], [1, 0], [1, 1], [1, 1], [1, 1]]
    L = np.zeros((6, 2, 1))
    L[1:, 1] = 0.0
    L[0, 1] = nan
    Y = [nan, 3.0, 1.0, nan, 2.0, 4.0]
    return make_cohort(dead, np.array(A), L, Y)


def test_ipcw_factor_rules():
    c = _ipcw_cohort()
    missing = np.array([False, False, False, False, True, False])
    invalid = np.zeros(6, bool)
    wv = ipcw(c, (1, 1), [const_model(0.8)], const_model(0.1), 0.5, missing=missing, invalid=invalid)
    assert wv.w[0] == 1.0                       # died before the first follow-up
    assert wv.w[2] == 0.0                       # deviated from the regimen
    assert wv.w[3] == pytest.approx(1 / 0.8)    # died later: deviation factor only
    assert wv.w[4] == 0.0                       # outcome missing
    assert wv.w[1] == pytest.approx(1 / (0.8 * 0.9 * 0.5))


def test_fit_ipcw_models_runs():
    c = _ipcw_cohort()
    missing = np.array([False, False, False, False, True, False])
    invalid = np.array([False, True, False, False, False, False])
    dev, miss, frac = fit_ipcw_models(c, (1, 1), missing, invalid, design=[["const"], ["const"]],
                                      missing_design=["const"])
    # survivors on regimen: 1, 4, 5; 4 is missing; of the observed (1, 5) one is invalid
    assert frac == pytest.approx(1 / 2)
    assert miss.prob_treated(np.ones((1, 1)))[0] == pytest.approx(1 / 3)
    assert dev[0].prob_treated(np.ones((1, 1)))[0] == pytest.approx(4 / 5)


def test_combine():
    a = WeightVector(np.array([2.0, 1.0, 5.0]), (1,), 0.5, 0)
    b = WeightVector(np.array([3.0, 0.0, 1.0]), (1,), 0.5, 1)
    np.testing.assert_array_equal(combine(a, b).w, [6.0, 0.0, 5.0])
    ones = WeightVector(np.ones(3), (1,), 1.0, 0)
    np.testing.assert_array_equal(combine(a, ones).w, a.w)
    with pytest.raises(LengthMismatch):
        combine(a, WeightVector(np.ones(2), (1,), 1.0, 0))


def test_positivity_report():
    assert positivity_report(np.linspace(0.3, 0.9, 20), 0.01).n_below == 0
    r = positivity_report(np.array([0.005, 0.5, 0.7]), 0.01)
    assert r.n_below == 1 and r.flagged.tolist() == [0]
    c = gen_time_varying(10_000, seed=3)
    assert positivity_report(TimeVaryingDGP().propensity(c), 0.01).fraction_below == 0.0


def test_write_weights_csv(tmp_path, toy_point):
    path = write_weights_csv(tmp_path / "w.csv", toy_point.subject_ids, iptw_point(toy_point, 1, const_model(0.5)))
    lines = path.read_text().splitlines()
    assert lines[0] == "subject_id,weight" and lines[1] == "0,2"


def test_pipeline_known_equals_manual():
    dgp = PointDGP()
    c = gen_point(1000, seed=3)
    pipe = QuantilePipeline((1,), propensity="known", known_ps=dgp.propensity)
    np.testing.assert_array_equal(pipe.weights(c).w, regimen_weights(c, (1,), dgp.propensity(c)).w)
