import warnings

import numpy as np
import pytest

from survquant import QuantilePipeline
from survquant.errors import DeathMassWarning, InvalidTables
from survquant.oracle import (
    DiscreteInstance,
    counterfactual_distribution,
    counterfactual_quantile,
    crossing_point,
    lhs_weighted_expectation,
    random_instance,
    sample_instance,
    saturated_design,
)


def simple_instance(**kw):
    base = dict(K=0, p_L0=[0.5, 0.5], p_A0=[0.5, 0.5], p_D1=[[0.0, 0.0], [0.0, 0.0]],
                y_values=[1.0, 2.0, 3.0], y_probs=np.full((2, 2, 3), 1 / 3), sentinel=-10.0)
    base.update(kw)
    return DiscreteInstance(**base)


def test_psi_limits_exact():
    inst = random_instance(np.random.default_rng(0), K=1)
    assert lhs_weighted_expectation(inst, (1, 0), -1e9, 0.3) == pytest.approx(-0.3, abs=1e-12)
    assert lhs_weighted_expectation(inst, (1, 0), 1e9, 0.3) == pytest.approx(0.7, abs=1e-12)


def test_no_confounding_no_death_plain_quantile():
    inst = simple_instance()
    assert counterfactual_quantile(inst, (1,), 0.5) == 2.0
    assert counterfactual_quantile(inst, (1,), 0.7) == 3.0


def test_death_mass_at_tau_returns_sentinel():
    inst = simple_instance(p_D1=[[0.5, 0.5], [0.5, 0.5]])
    with pytest.warns(DeathMassWarning):
        assert counterfactual_quantile(inst, (0,), 0.5) == -10.0


def test_crossing_value_sign_at_truth():
    inst = random_instance(np.random.default_rng(3), K=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = counterfactual_quantile(inst, (0, 1), 0.5)
    atoms, _ = counterfactual_distribution(inst, (0, 1))
    assert lhs_weighted_expectation(inst, (0, 1), q, 0.5) >= -1e-12
    below = atoms[atoms < q]
    if below.size:
        assert lhs_weighted_expectation(inst, (0, 1), below.max(), 0.5) < 0


@pytest.mark.parametrize("K", [0, 1])
def test_identification_identity(K):
    rng = np.random.default_rng(100 + K)
    regimens = [(0,), (1,)] if K == 0 else [(0, 0), (0, 1), (1, 0), (1, 1)]
    for _ in range(150):
        inst = random_instance(rng, K)
        for reg in regimens:
            for tau in (0.2, 0.5, 0.8):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    assert abs(counterfactual_quantile(inst, reg, tau) - crossing_point(inst, reg, tau)) <= 1e-12


def test_invalid_tables():
    with pytest.raises(InvalidTables):
        simple_instance(p_L0=[0.5, 0.6])
    with pytest.raises(InvalidTables):
        simple_instance(p_A0=[0.0, 0.5])
    with pytest.raises(InvalidTables):
        simple_instance(sentinel=5.0)
    with pytest.raises(InvalidTables):
        simple_instance(K=1)


def test_json_round_trip():
    inst = random_instance(np.random.default_rng(7), K=1)
    again = DiscreteInstance.from_json(inst.to_json())
    assert again.to_json() == inst.to_json()


@pytest.mark.parametrize("K,reg", [(0, (1,)), (1, (0, 1))])
def test_large_sample_pipeline_recovers_truth(K, reg):
    inst = random_instance(np.random.default_rng(11 + K), K)
    c = sample_instance(inst, 1_000_000, seed=1, jitter=1e-3)
    q_hat = QuantilePipeline(reg, design=saturated_design(inst))(c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = counterfactual_quantile(inst, reg, 0.5)
    assert q_hat == pytest.approx(q, abs=0.02)
