"""Simulation settings, exact truths and Monte Carlo runners."""
from .dgp import PointDGP, TimeVaryingDGP, gen_point, gen_time_varying
from .truth import (
    MixtureTruthSpec,
    analytic_truth,
    point_truth_spec,
    time_varying_truth_spec,
    truth_point,
    truth_time_varying,
    unweighted_point_limit,
    unweighted_time_varying_limit,
)
from .study import (
    CoverageConfig,
    CoverageResult,
    MonteCarloConfig,
    MonteCarloResult,
    coverage_study,
    monte_carlo,
    preset,
    setting_truth,
)
