"""Survival-incorporated quantiles under truncation by death, estimated with inverse probability weights."""
from . import errors
from .cohort import (
    CompositeOutcome,
    LongitudinalCohort,
    VisitRecord,
    Violation,
    build_composite,
    check_death_fraction,
    default_sentinel,
    read_cohort_csv,
    validate_cohort,
    write_cohort_csv,
)
from .inference import (
    BootstrapCI,
    VarianceEstimate,
    avar_estimated_ps,
    avar_known_ps,
    bootstrap_ci,
    density_at,
    percentile_interval,
)
from .pipeline import QuantilePipeline, estimate_report
from .propensity import PropensityModel, fit_logistic, fit_logistic_batch, predict
from .quantile import QuantileSpec, check_loss, estimating_equation, weighted_quantile
from .weights import (
    WeightVector,
    combine,
    fit_ipcw_models,
    fit_visit_models,
    ipcw,
    iptw_point,
    iptw_time_varying,
    positivity_report,
    regimen_weights,
)

__version__ = "0.1.0"
