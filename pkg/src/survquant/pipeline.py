"""End-to-end estimation: composite outcome, weights, quantile, inference."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .cohort import LongitudinalCohort, build_composite, check_death_fraction, validate_cohort
from .errors import DeathMassWarning, SurvQuantError
from .inference import avar_estimated_ps, avar_known_ps, bootstrap_ci
from .propensity import fit_logistic_batch
from .quantile import weighted_quantile, weighted_quantile_batch
from .weights import (
    EPS_FLOOR,
    Design,
    WeightVector,
    as_regimen,
    at_risk,
    fit_visit_models,
    iptw_time_varying,
    on_regimen,
    positivity_report,
    recorded_regimen,
    regimen_weights,
    visit_design,
    visit_probabilities,
)

__all__ = ["QuantilePipeline", "estimate_report"]

PROPENSITY_MODES = ("estimated", "known", "unweighted")


@dataclass
class QuantilePipeline:
    """Callable estimator ``cohort -> q_hat`` for one regimen.

    ``propensity`` selects the weights: ``"estimated"`` fits per-visit logistic
    models, ``"known"`` uses ``known_ps(cohort) -> (N, K+1)`` probabilities of
    treatment, ``"unweighted"`` gives weight 1 to every subject whose recorded
    treatments equal the regimen (deaths before the last decision drop out).
    """
    regimen: tuple
    tau: float = 0.5
    propensity: str = "estimated"
    known_ps: Optional[Callable] = None
    design: Design = None
    sentinel: Optional[float] = None
    higher_is_better: bool = True
    eps_floor: float = EPS_FLOOR
    strict: bool = True
    stabilized: bool = False
    models: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.propensity not in PROPENSITY_MODES:
            raise ValueError(f"propensity must be one of {PROPENSITY_MODES}")
        if self.propensity == "known" and self.known_ps is None:
            raise ValueError("known propensity mode needs known_ps")
        self.regimen = tuple(int(a) for a in np.atleast_1d(self.regimen))

    def composite(self, cohort: LongitudinalCohort):
        return build_composite(cohort, self.sentinel, higher_is_better=self.higher_is_better)

    def weights(self, cohort: LongitudinalCohort) -> WeightVector:
        reg = as_regimen(self.regimen, cohort.n_decisions)
        if self.propensity == "estimated":
            self.models = fit_visit_models(cohort, reg, self.design)
            return iptw_time_varying(cohort, reg, self.models, design=self.design,
                                     eps_floor=self.eps_floor, strict=self.strict, stabilized=self.stabilized)
        if self.propensity == "known":
            return regimen_weights(cohort, reg, self.known_ps(cohort), eps_floor=self.eps_floor,
                                   strict=self.strict)
        w = recorded_regimen(cohort, reg).astype(float)
        return WeightVector(w=w, regimen=reg, min_ps=1.0, n_zero=int((w == 0).sum()), kind="unit")

    def __call__(self, cohort: LongitudinalCohort) -> float:
        comp = self.composite(cohort)
        return weighted_quantile(comp, self.weights(cohort), self.tau)

    estimate = __call__

    def batch(self, cohort: LongitudinalCohort, counts) -> np.ndarray:
        """Estimates for every row of a ``(b, N)`` subject-multiplicity matrix.

        Equivalent to calling the pipeline on each resampled cohort: frequency
        weights reproduce the logistic fits and the weighted quantile exactly.
        Failed replicates (separation, positivity in strict mode, empty arm)
        come back as NaN.
        """
        C = np.atleast_2d(np.asarray(counts, dtype=float))
        comp = self.composite(cohort)
        reg = as_regimen(self.regimen, cohort.n_decisions)
        follows = on_regimen(cohort, reg)
        failed = np.zeros(C.shape[0], dtype=bool)
        if self.propensity == "unweighted":
            W = C * recorded_regimen(cohort, reg).astype(float)
        elif self.propensity == "known":
            base = regimen_weights(cohort, reg, self.known_ps(cohort), eps_floor=self.eps_floor,
                                   strict=False).w
            W = C * base
        else:
            if self.stabilized:
                raise NotImplementedError("stabilized weights are not vectorized; use the per-replicate path")
            a = np.asarray(reg, dtype=float)
            logden = np.zeros_like(C)
            for k in range(cohort.n_decisions):
                rows = at_risk(cohort, reg, k)
                X, _ = visit_design(cohort, k, self.design, rows)
                theta, ok = fit_logistic_batch(X[rows], cohort.treatment[rows, k], C[:, rows])
                failed |= ~ok
                need = rows & follows
                p1 = expit(np.nan_to_num(theta) @ X[need].T)
                f = p1 if a[k] == 1 else 1.0 - p1
                if self.strict:
                    used = C[:, need] > 0
                    failed |= ((f < self.eps_floor) & used).any(axis=1)
                logden[:, need] += np.log(f)
            W = C * np.where(follows, 1.0, 0.0) * np.exp(-logden)
        q = weighted_quantile_batch(comp.values, W, self.tau)
        q[failed] = np.nan
        return q


def estimate_report(cohort: LongitudinalCohort, pipeline: QuantilePipeline, *, bootstrap: int = 0,
                    level: float = 0.95, seed: int = 0, workers: int = 1, bandwidth=None) -> dict:
    """Run the pipeline on ``cohort`` and collect estimate, variances and diagnostics."""
    caught: list[str] = []
    with warnings.catch_warnings(record=True) as record:
        warnings.simplefilter("always")
        violations = [v for v in validate_cohort(cohort) if v.kind != "missing_outcome"]
        comp = pipeline.composite(cohort)
        wv = pipeline.weights(cohort)
        w = wv.w
        q_hat = weighted_quantile(comp, wv, pipeline.tau)
        death_w = float(w[comp.dead].sum() / w.sum())
        check_death_fraction(death_w, pipeline.tau)
        report = {
            "estimate": comp.original_scale(q_hat),
            "tau": pipeline.tau,
            "regimen": list(pipeline.regimen),
            "propensity": pipeline.propensity,
            "n_subjects": cohort.n_subjects,
            "n_on_regimen": int((w > 0).sum()),
            "weighted_death_fraction": death_w,
            "sentinel": comp.sentinel,
            "avar_known": None,
            "avar_est": None,
            "se_known": None,
            "se_est": None,
            "avar_experimental": cohort.n_decisions > 1,
            "ci": None,
            "B": bootstrap,
            "level": level,
            "seed": seed,
            "diagnostics": {
                "weights_mean": float(w.mean()),
                "weights_max": float(w.max()),
                "min_ps": wv.min_ps,
                "n_zero_weights": wv.n_zero,
                "validation_violations": len(violations),
            },
        }
        if pipeline.propensity == "estimated" and pipeline.models:
            probs = visit_probabilities(cohort, pipeline.regimen, pipeline.models, pipeline.design)
            pr = positivity_report(probs, pipeline.eps_floor)
            report["diagnostics"]["positivity"] = {"min": pr.min, "eps": pr.eps, "n_below": pr.n_below,
                                                   "fraction_below": pr.fraction_below}
            report["diagnostics"]["models"] = [
                {"visit": k, "theta": m.theta.tolist(), "design": list(m.design_spec), "n_iter": m.n_iter}
                for k, m in enumerate(pipeline.models)]
        if pipeline.propensity != "unweighted":
            try:
                if pipeline.propensity == "estimated" and cohort.n_decisions == 1:
                    X, _ = visit_design(cohort, 0, pipeline.design)
                    var = avar_estimated_ps(comp, X, cohort.treatment[:, 0], pipeline.models[0],
                                            pipeline.regimen[0], pipeline.tau, q_hat, bandwidth)
                    report["avar_est"] = var.avar_est
                    report["se_est"] = var.se_est()
                    report["diagnostics"]["v_hat"] = var.v_hat
                else:
                    var = avar_known_ps(comp, w, pipeline.tau, q_hat, bandwidth)
                report["avar_known"] = var.avar_known
                report["se_known"] = var.se_known()
                report["diagnostics"]["v_tilde"] = var.v_tilde
                report["diagnostics"]["f_hat"] = var.f_hat
                report["diagnostics"]["bandwidth"] = var.bandwidth
            except SurvQuantError as exc:
                warnings.warn(f"plug-in variance unavailable: {exc}")
        if bootstrap:
            ci = bootstrap_ci(cohort, pipeline, bootstrap, level, seed, workers=workers)
            lo, hi = comp.original_scale(ci.lower), comp.original_scale(ci.upper)
            report["ci"] = sorted([lo, hi])
            report["diagnostics"]["bootstrap_failed"] = ci.n_failed
        for r in record:
            caught.append(str(r.message))
    report["warnings"] = caught
    return report
