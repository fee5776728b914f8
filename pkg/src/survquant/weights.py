"""Inverse-probability weights for point and time-varying regimens.

A subject contributes one propensity factor for every decision point at which
it is alive. Decedents therefore stop accumulating factors at the last visit
before death, and nothing recorded after death is ever read.

Design columns are named ``const``, ``A[j]`` (treatment at visit ``j``) and
``<covariate>[j]`` (e.g. ``L_1[0]``). A design can also be a callable
``design(cohort, k) -> (X, names)`` returning the full ``(N, p)`` matrix for
visit ``k``; rows of subjects not at risk may hold anything.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .cohort import LongitudinalCohort
from .errors import (
    EmptyStratum,
    HistoryMismatch,
    LengthMismatch,
    PositivityViolation,
    PositivityWarning,
)
from .propensity import PropensityModel, fit_logistic

__all__ = [
    "WeightVector",
    "PositivityReport",
    "as_regimen",
    "default_design",
    "design_matrix",
    "visit_design",
    "on_regimen",
    "recorded_regimen",
    "at_risk",
    "fit_visit_models",
    "visit_probabilities",
    "regimen_weights",
    "iptw_point",
    "iptw_time_varying",
    "fit_ipcw_models",
    "ipcw",
    "combine",
    "positivity_report",
    "write_weights_csv",
]

EPS_FLOOR = 0.01

Design = Union[None, Sequence[Sequence[str]], Callable]


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    regimen: tuple
    min_ps: float
    n_zero: int
    kind: str = "iptw"

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return len(self.w)

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    @property
    def mean(self) -> float:
        return float(self.w.mean())


def as_regimen(regimen, n_decisions: int) -> tuple:
    if np.isscalar(regimen):
        regimen = (int(regimen),)
    reg = tuple(int(a) for a in regimen)
    if len(reg) != n_decisions:
        raise LengthMismatch(f"regimen has {len(reg)} entries, cohort has {n_decisions} decision points")
    if any(a not in (0, 1) for a in reg):
        raise ValueError("regimen entries must be 0 or 1")
    return reg


# -- design ------------------------------------------------------------------

_NAME = re.compile(r"^(?P<var>.+)\[(?P<visit>\d+)\]$")


def default_design(cohort: LongitudinalCohort, k: int, *, baseline_only: bool = False) -> list[str]:
    """Intercept plus every covariate measured at visits ``0..k``."""
    last = 0 if baseline_only else k
    return ["const"] + [f"{c}[{j}]" for j in range(last + 1) for c in cohort.covariate_names]


def design_matrix(cohort: LongitudinalCohort, names: Sequence[str], k: int,
                  rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Build the design for decision point ``k`` from history columns.

    Raises ``HistoryMismatch`` if a column refers to the future or is
    undefined for one of ``rows`` (default: subjects alive at ``k``).
    """
    n = cohort.n_subjects
    X = np.empty((n, len(names)))
    for c, name in enumerate(names):
        if name == "const":
            X[:, c] = 1.0
            continue
        m = _NAME.match(name)
        if not m:
            raise HistoryMismatch(f"cannot parse design column '{name}'")
        var, j = m.group("var"), int(m.group("visit"))
        if var == "A":
            if j >= k:
                raise HistoryMismatch(f"'{name}' is not part of the history at decision point {k}")
            X[:, c] = cohort.treatment[:, j]
        else:
            if j > k:
                raise HistoryMismatch(f"'{name}' is measured after decision point {k}")
            if var not in cohort.covariate_names:
                raise HistoryMismatch(f"unknown covariate '{var}'")
            X[:, c] = cohort.covariates[:, j, cohort.covariate_names.index(var)]
    if rows is None:
        rows = cohort.alive(k)
    if np.isnan(X[rows]).any():
        bad = names[int(np.flatnonzero(np.isnan(X[rows]).any(axis=0))[0])]
        raise HistoryMismatch(f"design column '{bad}' is undefined for a subject at risk at visit {k}")
    return X


def visit_design(cohort: LongitudinalCohort, k: int, design: Design = None,
                 rows: Optional[np.ndarray] = None) -> tuple[np.ndarray, tuple]:
    if callable(design):
        X, names = design(cohort, k)
        return np.asarray(X, dtype=float), tuple(names)
    names = default_design(cohort, k) if design is None else list(design[k])
    return design_matrix(cohort, names, k, rows), tuple(names)


# -- regimen bookkeeping ------------------------------------------------------

def _follows(cohort: LongitudinalCohort, regimen: tuple) -> np.ndarray:
    """(N, K+1): True where the subject is dead at k or took ``a_k``."""
    K1 = cohort.n_decisions
    alive = cohort.dead[:, :K1] == 0
    return ~alive | (cohort.treatment == np.asarray(regimen, dtype=float))


def on_regimen(cohort: LongitudinalCohort, regimen, first_visit: int = 0) -> np.ndarray:
    """Indicator that every treatment taken while alive matches ``regimen``."""
    regimen = as_regimen(regimen, cohort.n_decisions)
    return _follows(cohort, regimen)[:, first_visit:].all(axis=1)


def recorded_regimen(cohort: LongitudinalCohort, regimen) -> np.ndarray:
    """Indicator that all ``K+1`` treatments were recorded and equal ``regimen``.

    Unlike ``on_regimen`` this drops subjects who died before the last
    decision point, whose later treatments are unobserved.
    """
    regimen = as_regimen(regimen, cohort.n_decisions)
    return (cohort.treatment == np.asarray(regimen, dtype=float)).all(axis=1)


def at_risk(cohort: LongitudinalCohort, regimen, k: int) -> np.ndarray:
    """Alive at ``k`` and on ``regimen`` at visits ``0..k-1``: the fitting stratum for visit ``k``."""
    regimen = as_regimen(regimen, cohort.n_decisions)
    return cohort.alive(k) & _follows(cohort, regimen)[:, :k].all(axis=1)


def fit_visit_models(cohort: LongitudinalCohort, regimen, design: Design = None,
                     obs_weights=None, visits: Optional[Sequence[int]] = None) -> list[PropensityModel]:
    """Fit ``P(A_k = 1 | history)`` on the at-risk, on-regimen-so-far stratum of each visit."""
    regimen = as_regimen(regimen, cohort.n_decisions)
    visits = range(cohort.n_decisions) if visits is None else visits
    models = []
    for k in visits:
        rows = at_risk(cohort, regimen, k)
        if obs_weights is not None:
            rows = rows & (np.asarray(obs_weights) > 0)
        y = cohort.treatment[rows, k]
        if y.size == 0 or y.min() == y.max():
            raise EmptyStratum(f"visit {k}: fitting stratum has {y.size} subjects and no variation in treatment")
        X, names = visit_design(cohort, k, design, rows)
        w = None if obs_weights is None else np.asarray(obs_weights, dtype=float)[rows]
        models.append(fit_logistic(X[rows], y, w, design_spec=names))
    return models


def visit_probabilities(cohort: LongitudinalCohort, regimen, models: Sequence[PropensityModel],
                        design: Design = None, first_visit: int = 0) -> np.ndarray:
    """``P(A_k = 1 | history)`` from fitted models, NaN outside each visit's stratum."""
    regimen = as_regimen(regimen, cohort.n_decisions)
    K1 = cohort.n_decisions
    if len(models) != K1 - first_visit:
        raise LengthMismatch(f"expected {K1 - first_visit} models, got {len(models)}")
    out = np.full((cohort.n_subjects, K1), np.nan)
    for k, model in zip(range(first_visit, K1), models):
        rows = at_risk(cohort, regimen, k)
        if callable(design):
            X, names = visit_design(cohort, k, design, rows)
        else:
            names = list(model.design_spec)
            X = design_matrix(cohort, names, k, rows)
        if tuple(names) != tuple(model.design_spec):
            raise HistoryMismatch(f"visit {k}: design {names} does not match model {model.design_spec}")
        out[rows, k] = model.prob_treated(X[rows])
    return out


def regimen_weights(cohort: LongitudinalCohort, regimen, p_treated, *, eps_floor: float = EPS_FLOOR,
                    strict: bool = True, first_visit: int = 0, numerator=None,
                    kind: str = "iptw") -> WeightVector:
    """``1{on regimen} / prod_k P(A_k = a_k | history)`` over visits where the subject is alive.

    ``p_treated`` is ``(N, K+1)`` with ``P(A_k = 1 | history)``; only entries of
    at-risk, on-regimen subjects are read. ``numerator`` (same shape) gives
    stabilized weights.
    """
    regimen = as_regimen(regimen, cohort.n_decisions)
    K1 = cohort.n_decisions
    p1 = np.asarray(p_treated, dtype=float)
    if p1.shape != (cohort.n_subjects, K1):
        raise LengthMismatch(f"p_treated must be {(cohort.n_subjects, K1)}, got {p1.shape}")
    a = np.asarray(regimen, dtype=float)
    follows = on_regimen(cohort, regimen, first_visit)
    alive = cohort.dead[:, :K1] == 0
    contrib = alive & follows[:, None]
    contrib[:, :first_visit] = False
    factor = np.where(a == 1.0, p1, 1.0 - p1)
    if np.isnan(factor[contrib]).any():
        raise HistoryMismatch("missing propensity for a subject at risk")
    factors = np.where(contrib, factor, 1.0)
    min_ps = float(factors[contrib].min()) if contrib.any() else 1.0
    if contrib.any() and min_ps < eps_floor:
        n_low = int((factors[contrib] < eps_floor).sum())
        msg = f"{n_low} propensity factor(s) below eps_floor={eps_floor} (min {min_ps:.3g})"
        if strict:
            raise PositivityViolation(msg)
        warnings.warn(msg, PositivityWarning, stacklevel=2)
    denom = np.prod(factors, axis=1)
    w = np.where(follows, 1.0 / denom, 0.0)
    if numerator is not None:
        num = np.where(contrib, np.where(a == 1.0, numerator, 1.0 - np.asarray(numerator)), 1.0)
        w = w * np.prod(num, axis=1)
    return WeightVector(w=w, regimen=regimen, min_ps=min_ps, n_zero=int((w == 0).sum()), kind=kind)


def _marginal_numerator(cohort, regimen):
    K1 = cohort.n_decisions
    out = np.full((cohort.n_subjects, K1), np.nan)
    for k in range(K1):
        rows = at_risk(cohort, regimen, k)
        if rows.any():
            out[rows, k] = cohort.treatment[rows, k].mean()
    return out


def iptw_time_varying(cohort: LongitudinalCohort, regimen, models: Sequence[PropensityModel], *,
                      design: Design = None, eps_floor: float = EPS_FLOOR, strict: bool = True,
                      stabilized: bool = False) -> WeightVector:
    regimen = as_regimen(regimen, cohort.n_decisions)
    p1 = visit_probabilities(cohort, regimen, models, design)
    num = _marginal_numerator(cohort, regimen) if stabilized else None
    return regimen_weights(cohort, regimen, p1, eps_floor=eps_floor, strict=strict, numerator=num)


def iptw_point(cohort: LongitudinalCohort, a: int, model: PropensityModel, *, design: Design = None,
               eps_floor: float = EPS_FLOOR, strict: bool = True, stabilized: bool = False) -> WeightVector:
    """``1{A = a} / P(A = a | L)`` for a single baseline decision."""
    if cohort.n_decisions != 1:
        raise LengthMismatch("iptw_point needs a cohort with a single decision point")
    return iptw_time_varying(cohort, (a,), [model], design=design, eps_floor=eps_floor,
                             strict=strict, stabilized=stabilized)


# -- censoring -----------------------------------------------------------------

def fit_ipcw_models(cohort: LongitudinalCohort, regimen, missing, invalid, *, design: Design = None,
                    missing_design: Optional[Sequence[str]] = None):
    """Fit the deviation models (visits 1..K), the missingness model and the invalid fraction.

    All three are fit within the baseline arm ``A_0 = a_0``. By default every
    factor conditions on baseline covariates only.
    """
    regimen = as_regimen(regimen, cohort.n_decisions)
    missing = np.asarray(missing, dtype=bool)
    invalid = np.asarray(invalid, dtype=bool)
    K1 = cohort.n_decisions
    if design is None:
        design = [default_design(cohort, 0, baseline_only=True)] * K1
    dev = fit_visit_models(cohort, regimen, design, visits=range(1, K1)) if K1 > 1 else []
    names = missing_design or default_design(cohort, 0, baseline_only=True)
    follows = on_regimen(cohort, regimen)
    rows = cohort.survived & follows
    y = missing[rows].astype(float)
    if y.size == 0 or y.min() == y.max():
        raise EmptyStratum("missingness model: stratum has no variation in missingness")
    X = design_matrix(cohort, names, 0, rows)
    miss_model = fit_logistic(X[rows], y, design_spec=names)
    observed = rows & ~missing
    if not observed.any():
        raise EmptyStratum("no observed outcomes to estimate the invalid fraction")
    invalid_fraction = float(invalid[observed].mean())
    return dev, miss_model, invalid_fraction


def ipcw(cohort: LongitudinalCohort, regimen, deviation_models: Sequence[PropensityModel],
         missing_model: PropensityModel, invalid_fraction: float, *, missing, invalid,
         design: Design = None, eps_floor: float = EPS_FLOOR, strict: bool = True) -> WeightVector:
    """Censoring weights for deviation, missing and invalid outcomes.

    Survivors with a valid outcome get ``1 / (prod_{k>=1} P(A_k = a_k | .) *
    P(not missing | .) * (1 - invalid_fraction))``; decedents get the deviation
    factors up to death (1 if they died before the first follow-up decision);
    deviators, missing and invalid outcomes get 0. ``missing_model`` is fit to
    the missingness indicator (1 = missing).
    """
    regimen = as_regimen(regimen, cohort.n_decisions)
    K1 = cohort.n_decisions
    missing = np.asarray(missing, dtype=bool)
    invalid = np.asarray(invalid, dtype=bool)
    if missing.shape != (cohort.n_subjects,) or invalid.shape != (cohort.n_subjects,):
        raise LengthMismatch("missing/invalid must have one entry per subject")
    if not 0.0 <= invalid_fraction < 1.0:
        raise ValueError("invalid_fraction must lie in [0, 1)")
    if K1 > 1:
        p1 = visit_probabilities(cohort, regimen, deviation_models, design, first_visit=1)
    else:
        p1 = np.full((cohort.n_subjects, K1), np.nan)
    dev = regimen_weights(cohort, regimen, p1, eps_floor=eps_floor, strict=strict, first_visit=1)
    follows = on_regimen(cohort, regimen)
    w = np.where(follows, dev.w, 0.0)
    surv = cohort.survived & follows
    names = list(missing_model.design_spec)
    X = design_matrix(cohort, names, 0, surv)
    p_obs = np.ones(cohort.n_subjects)
    p_obs[surv] = 1.0 - missing_model.prob_treated(X[surv])
    p_valid = 1.0 - invalid_fraction
    contrib = surv & ~missing & ~invalid
    probs = np.concatenate([p_obs[contrib], np.full(int(contrib.any()), p_valid)])
    min_ps = min([dev.min_ps] + list(probs))
    if probs.size and probs.min() < eps_floor:
        msg = f"censoring probability below eps_floor={eps_floor} (min {probs.min():.3g})"
        if strict:
            raise PositivityViolation(msg)
        warnings.warn(msg, PositivityWarning, stacklevel=2)
    w = np.where(surv, np.where(contrib, w / (p_obs * p_valid), 0.0), w)
    return WeightVector(w=w, regimen=regimen, min_ps=float(min_ps), n_zero=int((w == 0).sum()), kind="ipcw")


def combine(wA: WeightVector, wC: WeightVector) -> WeightVector:
    """Elementwise product, e.g. IPTW times IPCW."""
    a, c = np.asarray(wA.w), np.asarray(wC.w)
    if a.shape != c.shape:
        raise LengthMismatch(f"weight vectors have lengths {a.size} and {c.size}")
    w = a * c
    return WeightVector(w=w, regimen=wA.regimen, min_ps=min(wA.min_ps, wC.min_ps),
                        n_zero=int((w == 0).sum()), kind=f"{wA.kind}*{wC.kind}")


@dataclass(frozen=True)
class PositivityReport:
    n: int
    min: float
    eps: float
    n_below: int
    fraction_below: float
    flagged: np.ndarray
    histogram: tuple
    bin_edges: tuple

    @property
    def ok(self) -> bool:
        return self.n_below == 0


def positivity_report(probabilities, eps: float = EPS_FLOOR, bins: int = 10) -> PositivityReport:
    p = np.asarray(probabilities, dtype=float).reshape(-1)
    p = p[~np.isnan(p)]
    flagged = np.flatnonzero(p < eps)
    hist, edges = np.histogram(p, bins=bins, range=(0.0, 1.0))
    return PositivityReport(
        n=p.size,
        min=float(p.min()) if p.size else float("nan"),
        eps=eps,
        n_below=int(flagged.size),
        fraction_below=float(flagged.size / p.size) if p.size else 0.0,
        flagged=flagged,
        histogram=tuple(int(h) for h in hist),
        bin_edges=tuple(float(e) for e in edges),
    )


def write_weights_csv(path, subject_ids, weights) -> Path:
    path = Path(path)
    w = np.asarray(weights.w if isinstance(weights, WeightVector) else weights)
    pd.DataFrame({"subject_id": np.asarray(subject_ids), "weight": w}).to_csv(
        path, index=False, float_format="%.17g")
    return path
