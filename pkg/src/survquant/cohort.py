"""Longitudinal cohort data model and the ranked composite outcome.

A cohort is stored column-wise. With ``K + 1`` treatment decision points
(visits ``0..K``) and a final assessment at visit ``K + 1``:

* ``dead``        int8  ``(N, K + 2)``   death indicators ``D_0..D_{K+1}``
* ``treatment``   float ``(N, K + 1)``   ``A_0..A_K``, NaN where undefined
* ``covariates``  float ``(N, K + 1, p)`` ``L_0..L_K``, NaN where undefined
* ``outcome``     float ``(N,)``          ``Y``, NaN unless alive at ``K + 1``
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DeathMassWarning, InputError, InvalidCohort, SentinelAboveMinimum

__all__ = [
    "VisitRecord",
    "LongitudinalCohort",
    "CompositeOutcome",
    "Violation",
    "validate_cohort",
    "build_composite",
    "default_sentinel",
    "read_cohort_csv",
    "write_cohort_csv",
    "check_death_fraction",
]


@dataclass(frozen=True)
class VisitRecord:
    k: int
    covariates: tuple
    treatment: Optional[int]
    dead: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LongitudinalCohort:
    subject_ids: np.ndarray
    dead: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple = ()

    def __post_init__(self):
        dead = np.asarray(self.dead, dtype=np.int8)
        treatment = np.asarray(self.treatment, dtype=float)
        covariates = np.asarray(self.covariates, dtype=float)
        outcome = np.asarray(self.outcome, dtype=float)
        if treatment.ndim == 1:
            treatment = treatment[:, None]
        if covariates.ndim == 2:
            covariates = covariates[:, :, None]
        n = dead.shape[0]
        if dead.ndim != 2 or dead.shape[1] < 2:
            raise InvalidCohort("dead must be (N, K+2) with K >= 0")
        k1 = dead.shape[1] - 1
        if treatment.shape != (n, k1):
            raise InvalidCohort(f"treatment must have shape {(n, k1)}, got {treatment.shape}")
        if covariates.shape[:2] != (n, k1):
            raise InvalidCohort(f"covariates must have shape {(n, k1, '*')}, got {covariates.shape}")
        if outcome.shape != (n,):
            raise InvalidCohort(f"outcome must have shape {(n,)}, got {outcome.shape}")
        ids = np.arange(n) if self.subject_ids is None else np.asarray(self.subject_ids)
        if ids.shape != (n,):
            raise InvalidCohort("subject_ids length does not match the cohort")
        names = tuple(self.covariate_names) or tuple(f"L_{j + 1}" for j in range(covariates.shape[2]))
        if len(names) != covariates.shape[2]:
            raise InvalidCohort("covariate_names length does not match covariate dimension")
        object.__setattr__(self, "subject_ids", _readonly(ids))
        object.__setattr__(self, "dead", _readonly(dead))
        object.__setattr__(self, "treatment", _readonly(treatment))
        object.__setattr__(self, "covariates", _readonly(covariates))
        object.__setattr__(self, "outcome", _readonly(outcome))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_subjects(self) -> int:
        return self.dead.shape[0]

    @property
    def n_decisions(self) -> int:
        """Number of treatment decision points, ``K + 1``."""
        return self.treatment.shape[1]

    @property
    def K(self) -> int:
        return self.n_decisions - 1

    @property
    def n_visits(self) -> int:
        return self.dead.shape[1]

    @property
    def survived(self) -> np.ndarray:
        return self.dead[:, -1] == 0

    def alive(self, k: int) -> np.ndarray:
        return self.dead[:, k] == 0

    @property
    def death_visit(self) -> np.ndarray:
        """First visit index with ``D_k = 1``; ``K + 2`` for survivors."""
        d = self.dead.astype(bool)
        return np.where(d.any(axis=1), d.argmax(axis=1), self.n_visits)

    def take(self, idx) -> "LongitudinalCohort":
        """Subset or resample whole subjects (all visits travel together)."""
        idx = np.asarray(idx)
        return LongitudinalCohort(
            subject_ids=self.subject_ids[idx],
            dead=self.dead[idx],
            treatment=self.treatment[idx],
            covariates=self.covariates[idx],
            outcome=self.outcome[idx],
            covariate_names=self.covariate_names,
        )

    def records(self, i: int) -> tuple[list[VisitRecord], Optional[float]]:
        out = []
        for k in range(self.n_visits):
            if k <= self.K:
                cov = tuple(float(v) for v in self.covariates[i, k] if not np.isnan(v))
                a = self.treatment[i, k]
                a = None if np.isnan(a) else int(a)
            else:
                cov, a = (), None
            out.append(VisitRecord(k, cov, a, int(self.dead[i, k])))
        y = self.outcome[i]
        return out, (None if np.isnan(y) else float(y))

    def __iter__(self) -> Iterator[tuple[list[VisitRecord], Optional[float]]]:
        for i in range(self.n_subjects):
            yield self.records(i)


@dataclass(frozen=True)
class Violation:
    subject: object
    kind: str
    message: str


def validate_cohort(cohort: LongitudinalCohort) -> list[Violation]:
    """Collect every structural violation; an empty list means valid."""
    out: list[Violation] = []
    ids = cohort.subject_ids
    d = cohort.dead

    def flag(mask, kind, msg):
        for i in np.flatnonzero(mask):
            out.append(Violation(ids[i].item() if hasattr(ids[i], "item") else ids[i], kind, msg))

    bad_values = ~np.isin(d, (0, 1))
    flag(bad_values.any(axis=1), "invalid_death_indicator", "death indicator not in {0, 1}")
    flag(d[:, 0] == 1, "dead_at_baseline", "D_0 = 1")
    flag((np.diff(d, axis=1) < 0).any(axis=1), "death_non_monotone", "death indicator decreases over visits")

    # "alive" here means no death recorded up to and including k
    alive = np.cumsum(d, axis=1) == 0
    K1 = cohort.n_decisions
    a = cohort.treatment
    cov = cohort.covariates
    after_death = (~alive[:, :K1]) & (~np.isnan(a) | (~np.isnan(cov)).any(axis=2))
    flag(after_death.any(axis=1), "data_after_death", "treatment or covariates recorded at or after death")
    flag((alive[:, :K1] & np.isnan(a)).any(axis=1), "missing_treatment", "treatment missing at a visit while alive")
    flag((alive[:, :K1] & ~np.isnan(a) & ~np.isin(a, (0.0, 1.0))).any(axis=1),
         "invalid_treatment", "treatment not in {0, 1}")
    surv = alive[:, -1]
    y = cohort.outcome
    flag(surv & np.isnan(y), "missing_outcome", "survivor without outcome")
    flag(~surv & ~np.isnan(y), "outcome_after_death", "decedent with an outcome")
    return out


@dataclass(frozen=True)
class CompositeOutcome:
    """Ranked composite: survivors keep their outcome, decedents get ``sentinel``.

    ``observed`` is False for survivors whose outcome is missing (censored);
    those entries hold NaN and must carry zero weight downstream.
    """
    values: np.ndarray
    sentinel: float
    death_fraction: float
    dead: np.ndarray
    observed: np.ndarray
    higher_is_better: bool = True

    @property
    def tau_ceiling(self) -> float:
        return self.death_fraction

    @property
    def survivors(self) -> np.ndarray:
        return ~self.dead & self.observed

    def __len__(self):
        return len(self.values)

    def original_scale(self, v: float) -> float:
        """Map a composite value back to the outcome's own scale."""
        return v if self.higher_is_better else -v


def default_sentinel(min_outcome: float) -> float:
    return float(min_outcome - 1000.0 * (1.0 + abs(min_outcome)))


def _structural(violations: Sequence[Violation]) -> list[Violation]:
    return [v for v in violations if v.kind != "missing_outcome"]


def build_composite(cohort: LongitudinalCohort, sentinel: Optional[float] = None, *,
                    higher_is_better: bool = True, allow_missing: bool = False) -> CompositeOutcome:
    """Merge death and the clinical outcome into one ranked outcome.

    When ``higher_is_better`` is False outcomes are negated so that death still
    ranks worst; the sentinel is then on the negated scale.
    """
    violations = validate_cohort(cohort)
    structural = _structural(violations)
    if structural:
        v = structural[0]
        raise InvalidCohort(f"{len(structural)} violation(s); first: subject {v.subject}: {v.message}")
    dead = ~cohort.survived
    y = np.asarray(cohort.outcome, dtype=float)
    observed = dead | ~np.isnan(y)
    if not allow_missing and not observed.all():
        i = np.flatnonzero(~observed)[0]
        raise InvalidCohort(f"survivor {cohort.subject_ids[i]} has no outcome")
    y = y if higher_is_better else -y
    surv_y = y[~dead & observed]
    if sentinel is None:
        sentinel = default_sentinel(surv_y.min()) if surv_y.size else -1000.0
    sentinel = float(sentinel)
    if surv_y.size and not sentinel < surv_y.min():
        raise SentinelAboveMinimum(
            f"sentinel {sentinel} is not below the minimum survivor outcome {surv_y.min()}")
    values = np.where(dead, sentinel, y)
    values.setflags(write=False)
    return CompositeOutcome(values=values, sentinel=sentinel, death_fraction=float(dead.mean()),
                            dead=_readonly(dead), observed=_readonly(observed),
                            higher_is_better=higher_is_better)


def check_death_fraction(death_fraction: float, tau: float) -> bool:
    """Warn when the (weighted) death fraction is at least tau. Returns True if warned."""
    if death_fraction >= tau:
        warnings.warn(
            f"death probability {death_fraction:.4f} >= tau={tau}; the quantile may equal the sentinel",
            DeathMassWarning, stacklevel=2)
        return True
    return False


# -- CSV ---------------------------------------------------------------------

REQUIRED_COLUMNS = ("subject_id", "visit", "D", "A", "Y")


def read_cohort_csv(path) -> LongitudinalCohort:
    """Read the long format: one row per subject-visit.

    Columns ``subject_id, visit, D, A, Y`` plus covariates named ``L_*``.
    Rows after a subject's death may be omitted; they are filled as dead.
    """
    try:
        df = pd.read_csv(path, dtype={"subject_id": str}, keep_default_na=True, encoding="utf-8",
                         float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    cols = list(df.columns)
    for c in REQUIRED_COLUMNS:
        if c not in cols:
            raise InputError(f"missing required column '{c}'")
    cov_cols = [c for c in cols if c.startswith("L_")]
    unknown = [c for c in cols if c not in REQUIRED_COLUMNS and c not in cov_cols]
    if unknown:
        raise InputError(f"unexpected column '{unknown[0]}'")
    if df.empty:
        raise InputError("no data rows")
    for c in ("visit", "D"):
        if df[c].isna().any():
            raise InputError(f"column '{c}' has empty fields")
    visits = df["visit"].to_numpy()
    if not np.all(np.equal(np.mod(visits, 1), 0)) or visits.min() < 0:
        raise InputError("column 'visit' must hold non-negative integers")
    df["visit"] = df["visit"].astype(int)
    if df.duplicated(["subject_id", "visit"]).any():
        raise InputError("duplicate (subject_id, visit) rows")

    n_visits = int(df["visit"].max()) + 1
    if n_visits < 2:
        raise InputError("need at least a baseline visit and a final visit")
    K1 = n_visits - 1
    # subjects keep the order of their first row
    inverse, ids = pd.factorize(df["subject_id"])
    ids = np.asarray(ids)
    n, p = len(ids), len(cov_cols)
    v = df["visit"].to_numpy()
    present = np.zeros((n, n_visits), dtype=bool)
    present[inverse, v] = True
    dead = np.full((n, n_visits), -1, dtype=np.int8)
    dead[inverse, v] = df["D"].to_numpy().astype(np.int8)
    # carry death forward into omitted trailing rows
    for k in range(1, n_visits):
        fill = ~present[:, k] & (dead[:, k - 1] == 1)
        dead[fill, k] = 1
    if (dead < 0).any():
        i = np.flatnonzero((dead < 0).any(axis=1))[0]
        raise InvalidCohort(f"subject {ids[i]} is missing visit rows while alive")
    treatment = np.full((n, K1), np.nan)
    covariates = np.full((n, K1, p), np.nan)
    early = v < K1
    treatment[inverse[early], v[early]] = df["A"].to_numpy(dtype=float)[early]
    if p:
        covariates[inverse[early], v[early]] = df[cov_cols].to_numpy(dtype=float)[early]
    final = v == K1
    outcome = np.full(n, np.nan)
    outcome[inverse[final]] = df["Y"].to_numpy(dtype=float)[final]
    return LongitudinalCohort(ids, dead, treatment, covariates, outcome, tuple(cov_cols))


def write_cohort_csv(cohort: LongitudinalCohort, path) -> Path:
    path = Path(path)
    n, nv, K1 = cohort.n_subjects, cohort.n_visits, cohort.n_decisions
    rows = {
        "subject_id": np.repeat(cohort.subject_ids, nv),
        "visit": np.tile(np.arange(nv), n),
        "D": cohort.dead.reshape(-1),
    }
    a = np.full((n, nv), np.nan)
    a[:, :K1] = cohort.treatment
    rows["A"] = a.reshape(-1)
    for j, name in enumerate(cohort.covariate_names):
        c = np.full((n, nv), np.nan)
        c[:, :K1] = cohort.covariates[:, :, j]
        rows[name] = c.reshape(-1)
    y = np.full((n, nv), np.nan)
    y[:, -1] = cohort.outcome
    rows["Y"] = y.reshape(-1)
    df = pd.DataFrame(rows)
    df["D"] = df["D"].astype(int)
    df["A"] = df["A"].astype("Int64")
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    return path
