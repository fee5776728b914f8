"""Plug-in asymptotic variances and bootstrap percentile intervals."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .cohort import CompositeOutcome, LongitudinalCohort
from .errors import (
    DegenerateDensity,
    NegativeVarianceWarning,
    PipelineFailure,
    SingularInformation,
    SurvQuantError,
)
from .propensity import PropensityModel
from .quantile import weighted_quantile

__all__ = [
    "VarianceEstimate",
    "BootstrapCI",
    "density_at",
    "default_bandwidth",
    "avar_known_ps",
    "avar_estimated_ps",
    "bootstrap_ci",
    "percentile_interval",
    "resample_counts",
]

DENSITY_FLOOR = 1e-12
FAILURE_LIMIT = 0.05
CHUNK = 100


@dataclass(frozen=True)
class VarianceEstimate:
    v_tilde: float
    f_hat: float
    avar_known: float
    bandwidth: float
    n: int
    v_hat: Optional[float] = None
    avar_est: Optional[float] = None
    d_vector: Optional[np.ndarray] = None
    clamped: bool = False

    def se_known(self) -> float:
        return math.sqrt(self.avar_known / self.n)

    def se_est(self) -> float:
        if self.avar_est is None:
            raise ValueError("no estimated-propensity variance available")
        return math.sqrt(self.avar_est / self.n)


@dataclass(frozen=True)
class BootstrapCI:
    lower: float
    upper: float
    level: float
    n_replicates: int
    n_failed: int = 0
    seed: Optional[int] = None
    replicate_estimates: Optional[np.ndarray] = field(default=None, repr=False)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def _survivor_mask(values, survivors):
    if survivors is not None:
        return np.asarray(survivors, dtype=bool)
    if isinstance(values, CompositeOutcome):
        return values.survivors
    return None


def _weighted_sd_iqr(y, w):
    m = np.average(y, weights=w)
    sd = math.sqrt(max(np.average((y - m) ** 2, weights=w), 0.0))
    iqr = weighted_quantile(y, w, 0.75) - weighted_quantile(y, w, 0.25)
    return sd, iqr


def default_bandwidth(y, w) -> float:
    """``0.9 min(sd, IQR / 1.34) n_eff^(-1/5)`` with weighted spread and Kish effective size."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    sd, iqr = _weighted_sd_iqr(y, w)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    n_eff = w.sum() ** 2 / (w ** 2).sum()
    return 0.9 * spread * n_eff ** -0.2


def density_at(values, weights, q: float, bandwidth: Optional[float] = None, *, survivors=None,
               return_bandwidth: bool = False):
    """Weighted Gaussian-kernel estimate of the composite's density at ``q``.

    Only survivor values enter the kernel sum, but the normalization uses the
    total weight, so the result is the density of the continuous part of the
    composite distribution (it integrates to the survival probability).
    """
    v = np.asarray(getattr(values, "values", values), dtype=float)
    w = np.asarray(getattr(weights, "w", weights), dtype=float)
    mask = _survivor_mask(values, survivors)
    total = w.sum()
    if not total > 0:
        raise DegenerateDensity("weights sum to zero")
    if mask is not None:
        v, w = v[mask], w[mask]
    keep = w > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        raise DegenerateDensity("all weight sits on the death sentinel")
    h = default_bandwidth(v, w) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise DegenerateDensity("zero spread among survivor outcomes; bandwidth is 0")
    z = (q - v) / h
    f = float(np.sum(w * np.exp(-0.5 * z * z)) / (math.sqrt(2.0 * math.pi) * h * total))
    if f <= DENSITY_FLOOR:
        raise DegenerateDensity(f"density estimate {f:.3g} at q={q} is numerically zero")
    return (f, h) if return_bandwidth else f


def _normalized(w):
    w = np.asarray(w, dtype=float)
    return w * (w.size / w.sum())


def avar_known_ps(composite, weights, tau: float, q_hat: float,
                  bandwidth: Optional[float] = None, *, survivors=None) -> VarianceEstimate:
    """``V~ / f^2`` with ``V~ = mean[(w_i (1{y_i <= q} - tau))^2]``.

    Weights are rescaled to mean one first, so the value does not depend on
    the overall weight scale.
    """
    v = np.asarray(getattr(composite, "values", composite), dtype=float)
    w = _normalized(getattr(weights, "w", weights))
    psi = w * ((v <= q_hat) - tau)
    v_tilde = float(np.mean(psi ** 2))
    f, h = density_at(composite, w, q_hat, bandwidth, survivors=survivors, return_bandwidth=True)
    return VarianceEstimate(v_tilde=v_tilde, f_hat=f, avar_known=v_tilde / f ** 2, bandwidth=h, n=v.size)


def avar_estimated_ps(composite, design, treatment, model: PropensityModel, a: int, tau: float,
                      q_hat: float, bandwidth: Optional[float] = None, *, survivors=None) -> VarianceEstimate:
    """Plug-in variance when the propensity score is estimated by ``model``.

    ``V = V~ - D' I^-1 D`` where ``I`` is the per-subject Fisher information
    of the logistic fit and ``D = mean[d/dtheta w_i (1{y_i <= q} - tau)]``.
    For ``a = 1`` that derivative is ``x 1{A=1} (1 - 1/p)``; for ``a = 0`` it is
    ``x 1{A=0} (1/(1-p) - 1)``.
    """
    v = np.asarray(getattr(composite, "values", composite), dtype=float)
    X = np.asarray(design, dtype=float)
    A = np.asarray(treatment, dtype=float)
    n = v.size
    if X.shape[0] != n or A.shape != (n,):
        raise ValueError("design and treatment must have one row per subject")
    p1 = expit(X @ model.theta)
    arm = A == a
    pa = p1 if a == 1 else 1.0 - p1
    w = np.where(arm, 1.0 / pa, 0.0)
    base = avar_known_ps(composite, w, tau, q_hat, bandwidth, survivors=survivors)
    g = (v <= q_hat) - tau
    if a == 1:
        dw = np.where(arm, 1.0 - 1.0 / p1, 0.0)
    else:
        dw = np.where(arm, 1.0 / (1.0 - p1) - 1.0, 0.0)
    d = (X * (dw * g)[:, None]).mean(axis=0)
    info = model.fisher_info / model.n_obs
    try:
        if np.linalg.cond(info) > 1e12:
            raise np.linalg.LinAlgError
        correction = float(d @ np.linalg.solve(info, d))
    except np.linalg.LinAlgError:
        raise SingularInformation("Fisher information is not invertible") from None
    v_hat = base.v_tilde - correction
    clamped = False
    if v_hat < 0:
        warnings.warn(f"plug-in variance {v_hat:.3g} < 0 clamped to 0", NegativeVarianceWarning, stacklevel=2)
        v_hat, clamped = 0.0, True
    return VarianceEstimate(v_tilde=base.v_tilde, f_hat=base.f_hat, avar_known=base.avar_known,
                            bandwidth=base.bandwidth, n=n, v_hat=v_hat, avar_est=v_hat / base.f_hat ** 2,
                            d_vector=d, clamped=clamped)


# -- bootstrap -------------------------------------------------------------------

def percentile_interval(estimates, level: float = 0.95) -> tuple[float, float]:
    """Percentile interval from the ``ceil(B p)``-th order statistics."""
    est = np.sort(np.asarray(estimates, dtype=float))
    B = est.size
    if B == 0:
        raise PipelineFailure("no bootstrap replicates")
    alpha = 1.0 - level
    lo = max(math.ceil(B * alpha / 2.0 - 1e-9), 1)
    hi = max(math.ceil(B * (1.0 - alpha / 2.0) - 1e-9), 1)
    return float(est[lo - 1]), float(est[min(hi, B) - 1])


def resample_counts(idx: np.ndarray, n: int) -> np.ndarray:
    """Turn a ``(b, n)`` matrix of resampled indices into per-subject multiplicities."""
    b = idx.shape[0]
    flat = (idx + (np.arange(b) * n)[:, None]).reshape(-1)
    return np.bincount(flat, minlength=b * n).reshape(b, n).astype(float)


def _chunk_indices(seed, n, B):
    """Resample indices in fixed-size chunks, each with its own spawned stream."""
    n_chunks = -(-B // CHUNK)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(n_chunks)
    for c, ss in enumerate(streams):
        size = min(CHUNK, B - c * CHUNK)
        yield c, ss, size


def bootstrap_ci(cohort, pipeline: Callable, B: int = 2000, level: float = 0.95, seed: int = 0, *,
                 workers: int = 1, keep_replicates: bool = False) -> BootstrapCI:
    """Nonparametric bootstrap over subjects with a percentile interval.

    ``pipeline(resampled_cohort) -> float`` re-runs the whole estimation. If it
    also exposes ``pipeline.batch(cohort, counts) -> array`` (multiplicity
    matrix ``(b, n)``), that vectorized path is used on the same resamples.
    Replicates are drawn chunk by chunk from streams spawned off ``seed``, so
    the result does not depend on ``workers``.
    """
    n = cohort.n_subjects if isinstance(cohort, LongitudinalCohort) else len(cohort)
    batch = getattr(pipeline, "batch", None)

    def run_chunk(args):
        _c, ss, size = args
        idx = np.random.default_rng(ss).integers(0, n, size=(size, n))
        if batch is not None:
            return np.asarray(batch(cohort, resample_counts(idx, n)), dtype=float)
        out = np.empty(size)
        for r in range(size):
            try:
                out[r] = float(pipeline(cohort.take(idx[r])))
            except (SurvQuantError, ValueError, ArithmeticError, np.linalg.LinAlgError):
                out[r] = np.nan
        return out

    chunks = list(_chunk_indices(seed, n, B))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    est = np.concatenate(parts)
    failed = ~np.isfinite(est)
    n_failed = int(failed.sum())
    if n_failed > FAILURE_LIMIT * B:
        raise PipelineFailure(f"{n_failed} of {B} bootstrap replicates failed")
    lo, hi = percentile_interval(est[~failed], level)
    return BootstrapCI(lower=lo, upper=hi, level=level, n_replicates=B, n_failed=n_failed,
                       seed=seed if isinstance(seed, int) else None,
                       replicate_estimates=est if keep_replicates else None)
