"""Weighted quantile of the composite outcome.

The estimate is the leftmost sample value at which the estimating function

    psi(q) = N^-1 sum_i w_i (1{y_i <= q} - tau)

becomes nonnegative, i.e. the smallest ``v`` with cumulative normalized weight
at least ``tau``. That value also minimizes the weighted check loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroWeights, LengthMismatch, NaNInput

__all__ = [
    "QuantileSpec",
    "weighted_quantile",
    "weighted_quantile_batch",
    "estimating_equation",
    "check_loss",
    "ROOT_RTOL",
]

# relative slack on the cumulative-weight comparison; absorbs summation
# rounding so that a root where psi is exactly zero is found regardless of
# the scale of the weights
ROOT_RTOL = 1e-10


@dataclass(frozen=True)
class QuantileSpec:
    tau: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


def _as_arrays(values, weights):
    v = np.asarray(getattr(values, "values", values), dtype=float)
    w = np.asarray(getattr(weights, "w", weights), dtype=float)
    if v.shape[-1:] != w.shape[-1:]:
        raise LengthMismatch(f"{v.shape[-1]} values but {w.shape[-1]} weights")
    if np.isnan(v).any() or np.isnan(w).any():
        raise NaNInput("NaN in values or weights")
    if (w < 0).any():
        raise ValueError("weights must be nonnegative")
    return v, w


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def weighted_quantile(values, weights, tau: float) -> float:
    v, w = _as_arrays(values, weights)
    _check_tau(tau)
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    total = cw[-1] if cw.size else 0.0
    if not total > 0:
        raise AllZeroWeights("weights sum to zero")
    i = int(np.searchsorted(cw, tau * total * (1.0 - ROOT_RTOL), side="left"))
    return float(v[order[min(i, cw.size - 1)]])


def weighted_quantile_batch(values, weights, tau: float) -> np.ndarray:
    """Row-wise ``weighted_quantile`` for a ``(B, N)`` weight matrix.

    Rows with zero total weight or NaN weights give NaN.
    """
    v = np.asarray(getattr(values, "values", values), dtype=float)
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    if W.shape[1] != v.shape[0]:
        raise LengthMismatch(f"{v.shape[0]} values but weight rows of length {W.shape[1]}")
    if np.isnan(v).any():
        raise NaNInput("NaN in values")
    _check_tau(tau)
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(W[:, order], axis=1)
    total = cw[:, -1]
    bad = ~(total > 0) | np.isnan(total)
    hit = cw >= (tau * total * (1.0 - ROOT_RTOL))[:, None]
    i = np.argmax(hit, axis=1)
    out = v[order][i]
    out = np.where(bad, np.nan, out)
    return out


def estimating_equation(values, weights, tau: float, q):
    """``psi(q)``; vectorized over ``q``."""
    v, w = _as_arrays(values, weights)
    _check_tau(tau)
    if not w.sum() > 0:
        raise AllZeroWeights("weights sum to zero")
    n = v.size
    q = np.asarray(q, dtype=float)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    cw = np.concatenate([[0.0], np.cumsum(w[order])])
    below = cw[np.searchsorted(sv, q, side="right")]
    out = (below - tau * cw[-1]) / n
    return float(out) if out.ndim == 0 else out


def check_loss(values, weights, tau: float, q):
    """``sum_i w_i rho_tau(y_i - q)`` with ``rho_tau(x) = x (tau - 1{x <= 0})``; vectorized over ``q``."""
    v, w = _as_arrays(values, weights)
    q = np.asarray(q, dtype=float)
    x = v[None, :] - np.atleast_1d(q)[:, None]
    loss = (w[None, :] * x * (tau - (x <= 0))).sum(axis=1)
    return float(loss[0]) if q.ndim == 0 else loss
