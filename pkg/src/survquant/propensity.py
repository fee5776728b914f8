"""Logistic propensity-score models fit by damped Newton iteration."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, NonConvergence, RankDeficient, Separation

__all__ = [
    "PropensityModel",
    "fit_logistic",
    "fit_logistic_batch",
    "predict",
    "score_contributions",
    "log_likelihood",
]

SCORE_TOL = 1e-8
DECREMENT_TOL = 1e-10
SEPARATION_BOUND = 50.0
MAX_HALVINGS = 20
# a Newton step longer than this when the likelihood has stopped improving
# means the coefficients are running off along a separating direction
STEP_TOL = 1e-4


@dataclass(frozen=True)
class PropensityModel:
    theta: np.ndarray
    converged: bool
    n_iter: int
    fisher_info: np.ndarray
    design_spec: tuple
    n_obs: float

    def __post_init__(self):
        for name in ("theta", "fisher_info"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def prob_treated(self, design) -> np.ndarray:
        """P(A = 1 | x) for each row of ``design``."""
        x = np.asarray(design, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"design has {x.shape[-1]} columns, model expects {self.dim}")
        return expit(x @ self.theta)

    def prob(self, design, target) -> np.ndarray:
        """P(A = target | x), ``target`` scalar or per-row."""
        p1 = self.prob_treated(design)
        return np.where(np.asarray(target) == 1, p1, 1.0 - p1)


def predict(model: PropensityModel, x, target: int) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("predict takes a single design row; use model.prob for matrices")
    return float(model.prob(x, target))


def log_likelihood(theta, design, response, obs_weights=None) -> float:
    eta = design @ theta
    ll = response * eta - np.logaddexp(0.0, eta)
    if obs_weights is not None:
        ll = ll * obs_weights
    return float(ll.sum())


def _check_inputs(design, response, obs_weights):
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design has {X.shape[0]} rows but response has {y.shape[0]}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("response must be binary 0/1")
    if obs_weights is None:
        w = None
    else:
        w = np.asarray(obs_weights, dtype=float)
        if w.shape != y.shape:
            raise DimensionMismatch("obs_weights length does not match response")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("obs_weights must be finite and nonnegative")
    if not np.isfinite(X).all():
        raise ValueError("design contains non-finite values")
    return X, y, w


def fit_logistic(design, response, obs_weights=None, *, design_spec: Optional[Sequence[str]] = None,
                 max_iter: int = 100, ridge: float = 0.0) -> PropensityModel:
    """Maximum-likelihood logistic regression.

    Newton steps are halved (up to 20 times) until the log-likelihood does not
    decrease. ``ridge`` adds ``ridge * ||theta||^2 / 2`` to the objective and is
    meant for diagnostics only.

    Raises ``RankDeficient`` for collinear designs, ``Separation`` when the
    coefficients run past ``|theta| > 50`` without the score vanishing, and
    ``NonConvergence`` after ``max_iter`` iterations.
    """
    X, y, w = _check_inputs(design, response, obs_weights)
    n, p = X.shape
    support = X if w is None else X[w > 0]
    if support.shape[0] < p or np.linalg.matrix_rank(support) < p:
        raise RankDeficient(f"design of rank {np.linalg.matrix_rank(support)} < {p} columns")
    ww = np.ones(n) if w is None else w

    def objective(t):
        return log_likelihood(t, X, y, w) - 0.5 * ridge * float(t @ t)

    theta = np.zeros(p)
    ll = objective(theta)
    converged = False
    steps = 0
    for _ in range(max_iter):
        prob = expit(X @ theta)
        score = X.T @ (ww * (y - prob)) - ridge * theta
        hess = (X * (ww * prob * (1.0 - prob))[:, None]).T @ X + ridge * np.eye(p)
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            raise Separation("Hessian became singular; fitted probabilities reached 0 or 1") from None
        # a tiny score with a long Newton step is a flat, diverging likelihood, not an optimum
        if np.max(np.abs(step)) < STEP_TOL and (
                np.max(np.abs(score)) < SCORE_TOL or float(score @ step) < DECREMENT_TOL):
            theta = theta + step
            converged = True
            break
        steps += 1
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + t * step
            ll_new = objective(cand)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            # no ascent possible at machine precision
            if np.max(np.abs(step)) >= STEP_TOL:
                raise Separation("likelihood is flat along a diverging direction; treatment is separated")
            converged = True
            break
        theta, ll = cand, ll_new
        if np.max(np.abs(theta)) > SEPARATION_BOUND:
            raise Separation(
                f"coefficients diverge (|theta|_inf = {np.max(np.abs(theta)):.1f}); "
                "treatment is (quasi-)separated by the covariates")
    if not converged:
        raise NonConvergence(f"no convergence after {max_iter} Newton iterations")
    if np.max(np.abs(theta)) > SEPARATION_BOUND:
        raise Separation("coefficients beyond the separation bound")
    prob = expit(X @ theta)
    fisher = (X * (ww * prob * (1.0 - prob))[:, None]).T @ X
    fisher = 0.5 * (fisher + fisher.T)
    spec = tuple(design_spec) if design_spec is not None else tuple(f"x{j}" for j in range(p))
    if len(spec) != p:
        raise DimensionMismatch("design_spec length does not match design columns")
    return PropensityModel(theta=theta, converged=True, n_iter=steps, fisher_info=fisher,
                           design_spec=spec, n_obs=float(ww.sum()))


def score_contributions(model: PropensityModel, design, response) -> np.ndarray:
    """Per-subject partial score ``x_i (A_i - p_i)``."""
    X, y, _ = _check_inputs(design, response, None)
    return X * (y - model.prob_treated(X))[:, None]


def fit_logistic_batch(design, response, counts, *, max_iter: int = 100):
    """Fit one logistic regression per row of ``counts`` (frequency weights).

    Returns ``(theta, ok)`` with ``theta`` of shape ``(B, p)``; rows whose fit
    separated, failed to converge or lost rank have ``ok = False`` and NaN theta.

    Identical (design row, response) patterns are pooled first, so with
    discrete covariates each Newton step costs O(B * patterns).
    """
    X, y, _ = _check_inputs(design, response, None)
    C = np.atleast_2d(np.asarray(counts, dtype=float))
    if C.shape[1] != X.shape[0]:
        raise DimensionMismatch("counts columns must match design rows")
    B, p = C.shape[0], X.shape[1]
    pattern, inverse = np.unique(np.column_stack([X, y]), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    G = pattern.shape[0]
    Xg, yg = pattern[:, :p], pattern[:, p]
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(G))
    Cg = np.add.reduceat(C[:, order], starts, axis=1)  # pooled counts (B, G)
    iu = np.triu_indices(p)
    XX = Xg[:, iu[0]] * Xg[:, iu[1]]  # (G, p(p+1)/2)

    theta = np.zeros((B, p))
    active = np.ones(B, dtype=bool)
    ok = np.zeros(B, dtype=bool)

    def loglik(th, rows):
        eta = th @ Xg.T
        return (Cg[rows] * (yg * eta - np.logaddexp(0.0, eta))).sum(axis=1)

    ll = loglik(theta, np.arange(B))
    for _ in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        th = theta[rows]
        prob = expit(th @ Xg.T)
        cg = Cg[rows]
        score = (cg * (yg - prob)) @ Xg
        hflat = (cg * prob * (1.0 - prob)) @ XX
        hess = np.empty((rows.size, p, p))
        hess[:, iu[0], iu[1]] = hflat
        hess[:, iu[1], iu[0]] = hflat
        good = np.linalg.cond(hess) < 1e14
        bad = rows[~good]
        active[bad] = False
        theta[bad] = np.nan
        rows, th, score, hess = rows[good], th[good], score[good], hess[good]
        if rows.size == 0:
            continue
        step = np.linalg.solve(hess, score[..., None])[..., 0]
        dec = np.einsum("bi,bi->b", score, step)
        small = (np.max(np.abs(step), axis=1) < STEP_TOL) & (
            (dec < DECREMENT_TOL) | (np.max(np.abs(score), axis=1) < SCORE_TOL))
        theta[rows[small]] = th[small] + step[small]
        ok[rows[small]] = True
        active[rows[small]] = False
        rows, th, step = rows[~small], th[~small], step[~small]
        if rows.size == 0:
            continue
        t = np.ones(rows.size)
        ll0 = ll[rows]
        accepted = np.zeros(rows.size, dtype=bool)
        new_ll = np.empty(rows.size)
        for _h in range(MAX_HALVINGS + 1):
            pend = ~accepted
            cand = th[pend] + t[pend, None] * step[pend]
            cl = loglik(cand, rows[pend])
            up = cl >= ll0[pend]
            idx = np.flatnonzero(pend)[up]
            accepted[idx] = True
            new_ll[idx] = cl[up]
            if accepted.all():
                break
            t[~accepted] *= 0.5
        stuck = ~accepted
        # no ascent left: optimum if the step is short, separation otherwise
        at_opt = np.max(np.abs(step), axis=1) < STEP_TOL
        ok[rows[stuck & at_opt]] = True
        active[rows[stuck]] = False
        acc = rows[accepted]
        theta[acc] = th[accepted] + t[accepted, None] * step[accepted]
        ll[acc] = new_ll[accepted]
        diverged = acc[np.max(np.abs(theta[acc]), axis=1) > SEPARATION_BOUND]
        active[diverged] = False
        ok[diverged] = False
        theta[diverged] = np.nan
    ok &= ~active
    ok &= np.isfinite(theta).all(axis=1)
    theta[~ok] = np.nan
    return theta, ok
