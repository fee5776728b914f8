"""Exact enumeration oracle for the weighted estimating equation on small discrete models.

A ``DiscreteInstance`` fully specifies the joint law of baseline covariate
``L0``, treatment ``A0``, death ``D1``, and (for two decisions) covariate
``L1``, treatment ``A1``, death ``D2``, then a discrete outcome ``Y`` for
survivors. Everything is enumerated path by path, so both the weighted
estimating function and the counterfactual quantile are exact up to
floating-point summation (``math.fsum``).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np

from .cohort import LongitudinalCohort
from .errors import DeathMassWarning, InvalidTables

__all__ = [
    "DiscreteInstance",
    "random_instance",
    "lhs_weighted_expectation",
    "counterfactual_distribution",
    "counterfactual_quantile",
    "crossing_point",
    "sample_instance",
    "saturated_design",
    "ROW_TOL",
]

ROW_TOL = 1e-12
MAX_SUPPORT = 4


def _arr(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class DiscreteInstance:
    """Probability tables; ``K`` is 0 (one decision) or 1 (two decisions).

    ``p_L0[l0]``, ``p_A0[l0] = P(A0=1|l0)``, ``p_D1[l0, a0]``; for ``K = 1``
    also ``p_L1[l0, a0, l1]``, ``p_A1[l0, a0, l1]``, ``p_D2[l0, a0, l1, a1]``.
    ``y_probs`` has one row per terminal history (``(l0, a0)`` or
    ``(l0, a0, l1, a1)``) over the shared support ``y_values``.
    """
    K: int
    p_L0: np.ndarray
    p_A0: np.ndarray
    p_D1: np.ndarray
    y_values: np.ndarray
    y_probs: np.ndarray
    sentinel: float
    p_L1: Optional[np.ndarray] = None
    p_A1: Optional[np.ndarray] = None
    p_D2: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("p_L0", "p_A0", "p_D1", "y_values", "y_probs", "p_L1", "p_A1", "p_D2"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _arr(v))
        validate_instance(self)

    @property
    def n_decisions(self) -> int:
        return self.K + 1

    def to_dict(self) -> dict:
        d = {"K": self.K, "sentinel": self.sentinel}
        for name in ("p_L0", "p_A0", "p_D1", "y_values", "y_probs", "p_L1", "p_A1", "p_D2"):
            v = getattr(self, name)
            d[name] = None if v is None else v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteInstance":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "DiscreteInstance":
        return cls.from_dict(json.loads(s))


def validate_instance(inst: DiscreteInstance) -> None:
    def rows_sum(a, what):
        if np.any(a < 0) or np.any(np.abs(a.sum(axis=-1) - 1.0) > ROW_TOL):
            raise InvalidTables(f"{what}: rows must be nonnegative and sum to 1")

    def in_unit(a, what, open_=False):
        ok = (a > 0) & (a < 1) if open_ else (a >= 0) & (a <= 1)
        if not ok.all():
            raise InvalidTables(f"{what}: probabilities must lie in {'(0, 1)' if open_ else '[0, 1]'}")

    if inst.K not in (0, 1):
        raise InvalidTables("K must be 0 or 1")
    s0 = inst.p_L0.shape[0]
    m = inst.y_values.shape[0]
    if s0 > MAX_SUPPORT or m > MAX_SUPPORT:
        raise InvalidTables(f"supports are capped at {MAX_SUPPORT}")
    rows_sum(inst.p_L0, "p_L0")
    if inst.p_A0.shape != (s0,) or inst.p_D1.shape != (s0, 2):
        raise InvalidTables("p_A0 / p_D1 have the wrong shape")
    in_unit(inst.p_A0, "p_A0", open_=True)
    in_unit(inst.p_D1, "p_D1")
    if inst.K == 0:
        term = (s0, 2)
    else:
        if inst.p_L1 is None or inst.p_A1 is None or inst.p_D2 is None:
            raise InvalidTables("K = 1 needs p_L1, p_A1 and p_D2")
        s1 = inst.p_L1.shape[-1]
        if s1 > MAX_SUPPORT or inst.p_L1.shape != (s0, 2, s1):
            raise InvalidTables("p_L1 has the wrong shape")
        rows_sum(inst.p_L1, "p_L1")
        if inst.p_A1.shape != (s0, 2, s1) or inst.p_D2.shape != (s0, 2, s1, 2):
            raise InvalidTables("p_A1 / p_D2 have the wrong shape")
        in_unit(inst.p_A1, "p_A1", open_=True)
        in_unit(inst.p_D2, "p_D2")
        term = (s0, 2, s1, 2)
    if inst.y_probs.shape != term + (m,):
        raise InvalidTables(f"y_probs must have shape {term + (m,)}")
    rows_sum(inst.y_probs, "y_probs")
    if not inst.sentinel < inst.y_values.min():
        raise InvalidTables("sentinel must lie below every outcome value")


def _bern(p, x):
    return p if x == 1 else 1.0 - p


def _paths(inst: DiscreteInstance, forced=None):
    """Yield ``(prob, treatments, treatment_probs, value)`` for every path.

    ``treatments`` and ``treatment_probs`` (``P(A_k = 1 | history)``) list
    only the decisions made while alive. With ``forced`` every treatment is
    set to the regimen (the potential-outcome world).
    """
    s0 = inst.p_L0.shape[0]
    ys = inst.y_values
    for l0, a0 in product(range(s0), (0, 1)):
        pa0 = inst.p_A0[l0]
        p = inst.p_L0[l0] * (float(forced[0] == a0) if forced else _bern(pa0, a0))
        if p == 0:
            continue
        d1 = inst.p_D1[l0, a0]
        yield p * d1, (a0,), (pa0,), inst.sentinel
        if inst.K == 0:
            for j, y in enumerate(ys):
                yield p * (1 - d1) * inst.y_probs[l0, a0, j], (a0,), (pa0,), float(y)
            continue
        for l1, a1 in product(range(inst.p_L1.shape[-1]), (0, 1)):
            pa1 = inst.p_A1[l0, a0, l1]
            q = p * (1 - d1) * inst.p_L1[l0, a0, l1] * (float(forced[1] == a1) if forced else _bern(pa1, a1))
            if q == 0:
                continue
            d2 = inst.p_D2[l0, a0, l1, a1]
            yield q * d2, (a0, a1), (pa0, pa1), inst.sentinel
            for j, y in enumerate(ys):
                yield q * (1 - d2) * inst.y_probs[l0, a0, l1, a1, j], (a0, a1), (pa0, pa1), float(y)


def _regimen(inst, regimen):
    reg = tuple(int(a) for a in np.atleast_1d(regimen))
    if len(reg) != inst.n_decisions or any(a not in (0, 1) for a in reg):
        raise ValueError(f"regimen must be {inst.n_decisions} binary treatments")
    return reg


def lhs_weighted_expectation(inst: DiscreteInstance, regimen, q, tau: float):
    """``E[1{A follows regimen while alive} / prod_k P(A_k = a_k | H_k) * (1{Y~ <= q} - tau)]``.

    The product runs over the decisions made while alive. Vectorized over ``q``.
    """
    reg = _regimen(inst, regimen)
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    terms = []
    for prob, treat, ptreat, value in _paths(inst):
        if prob == 0 or any(a != r for a, r in zip(treat, reg)):
            continue
        den = math.prod(_bern(p, r) for p, r in zip(ptreat, reg))
        terms.append((prob / den, value))
    out = np.array([math.fsum(w * ((v <= x) - tau) for w, v in terms) for x in qs])
    return float(out[0]) if np.ndim(q) == 0 else out


def counterfactual_distribution(inst: DiscreteInstance, regimen) -> tuple[np.ndarray, np.ndarray]:
    """Atoms and masses of the composite outcome under the forced regimen."""
    reg = _regimen(inst, regimen)
    mass: dict[float, list] = {}
    for prob, _t, _p, value in _paths(inst, forced=reg):
        if prob > 0:
            mass.setdefault(value, []).append(prob)
    atoms = np.array(sorted(mass))
    return atoms, np.array([math.fsum(mass[a]) for a in atoms])


def counterfactual_quantile(inst: DiscreteInstance, regimen, tau: float) -> float:
    """``inf{y : F(y) >= tau}`` for the forced-regimen composite outcome.

    Returns the sentinel (with a ``DeathMassWarning``) when death alone
    already carries mass ``tau``.
    """
    atoms, masses = counterfactual_distribution(inst, regimen)
    cdf = np.array([math.fsum(masses[: i + 1]) for i in range(atoms.size)])
    i = int(np.argmax(cdf >= tau - ROW_TOL))
    if atoms[i] == inst.sentinel:
        warnings.warn(f"death mass {masses[0]:.4f} reaches tau={tau}; the quantile is the sentinel",
                      DeathMassWarning, stacklevel=2)
    return float(atoms[i])


def crossing_point(inst: DiscreteInstance, regimen, tau: float) -> float:
    """Leftmost atom at which the weighted estimating function becomes nonnegative."""
    atoms = np.unique(np.concatenate([[inst.sentinel], inst.y_values]))
    psi = lhs_weighted_expectation(inst, regimen, atoms, tau)
    hit = psi >= -ROW_TOL
    if not hit.any():
        raise InvalidTables("estimating function never crosses zero")
    return float(atoms[int(np.argmax(hit))])


def random_instance(rng, K: int = 0, max_support: int = MAX_SUPPORT) -> DiscreteInstance:
    """Random valid instance with supports of size 2..``max_support``."""
    rng = np.random.default_rng(rng)
    s0 = int(rng.integers(2, max_support + 1))
    m = int(rng.integers(2, max_support + 1))
    y_values = np.sort(rng.choice(np.arange(-20, 21), size=m, replace=False) / 4.0)
    kw = dict(K=K, p_L0=rng.dirichlet(np.ones(s0)), p_A0=rng.uniform(0.05, 0.95, s0),
              p_D1=rng.uniform(0.0, 0.3, (s0, 2)), y_values=y_values, sentinel=float(y_values[0] - 10.0))
    if K == 0:
        kw["y_probs"] = rng.dirichlet(np.ones(m), (s0, 2))
    else:
        s1 = int(rng.integers(2, max_support + 1))
        kw["p_L1"] = rng.dirichlet(np.ones(s1), (s0, 2))
        kw["p_A1"] = rng.uniform(0.05, 0.95, (s0, 2, s1))
        kw["p_D2"] = rng.uniform(0.0, 0.3, (s0, 2, s1, 2))
        kw["y_probs"] = rng.dirichlet(np.ones(m), (s0, 2, s1, 2))
    return DiscreteInstance(**kw)


def sample_instance(inst: DiscreteInstance, n: int, seed=None, jitter: float = 0.0) -> LongitudinalCohort:
    """Draw ``n`` subjects; covariates are the level codes of ``L0`` (and ``L1``).

    ``jitter > 0`` adds ``N(0, jitter^2)`` noise to survivor outcomes so the
    outcome has a density.
    """
    rng = np.random.default_rng(seed)

    def draw(p):  # categorical draw from the last axis of p, one per row
        c = np.cumsum(p, axis=-1)
        return (rng.random(p.shape[0])[:, None] > c[:, :-1]).sum(axis=1)

    L0 = draw(np.broadcast_to(inst.p_L0, (n, inst.p_L0.size)))
    A0 = (rng.random(n) < inst.p_A0[L0]).astype(int)
    D1 = rng.random(n) < inst.p_D1[L0, A0]
    if inst.K == 0:
        dead = np.column_stack([np.zeros(n), D1]).astype(np.int8)
        yj = draw(inst.y_probs[L0, A0])
        treat = A0[:, None].astype(float)
        cov = L0[:, None, None].astype(float)
        died = D1
    else:
        L1 = draw(inst.p_L1[L0, A0])
        A1 = (rng.random(n) < inst.p_A1[L0, A0, L1]).astype(int)
        D2 = D1 | (rng.random(n) < inst.p_D2[L0, A0, L1, A1])
        yj = draw(inst.y_probs[L0, A0, L1, A1])
        dead = np.column_stack([np.zeros(n), D1, D2]).astype(np.int8)
        treat = np.column_stack([A0, np.where(D1, np.nan, A1)]).astype(float)
        cov = np.column_stack([L0, np.where(D1, np.nan, L1)]).astype(float)[:, :, None]
        died = D2
    y = inst.y_values[yj] + (jitter * rng.standard_normal(n) if jitter > 0 else 0.0)
    y = np.where(died, np.nan, y)
    return LongitudinalCohort(np.arange(n), dead, treat, cov, y, ("L_1",))


def saturated_design(inst: DiscreteInstance):
    """Design callable with one indicator per covariate history, so the logistic fits are saturated."""
    s0 = inst.p_L0.shape[0]
    s1 = inst.p_L1.shape[-1] if inst.K == 1 else 0

    def design(cohort: LongitudinalCohort, k: int):
        L0 = np.nan_to_num(cohort.covariates[:, 0, 0], nan=-1).astype(int)
        if k == 0:
            X = (L0[:, None] == np.arange(s0)).astype(float)
            return X, [f"L0=={i}" for i in range(s0)]
        L1 = np.nan_to_num(cohort.covariates[:, 1, 0], nan=-1).astype(int)
        cell = L0 * s1 + L1
        X = (cell[:, None] == np.arange(s0 * s1)).astype(float)
        return X, [f"L0=={i // s1},L1=={i % s1}" for i in range(s0 * s1)]

    return design
