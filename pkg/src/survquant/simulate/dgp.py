"""Data-generating processes for the point and two-visit simulation settings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..cohort import LongitudinalCohort

__all__ = ["PointDGP", "TimeVaryingDGP", "gen_point", "gen_time_varying", "as_generator"]


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PointDGP:
    """Binary confounder ``L``, binary treatment ``A``, death ``D``, outcome ``Y``.

    ``p_death[l][a]`` is ``P(D = 1 | L = l, A = a)``. The propensities and the
    treated-arm death probabilities are not printed as numbers in the source
    material; (0.3, 0.7) and (0.05, 0.08) are the unique values consistent with
    the treated-arm mixture masses 0.38 / 0.552 and with the unweighted-median
    biases -0.970 / 0.669 (see ``truth.unweighted_point_limit``).
    """
    p_L1: float = 0.6
    p_A1_given_L: tuple = (0.3, 0.7)
    p_death: tuple = ((0.10, 0.05), (0.16, 0.08))
    beta_A: float = -0.9
    beta_L: float = 3.0
    noise_sd: float = 1.0

    def __post_init__(self):
        probs = [self.p_L1, *self.p_A1_given_L, *np.ravel(self.p_death)]
        if not all(0.0 < p < 1.0 for p in probs):
            raise ValueError("all DGP probabilities must lie in (0, 1)")

    n_decisions = 1

    def death_probability(self, a: int) -> float:
        pd = np.asarray(self.p_death)
        return float((1 - self.p_L1) * pd[0, a] + self.p_L1 * pd[1, a])

    def propensity(self, cohort: LongitudinalCohort) -> np.ndarray:
        """True ``P(A_0 = 1 | L_0)``, shape ``(N, 1)``."""
        L = cohort.covariates[:, 0, 0]
        return np.where(L == 1, self.p_A1_given_L[1], self.p_A1_given_L[0])[:, None]


@dataclass(frozen=True)
class TimeVaryingDGP:
    """Two decision points (visits 0 and 1), deaths in (0, 1] and (1, 2], outcome at visit 2.

    Logit coefficient tuples list the intercept first, then the terms in the
    order of the argument names.
    """
    p_L0: float = 0.6
    p_A0_given_L0: tuple = (0.3, 0.7)
    death1: tuple = (-2.5, 0.5, -0.6)          # L0, A0
    cov1: tuple = (-1.0, 2.0, -1.0)            # L0, A0
    treat1: tuple = (-2.5, 0.8, 3.0, 1.0)      # L0, A0, L1
    death2: tuple = (-3.0, 0.3, -0.4, 0.5, -0.4)  # L0, A0, L1, A1
    outcome: tuple = (2.0, -0.4, 2.2, -0.4)    # L0, A0, L1, A1 (no intercept)
    noise_sd: float = 1.0

    n_decisions = 2

    def p_death1(self, l0, a0):
        b = self.death1
        return expit(b[0] + b[1] * l0 + b[2] * a0)

    def p_cov1(self, l0, a0):
        b = self.cov1
        return expit(b[0] + b[1] * l0 + b[2] * a0)

    def p_treat1(self, l0, a0, l1):
        b = self.treat1
        return expit(b[0] + b[1] * l0 + b[2] * a0 + b[3] * l1)

    def p_death2(self, l0, a0, l1, a1):
        b = self.death2
        return expit(b[0] + b[1] * l0 + b[2] * a0 + b[3] * l1 + b[4] * a1)

    def mean_outcome(self, l0, a0, l1, a1):
        b = self.outcome
        return b[0] * l0 + b[1] * a0 + b[2] * l1 + b[3] * a1

    def propensity(self, cohort: LongitudinalCohort) -> np.ndarray:
        """True ``P(A_k = 1 | history)``, shape ``(N, 2)``; NaN where undefined."""
        L0 = cohort.covariates[:, 0, 0]
        A0 = cohort.treatment[:, 0]
        L1 = cohort.covariates[:, 1, 0]
        p0 = np.where(L0 == 1, self.p_A0_given_L0[1], self.p_A0_given_L0[0])
        alive1 = cohort.alive(1)
        p1 = np.full(cohort.n_subjects, np.nan)
        p1[alive1] = self.p_treat1(L0[alive1], A0[alive1], L1[alive1])
        return np.column_stack([p0, p1])


def gen_point(n: int, dgp: PointDGP = PointDGP(), seed=None, regimen=None) -> LongitudinalCohort:
    """Simulate ``n`` iid subjects; ``regimen`` forces ``A`` for every subject."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = as_generator(seed)
    u_l, u_a, u_d = rng.random(n), rng.random(n), rng.random(n)
    eps = rng.standard_normal(n)
    L = (u_l < dgp.p_L1).astype(int)
    if regimen is None:
        pa = np.where(L == 1, dgp.p_A1_given_L[1], dgp.p_A1_given_L[0])
        A = (u_a < pa).astype(int)
    else:
        A = np.full(n, int(np.atleast_1d(regimen)[0]))
    pd = np.asarray(dgp.p_death)[L, A]
    D = (u_d < pd).astype(np.int8)
    Y = np.where(D == 0, dgp.beta_A * A + dgp.beta_L * L + dgp.noise_sd * eps, np.nan)
    dead = np.column_stack([np.zeros(n, dtype=np.int8), D])
    return LongitudinalCohort(np.arange(n), dead, A[:, None].astype(float),
                              L[:, None, None].astype(float), Y, ("L_1",))


def gen_time_varying(n: int, dgp: TimeVaryingDGP = TimeVaryingDGP(), seed=None,
                     regimen=None) -> LongitudinalCohort:
    """Simulate the two-visit setting; ``regimen`` forces ``(A_0, A_1)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = as_generator(seed)
    u = rng.random((6, n))
    eps = rng.standard_normal(n)
    L0 = (u[0] < dgp.p_L0).astype(int)
    if regimen is None:
        A0 = (u[1] < np.where(L0 == 1, dgp.p_A0_given_L0[1], dgp.p_A0_given_L0[0])).astype(int)
    else:
        A0 = np.full(n, int(regimen[0]))
    D1 = u[2] < dgp.p_death1(L0, A0)
    L1 = (u[3] < dgp.p_cov1(L0, A0)).astype(int)
    if regimen is None:
        A1 = (u[4] < dgp.p_treat1(L0, A0, L1)).astype(int)
    else:
        A1 = np.full(n, int(regimen[1]))
    D2 = D1 | (u[5] < dgp.p_death2(L0, A0, L1, A1))
    Y = np.where(D2, np.nan, dgp.mean_outcome(L0, A0, L1, A1) + dgp.noise_sd * eps)
    dead = np.column_stack([np.zeros(n), D1, D2]).astype(np.int8)
    treatment = np.column_stack([A0, np.where(D1, np.nan, A1)]).astype(float)
    cov = np.column_stack([L0, np.where(D1, np.nan, L1)]).astype(float)[:, :, None]
    return LongitudinalCohort(np.arange(n), dead, treatment, cov, Y, ("L_1",))
