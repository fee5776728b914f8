"""Exact population quantiles of the composite outcome for the simulation DGPs.

Under a forced regimen the composite outcome is a point mass at the death
sentinel plus a finite mixture of normals, one per covariate path. The
quantile solves ``death_mass + sum_j m_j Phi((y - mu_j) / sd_j) = tau``.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import ndtr

from ..errors import BracketFailure, DeathMassExceedsTau
from .dgp import PointDGP, TimeVaryingDGP

__all__ = [
    "MixtureTruthSpec",
    "analytic_truth",
    "mixture_cdf",
    "point_truth_spec",
    "time_varying_truth_spec",
    "truth_point",
    "truth_time_varying",
    "unweighted_point_limit",
    "unweighted_time_varying_limit",
]

BISECTION_TOL = 1e-10


@dataclass(frozen=True)
class MixtureTruthSpec:
    death_mass: float
    components: tuple  # ((mass, mean, sd), ...)

    def __post_init__(self):
        total = self.death_mass + sum(m for m, _, _ in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {total!r}, not 1")
        if any(m < 0 or s <= 0 for m, _, s in self.components) or self.death_mass < 0:
            raise ValueError("masses must be nonnegative and sds positive")

    def survivors_only(self) -> "MixtureTruthSpec":
        alive = 1.0 - self.death_mass
        comps = tuple((m / alive, mu, s) for m, mu, s in self.components)
        # renormalize exactly so the masses pass the sum check
        scale = 1.0 / sum(m for m, _, _ in comps)
        return MixtureTruthSpec(0.0, tuple((m * scale, mu, s) for m, mu, s in comps))


def mixture_cdf(spec: MixtureTruthSpec, y):
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, spec.death_mass)
    for m, mu, s in spec.components:
        out = out + m * ndtr((y - mu) / s)
    return out


def analytic_truth(spec: MixtureTruthSpec, tau: float = 0.5) -> float:
    """Bisection root of the mixture CDF at ``tau`` (tolerance 1e-10)."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if spec.death_mass >= tau:
        raise DeathMassExceedsTau(
            f"death mass {spec.death_mass:.4f} >= tau={tau}: the quantile is the death sentinel")
    mus = [mu for _, mu, _ in spec.components]
    sds = [s for _, _, s in spec.components]
    lo, hi = min(mus) - max(sds), max(mus) + max(sds)
    for _ in range(200):
        if mixture_cdf(spec, lo) < tau <= mixture_cdf(spec, hi):
            break
        width = hi - lo
        if mixture_cdf(spec, lo) >= tau:
            lo -= width
        if mixture_cdf(spec, hi) < tau:
            hi += width
    else:
        raise BracketFailure("could not bracket the quantile")
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:  # interval is down to adjacent doubles
            break
        if mixture_cdf(spec, mid) >= tau:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def point_truth_spec(dgp: PointDGP, a: int) -> MixtureTruthSpec:
    pd = np.asarray(dgp.p_death)
    pl = (1.0 - dgp.p_L1, dgp.p_L1)
    comps = tuple((pl[l] * (1.0 - pd[l, a]), dgp.beta_A * a + dgp.beta_L * l, dgp.noise_sd) for l in (0, 1))
    return MixtureTruthSpec(float(sum(pl[l] * pd[l, a] for l in (0, 1))), comps)


def _tv_paths(dgp: TimeVaryingDGP, regimen, observational: bool):
    """Enumerate (L0, A0, L1, A1) paths; yields (death1, death2, alive, mean) masses per path.

    With ``observational`` the treatment probabilities enter and only paths
    whose full treatment history equals ``regimen`` are kept (the unweighted
    estimator's population, which excludes deaths before visit 1 since their
    second treatment is never recorded); otherwise treatments are forced.
    """
    a0, a1 = regimen
    for l0, l1 in product((0, 1), (0, 1)):
        p = dgp.p_L0 if l0 else 1.0 - dgp.p_L0
        if observational:
            pa0 = dgp.p_A0_given_L0[l0]
            p *= pa0 if a0 else 1.0 - pa0
        d1 = float(dgp.p_death1(l0, a0))
        pl1 = float(dgp.p_cov1(l0, a0))
        q = p * (1.0 - d1) * (pl1 if l1 else 1.0 - pl1)
        if observational:
            pa1 = float(dgp.p_treat1(l0, a0, l1))
            q *= pa1 if a1 else 1.0 - pa1
        d2 = float(dgp.p_death2(l0, a0, l1, a1))
        # the (0, 1] death mass does not depend on l1; count it once
        early = 0.0 if observational or l1 == 1 else p * d1
        yield early, q * d2, q * (1.0 - d2), float(dgp.mean_outcome(l0, a0, l1, a1))


def time_varying_truth_spec(dgp: TimeVaryingDGP, regimen, *, observational: bool = False) -> MixtureTruthSpec:
    regimen = tuple(int(a) for a in regimen)
    if len(regimen) != 2:
        raise ValueError("the two-visit setting needs a regimen of length 2")
    paths = list(_tv_paths(dgp, regimen, observational))
    total = sum(d1 + d2 + s for d1, d2, s, _ in paths)
    death = sum(d1 + d2 for d1, d2, _, _ in paths) / total
    comps = tuple((s / total, mu, dgp.noise_sd) for _, _, s, mu in paths)
    drift = 1.0 - death - sum(m for m, _, _ in comps)
    return MixtureTruthSpec(death + drift, comps)


def truth_point(dgp: PointDGP, a: int, tau: float = 0.5, *, survivors_only: bool = False) -> float:
    spec = point_truth_spec(dgp, a)
    return analytic_truth(spec.survivors_only() if survivors_only else spec, tau)


def truth_time_varying(dgp: TimeVaryingDGP, regimen, tau: float = 0.5, *, survivors_only: bool = False) -> float:
    spec = time_varying_truth_spec(dgp, regimen)
    return analytic_truth(spec.survivors_only() if survivors_only else spec, tau)


def unweighted_point_limit(dgp: PointDGP, a: int, tau: float = 0.5) -> float:
    """Probability limit of the unweighted quantile among subjects with ``A = a``."""
    pd = np.asarray(dgp.p_death)
    mass = []
    for l in (0, 1):
        pl = dgp.p_L1 if l else 1.0 - dgp.p_L1
        pa = dgp.p_A1_given_L[l] if a else 1.0 - dgp.p_A1_given_L[l]
        mass.append(pl * pa)
    tot = sum(mass)
    death = sum(mass[l] / tot * pd[l, a] for l in (0, 1))
    comps = tuple((mass[l] / tot * (1.0 - pd[l, a]), dgp.beta_A * a + dgp.beta_L * l, dgp.noise_sd)
                  for l in (0, 1))
    drift = 1.0 - death - sum(m for m, _, _ in comps)
    return analytic_truth(MixtureTruthSpec(death + drift, comps), tau)


def unweighted_time_varying_limit(dgp: TimeVaryingDGP, regimen, tau: float = 0.5) -> float:
    """Probability limit of the unweighted quantile among subjects whose recorded treatments equal ``regimen``."""
    return analytic_truth(time_varying_truth_spec(dgp, regimen, observational=True), tau)
