"""Monte Carlo runners: bias/rMSE tables and bootstrap coverage."""
from __future__ import annotations

import csv
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..cohort import build_composite
from ..errors import SurvQuantError
from ..inference import avar_estimated_ps, avar_known_ps, bootstrap_ci
from ..pipeline import QuantilePipeline
from ..weights import visit_design
from .dgp import PointDGP, TimeVaryingDGP, gen_point, gen_time_varying
from .truth import point_truth_spec, time_varying_truth_spec, truth_point, truth_time_varying

__all__ = [
    "ESTIMATORS",
    "MonteCarloConfig",
    "MonteCarloResult",
    "CoverageConfig",
    "CoverageResult",
    "monte_carlo",
    "coverage_study",
    "preset",
    "PRESETS",
    "setting_truth",
]

# estimator name -> pipeline propensity mode
ESTIMATORS = {"iptw_true_ps": "known", "iptw_est_ps": "estimated", "unweighted": "unweighted"}
SETTINGS = ("point", "time_varying")


def _dgp_for(setting: str, dgp=None):
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}")
    if dgp is not None:
        return dgp
    return PointDGP() if setting == "point" else TimeVaryingDGP()


def _generate(setting, n, dgp, seed):
    return gen_point(n, dgp, seed) if setting == "point" else gen_time_varying(n, dgp, seed)


def setting_truth(setting: str, regimen, tau: float = 0.5, dgp=None) -> tuple[float, float]:
    """``(q_true, death_probability)`` under the forced regimen."""
    dgp = _dgp_for(setting, dgp)
    regimen = tuple(int(a) for a in regimen)
    if setting == "point":
        return truth_point(dgp, regimen[0], tau), point_truth_spec(dgp, regimen[0]).death_mass
    return truth_time_varying(dgp, regimen, tau), time_varying_truth_spec(dgp, regimen).death_mass


def _spawn(seed, *shape):
    """Nested SeedSequence streams so every (cell, replicate) draw is fixed by ``seed`` alone."""
    root = np.random.SeedSequence(seed)
    out = root.spawn(shape[0])
    if len(shape) == 1:
        return out
    return [s.spawn(shape[1]) for s in out]


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


@dataclass
class MonteCarloConfig:
    setting: str = "point"
    regimens: tuple = ((0,), (1,))
    ns: tuple = (500, 1500, 5000)
    reps: int = 2000
    estimators: tuple = tuple(ESTIMATORS)
    tau: float = 0.5
    seed: int = 1
    plugin: bool = False  # also record plug-in variances per replicate
    dgp: Optional[object] = field(default=None, repr=False)

    def __post_init__(self):
        self.regimens = tuple(tuple(int(a) for a in r) for r in self.regimens)
        self.ns = tuple(int(n) for n in self.ns)
        self.estimators = tuple(self.estimators)
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}")
        if self.reps < 1 or any(n < 1 for n in self.ns):
            raise ValueError("reps and every n must be positive")
        _dgp_for(self.setting)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("dgp")
        d["regimens"] = [list(r) for r in self.regimens]
        d["ns"] = list(self.ns)
        d["estimators"] = list(self.estimators)
        return d


@dataclass
class MonteCarloResult:
    config: MonteCarloConfig
    rows: list  # one dict per (regimen, N) in table layout
    estimates: dict = field(repr=False)  # (regimen, n, estimator) -> (reps,) array, NaN on failure
    plugin: dict = field(default_factory=dict, repr=False)  # (regimen, n) -> dict of (reps,) arrays

    def cell(self, regimen, n) -> dict:
        regimen = tuple(regimen)
        for r in self.rows:
            if tuple(r["regimen"]) == regimen and r["N"] == n:
                return r
        raise KeyError((regimen, n))

    def to_csv(self, path):
        fields = ["regimen", "N", "p_death", "truth"]
        for e in self.config.estimators:
            fields += [f"{e}_{s}" for s in ("rmse", "bias", "sd", "mcse", "failed")]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(fields)
            for r in self.rows:
                row = ["".join(map(str, r["regimen"])), r["N"], f"{r['p_death']:.6f}", f"{r['truth']:.6f}"]
                for e in self.config.estimators:
                    s = r[e]
                    row += [f"{s['rmse']:.6f}", f"{s['bias']:.6f}", f"{s['sd']:.6f}", f"{s['mcse']:.6f}",
                            s["failed"]]
                wr.writerow(row)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"config": self.config.to_dict(), "rows": self.rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _summarize(est, truth):
    ok = est[np.isfinite(est)]
    m = ok.size
    if m == 0:
        return {"bias": math.nan, "rmse": math.nan, "sd": math.nan, "mcse": math.nan, "failed": int(est.size)}
    err = ok - truth
    sd = float(np.std(ok, ddof=1)) if m > 1 else 0.0
    return {"bias": float(np.mean(err)), "rmse": float(np.sqrt(np.mean(err * err))), "sd": sd,
            "mcse": sd / math.sqrt(m), "failed": int(est.size - m)}


FAILURES = (SurvQuantError, ValueError, ArithmeticError, np.linalg.LinAlgError)
PLUGIN_FIELDS = ("v_tilde", "v_hat", "se_est", "se_known_true_ps")


def _one_replicate(cfg: MonteCarloConfig, dgp, n, ss):
    """All estimators for all regimens on one simulated dataset.

    With ``cfg.plugin`` also records, per regimen, the plug-in quantities of
    the estimated-PS fit (``v_tilde``, ``v_hat``, ``se_est``; point setting
    only) and the known-PS standard error computed with the true weights.
    """
    cohort = _generate(cfg.setting, n, dgp, ss)
    comp = build_composite(cohort) if cfg.plugin else None
    est = {}
    plug = {}
    for reg in cfg.regimens:
        rec = dict.fromkeys(PLUGIN_FIELDS, math.nan)
        for name in cfg.estimators:
            pipe = QuantilePipeline(reg, cfg.tau, ESTIMATORS[name], known_ps=dgp.propensity, strict=False)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    q = pipe(cohort)
                except FAILURES:
                    q = math.nan
                if cfg.plugin and math.isfinite(q):
                    try:
                        if name == "iptw_est_ps" and cfg.setting == "point":
                            X, _ = visit_design(cohort, 0, pipe.design)
                            var = avar_estimated_ps(comp, X, cohort.treatment[:, 0], pipe.models[0], reg[0],
                                                    cfg.tau, q)
                            rec.update(v_tilde=var.v_tilde, v_hat=var.v_hat, se_est=var.se_est())
                        elif name == "iptw_true_ps":
                            var = avar_known_ps(comp, pipe.weights(cohort), cfg.tau, q)
                            rec["se_known_true_ps"] = var.se_known()
                    except FAILURES:
                        pass
            est[(reg, name)] = q
        plug[reg] = rec
    return est, plug


def monte_carlo(config: MonteCarloConfig, *, workers: int = 1, progress: bool = False) -> MonteCarloResult:
    """Simulate ``reps`` datasets per sample size and estimate every regimen on each.

    All regimens are estimated from the same simulated datasets. Replicate
    ``r`` at sample size index ``j`` draws from the ``(j, r)`` child of
    ``SeedSequence(seed)``, so results do not depend on ``workers``.
    """
    dgp = _dgp_for(config.setting, config.dgp)
    truths = {reg: setting_truth(config.setting, reg, config.tau, dgp) for reg in config.regimens}
    streams = _spawn(config.seed, len(config.ns), config.reps)
    estimates, plugin, rows = {}, {}, []
    for j, n in enumerate(config.ns):
        results = _map(lambda ss: _one_replicate(config, dgp, n, ss), streams[j], workers)
        if progress:
            print(f"[{config.setting}] N={n}: {config.reps} replicates done", file=sys.stderr)
        for reg in config.regimens:
            for name in config.estimators:
                estimates[(reg, n, name)] = np.array([r[0][(reg, name)] for r in results])
            if config.plugin:
                plugin[(reg, n)] = {f: np.array([r[1][reg][f] for r in results]) for f in PLUGIN_FIELDS}
    for reg in config.regimens:
        truth, p_death = truths[reg]
        for n in config.ns:
            row = {"regimen": list(reg), "N": n, "p_death": p_death, "truth": truth}
            for name in config.estimators:
                row[name] = _summarize(estimates[(reg, n, name)], truth)
            rows.append(row)
    return MonteCarloResult(config, rows, estimates, plugin)


# -- coverage ---------------------------------------------------------------------

@dataclass
class CoverageConfig:
    setting: str = "point"
    regimen: tuple = (1,)
    n: int = 1500
    sims: int = 1000
    B: int = 2000
    level: float = 0.95
    propensity: str = "estimated"
    tau: float = 0.5
    seed: int = 1
    dgp: Optional[object] = field(default=None, repr=False)

    def __post_init__(self):
        self.regimen = tuple(int(a) for a in self.regimen)
        if self.propensity not in ("estimated", "known"):
            raise ValueError("coverage is defined for the estimated or known propensity")
        _dgp_for(self.setting)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("dgp")
        d["regimen"] = list(self.regimen)
        return d


@dataclass
class CoverageResult:
    config: CoverageConfig
    truth: float
    covered: np.ndarray = field(repr=False)  # bool per simulation
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    n_failed: int = 0

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())

    @property
    def mcse(self) -> float:
        c = self.coverage
        return math.sqrt(c * (1 - c) / self.covered.size)

    def row(self) -> dict:
        return {"setting": self.config.setting, "regimen": list(self.config.regimen), "N": self.config.n,
                "propensity": self.config.propensity, "sims": self.config.sims, "B": self.config.B,
                "truth": self.truth, "coverage": self.coverage, "mcse": self.mcse,
                "mean_width": float(np.nanmean(self.upper - self.lower)), "failed": self.n_failed}


def _one_coverage(cfg: CoverageConfig, dgp, truth, ss):
    data_ss, boot_ss = ss.spawn(2)
    cohort = _generate(cfg.setting, cfg.n, dgp, data_ss)
    pipe = QuantilePipeline(cfg.regimen, cfg.tau, cfg.propensity, known_ps=dgp.propensity, strict=False)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ci = bootstrap_ci(cohort, pipe, cfg.B, cfg.level, boot_ss)
    except FAILURES:
        return math.nan, math.nan
    return ci.lower, ci.upper


def coverage_study(config: CoverageConfig, *, workers: int = 1, progress: bool = False) -> CoverageResult:
    """Fraction of simulated datasets whose percentile bootstrap interval contains the truth.

    A simulation whose bootstrap fails counts as not covering.
    """
    dgp = _dgp_for(config.setting, config.dgp)
    truth, _ = setting_truth(config.setting, config.regimen, config.tau, dgp)
    streams = _spawn(config.seed, config.sims)
    out = _map(lambda ss: _one_coverage(config, dgp, truth, ss), streams, workers)
    lo = np.array([o[0] for o in out])
    hi = np.array([o[1] for o in out])
    covered = (lo <= truth) & (truth <= hi)
    if progress:
        print(f"[coverage {config.setting} {config.regimen} N={config.n} {config.propensity}] "
              f"{covered.mean():.3f}", file=sys.stderr)
    return CoverageResult(config, truth, covered, lo, hi, int(np.isnan(lo).sum()))


# -- presets ----------------------------------------------------------------------

def _table_b1(sims=1000, B=2000, ns=(1500, 5000), seed=1):
    cells = []
    for setting, reg in (("point", (1,)), ("time_varying", (1, 1))):
        for n in ns:
            for ps in ("known", "estimated"):
                cells.append(CoverageConfig(setting, reg, n, sims, B, propensity=ps, seed=seed))
    return cells


PRESETS = {
    "table1": lambda **kw: MonteCarloConfig("point", ((0,), (1,)), **kw),
    "table2": lambda **kw: MonteCarloConfig("time_varying", ((0, 0), (1, 1)), **kw),
    "tableB1": _table_b1,
}


def preset(name: str, **overrides):
    """Config(s) for a named table; ``overrides`` replace fields such as ``ns``, ``reps``, ``seed``."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**overrides)
