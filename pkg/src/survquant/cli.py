"""Command-line interface: ``survquant {estimate,simulate,truth,oracle-check}``.

Every command accepts ``--config FILE.json``; explicit flags override values
from the file, which override the defaults in ``RunConfig``. Failures print a
JSON object ``{"error", "message", "exit_code"}`` on stderr and exit with
2 (bad input), 3 (positivity violation in strict mode) or 4 (numerical failure).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .cohort import read_cohort_csv
from .errors import InputError, SurvQuantError
from .pipeline import QuantilePipeline, estimate_report
from .weights import write_weights_csv

__all__ = ["RunConfig", "main", "build_parser"]


@dataclass
class RunConfig:
    """All tunable settings; ``None`` means "not applicable / use the command default".

    tau: target quantile level. regimen: treatment per decision point.
    sentinel: death value (default below every observed outcome).
    eps_floor: propensity positivity floor. bootstrap: replicates (0 = none).
    weighting: ``estimated``, ``known`` is not available from a CSV, ``unit``.
    """
    tau: float = 0.5
    regimen: Optional[list] = None
    sentinel: Optional[float] = None
    eps_floor: float = 0.01
    bootstrap: int = 0
    level: float = 0.95
    seed: int = 1
    strict_positivity: bool = False
    lower_is_better: bool = False
    weighting: str = "estimated"
    data: Optional[str] = None
    out: str = "."
    threads: int = 1
    preset: Optional[str] = None
    n: Optional[list] = None
    reps: Optional[int] = None
    sims: Optional[int] = None
    instances: int = 200

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        d = json.loads(text)
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise InputError(f"unknown config keys: {', '.join(extra)}")
        return cls(**d)

    def validate(self) -> "RunConfig":
        if not 0.0 < self.tau < 1.0:
            raise InputError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 <= self.eps_floor < 0.5:
            raise InputError("eps_floor must lie in [0, 0.5)")
        if self.bootstrap < 0 or self.threads < 1:
            raise InputError("bootstrap must be >= 0 and threads >= 1")
        if self.weighting not in ("estimated", "unit"):
            raise InputError("weighting must be 'estimated' or 'unit'")
        if self.regimen is not None and any(int(a) not in (0, 1) for a in self.regimen):
            raise InputError("regimen entries must be 0 or 1")
        return self


class _JSONArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _regimen(text):
    try:
        return [int(a) for a in text.replace(" ", "").split(",") if a != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"regimen must be comma-separated 0/1 values, got {text!r}") from None


def _int_list(text):
    try:
        return [int(a) for a in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS  # unset flags stay out of the namespace so the config file can fill them
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--tau", type=float, help="quantile level (default 0.5)")
    common.add_argument("--seed", type=int, help="random seed (default 1)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")

    p = _JSONArgumentParser(prog="survquant", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_JSONArgumentParser)

    e = sub.add_parser("estimate", parents=[common], argument_default=S,
                       help="estimate a regimen's composite-outcome quantile from a cohort CSV")
    e.add_argument("data", help="cohort CSV (subject_id, visit, D, A, Y, L_*)")
    e.add_argument("--regimen", type=_regimen, help="e.g. 1,1 (default all treated)")
    e.add_argument("--sentinel", type=float)
    e.add_argument("--eps-floor", dest="eps_floor", type=float)
    e.add_argument("--bootstrap", type=int, metavar="B")
    e.add_argument("--level", type=float)
    e.add_argument("--weighting", choices=("estimated", "unit"))
    e.add_argument("--strict-positivity", dest="strict_positivity", action="store_true")
    e.add_argument("--lower-is-better", dest="lower_is_better", action="store_true")

    s = sub.add_parser("simulate", parents=[common], argument_default=S,
                       help="Monte Carlo tables: table1, table2, tableB1, truths")
    s.add_argument("preset", choices=("table1", "table2", "tableB1", "truths"))
    s.add_argument("--n", type=_int_list, help="sample sizes, comma-separated")
    s.add_argument("--reps", type=int)
    s.add_argument("--sims", type=int, help="coverage simulations (tableB1)")
    s.add_argument("--bootstrap", type=int, metavar="B", help="bootstrap replicates (tableB1)")

    t = sub.add_parser("truth", parents=[common], argument_default=S,
                       help="print exact quantiles and survivor medians for the simulation settings")
    t.add_argument("--regimen", type=_regimen, help="restrict to one regimen")

    o = sub.add_parser("oracle-check", parents=[common], argument_default=S,
                       help="check the weighted estimating equation against exact enumeration")
    o.add_argument("--instances", type=int)
    return p


def _resolve(ns: argparse.Namespace) -> RunConfig:
    flags = dict(vars(ns))
    flags.pop("command")
    cfg_path = flags.pop("config", None)
    if cfg_path is not None:
        try:
            base = RunConfig.from_json(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"cannot read config {cfg_path}: {exc}") from None
    else:
        base = RunConfig()
    if "n" in flags and flags["n"] is not None:
        flags["n"] = list(flags["n"])
    for k, v in flags.items():
        setattr(base, k, v)
    return base.validate()


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def cmd_estimate(cfg: RunConfig) -> int:
    cohort = read_cohort_csv(cfg.data)
    regimen = cfg.regimen if cfg.regimen is not None else [1] * cohort.n_decisions
    if len(regimen) != cohort.n_decisions:
        raise InputError(f"regimen has {len(regimen)} entries but the cohort has {cohort.n_decisions} decisions")
    pipe = QuantilePipeline(tuple(regimen), cfg.tau, "estimated" if cfg.weighting == "estimated" else "unweighted",
                            sentinel=cfg.sentinel, higher_is_better=not cfg.lower_is_better,
                            eps_floor=cfg.eps_floor, strict=cfg.strict_positivity)
    report = estimate_report(cohort, pipe, bootstrap=cfg.bootstrap, level=cfg.level, seed=cfg.seed,
                             workers=cfg.threads)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report["config"] = asdict(cfg)
    _dump(report, out / "report.json")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        write_weights_csv(out / "weights.csv", cohort.subject_ids, pipe.weights(cohort))
    print(f"estimate={report['estimate']:.6f}" + (f" ci=[{report['ci'][0]:.6f}, {report['ci'][1]:.6f}]"
                                                   if report["ci"] else ""))
    return 0


def _truth_rows(tau, regimen=None):
    from .simulate import PointDGP, TimeVaryingDGP
    from .simulate.truth import point_truth_spec, time_varying_truth_spec, truth_point, truth_time_varying
    rows = []
    P, T = PointDGP(), TimeVaryingDGP()
    for a in (0, 1):
        if regimen is None or list(regimen) == [a]:
            rows.append({"setting": "point", "regimen": str(a), "p_death": point_truth_spec(P, a).death_mass,
                         "truth": truth_point(P, a, tau), "survivor_quantile": truth_point(P, a, tau, survivors_only=True)})
    for reg in ((0, 0), (0, 1), (1, 0), (1, 1)):
        if (regimen is None and reg in ((0, 0), (1, 1))) or (regimen is not None and tuple(regimen) == reg):
            rows.append({"setting": "time_varying", "regimen": "".join(map(str, reg)),
                         "p_death": time_varying_truth_spec(T, reg).death_mass,
                         "truth": truth_time_varying(T, reg, tau),
                         "survivor_quantile": truth_time_varying(T, reg, tau, survivors_only=True)})
    if not rows:
        raise InputError(f"no simulation setting has regimen {regimen}")
    return rows


def _write_rows(rows, out: Path, stem: str = "table"):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    _dump(rows, out / f"{stem}.json")


def cmd_truth(cfg: RunConfig) -> int:
    rows = _truth_rows(cfg.tau, getattr(cfg, "regimen", None))
    print("setting,regimen,p_death,truth,survivor_quantile")
    for r in rows:
        print(f"{r['setting']},{r['regimen']},{r['p_death']:.3f},{r['truth']:.3f},{r['survivor_quantile']:.3f}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    from .simulate import coverage_study, monte_carlo, preset
    out = Path(cfg.out)
    if cfg.preset == "truths":
        rows = _truth_rows(cfg.tau)
        for r in rows:
            print(f"{r['setting']} {r['regimen']}: {r['truth']:.3f}")
        _write_rows(rows, out)
        return 0
    if cfg.preset == "tableB1":
        kw = {"seed": cfg.seed}
        if cfg.sims is not None:
            kw["sims"] = cfg.sims
        if cfg.bootstrap:
            kw["B"] = cfg.bootstrap
        if cfg.n is not None:
            kw["ns"] = tuple(cfg.n)
        rows = []
        for c in preset("tableB1", **kw):
            c.tau = cfg.tau
            rows.append(coverage_study(c, workers=cfg.threads, progress=True).row())
        for r in rows:
            r["regimen"] = "".join(map(str, r["regimen"]))
        _write_rows(rows, out)
        return 0
    kw = {"seed": cfg.seed, "tau": cfg.tau}
    if cfg.n is not None:
        kw["ns"] = tuple(cfg.n)
    if cfg.reps is not None:
        kw["reps"] = cfg.reps
    res = monte_carlo(preset(cfg.preset, **kw), workers=cfg.threads, progress=True)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "table.csv")
    res.to_json(out / "table.json")
    sys.stdout.write((out / "table.csv").read_text())
    return 0


def cmd_oracle_check(cfg: RunConfig) -> int:
    from .oracle import counterfactual_quantile, crossing_point, random_instance
    rng = np.random.default_rng(cfg.seed)
    checked, failures = 0, []
    for i in range(cfg.instances):
        K = i % 2
        inst = random_instance(rng, K)
        for reg in ([(0,), (1,)] if K == 0 else [(0, 0), (0, 1), (1, 0), (1, 1)]):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                q_true = counterfactual_quantile(inst, reg, cfg.tau)
                q_cross = crossing_point(inst, reg, cfg.tau)
            checked += 1
            if abs(q_true - q_cross) > 1e-12:
                failures.append({"instance": inst.to_dict(), "regimen": list(reg), "truth": q_true,
                                 "crossing": q_cross})
    print(f"instances={cfg.instances} checks={checked} mismatches={len(failures)}")
    if failures:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(failures, out / "oracle_failures.json")
        return 4
    return 0


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "truth": cmd_truth,
            "oracle-check": cmd_oracle_check}


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = _resolve(ns)
        return COMMANDS[ns.command](cfg)
    except SurvQuantError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, ValueError) as exc:
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
