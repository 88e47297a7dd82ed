"""Command-line entry point: ``moddev <subcommand> --config PATH [--out DIR]``.

Exit codes: 0 success, 2 invalid configuration or model, 3 runtime failure
(including too few tail hits when ``--strict`` is given).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import estimators, hypotest, montecarlo, projection, rates
from .config import ExperimentConfig, load_config
from .errors import ConfigError, InsufficientHits, ModdevError
from .samples import read_censored_csv, read_paired_csv, read_sample_csv
from .scaling import validate_scaling

__all__ = ["main", "run"]

SUBCOMMANDS = ("estimate", "rate", "project", "simulate", "test", "validate-scaling")


# ---------------------------------------------------------------------------
# output helpers


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _write_json(path: Path, obj) -> None:
    path.write_text(_dumps(obj), encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row[h]) for h in header])


def _cell(v):
    v = _clean(v)
    return repr(v) if isinstance(v, float) else v


class _Log:
    """Sidecar run.log: the only place timestamps are written."""

    def __init__(self, out: Path):
        self.path = out / "run.log"

    def __call__(self, msg: str) -> None:
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{stamp} {msg}\n")


# ---------------------------------------------------------------------------
# subcommands


def _censored_model(cfg: ExperimentConfig, f_section: str = "F") -> rates.CensoredModel:
    return rates.CensoredModel(cfg.distribution(f_section), cfg.distribution("G"),
                               float(cfg.require("model", "tau")),
                               cfg.float("model", "eps_h", 1e-6))


def _matrix(text: str) -> np.ndarray:
    try:
        return np.array([[float(v) for v in row.split(",")] for row in text.split(";")])
    except ValueError:
        raise ConfigError(f"cannot parse matrix {text!r}") from None


def cmd_rate(cfg: ExperimentConfig, out: Path, args, log) -> int:
    names = [s.strip() for s in cfg.require("rate", "names").split(",") if s.strip()]
    x = cfg.float("rate", "x")
    results = []

    def need_x():
        if x is None:
            raise ConfigError("[rate] x is required for this rate")
        return x

    for name in names:
        if name == "wilcoxon":
            F, G = cfg.distribution("F"), cfg.distribution("G")
            lam = cfg.float("model", "lambda", 0.5)
            vfy, vgx = rates.model_variances(F, G)
            value = float(rates.wilcoxon_rate(lam, vfy, vgx, need_x()))
            inputs = {"lambda": lam, "var_fy": vfy, "var_gx": vgx, "x": x}
        elif name == "model_variances":
            vfy, vgx = rates.model_variances(cfg.distribution("F"), cfg.distribution("G"))
            value, inputs = [vfy, vgx], {}
        elif name in ("sigma2_hazard", "sigma2_km", "hazard_sup", "km_sup"):
            m = _censored_model(cfg)
            inputs = {"tau": m.tau}
            if name == "sigma2_hazard":
                value = rates.sigma2_hazard(m)
            elif name == "sigma2_km":
                value, arg = rates.sigma2_km(m, return_argmax=True)
                inputs["argmax"] = arg
            elif name == "hazard_sup":
                value, inputs["x"] = float(rates.hazard_sup_rate(m, need_x())), x
            else:
                value, inputs["x"] = float(rates.km_sup_rate(m, need_x())), x
        elif name == "quantile":
            p = float(cfg.require("model", "p"))
            value = float(rates.quantile_rate(cfg.distribution("F"), p, need_x()))
            inputs = {"p": p, "x": x}
        elif name in ("lstat_variance", "lstat_mean", "lstat"):
            J, F = cfg.score(), cfg.distribution("F")
            inputs = {"score": J.label}
            if name == "lstat_variance":
                value = rates.lstat_variance(J, F)
            elif name == "lstat_mean":
                value = rates.lstat_mean(J, F)
            else:
                value, inputs["x"] = float(rates.lstat_rate(J, F, need_x())), x
        elif name == "mean":
            value, inputs = float(rates.mean_rate(cfg.distribution("F"), need_x())), {"x": x}
        elif name == "m":
            if cfg.has("rate", "a_matrix"):
                A = _matrix(cfg.require("rate", "a_matrix"))
                Gam = _matrix(cfg.require("rate", "gamma_matrix"))
                z = cfg.floats("rate", "z") or [need_x()]
                inputs = {"A": A, "Gamma": Gam, "z": z}
            else:
                theta0, A, Gam = rates.m_model_terms(cfg.psi(), cfg.distribution("F"))
                z = cfg.floats("rate", "z") or [need_x()]
                inputs = {"theta0": theta0, "A": A, "Gamma": Gam, "z": z}
            value = rates.m_rate(A, Gam, z)
        elif name == "gaussian_finite":
            m = _censored_model(cfg)
            kind = cfg.get("rate", "kernel", "hazard")
            if kind not in ("hazard", "km"):
                raise ConfigError("[rate] kernel must be hazard or km")
            K = rates.haz_cov_kernel(m) if kind == "hazard" else rates.km_cov_kernel(m)
            times = cfg.floats("rate", "times")
            phi = cfg.floats("rate", "phi")
            if not times or not phi:
                raise ConfigError("gaussian_finite needs [rate] times and phi")
            value = rates.gaussian_finite_rate(K, times, phi)
            inputs = {"kernel": kind, "times": times, "phi": phi}
        else:
            raise ConfigError(f"unknown rate name {name!r}")
        results.append({"name": name, "inputs": inputs, "value": value})
        log(f"rate {name} = {value}")
    doc = {"rates": results, "config": cfg.resolved()}
    _write_json(out / "rate.json", doc)
    sys.stdout.write(_dumps(results))
    return 0


def _projection_problem(cfg: ExperimentConfig):
    """Return (build(N), closed-form value at y=1 or None)."""
    problem = cfg.require("project", "problem")
    if problem == "wilcoxon":
        F, G = cfg.distribution("F"), cfg.distribution("G")
        lam = cfg.float("model", "lambda", 0.5)
        vfy, vgx = rates.model_variances(F, G)
        return (lambda N: projection.wilcoxon_problem(F, G, lam, N)), float(rates.wilcoxon_rate(lam, vfy, vgx, 1.0))
    if problem == "quantile":
        F, p = cfg.distribution("F"), float(cfg.require("model", "p"))
        return (lambda N: projection.quantile_problem(F, p, N)), float(rates.quantile_rate(F, p, 1.0))
    if problem == "lstat":
        F, J = cfg.distribution("F"), cfg.score()
        return (lambda N: projection.lstat_problem(J, F, N)), float(rates.lstat_rate(J, F, 1.0))
    if problem == "m-root":
        F, psi = cfg.distribution("F"), cfg.psi()
        _, A, Gam = rates.m_model_terms(psi, F)
        return (lambda N: projection.m_root_problem(psi, F, N)), rates.m_rate(A, Gam, [1.0])
    if problem == "copula":
        text = cfg.require("project", "points")
        try:
            pts = [tuple(float(v) for v in item.split(":")) for item in text.split(";")]
        except ValueError:
            raise ConfigError(f"cannot parse copula points {text!r}") from None
        base = cfg.get("project", "base", "independence")
        theta = cfg.float("project", "theta", 0.0)
        gsize = cfg.int("project", "grid_size", 10)
        exact = None
        if base == "independence" and len(pts) == 1:
            u, v = pts[0]
            exact = 1.0 / (2 * u * (1 - u) * v * (1 - v))
        # N is the number of points per side of the product grid
        return (lambda N: projection.copula_problem(N, pts, gsize, base, theta)), exact
    raise ConfigError(f"unknown projection problem {problem!r}")


def cmd_project(cfg: ExperimentConfig, out: Path, args, log) -> int:
    build, exact1 = _projection_problem(cfg)
    N = cfg.int("project", "n", 1000)
    ys = cfg.floats("project", "y", [1.0])
    rate, op = build(N)
    values = projection.project_rate_curve(rate, op, ys)
    _write_csv(out / "project.csv", ["y", "value"], [{"y": y, "value": v} for y, v in zip(ys, values)])
    refine = cfg.ints("project", "refine", [])
    table = projection.refinement_table(build, refine, 1.0, exact1) if refine else []
    header = ["N", "value", "error"] if exact1 is not None else ["N", "value"]
    _write_csv(out / "refinement.csv", header, table)
    doc = {"N": N, "y": ys, "values": values, "closed_form_at_1": exact1, "refinement": table,
           "config": cfg.resolved()}
    _write_json(out / "project.json", doc)
    log(f"project {cfg.get('project', 'problem')} N={N}")
    return 0


def _statistic(cfg: ExperimentConfig) -> montecarlo.StatisticSpec:
    kind = cfg.require("model", "statistic")
    F = cfg.distribution("F")
    kw = {}
    if kind in ("wilcoxon", "nelson-aalen-sup", "km-sup"):
        kw["G"] = cfg.distribution("G")
    if kind in ("nelson-aalen-sup", "km-sup"):
        kw["tau"] = float(cfg.require("model", "tau"))
    if kind == "wilcoxon":
        kw["lam"] = cfg.float("model", "lambda", 0.5)
    if kind == "quantile":
        kw["p"] = float(cfg.require("model", "p"))
    if kind == "l-stat":
        kw["score"] = cfg.score()
    if kind == "m-est":
        kw["psi"] = cfg.psi()
    return montecarlo.StatisticSpec(kind, F, **kw)


def cmd_simulate(cfg: ExperimentConfig, out: Path, args, log) -> int:
    seed = cfg.seed()
    spec = _statistic(cfg)
    scaling = cfg.scaling()
    n_grid = cfg.ints("run", "n_grid")
    if not n_grid:
        raise ConfigError("[run] n_grid is required")
    r = float(cfg.require("run", "r"))
    R = cfg.int("run", "replications", 10_000)
    workers = cfg.int("run", "workers", 1)
    code = 0
    try:
        report = montecarlo.fit_decay(spec, n_grid, r, scaling, R, seed, workers)
    except InsufficientHits as exc:
        report = exc.report
        log(f"simulate: {exc}")
        sys.stderr.write(f"moddev: warning: {exc}\n")
        if args.strict:
            code = 3
    _write_csv(out / "decay.csv", ["n", "a2", "R", "hits", "phat", "lo", "hi", "used"], report.csv_rows())
    summary = report.summary()
    summary["config"] = cfg.resolved()
    _write_json(out / "decay.json", summary)
    log(f"simulate {spec.kind} slope={report.slope}")
    return code


def cmd_test(cfg: ExperimentConfig, out: Path, args, log) -> int:
    F0 = cfg.distribution("F0")
    tau = float(cfg.require("model", "tau"))
    c = float(cfg.require("test", "c"))
    scaling = cfg.scaling()
    if cfg.has("test", "data"):
        data = read_censored_csv(cfg.require("test", "data"))
        T = hypotest.km_statistic(data, F0, tau)
        scaled = math.sqrt(data.n) / float(scaling(data.n)) * T
        doc = {"mode": "decision", "n": data.n, "T": T, "scaled": scaled, "c": c,
               "reject": bool(scaled >= c), "config": cfg.resolved()}
        _write_json(out / "test.json", doc)
        sys.stdout.write(_dumps({k: doc[k] for k in ("T", "scaled", "reject")}))
        return 0
    seed = cfg.seed()
    spec = hypotest.KmTestSpec(F0, cfg.distribution("F1"), cfg.distribution("G"), tau, c, scaling)
    n_grid = cfg.ints("run", "n_grid")
    if not n_grid:
        raise ConfigError("[run] n_grid is required in simulation mode")
    R = cfg.int("run", "replications", 10_000)
    report = hypotest.error_exponents(spec, n_grid, R, seed, cfg.int("run", "workers", 1))
    rows = report.csv_rows()
    _write_csv(out / "exponents.csv", list(rows[0].keys()), rows)
    summary = report.summary()
    summary["config"] = cfg.resolved()
    summary["mode"] = "simulation"
    _write_json(out / "test.json", summary)
    log(f"test simulation slope={report.type1_slope}")
    return 3 if (args.strict and report.type1_slope is None) else 0


def cmd_estimate(cfg: ExperimentConfig, out: Path, args, log) -> int:
    which = cfg.require("estimate", "estimator")
    path = cfg.require("estimate", "data")
    doc = {"estimator": which, "config": cfg.resolved()}
    step = None
    if which == "ecdf":
        step = estimators.ecdf(read_sample_csv(path))
    elif which == "nelson-aalen":
        step = estimators.nelson_aalen(read_censored_csv(path))
    elif which == "kaplan-meier":
        step = estimators.kaplan_meier(read_censored_csv(path))
    elif which == "quantile":
        doc["value"] = estimators.empirical_quantile(read_sample_csv(path), float(cfg.require("estimate", "p")))
    elif which == "wilcoxon":
        doc["value"] = estimators.wilcoxon_statistic(read_sample_csv(path),
                                                     read_sample_csv(cfg.require("estimate", "data2")))
    elif which == "l-statistic":
        doc["value"] = estimators.l_statistic(read_sample_csv(path), cfg.score())
    elif which == "m-estimate":
        doc["value"] = estimators.m_estimate(read_sample_csv(path), cfg.psi())
    elif which == "copula":
        text = cfg.require("estimate", "points")
        try:
            grid = [tuple(float(v) for v in item.split(":")) for item in text.split(";")]
        except ValueError:
            raise ConfigError(f"cannot parse copula points {text!r}") from None
        vals = estimators.empirical_copula(read_paired_csv(path), grid)
        doc["points"] = grid
        doc["value"] = vals
    else:
        raise ConfigError(f"unknown estimator {which!r}")
    if step is not None:
        step.to_csv(out / "estimate.csv")
        doc["jumps"] = int(step.jump_points.size)
    _write_json(out / "estimate.json", doc)
    log(f"estimate {which}")
    return 0


def cmd_validate(cfg: ExperimentConfig, out: Path, args, log) -> int:
    seq = cfg.scaling()
    n_min = cfg.int("validate", "n_min", seq.n0)
    n_max = cfg.int("validate", "n_max")
    if n_max is None:
        raise ConfigError("[validate] n_max is required")
    report = validate_scaling(seq, n_min, n_max)
    doc = report.to_dict() | {"config": cfg.resolved()}
    _write_json(out / "scaling.json", doc)
    sys.stdout.write(_dumps(report.to_dict()))
    log(f"validate-scaling valid={report.valid}")
    return 0


_COMMANDS = {
    "rate": cmd_rate,
    "project": cmd_project,
    "simulate": cmd_simulate,
    "test": cmd_test,
    "estimate": cmd_estimate,
    "validate-scaling": cmd_validate,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI experiment file")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="master seed; overrides [run] seed")
    common.add_argument("--workers", type=int, help="Monte Carlo worker threads; overrides [run] workers")
    common.add_argument("--strict", action="store_true", help="treat too few tail hits as an error")
    parser = argparse.ArgumentParser(prog="moddev", description="Moderate-deviation rates and Monte Carlo checks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg.set("run", "seed", args.seed)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers must be >= 1")
            cfg.set("run", "workers", args.workers)
        out.mkdir(parents=True, exist_ok=True)
        log = _Log(out)
        log(f"start {args.command} config={args.config}")
        code = _COMMANDS[args.command](cfg, out, args, log)
        log(f"done exit={code}")
        return code
    except (ValueError, OSError) as exc:
        # configuration, model and input-file problems
        sys.stderr.write(f"moddev: error: {exc}\n")
        return 2
    except ModdevError as exc:
        sys.stderr.write(f"moddev: runtime error: {exc}\n")
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
