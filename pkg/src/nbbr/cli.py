"""Command-line front end.

    nbbr fit --data counts.csv --response y --covariates "x1,log(x2+10)" --method median-br
    nbbr simulate --preset salmonella-table3 --reps 2000 --seed 1 --out-dir out/

Exit codes: 0 success, 1 bad input or configuration, 2 the fit did not
converge (the report is still written).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adjust, simtool
from .errors import NBError
from .fit import FitOptions, fit, wald_intervals
from .model import LINKS, TRANSFORMS, ModelSpec

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
_LOG_SHIFT = re.compile(r"^log\(\s*([^()+\s]+)\s*(?:\+\s*([-+0-9.eE]+)\s*)?\)$")


class InputError(NBError):
    """Problem with user-supplied data or configuration."""


@dataclass
class Dataset:
    columns: list
    response: str
    y: np.ndarray
    design_names: list
    X: np.ndarray
    weights: np.ndarray | None = None


def _split_terms(text: str) -> list:
    terms, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            terms.append(cur.strip())
            cur = ""
            continue
        depth += (ch == "(") - (ch == ")")
        cur += ch
    if cur.strip():
        terms.append(cur.strip())
    return [t for t in terms if t]


def _numeric(raw: dict, name: str, rows: int) -> np.ndarray:
    if name not in raw:
        raise InputError(f"unknown column {name!r}")
    out = np.empty(rows)
    for i, cell in enumerate(raw[name]):
        try:
            out[i] = float(cell)
        except ValueError:
            raise InputError(f"column {name!r}, row {i + 1}: {cell!r} is not a number") from None
        if not math.isfinite(out[i]):
            raise InputError(f"column {name!r}, row {i + 1}: missing or non-finite value")
    return out


def _term(raw, term, rows):
    match = _LOG_SHIFT.match(term)
    if not match:
        return _numeric(raw, term, rows)
    col, shift = match.group(1), float(match.group(2) or 0.0)
    values = _numeric(raw, col, rows) + shift
    if np.any(values <= 0):
        raise InputError(f"term {term!r}: log of a non-positive value")
    return np.log(values)


def read_dataset(path, response: str, covariates=(), weights: str | None = None, intercept=True) -> Dataset:
    """Read a header-row CSV and build the response, design and weights."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            body = [row for row in reader if row]
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from None
    if not header:
        raise InputError(f"{path} is empty")
    header = [h.strip() for h in header]
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise InputError(f"row {i + 1} has {len(row)} fields, header has {len(header)}")
    if not body:
        raise InputError(f"{path} has a header but no rows")
    raw = {name: [row[j].strip() for row in body] for j, name in enumerate(header)}
    rows = len(body)

    yv = _numeric(raw, response, rows)
    if np.any(yv < 0) or np.any(yv != np.round(yv)):
        raise InputError(f"response column {response!r} must hold non-negative integers")
    terms = []
    for c in covariates:
        terms.extend(_split_terms(c))
    cols = [np.ones(rows)] if intercept else []
    names = ["(Intercept)"] if intercept else []
    for t in terms:
        cols.append(_term(raw, t, rows))
        names.append(t)
    if not cols:
        raise InputError("design has no columns")
    m = _numeric(raw, weights, rows) if weights else None
    if m is not None and np.any(m <= 0):
        raise InputError(f"weight column {weights!r} must be positive")
    return Dataset(header, response, yv.astype(np.int64), names, np.column_stack(cols), m)


@dataclass
class Report:
    method: str
    link: str
    transform: str
    parameters: list
    estimates: list
    standard_errors: list
    wald_lower: list
    wald_upper: list
    level: float
    kappa: float
    kappa_se: float
    phi: float
    loglik: float
    convergence: dict
    hat_values: list = field(default_factory=list)
    xi: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls(**json.loads(text))


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def build_report(spec: ModelSpec, names, result, level: float) -> Report:
    p = spec.p
    if result.converged:
        ci = wald_intervals(result, level)
    else:
        ci = np.full((p + 1, 2), np.nan)
    hat, xi = [], []
    try:
        wq = adjust.working_quantities(spec, result.theta)
        hat, xi = _floats(wq.h), _floats(wq.xi)
    except (NBError, ValueError, FloatingPointError):
        pass
    kp = math.nan
    try:
        _, kp, _ = spec.transform.evaluate(result.theta.phi)
    except (NBError, ValueError):
        pass
    disp = "kappa" if spec.transform.kind == "identity" else f"phi ({spec.transform.kind} of kappa)"
    return Report(
        method=result.method,
        link=spec.link.kind,
        transform=spec.transform.kind,
        parameters=list(names) + [disp],
        estimates=_floats(result.estimates),
        standard_errors=_floats(result.se),
        wald_lower=_floats(ci[:, 0]),
        wald_upper=_floats(ci[:, 1]),
        level=level,
        kappa=float(result.kappa),
        # delta method: se(kappa) = |kappa'(phi)| se(phi)
        kappa_se=float(abs(kp) * result.se[-1]),
        phi=float(result.theta.phi),
        loglik=float(result.loglik_at_estimate),
        convergence=asdict(result.report),
        hat_values=hat,
        xi=xi,
    )


def format_text(report: Report) -> str:
    pct = f"{100 * report.level:g}%"
    lines = [
        f"method: {report.method}   link: {report.link}   dispersion transform: {report.transform}",
        f"{'':24s} {'estimate':>12s} {'std.err':>12s} {pct + ' lower':>12s} {pct + ' upper':>12s}",
    ]
    for row in zip(report.parameters, report.estimates, report.standard_errors, report.wald_lower, report.wald_upper):
        lines.append(f"{row[0]:24s} " + " ".join(f"{v:12.5f}" for v in row[1:]))
    if report.transform != "identity":
        lines.append(f"kappa = {report.kappa:.5f} (se {report.kappa_se:.5f}, delta method)")
    conv = report.convergence
    status = "converged" if conv["converged"] else f"NOT converged ({conv['failure_kind']}: {conv['message']})"
    lines.append(f"log-likelihood: {report.loglik:.5f}")
    lines.append(f"{status} after {conv['outer_iterations']} outer iterations")
    return "\n".join(lines)


def format_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "estimate", "se", "lower", "upper"])
    for row in zip(report.parameters, report.estimates, report.standard_errors, report.wald_lower, report.wald_upper):
        w.writerow([row[0]] + [repr(v) for v in row[1:]])
    return buf.getvalue().rstrip("\n")


def cmd_fit(args) -> int:
    try:
        data = read_dataset(args.data, args.response, args.covariates or [], args.weights, not args.no_intercept)
        spec = ModelSpec(data.y, data.X, data.weights, args.link, args.transform)
        if not 0 <= args.level < 1:
            raise InputError("--level must lie in [0, 1)")
        result = fit(spec, FitOptions(method=args.method, max_outer=args.max_iter, tol=args.tol))
    except (InputError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    report = build_report(spec, data.design_names, result, args.level)
    text = {"text": format_text, "json": Report.to_json, "csv": format_csv}[args.out](report)
    print(text)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _read_design_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        return np.array([[float(v) for v in r] for r in rows[1:]])
    except (ValueError, IndexError):
        raise InputError(f"design file {path} must be a numeric CSV with a header row") from None


def load_scenario(path=None, preset=None, overrides=None) -> simtool.ScenarioConfig:
    """Build a scenario from a flat ``key = value`` file, a preset and CLI overrides."""
    values = {}
    if path:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_string("[scenario]\n" + fh.read())
        except (OSError, configparser.Error) as err:
            raise InputError(f"cannot parse scenario {path}: {err}") from None
        values = dict(parser["scenario"])
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    preset = preset or values.pop("preset", None)
    values.pop("preset", None)

    def num(key, cast=float, default=None):
        if key not in values:
            return default
        try:
            return cast(values.pop(key))
        except ValueError:
            raise InputError(f"scenario key {key!r} has an invalid value") from None

    common = {}
    if "methods" in values:
        common["methods"] = tuple(m.strip() for m in values.pop("methods").split(",") if m.strip())
    for key in ("protocol", "transform"):
        if key in values:
            common[key] = values.pop(key)
    level = num("level")
    if level is not None:
        common["level"] = level
    reps = num("replications", int, 10000)
    seed = num("seed", int, 20240611)

    try:
        if preset == "table1-cell":
            cfg = simtool.table1_cell(
                n=num("n", int, 20), mu=num("mu", float, 2.0), kappa=num("kappa", float, 0.5),
                replications=reps, seed=seed, **common,
            )
        elif preset == "section4":
            cfg = simtool.section4(
                n=num("n", int, 40), kappa=num("kappa", float, 0.75), replications=reps, seed=seed, **common
            )
        elif preset == "salmonella-table3":
            cfg = simtool.salmonella_table3(replications=reps, seed=seed, **common)
        elif preset is None:
            design = values.pop("design", "intercept_only")
            kwargs = dict(n=num("n", int), kappa_true=num("kappa"), replications=reps, seed=seed, design=design)
            if design == "intercept_only":
                kwargs["mu"] = num("mu")
            else:
                X = _read_design_csv(values.pop("design_csv", ""))
                beta = [float(b) for b in values.pop("beta", "").split(",") if b.strip()]
                kwargs.update(X=X, beta=np.array(beta))
                kwargs["n"] = kwargs["n"] or X.shape[0]
            if kwargs["n"] is None or kwargs["kappa_true"] is None:
                raise InputError("scenario needs n and kappa")
            cfg = simtool.ScenarioConfig(**kwargs, **common)
        else:
            raise InputError(f"unknown preset {preset!r}; expected one of {sorted(simtool.PRESETS)}")
    except ValueError as err:
        raise InputError(str(err)) from None
    if values:
        raise InputError(f"unknown scenario keys: {', '.join(sorted(values))}")
    return cfg


def cmd_simulate(args) -> int:
    try:
        if args.reps is not None and args.reps < 1:
            raise InputError("--reps must be at least 1")
        cfg = load_scenario(args.scenario, args.preset, {"seed": args.seed, "replications": args.reps})
        jobs = args.jobs or int(os.environ.get("NBBR_JOBS", "1"))
    except (InputError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    records = simtool.simulate_records(cfg, jobs=jobs)
    metrics, diag = simtool.write_outputs(cfg, records, args.out_dir, audit=args.audit)
    print(f"{cfg.name or 'scenario'}: {diag.replications} replications, A1={diag.a1} A2={diag.a2} "
          f"A3={diag.a3} A4={diag.a4}; results in {args.out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nbbr", description="Negative binomial regression with bias reduction.")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV dataset")
    f.add_argument("--data", required=True, help="CSV file with a header row")
    f.add_argument("--response", required=True, help="count column")
    f.add_argument("--covariates", action="append",
                   help="comma-separated columns; log(col+c) terms allowed; may repeat")
    f.add_argument("--weights", help="optional positive weight column")
    f.add_argument("--no-intercept", action="store_true")
    f.add_argument("--link", choices=LINKS, default="log")
    f.add_argument("--transform", choices=TRANSFORMS, default="identity")
    f.add_argument("--method", choices=("ml", "mean-bc", "mean-br", "median-br"), default="ml")
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--out", choices=("text", "json", "csv"), default="text")
    f.add_argument("--max-iter", type=int, default=100)
    f.add_argument("--tol", type=float, default=1e-8)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    s.add_argument("--scenario", help="key = value scenario file")
    s.add_argument("--preset", choices=sorted(simtool.PRESETS))
    s.add_argument("--seed", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--jobs", type=int, help="worker processes (default $NBBR_JOBS or 1)")
    s.add_argument("--audit", action="store_true", help="also write per-replication records")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
