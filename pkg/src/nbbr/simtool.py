"""Monte Carlo studies of the four estimators.

Replication ``i`` of a scenario draws from its own stream,
``SeedSequence(seed, spawn_key=(1, i))``, so a run gives the same numbers
whether replications execute serially or spread over workers.  Designs
generated at random (the covariate preset) use the stream ``(0,)`` and are
drawn once per scenario.

Metrics are a pure fold over :class:`ReplicationRecord` objects; the audit
CSV written by :func:`write_records` holds everything needed to recompute
them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .fit import METHODS, FitOptions, bias_correct, fit
from .model import DispersionTransform, ModelSpec

DESIGNS = ("intercept_only", "fixed_matrix")
PROTOCOLS = ("per_method", "complete_case")
# the covariate study lists "0.5, 0.75, 1, 1,5"; the last entry is read as 1.5
SECTION4_KAPPAS = (0.5, 0.75, 1.0, 1.5)
SECTION4_BETA = (1.0, -0.75, -1.5, 1.0, -0.5)
_BR_METHODS = ("mean_br", "median_br")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    n: int
    kappa_true: float
    replications: int
    seed: int
    design: str = "intercept_only"
    mu: float | None = None
    X: np.ndarray | None = None
    beta: np.ndarray | None = None
    methods: tuple = METHODS
    level: float = 0.95
    protocol: str = "per_method"
    transform: str = "identity"
    name: str = ""

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.kappa_true > 0:
            raise ValueError("kappa_true must be positive")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"protocol must be one of {PROTOCOLS}")
        methods = tuple(m.replace("-", "_") for m in self.methods)
        unknown = [m for m in methods if m not in METHODS]
        if unknown or not methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in methods))
        if self.design == "intercept_only":
            if self.mu is None or not self.mu > 0:
                raise ValueError("intercept_only design needs a positive mu")
        elif self.design == "fixed_matrix":
            if self.X is None or self.beta is None:
                raise ValueError("fixed_matrix design needs X and beta")
            X = np.array(self.X, dtype=np.float64)
            beta = np.array(self.beta, dtype=np.float64)
            if X.ndim != 2 or X.shape[0] != self.n or X.shape[1] != beta.shape[0]:
                raise ValueError(f"X must be {self.n} x {beta.shape[0]}, got {X.shape}")
            X.setflags(write=False)
            beta.setflags(write=False)
            object.__setattr__(self, "X", X)
            object.__setattr__(self, "beta", beta)
        else:
            raise ValueError(f"design must be one of {DESIGNS}")
        DispersionTransform(self.transform)

    def design_matrix(self):
        """``(X, beta)`` of the data-generating log-linear model."""
        if self.design == "intercept_only":
            return np.ones((self.n, 1)), np.array([math.log(self.mu)])
        return self.X, self.beta

    def truth(self) -> np.ndarray:
        _, beta = self.design_matrix()
        return np.append(beta, DispersionTransform(self.transform).phi(self.kappa_true))

    def parameter_names(self):
        _, beta = self.design_matrix()
        disp = "kappa" if self.transform == "identity" else "phi"
        return [f"beta{j}" for j in range(beta.shape[0])] + [disp]


@dataclass(frozen=True)
class MetricsRow:
    parameter: str
    method: str
    pu: float
    rbias: float
    wald: float
    ibmse: float
    effective_replications: int


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple

    FIELDS = ("parameter", "method", "pu", "rbias", "wald", "ibmse", "effective_replications")

    def get(self, parameter: str, method: str) -> MetricsRow:
        for row in self.rows:
            if row.parameter == parameter and row.method == method:
                return row
        raise KeyError((parameter, method))

    @property
    def empty(self) -> bool:
        return all(r.effective_replications == 0 for r in self.rows)


@dataclass(frozen=True)
class DiagnosticsCounts:
    replications: int
    a1: int
    a2: int
    a3: int
    a4: int

    FIELDS = ("replications", "a1", "a2", "a3", "a4")

    @property
    def eligible(self) -> int:
        return self.replications - self.a1


@dataclass(frozen=True)
class MethodOutcome:
    converged: bool
    failure_kind: str
    estimates: tuple
    se: tuple


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    variance_le_mean: bool
    outcomes: dict = field(default_factory=dict)


def sample_nb(mu, kappa: float, rng: np.random.Generator):
    """Gamma-Poisson draw(s): Poisson(lambda) with lambda ~ Gamma(1/kappa, kappa mu)."""
    lam = rng.gamma(1.0 / kappa, kappa * np.asarray(mu, dtype=np.float64))
    return rng.poisson(lam)


def diagnostics_variance_test(y) -> bool:
    """True when the sample variance does not exceed the sample mean."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ValueError("variance test needs at least two observations")
    return bool(np.var(y, ddof=1) <= np.mean(y))


def compute_metrics(estimates, ses, truth: float, level: float = 0.95):
    """``(pu, rbias, wald, ibmse)`` in percent over the supplied replications."""
    est = np.asarray(estimates, dtype=np.float64)
    se = np.asarray(ses, dtype=np.float64)
    if est.size == 0:
        raise ValueError("no estimates to summarise")
    if se.shape != est.shape:
        raise ValueError("estimates and standard errors differ in length")
    z = stats.norm.ppf(0.5 + level / 2.0)
    n = est.size
    pu = 100.0 * np.count_nonzero(est < truth) / n
    bias = float(np.mean(est) - truth)
    rbias = 100.0 * bias / float(truth) if truth != 0 else math.nan
    wald = 100.0 * np.count_nonzero(np.abs(est - truth) <= z * se) / n
    sd = float(np.std(est, ddof=1)) if n > 1 else math.nan
    if bias == 0.0:
        ibmse = 0.0
    else:
        ibmse = 100.0 * bias**2 / sd**2 if sd > 0 else math.inf
    return pu, rbias, wald, ibmse


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def design_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def _outcome(res) -> MethodOutcome:
    return MethodOutcome(
        converged=res.converged,
        failure_kind=res.report.failure_kind,
        estimates=tuple(float(v) for v in res.estimates),
        se=tuple(float(v) for v in res.se),
    )


def run_replication(config: ScenarioConfig, index: int, options: FitOptions | None = None) -> ReplicationRecord:
    options = options or FitOptions()
    X, beta = config.design_matrix()
    rng = replication_rng(config.seed, index)
    y = sample_nb(np.exp(X @ beta), config.kappa_true, rng)
    if config.design == "intercept_only" and diagnostics_variance_test(y):
        return ReplicationRecord(index, True, {})
    spec = ModelSpec(y, X, transform=config.transform)
    outcomes = {}
    ml = None
    for method in config.methods:
        if method == "mean_bc":
            ml = ml or fit(spec, options, method="ml")
            res = bias_correct(spec, ml, options)
        else:
            res = fit(spec, options, method=method)
            if method == "ml":
                ml = res
        outcomes[method] = _outcome(res)
    return ReplicationRecord(index, False, outcomes)


def _run_chunk(config, indices, options):
    return [run_replication(config, i, options) for i in indices]


def simulate_records(
    config: ScenarioConfig, jobs: int = 1, options: FitOptions | None = None, chunk: int = 250
) -> list:
    """Per-replication records, ordered by replication index."""
    indices = range(config.replications)
    if jobs == 1:
        return _run_chunk(config, indices, options)
    blocks = [indices[k : k + chunk] for k in range(0, config.replications, chunk)]
    parts = Parallel(n_jobs=jobs)(delayed(_run_chunk)(config, b, options) for b in blocks)
    records = [r for part in parts for r in part]
    records.sort(key=lambda r: r.index)
    return records


def _usable(config: ScenarioConfig, record: ReplicationRecord, method: str) -> bool:
    if record.variance_le_mean or method not in record.outcomes:
        return False
    if config.protocol == "complete_case":
        return record.outcomes[method].converged
    if method in ("ml", "mean_bc"):
        return record.outcomes["ml" if "ml" in record.outcomes else method].converged
    # bias-reduced methods share the joint convergence set
    return all(record.outcomes[m].converged for m in _BR_METHODS if m in record.outcomes)


def summarize(config: ScenarioConfig, records: Sequence[ReplicationRecord]):
    """Fold replication records into ``(MetricsTable, DiagnosticsCounts)``."""
    truth = config.truth()
    names = config.parameter_names()
    rows = []
    for j, name in enumerate(names):
        for method in config.methods:
            used = [r.outcomes[method] for r in records if _usable(config, r, method)]
            if not used:
                rows.append(MetricsRow(name, method, math.nan, math.nan, math.nan, math.nan, 0))
                continue
            est = [o.estimates[j] for o in used]
            se = [o.se[j] for o in used]
            pu, rbias, wald, ibmse = compute_metrics(est, se, truth[j], config.level)
            rows.append(MetricsRow(name, method, pu, rbias, wald, ibmse, len(used)))

    def failures(method):
        return sum(
            1 for r in records
            if not r.variance_le_mean and method in r.outcomes and not r.outcomes[method].converged
        )

    diag = DiagnosticsCounts(
        replications=len(records),
        a1=sum(r.variance_le_mean for r in records),
        a2=failures("ml"),
        a3=failures("mean_br"),
        a4=failures("median_br"),
    )
    return MetricsTable(tuple(rows)), diag


def run_scenario(config: ScenarioConfig, jobs: int = 1, options: FitOptions | None = None):
    return summarize(config, simulate_records(config, jobs, options))


# presets ---------------------------------------------------------------


def table1_cell(n=20, mu=2.0, kappa=0.5, replications=10000, seed=20240611, **kwargs) -> ScenarioConfig:
    """Intercept-only NB(mu, kappa) samples of size n."""
    return ScenarioConfig(
        n=n, kappa_true=kappa, replications=replications, seed=seed,
        design="intercept_only", mu=mu, name=f"table1-n{n}-mu{mu:g}-kappa{kappa:g}", **kwargs,
    )


def section4_design(n: int, seed: int) -> np.ndarray:
    """Bernoulli(0.8), Bernoulli(0.5), Uniform(1, 2) and Poisson(2.5) covariates plus intercept."""
    rng = design_rng(seed)
    return np.column_stack([
        np.ones(n),
        rng.binomial(1, 0.8, n),
        rng.binomial(1, 0.5, n),
        rng.uniform(1.0, 2.0, n),
        rng.poisson(2.5, n),
    ]).astype(np.float64)


def section4(n=40, kappa=0.75, replications=10000, seed=20240611, **kwargs) -> ScenarioConfig:
    return ScenarioConfig(
        n=n, kappa_true=kappa, replications=replications, seed=seed, design="fixed_matrix",
        X=section4_design(n, seed), beta=np.array(SECTION4_BETA),
        name=f"section4-n{n}-kappa{kappa:g}", **kwargs,
    )


def salmonella_table3(replications=10000, seed=20240611, **kwargs) -> ScenarioConfig:
    """Salmonella design with the ML fit of the observed counts as truth."""
    from .data import salmonella_spec

    spec = salmonella_spec()
    ml = fit(spec, method="ml")
    if not ml.converged:
        raise RuntimeError("ML fit of the salmonella data did not converge")
    return ScenarioConfig(
        n=spec.n, kappa_true=ml.kappa, replications=replications, seed=seed,
        design="fixed_matrix", X=np.array(spec.X), beta=np.array(ml.theta.beta),
        name="salmonella-table3", **kwargs,
    )


PRESETS = {
    "table1-cell": table1_cell,
    "section4": section4,
    "salmonella-table3": salmonella_table3,
}


# output ----------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(table: MetricsTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsTable.FIELDS)
        for row in table.rows:
            w.writerow([_fmt(getattr(row, f)) for f in MetricsTable.FIELDS])


def write_diagnostics(diag: DiagnosticsCounts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DiagnosticsCounts.FIELDS)
        w.writerow([getattr(diag, f) for f in DiagnosticsCounts.FIELDS])


def write_records(config: ScenarioConfig, records: Iterable[ReplicationRecord], path) -> None:
    names = config.parameter_names()
    header = ["replication", "variance_le_mean", "method", "converged", "failure_kind"]
    header += [f"est_{n}" for n in names] + [f"se_{n}" for n in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            if r.variance_le_mean:
                w.writerow([r.index, 1, "", "", ""] + [""] * (2 * len(names)))
                continue
            for method, o in r.outcomes.items():
                w.writerow(
                    [r.index, 0, method, int(o.converged), o.failure_kind]
                    + [_fmt(v) for v in o.estimates]
                    + [_fmt(v) for v in o.se]
                )


def read_records(config: ScenarioConfig, path) -> list:
    """Inverse of :func:`write_records`."""
    names = config.parameter_names()
    by_index: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["replication"])
            if row["variance_le_mean"] == "1":
                by_index[i] = ReplicationRecord(i, True, {})
                continue
            rec = by_index.setdefault(i, ReplicationRecord(i, False, {}))
            rec.outcomes[row["method"]] = MethodOutcome(
                converged=row["converged"] == "1",
                failure_kind=row["failure_kind"],
                estimates=tuple(float(row[f"est_{n}"]) for n in names),
                se=tuple(float(row[f"se_{n}"]) for n in names),
            )
    return [by_index[i] for i in sorted(by_index)]


def write_outputs(config, records, out_dir, audit: bool = False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics, diag = summarize(config, records)
    write_metrics(metrics, out / "metrics.csv")
    write_diagnostics(diag, out / "diagnostics.csv")
    if audit:
        write_records(config, records, out / "replications.csv")
    return metrics, diag
