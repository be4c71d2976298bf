"""Synthetic benchmarks, CSV ingestion, ATE estimation and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .baselines import estimate_via_graph, ipw_ate, k2_search
from .exact import PriorConfig, bma_mie_mc, bma_mie_quasi
from .scm import (
    ENUMERATION_CAP,
    CandidateSpace,
    Dataset,
    check_enumerable,
    sample_model,
    simulate,
)
from .vb import VBConfig, vb_fit_all, vb_mie

ESTIMATORS = ("quasi", "mc", "vb", "k2", "full", "ipw")
EXACT_ESTIMATORS = ("quasi", "mc")
ATE_METHODS = ("vb", "quasi", "k2", "full", "ipw")
REPORT_HEADER = ("estimator", "N", "mse", "stderr", "trials")


def build_wz_space(n1: int, n2: int, p: float, include_direct_xy: bool = True) -> CandidateSpace:
    """Confounders W -> {X, Y, Z}, mediators X -> Z -> Y, and optionally X -> Y."""
    if n1 < 0 or n2 < 0:
        raise ValueError("covariate counts must be non-negative")
    ws = [f"W{i}" for i in range(1, n1 + 1)]
    zs = [f"Z{i}" for i in range(1, n2 + 1)]
    nodes = ws + ["X"] + zs + ["Y"]
    edges = [(w, "X") for w in ws] + [(w, "Y") for w in ws]
    edges += [("X", z) for z in zs] + [(z, "Y") for z in zs]
    edges += [(w, z) for w in ws for z in zs]
    if include_direct_xy:
        edges.append(("X", "Y"))
    return CandidateSpace.from_edges(nodes, [(a, b, p) for a, b in edges])


def ate_space(treatment: str, outcome: str, covariates: Sequence[str], p: float = 0.5) -> CandidateSpace:
    """Every covariate may cause treatment and outcome; treatment may cause outcome."""
    nodes = list(covariates) + [treatment, outcome]
    edges = [(w, treatment, p) for w in covariates] + [(w, outcome, p) for w in covariates]
    edges.append((treatment, outcome, p))
    return CandidateSpace.from_edges(nodes, edges)


@dataclass(frozen=True)
class ExperimentConfig:
    n1: int = 2
    n2: int = 2
    edge_prob: float = 0.5
    include_direct_xy: bool = True
    sample_sizes: tuple[int, ...] = (25, 50, 100, 200)
    trials: int = 100
    master_seed: int = 0
    estimators: tuple[str, ...] = ("quasi", "vb", "k2", "full")
    prior: PriorConfig = field(default_factory=PriorConfig)
    vb: VBConfig = field(default_factory=VBConfig)
    x_value: float = 1.0
    mc_samples: int = 1000

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if any(n < 2 for n in self.sample_sizes):
            raise ValueError("sample sizes must be at least 2")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError("edge_prob must lie in [0, 1]")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sample_sizes"] = list(self.sample_sizes)
        d["estimators"] = list(self.estimators)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ExperimentConfig:
        d = dict(d)
        if "prior" in d:
            d["prior"] = PriorConfig(**d["prior"])
        if "vb" in d:
            d["vb"] = VBConfig(**d["vb"])
        for key in ("sample_sizes", "estimators"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ReportRow:
    estimator: str
    n: int
    mse: float
    stderr: float
    trials: int


@dataclass
class BenchmarkReport:
    rows: list[ReportRow]
    config: dict
    master_seed: int
    failures: dict[str, int] = field(default_factory=dict)
    # (estimator, N) -> per-trial squared errors, NaN where the estimator failed
    errors: dict[tuple[str, int], np.ndarray] = field(default_factory=dict, repr=False)

    def row(self, estimator: str, n: int) -> ReportRow:
        for r in self.rows:
            if r.estimator == estimator and r.n == n:
                return r
        raise KeyError((estimator, n))


def _estimators(config: ExperimentConfig, space: CandidateSpace) -> dict[str, Callable]:
    covariates = [v for v in space.nodes if v not in ("X", "Y")]

    def scm_method(name):
        def run(data, rng):
            return mie_estimate(space, data, name, "X", "Y", config.x_value, config.prior,
                                config.vb, config.mc_samples, rng)
        return run

    def ipw(data, rng):
        return ipw_ate(data, "X", "Y", covariates) * config.x_value

    return {name: ipw if name == "ipw" else scm_method(name)
            for name in ESTIMATORS if name in config.estimators}


def run_trial(config: ExperimentConfig, space: CandidateSpace, t: int, estimators=None):
    """Squared errors of every estimator for trial ``t``: {(name, N): error or nan}."""
    estimators = estimators or _estimators(config, space)
    seed = config.master_seed + t
    scm = sample_model(space, config.prior.coeff_var, config.prior.noise_precision,
                       rng_seed=[seed, 0])
    truth = scm.total_effect("X", "Y") * config.x_value
    out = {}
    for n in config.sample_sizes:
        data = simulate(scm, n, rng_seed=[seed, 1, n])
        for name, fn in estimators.items():
            # one stream per (trial, N, estimator) so subsets of estimators agree
            rng = np.random.default_rng([seed, 2, n, ESTIMATORS.index(name)])
            try:
                est = float(fn(data, rng))
                err = (est - truth) ** 2 if math.isfinite(est) else math.nan
            except Exception:
                err = math.nan
            out[(name, n)] = err
    return out


def run_benchmark(config: ExperimentConfig, progress: Callable[[int], None] | None = None
                  ) -> BenchmarkReport:
    """Mean squared error of each estimator at each sample size over re-drawn true models."""
    space = build_wz_space(config.n1, config.n2, config.edge_prob, config.include_direct_xy)
    if any(e in config.estimators for e in EXACT_ESTIMATORS):
        check_enumerable(space, ENUMERATION_CAP)
    estimators = _estimators(config, space)
    errors = {(name, n): np.full(config.trials, np.nan)
              for name in estimators for n in config.sample_sizes}
    for t in range(config.trials):
        for key, err in run_trial(config, space, t, estimators).items():
            errors[key][t] = err
        if progress is not None:
            progress(t)
    rows, failures = [], {}
    for name in sorted(estimators):
        for n in sorted(config.sample_sizes):
            e = errors[(name, n)]
            ok = e[np.isfinite(e)]
            failures[name] = failures.get(name, 0) + int(len(e) - len(ok))
            mse = float(ok.mean()) if len(ok) else math.nan
            se = float(ok.std(ddof=1) / np.sqrt(len(ok))) if len(ok) > 1 else math.nan
            rows.append(ReportRow(name, n, mse, se, len(ok)))
    return BenchmarkReport(rows, config.to_dict(), config.master_seed, failures, errors)


def emit_report(report: BenchmarkReport, path: str | Path) -> None:
    """CSV with a leading ``#`` JSON comment line echoing the config, seed and failures."""
    meta = {"config": report.config, "master_seed": report.master_seed,
            "failures": report.failures}
    rows = sorted(report.rows, key=lambda r: (r.estimator, r.n))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for r in rows:
            writer.writerow([r.estimator, r.n, repr(r.mse), repr(r.stderr), r.trials])


def read_report(path: str | Path) -> tuple[dict, list[ReportRow]]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata comment line")
        meta = json.loads(first[2:])
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [ReportRow(e, int(n), float(m), float(s), int(t)) for e, n, m, s, t in reader]
    return meta, rows


class CsvFormatError(ValueError):
    pass


def load_csv_dataset(
    path: str | Path,
    columns: Sequence[str] | None = None,
    center: bool | Sequence[str] = False,
) -> Dataset:
    """Read a numeric CSV with a header row.

    ``columns`` selects (and orders) columns; ``center`` is True for every
    column or a list of column names whose means are subtracted.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            dup = sorted({h for h in header if header.count(h) > 1})
            raise CsvFormatError(f"{path}: duplicate column names {dup}")
        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise CsvFormatError(
                    f"{path}: row {line_no} has {len(record)} fields, expected {len(header)}")
            values = []
            for name, cell in zip(header, record):
                cell = cell.strip()
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    what = "missing" if cell == "" else f"non-numeric {cell!r}"
                    raise CsvFormatError(f"{path}: {what} value at row {line_no}, column {name!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    data = Dataset(tuple(header), np.array(rows))
    if columns is not None:
        missing = [c for c in columns if c not in header]
        if missing:
            raise CsvFormatError(f"{path}: missing columns {missing}")
        data = data.select(columns)
    if center is True:
        data = data.centered()
    elif center:
        vals = np.array(data.values)
        for c in center:
            k = data.index(c)
            vals[:, k] -= vals[:, k].mean()
        data = Dataset(data.columns, vals)
    return data


def write_csv_dataset(data: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.columns)
        for row in data.values:
            writer.writerow([repr(float(v)) for v in row])


def estimate_ate(
    data: Dataset,
    treatment: str,
    outcome: str,
    covariates: Sequence[str],
    method: str = "vb",
    prior: PriorConfig | None = None,
    vb_config: VBConfig | None = None,
    edge_prob: float = 0.5,
    center: bool = True,
    lam: float | None = None,
) -> float:
    """Effect of switching the treatment from 0 to 1 on the outcome.

    SCM methods use the covariates-as-common-causes candidate space; the
    no-intercept model is fitted on centred columns unless ``center`` is off.
    """
    if method not in ATE_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {ATE_METHODS}")
    if method == "ipw":
        return ipw_ate(data, treatment, outcome, covariates, lam)
    prior = prior or PriorConfig()
    vb_config = vb_config or VBConfig(noise_precision=prior.noise_precision)
    space = ate_space(treatment, outcome, covariates, edge_prob)
    sub = data.select(list(space.nodes))
    if center:
        sub = sub.centered()
    return mie_estimate(space, sub, method, treatment, outcome, 1.0, prior, vb_config)


def mie_estimate(
    space: CandidateSpace,
    data: Dataset,
    method: str,
    x: str,
    y: str,
    x_value: float = 1.0,
    prior: PriorConfig | None = None,
    vb_config: VBConfig | None = None,
    mc_samples: int = 1000,
    seed=None,
) -> float:
    """Dispatch one of the SCM estimators by name."""
    prior = prior or PriorConfig()
    vb_config = vb_config or VBConfig(noise_precision=prior.noise_precision)
    if method == "quasi":
        return bma_mie_quasi(space, data, prior, x, y, x_value)
    if method == "mc":
        return bma_mie_mc(space, data, prior, x, y, x_value, n_samples=mc_samples, rng_seed=seed)
    if method == "vb":
        return vb_mie(vb_fit_all(data, space, vb_config), space, x, y, x_value,
                      columns=data.columns)
    if method == "k2":
        g = k2_search(space, data, prior).selected
        return estimate_via_graph(g, data, prior, x, y, x_value)
    if method == "full":
        return estimate_via_graph(space.dag_full, data, prior, x, y, x_value)
    raise ValueError(f"unknown SCM method {method!r}")
