"""Consistency and convergence studies, rate fits and report emission."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import config as C
from .coefficients import CoefficientSet
from .fields import as_field
from .group import StratifiedGroup
from .kernel import KernelJ
from .local_reference import LocalProblem, LocalTrajectory, solve_local
from .nonlocal_solver import GridProblem, solve
from .operators import local_operator, nonlocal_operator
from .polynomials import Poly

log = logging.getLogger(__name__)

__all__ = [
    "HarnessError",
    "SubdominanceError",
    "RateFit",
    "rate_fit",
    "ConsistencyTable",
    "consistency_study",
    "ConvergenceReport",
    "convergence_study",
    "reference_stability",
    "grid_spacing",
    "emit_report",
    "load_report",
    "REPORT_SCHEMA",
]


class HarnessError(RuntimeError):
    pass


class SubdominanceError(HarnessError):
    pass


# ---------------------------------------------------------------- rate fits

@dataclass(frozen=True)
class RateFit:
    alpha: float
    c: float
    residual: float


def rate_fit(pairs) -> RateFit:
    """Least squares for ``log e = log c + alpha log eps``; residual is the RMS in log space."""
    pairs = [(float(e), float(r)) for e, r in pairs]
    if len(pairs) < 3:
        raise ValueError("a rate fit needs at least three (eps, error) pairs")
    eps, err = np.array(pairs).T
    if np.any(err <= 0) or np.any(~np.isfinite(err)):
        raise ValueError("errors must be finite and positive")
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    X = np.column_stack([np.ones_like(eps), np.log(eps)])
    coef, *_ = np.linalg.lstsq(X, np.log(err), rcond=None)
    res = np.log(err) - X @ coef
    return RateFit(float(coef[1]), float(np.exp(coef[0])), float(np.sqrt(np.mean(res ** 2))))


# ---------------------------------------------------------------- consistency

@dataclass
class ConsistencyTable:
    kind: str
    epsilons: list
    errors: list
    fit: RateFit | None
    monotone: bool

    @property
    def slope(self) -> float:
        return self.fit.alpha if self.fit else math.nan


def consistency_study(kind: str, G: StratifiedGroup, J: KernelJ, fields, epsilons, samples,
                      cs: CoefficientSet | None = None) -> ConsistencyTable:
    """Sup over ``samples`` and ``fields`` of ``|nonlocal - local|`` per eps.

    A slope is fitted only when every error is above round-off; errors that
    fail to decrease are flagged (they usually mean quadrature or
    resolution contamination).
    """
    fields = fields if isinstance(fields, (list, tuple)) else [fields]
    # polynomials keep their exact local derivatives
    fields = [f if isinstance(f, Poly) else as_field(f) for f in fields]
    x = np.asarray(samples, float)
    local = [local_operator(kind, G, J, x, f, cs) for f in fields]
    errors = []
    for eps in epsilons:
        e = max(float(np.max(np.abs(nonlocal_operator(kind, G, J, x, f, eps, cs) - lv)))
                for f, lv in zip(fields, local))
        errors.append(e)
    errs = np.array(errors)
    monotone = bool(np.all(np.diff(errs) < 0))
    fit = None
    if len(errs) >= 3 and np.all(errs > 1e-12):
        fit = rate_fit(zip(epsilons, errors))
    if not monotone and fit is not None:
        log.warning("consistency errors for %s do not decrease: %s", kind, errors)
    return ConsistencyTable(kind.upper(), list(map(float, epsilons)), errors, fit, monotone)


# ---------------------------------------------------------------- convergence

def grid_spacing(eps: float, rule: str, base: float = 1.0) -> float:
    """Dyadic spacing obeying the subdominance rule ``h <= eps^2 / 4``."""
    if rule != "eps2/4":
        raise ValueError(f"unknown spacing rule {rule!r}")
    k = math.ceil(math.log2(4 * base / eps ** 2) - 1e-12)
    return base / 2 ** max(k, 1)


@dataclass
class ConvergenceReport:
    experiment_id: str
    kind: str
    group: str
    epsilons: list
    errors: list
    h: list
    dt: list
    steps: list
    h_ref: float
    dt_ref: float
    rate: float
    prefactor: float
    residual: float
    theta: list
    thresholds: dict
    checks: dict
    passed: bool
    notes: list = field(default_factory=list)
    subdominance: dict = field(default_factory=dict)

    def table(self):
        return list(zip(self.epsilons, self.errors, self.h, self.dt))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Setup:
    cfg: dict
    G: StratifiedGroup
    J: KernelJ
    cs: CoefficientSet
    local_cs: CoefficientSet
    u0: object
    g: object
    lo: np.ndarray
    hi: np.ndarray
    T: float
    outs: np.ndarray
    kind: str


def _setup(cfg: dict) -> _Setup:
    G = C.build_group(cfg)
    J = C.build_kernel(cfg, G)
    kind = cfg["operator"]["kind"].upper()
    cs = C.build_coefficients(cfg, G)
    if kind == "E":
        half_c = 0.5 * J.C * np.eye(G.n1)
        local_cs = CoefficientSet(G, a=lambda x: np.broadcast_to(half_c, np.shape(x)[:-1] + half_c.shape),
                                  label="half-C identity")
    else:
        local_cs = cs
    u0, g = C.build_data(cfg, G)
    lo, hi = C.box(cfg, G)
    return _Setup(cfg, G, J, cs, local_cs, u0, g, lo, hi, float(cfg["time"]["T"]),
                  C.output_times(cfg), kind)


def _reference(s: _Setup, h_ref, dt_ref=None) -> LocalTrajectory:
    lp = LocalProblem(s.G, s.lo, s.hi, s.g, s.u0, s.T, "L" if s.kind == "L" else "K",
                      s.local_cs, s.outs)
    return solve_local(lp, dt_ref, h_ref)


@dataclass
class _Run:
    eps: float
    h: float
    dt: float
    steps: int
    points: np.ndarray
    values: np.ndarray


def _nonlocal(s: _Setup, eps: float, h: float) -> _Run:
    p = GridProblem(s.G, s.lo, s.hi, h, s.g, s.u0, s.T, s.kind, eps, s.J,
                    None if s.kind == "E" else s.cs, s.outs)
    if not p.compatible:
        log.info("eps %.4g: initial and boundary data differ by %.2e on the boundary",
                 eps, p.compatibility_gap)
    tr = solve(p)
    return _Run(eps, h, tr.dt, tr.steps, tr.points, tr.values)


def _error(run: _Run, ref: LocalTrajectory) -> float:
    """Sup-norm gap at output times over nonlocal interior nodes shared with the reference grid."""
    grid = ref.grid
    s = (run.points - grid.lo) / grid.h
    m = np.rint(s)
    on = np.all(np.abs(s - m) < 1e-6, axis=-1)
    if not np.any(on):
        raise HarnessError("nonlocal and reference grids share no interior node")
    v = ref.at_points(run.points[on])
    return float(np.max(np.abs(run.values[:, on] - v)))


def _theta(s: _Setup, eps: float, n_samples: int = 256) -> float:
    """Measured consistency error on the initial datum at grid-independent sample points."""
    rng = np.random.default_rng(int(s.cfg.get("seed", 0)))
    x = s.lo + (s.hi - s.lo) * rng.uniform(0.05, 0.95, (n_samples, s.G.n))
    cs = None if s.kind == "E" else s.cs
    return float(np.max(np.abs(nonlocal_operator(s.kind, s.G, s.J, x, s.u0, eps, cs)
                               - local_operator(s.kind, s.G, s.J, x, s.u0, cs))))


def _spacings(s: _Setup, eps_list) -> tuple[list, list]:
    sweep = s.cfg["sweep"]
    rule = sweep.get("h_rule", "eps2/4")
    notes = []
    if rule == "fixed":
        hs = [float(h) for h in sweep["h"]]
        if len(hs) != len(eps_list):
            raise HarnessError("sweep.h must list one spacing per eps")
        bad = [(e, h) for e, h in zip(eps_list, hs) if h > e ** 2 / 4]
        if bad:
            if not sweep.get("waive_subdominance", False):
                raise SubdominanceError(f"h > eps^2/4 for (eps, h) = {bad}; set sweep.waive_subdominance "
                                        "to run anyway")
            notes.append("subdominance rule h <= eps^2/4 waived: " + str(sweep.get("waiver_reason", "")))
        return hs, notes
    base = float(np.min(s.hi - s.lo))
    return [grid_spacing(e, rule, base) for e in eps_list], notes


def convergence_study(cfg: dict, workers: int | None = None, keep_runs: bool = False):
    """Run the eps sweep of ``cfg`` against one local reference solution.

    Returns a :class:`ConvergenceReport` (and the raw runs when
    ``keep_runs``).
    """
    cfg = C.merge_defaults(cfg)
    s = _setup(cfg)
    eps_list = [float(e) for e in cfg["sweep"]["epsilons"]]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise HarnessError("eps list must be strictly decreasing")
    hs, notes = _spacings(s, eps_list)
    h_ref = float(cfg["reference"]["h_ref"])
    dt_ref = cfg["reference"].get("dt_ref")
    ref = _reference(s, h_ref, dt_ref)
    workers = int(workers or cfg["sweep"].get("workers", 1) or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        runs = list(pool.map(lambda eh: _nonlocal(s, *eh), zip(eps_list, hs)))
    errors = [_error(r, ref) for r in runs]
    theta = [_theta(s, e) for e in eps_list]

    sub = {}
    which = cfg["sweep"].get("subdominance_check", "none")
    picks = {"none": [], "all": list(range(len(runs))), "coarsest": [0], "finest": [len(runs) - 1]}
    if which not in picks:
        raise HarnessError(f"unknown subdominance_check {which!r}")
    for i in picks[which]:
        half = _nonlocal(s, eps_list[i], hs[i] / 2)
        e2 = _error(half, ref)
        change = abs(e2 - errors[i]) / errors[i]
        sub[str(eps_list[i])] = {"h": hs[i] / 2, "error": e2, "relative_change": change}
        if change > 0.2:
            raise SubdominanceError(f"halving h at eps = {eps_list[i]} moves the error by {change:.1%}")

    th = cfg["thresholds"]
    checks = {}
    errs = np.array(errors)
    checks["strictly_decreasing"] = bool(np.all(np.diff(errs) < 0))
    try:
        fit = rate_fit(zip(eps_list, errors))
    except ValueError as exc:
        notes.append(f"rate fit failed: {exc}")
        fit = RateFit(math.nan, math.nan, math.nan)
    if th.get("min_rate") is not None:
        checks["rate"] = bool(fit.alpha >= float(th["min_rate"]))
    if th.get("max_residual") is not None:
        checks["residual"] = bool(fit.residual < float(th["max_residual"]))
    if not th.get("strictly_decreasing", True):
        checks.pop("strictly_decreasing")
    report = ConvergenceReport(
        experiment_id=str(cfg["id"]), kind=s.kind, group=s.G.name, epsilons=eps_list,
        errors=errors, h=[r.h for r in runs], dt=[r.dt for r in runs], steps=[r.steps for r in runs],
        h_ref=h_ref, dt_ref=float(ref.dt), rate=fit.alpha, prefactor=fit.c, residual=fit.residual,
        theta=theta, thresholds=dict(th), checks=checks, passed=all(checks.values()),
        notes=notes, subdominance=sub)
    return (report, runs, s) if keep_runs else report


def reference_stability(cfg: dict) -> dict:
    """Relative change of every reported error when ``h_ref`` is halved."""
    report, runs, s = convergence_study(cfg, keep_runs=True)
    ref2 = _reference(s, report.h_ref / 2)
    errs2 = [_error(r, ref2) for r in runs]
    change = [abs(b - a) / a for a, b in zip(report.errors, errs2)]
    return {"errors": report.errors, "errors_fine_ref": errs2, "relative_change": change,
            "max_relative_change": max(change)}


# ---------------------------------------------------------------- emission

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ConvergenceReport",
    "type": "object",
    "required": ["experiment_id", "kind", "group", "epsilons", "errors", "h", "dt", "steps",
                 "h_ref", "dt_ref", "rate", "prefactor", "residual", "theta", "thresholds",
                 "checks", "passed"],
    "properties": {
        "experiment_id": {"type": "string"},
        "kind": {"enum": ["E", "K", "L"]},
        "group": {"type": "string"},
        "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "errors": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "h": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "dt": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "steps": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "h_ref": {"type": "number", "exclusiveMinimum": 0},
        "dt_ref": {"type": "number", "exclusiveMinimum": 0},
        "rate": {"type": ["number", "null"]},
        "prefactor": {"type": ["number", "null"]},
        "residual": {"type": ["number", "null"]},
        "theta": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "thresholds": {"type": "object"},
        "checks": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "passed": {"type": "boolean"},
        "notes": {"type": "array", "items": {"type": "string"}},
        "subdominance": {"type": "object"},
    },
}


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _finite_or_none(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_finite_or_none(x) for x in v]
    return v


def emit_report(report: ConvergenceReport, out_dir, formats=("csv", "json", "gnuplot")) -> list[Path]:
    """Write ``report.csv``, ``report.json`` and/or ``plot.gp`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            path = out / "report.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(["epsilon", "error", "h", "dt"])
                for row in report.table():
                    wr.writerow([repr(float(v)) for v in row])
        elif fmt == "json":
            path = out / "report.json"
            path.write_text(json.dumps(_finite_or_none(report.to_dict()), indent=2, sort_keys=True) + "\n")
        elif fmt == "gnuplot":
            path = out / "plot.gp"
            path.write_text(_gnuplot(report))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


def _gnuplot(r: ConvergenceReport) -> str:
    c = r.prefactor if math.isfinite(r.prefactor) else 0.0
    a = r.rate if math.isfinite(r.rate) else 0.0
    return "\n".join([
        f"# {r.experiment_id}: sup-norm error against eps, log-log",
        "# data: report.csv (epsilon, error, h, dt)",
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'epsilon'",
        "set ylabel 'sup-norm error'",
        "set key top left",
        "set terminal pngcairo size 800,600",
        "set output 'plot.png'",
        f"c = {c!r}",
        f"alpha = {a!r}",
        "f(x) = c * x**alpha",
        "plot 'report.csv' using 1:2 skip 1 with linespoints pt 7 title 'measured', \\",
        f"     f(x) with lines dt 2 title sprintf('fit: %.3g eps^{{%.3f}}', c, alpha)",
        "",
    ])


def load_report(path) -> ConvergenceReport:
    d = json.loads(Path(path).read_text())
    for k in ("rate", "prefactor", "residual"):
        if d.get(k) is None:
            d[k] = math.nan
    return ConvergenceReport(**d)
