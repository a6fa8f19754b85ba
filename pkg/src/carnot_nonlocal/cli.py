"""Command line entry point: ``carnot-nonlocal <command> [--config PATH] ...``.

Exit status is 0 iff every check the command performs passes.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from . import config as C
from .fields import parse_expression
from .group import law_checks
from .harness import consistency_study, convergence_study, emit_report, grid_spacing, load_report
from .kernel import MomentError, QuadratureError, validate_moments
from .nonlocal_solver import GridProblem, solve, write_trajectory_csv

log = logging.getLogger("carnot_nonlocal")

GROUP_TOL = 1e-12
JACOBIAN_TOL = 1e-10


def _cfg(args) -> dict:
    return C.load_config(args.config) if args.config else C.merge_defaults({})


def _out(args, cfg) -> Path:
    return Path(args.out or cfg["output"].get("dir", "out"))


def cmd_validate_group(args) -> int:
    cfg = _cfg(args)
    G = C.build_group(cfg)
    G.validate()
    res = law_checks(G, args.trials, args.seed)
    ok = all(v <= GROUP_TOL for k, v in res.items() if k != "jacobian_det") \
        and res["jacobian_det"] <= JACOBIAN_TOL
    print(f"group {G.name}: n = {G.n}, strata = {list(G.strata_sizes)}, Q = {G.Q}")
    for k, v in res.items():
        print(f"  {k:14s} {v:.3e}")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_validate_kernel(args) -> int:
    cfg = _cfg(args)
    G = C.build_group(cfg)
    try:
        J = C.build_kernel(cfg, G)
        rep = validate_moments(J)
    except (MomentError, QuadratureError) as exc:
        print(f"FAIL: {exc}")
        return 1
    print(f"kernel {cfg['kernel'].get('shape', 'quartic-bump')} on R^{J.n}: {J.size} nodes")
    print(f"  mass   {rep.mass:.15f}")
    print(f"  max |first moment| {np.max(np.abs(rep.first_moments)):.3e}")
    print(f"  C(J)   {rep.C:.15f}")
    print("PASS")
    return 0


def _samples(sec: dict, n: int, seed: int) -> np.ndarray:
    lo, hi = (np.asarray(b, float) for b in sec.get("box", [[-1.0] * n, [1.0] * n]))
    count = int(sec.get("count", 64))
    return lo + (hi - lo) * np.random.default_rng(seed).uniform(size=(count, n))


def cmd_consistency(args) -> int:
    cfg = _cfg(args)
    sec = cfg.get("consistency")
    if sec is None:
        print("config has no consistency section", file=sys.stderr)
        return 2
    G = C.build_group(cfg)
    J = C.build_kernel(cfg, G)
    kind = sec.get("kind", cfg["operator"]["kind"]).upper()
    cfg["operator"]["kind"] = kind
    cs = None if kind == "E" else C.build_coefficients(cfg, G)
    fields = [parse_expression(f, G.n) for f in sec["fields"]]
    x = _samples(sec.get("samples", {}), G.n, args.seed)
    tab = consistency_study(kind, G, J, fields, sec.get("epsilons", cfg["sweep"]["epsilons"]), x, cs)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "consistency.csv", "w") as fh:
        fh.write("epsilon,error\n")
        for e, r in zip(tab.epsilons, tab.errors):
            fh.write(f"{e!r},{r!r}\n")
    for e, r in zip(tab.epsilons, tab.errors):
        print(f"  eps = {e:<8g} error = {r:.6e}")
    min_slope = sec.get("min_slope")
    ok = True
    if tab.fit is not None:
        print(f"slope {tab.fit.alpha:.4f} (residual {tab.fit.residual:.3f})")
        if min_slope is not None:
            ok = tab.fit.alpha >= float(min_slope)
    elif min_slope is not None:
        print("errors at round-off; no slope fitted")
        ok = bool(max(tab.errors) <= 1e-8)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_converge(args) -> int:
    cfg = _cfg(args)
    report = convergence_study(cfg, workers=args.threads)
    files = emit_report(report, _out(args, cfg), cfg["output"].get("formats", ("csv", "json", "gnuplot")))
    for e, r, h in zip(report.epsilons, report.errors, report.h):
        print(f"  eps = {e:<8g} h = {h:<12.6g} error = {r:.6e}")
    print(f"rate {report.rate:.4f}, prefactor {report.prefactor:.4g}, residual {report.residual:.4f}")
    for k, v in report.checks.items():
        print(f"  {k:20s} {'ok' if v else 'FAILED'}")
    for note in report.notes:
        print(f"  note: {note}")
    print("wrote " + ", ".join(str(f) for f in files))
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_solve(args) -> int:
    cfg = _cfg(args)
    G = C.build_group(cfg)
    J = C.build_kernel(cfg, G)
    kind = cfg["operator"]["kind"].upper()
    eps = float(args.epsilon or cfg["operator"]["epsilon"])
    u0, g = C.build_data(cfg, G)
    lo, hi = C.box(cfg, G)
    h = cfg["domain"].get("h")
    if h is None:
        h = grid_spacing(eps, "eps2/4", float(np.min(hi - lo)))
    p = GridProblem(G, lo, hi, h, g, u0, float(cfg["time"]["T"]), kind, eps, J,
                    None if kind == "E" else C.build_coefficients(cfg, G), C.output_times(cfg))
    if not p.compatible:
        print(f"note: u0 and g differ by {p.compatibility_gap:.3e} on the boundary")
    tr = solve(p, cfg["time"].get("dt"))
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(tr, out / "trajectory.csv")
    print(f"{kind} eps = {eps:g}: {p.n_interior} nodes, {tr.steps} steps of dt <= {tr.dt:.3e}; "
          f"final min/max {tr.values[-1].min():.6g} / {tr.values[-1].max():.6g}")
    print(f"wrote {out / 'trajectory.csv'}")
    return 0


def cmd_report(args) -> int:
    cfg = _cfg(args)
    out = _out(args, cfg)
    src = Path(args.input) if args.input else out / "report.json"
    report = load_report(src)
    emit_report(report, out, ("csv", "gnuplot"))
    print(json.dumps({"experiment_id": report.experiment_id, "rate": report.rate,
                      "residual": report.residual, "passed": report.passed}))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="carnot-nonlocal",
                                 description="Nonlocal diffusion on Carnot groups: validation and convergence studies.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help="worker threads for independent eps runs and numba kernels")
    common.add_argument("--seed", type=int, default=0, metavar="S", help="seed for randomized checks")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate-group", parents=[common], help="randomized group-law checks")
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=cmd_validate_group)
    sub.add_parser("validate-kernel", parents=[common], help="kernel moment checks").set_defaults(
        func=cmd_validate_kernel)
    sub.add_parser("consistency", parents=[common], help="operator consistency study").set_defaults(
        func=cmd_consistency)
    sub.add_parser("converge", parents=[common], help="full eps convergence study").set_defaults(
        func=cmd_converge)
    p = sub.add_parser("solve", parents=[common], help="single nonlocal evolution")
    p.add_argument("--epsilon", type=float, default=None)
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("report", parents=[common], help="re-emit csv and plot script from report.json")
    p.add_argument("--input", metavar="JSON")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        _kernels.set_threads(args.threads)
    try:
        return args.func(args)
    except (C.ConfigError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
