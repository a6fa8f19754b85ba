"""Explicit and Picard time integration of the nonlocal Dirichlet problems.

The domain is an open coordinate box sampled on a uniform grid.  Interior
grid nodes carry unknowns; every other point (the box faces and anything
outside) takes the exterior datum ``g`` evaluated analytically.  Kernel
sample points that land inside the box are read by multilinear
interpolation of nodal values.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .coefficients import CoefficientSet
from .fields import ScalarField, as_field
from .group import StratifiedGroup
from .kernel import KernelJ
from .operators import stencil

log = logging.getLogger(__name__)

__all__ = [
    "GridProblem",
    "RateTable",
    "EvolutionState",
    "Trajectory",
    "PicardResult",
    "ComparisonReport",
    "SolverError",
    "CFLError",
    "assemble_rates",
    "dt_max",
    "step_explicit",
    "solve",
    "picard_solve",
    "check_comparison",
    "write_trajectory_csv",
    "box_grid",
]

SIGMA = 0.9


class SolverError(RuntimeError):
    pass


class CFLError(SolverError):
    pass


def box_grid(lo, hi, h):
    """Node counts and coordinates of a uniform grid on ``[lo, hi]``.

    ``(hi - lo) / h`` must be an integer along every axis.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    h = np.broadcast_to(np.asarray(h, float), lo.shape).copy()
    if np.any(h <= 0):
        raise ValueError("grid spacing must be positive")
    if np.any(hi <= lo):
        raise ValueError("empty domain box")
    ncells = np.rint((hi - lo) / h).astype(np.int64)
    if np.any(np.abs(ncells * h - (hi - lo)) > 1e-9 * (hi - lo)):
        raise ValueError(f"spacing {h} does not divide the box {lo}..{hi}")
    axes = [lo[k] + h[k] * np.arange(ncells[k] + 1) for k in range(len(lo))]
    return ncells, axes, h


@dataclass(eq=False)
class GridProblem:
    """Nonlocal Dirichlet problem ``u_t = Op_eps u`` on a box, ``u = g`` outside."""

    group: StratifiedGroup
    lo: np.ndarray
    hi: np.ndarray
    h: float | np.ndarray
    g: ScalarField
    u0: ScalarField
    T: float
    kind: str
    eps: float
    kernel: KernelJ
    coefficients: CoefficientSet | None = None
    output_times: np.ndarray | None = None
    _table: "RateTable | None" = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("E", "K", "L"):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind in ("K", "L") and self.coefficients is None:
            raise ValueError(f"operator {self.kind} needs a coefficient set")
        if self.T < 0:
            raise ValueError("horizon must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        self.lo = np.asarray(self.lo, float)
        self.hi = np.asarray(self.hi, float)
        if self.lo.shape != (self.group.n,):
            raise ValueError("box does not match the group dimension")
        self.ncells, self.axes, self.h = box_grid(self.lo, self.hi, self.h)
        if np.any(self.ncells < 2):
            raise SolverError("grid has no interior node")
        self.g = as_field(self.g)
        if not self.g.time_dependent:
            g0 = self.g
            self.g = ScalarField(lambda x, t: g0(x), g0.smoothness, True, g0.label)
        self.u0 = as_field(self.u0)
        if self.output_times is None:
            self.output_times = np.linspace(0.0, self.T, 11)[1:] if self.T > 0 else np.array([0.0])
        self.output_times = np.asarray(self.output_times, float)
        shape = tuple(self.ncells + 1)
        self.shape = shape
        self.strides = np.array([int(np.prod(shape[k + 1:])) for k in range(len(shape))], np.int64)
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.grid_points = np.stack([m.ravel() for m in mesh], -1)
        multi = np.stack(np.unravel_index(np.arange(self.grid_points.shape[0]), shape), -1)
        interior = np.all((multi > 0) & (multi < np.array(shape) - 1), axis=-1)
        self.interior_flat = np.flatnonzero(interior)
        self.boundary_flat = np.flatnonzero(~interior)
        self.points = self.grid_points[self.interior_flat]
        if self.eps > np.max(self.hi - self.lo):
            log.warning("eps %.3g exceeds the domain diameter; stencils are exterior dominated", self.eps)

    @property
    def n_interior(self) -> int:
        return self.interior_flat.shape[0]

    @property
    def compatibility_gap(self) -> float:
        """Largest ``|u0 - g(., 0)|`` over the grid's boundary nodes."""
        pts = self.grid_points[self.boundary_flat]
        return float(np.max(np.abs(self.u0(pts) - self.g(pts, 0.0))))

    @property
    def compatible(self) -> bool:
        return self.compatibility_gap <= 1e-8

    def with_data(self, u0=None, g=None) -> "GridProblem":
        """Same operator and grid, new data; the assembled rates are shared."""
        q = replace(self, u0=self.u0 if u0 is None else u0, g=self.g if g is None else g)
        q._table = self._table
        return q

    def rate_table(self) -> "RateTable":
        if self._table is None:
            self._table = assemble_rates(self)
        return self._table


@dataclass
class RateTable:
    """Discrete operator ``Op u = A [u_interior; g(ext_points, t)]``.

    For the Fokker-Planck operator the mobility is folded into ``A``.
    """

    matrix: sp.csr_matrix
    ext_points: np.ndarray
    total_rate: np.ndarray
    n_int: int

    def apply(self, u, gvals):
        z = np.concatenate([u, gvals])
        m = self.matrix
        return _kernels.csr_matvec(m.indptr, m.indices, m.data, z)

    def exterior_values(self, g: ScalarField, t: float):
        if self.ext_points.shape[0] == 0:
            return np.zeros(0)
        return g(self.ext_points, t)


def assemble_rates(p: GridProblem, chunk: int = 2048) -> RateTable:
    """Build the linear functional of every interior node.

    Row ``x``: ``sum_q omega_q [alpha u](y_q) - alpha(x) (sum_q omega_q) u(x)``
    with ``alpha = a`` for the Fokker-Planck operator and ``1`` otherwise;
    ``[alpha u](y)`` is interpolated from nodal values of ``alpha u`` when
    ``y`` lies in the open box and is ``alpha(y) g(y, t)`` otherwise.
    """
    G = p.group
    n = G.n
    n_int = p.n_interior
    if n_int == 0:
        raise SolverError("empty interior")
    flux = p.coefficients.a_scalar if p.kind == "L" else None
    n_full = p.grid_points.shape[0]
    col_of = np.full(n_full, -1, np.int64)
    col_of[p.interior_flat] = np.arange(n_int)
    n_bnd = p.boundary_flat.shape[0]
    col_of[p.boundary_flat] = n_int + np.arange(n_bnd)
    alpha_nodes = flux(p.grid_points) if flux is not None else np.ones(n_full)
    ext_pts = [p.grid_points[p.boundary_flat]]
    n_ext = n_bnd
    blocks = []
    total_rate = np.empty(n_int)
    reach = 0.0
    for s in range(0, n_int, chunk):
        x = p.points[s:s + chunk]
        m = x.shape[0]
        rid = np.arange(m)
        st = stencil(p.kind, G, p.kernel, x, p.eps, p.coefficients)
        w = np.asarray(st.weights, float)
        if np.any(w < 0):
            raise SolverError(f"negative kernel weight {w.min():.3e}: eps too large for the drift")
        pts = st.points
        reach = max(reach, float(np.max(np.abs(pts - x[:, None, :]))))
        diag = -alpha_nodes[p.interior_flat[s:s + m]] * w.sum(-1)
        flat_pts = pts.reshape(-1, n)
        flat_w = w.reshape(-1)
        flat_row = np.repeat(rid, w.shape[1])
        inside = np.all((flat_pts > p.lo) & (flat_pts < p.hi), axis=-1)
        # interior samples -> multilinear corners
        ip = np.ascontiguousarray(flat_pts[inside])
        cidx, cw = _kernels.interp_corners(ip, p.lo, p.h, p.ncells, p.strides)
        rows = [np.repeat(flat_row[inside], cidx.shape[1])]
        cols = [col_of[cidx].ravel()]
        vals = [(flat_w[inside][:, None] * cw * alpha_nodes[cidx]).ravel()]
        # exterior samples -> g
        ep = flat_pts[~inside]
        if ep.shape[0]:
            ea = flux(ep) if flux is not None else np.ones(ep.shape[0])
            ext_pts.append(ep)
            rows.append(flat_row[~inside])
            cols.append(n_int + n_ext + np.arange(ep.shape[0]))
            vals.append(flat_w[~inside] * ea)
            n_ext += ep.shape[0]
        rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        pos_rate = np.bincount(rows, weights=vals, minlength=m)
        total_rate[s:s + m] = np.maximum(pos_rate, -diag)
        rows = np.concatenate([rows, rid])
        cols = np.concatenate([cols, s + rid])
        vals = np.concatenate([vals, diag])
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(m, n_int + n_ext)))
    if reach < np.min(p.h):
        raise SolverError(f"kernel reach {reach:.3g} is below the grid spacing {np.min(p.h):.3g}: "
                          "eps too small for h")
    if not np.all(np.isfinite(total_rate)):
        raise SolverError("rate overflow")
    for b in blocks:
        b.resize((b.shape[0], n_int + n_ext))
    mat = sp.vstack(blocks, format="csr")
    mat.sum_duplicates()
    return RateTable(mat, np.concatenate(ext_pts), total_rate, n_int)


@dataclass
class EvolutionState:
    t: float
    values: np.ndarray
    last_dt: float = 0.0

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())


def dt_max(p: GridProblem, sigma: float = SIGMA) -> float:
    return sigma / float(p.rate_table().total_rate.max())


def initial_state(p: GridProblem) -> EvolutionState:
    return EvolutionState(0.0, p.u0(p.points).astype(float))


def _operator(p: GridProblem, u, t):
    tab = p.rate_table()
    return tab.apply(u, tab.exterior_values(p.g, t))


def step_explicit(p: GridProblem, state: EvolutionState, dt: float) -> EvolutionState:
    """One forward Euler step; ``g`` is read at the current time."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = 1.0 / float(p.rate_table().total_rate.max())
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt {dt:.3e} exceeds the monotonicity bound {limit:.3e}")
    new = state.values + dt * _operator(p, state.values, state.t)
    if not np.all(np.isfinite(new)):
        raise SolverError(f"non-finite values at t = {state.t + dt:.6g}")
    return EvolutionState(state.t + dt, new, dt)


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    values: np.ndarray  # (len(times), n_points)
    dt: float
    steps: int


def solve(p: GridProblem, dt: float | None = None, callback=None) -> Trajectory:
    """March to ``T`` landing exactly on ``p.output_times``.

    ``callback(state)`` is called after every step (and once for the
    initial state).
    """
    dmax = dt_max(p)
    dt = dmax if dt is None else float(dt)
    if dt > dmax / SIGMA * (1 + 1e-12):
        raise CFLError(f"dt {dt:.3e} exceeds the monotonicity bound {dmax / SIGMA:.3e}")
    state = initial_state(p)
    if callback is not None:
        callback(state)
    out_t = np.asarray(p.output_times, float)
    frames = []
    steps = 0
    for target in out_t:
        while target - state.t > 1e-12 * max(1.0, p.T):
            step = min(dt, target - state.t)
            if target - (state.t + step) <= 1e-12 * max(1.0, p.T):
                step = target - state.t
            state = step_explicit(p, state, step)
            state.t = target if abs(state.t - target) <= 1e-12 * max(1.0, p.T) else state.t
            steps += 1
            if callback is not None:
                callback(state)
        frames.append(state.values.copy())
    return Trajectory(out_t, p.points, np.array(frames), dt, steps)


@dataclass
class PicardResult:
    state: EvolutionState
    distances: np.ndarray   # ||w_{k+1} - w_k||_inf over the window
    q: float
    time_nodes: np.ndarray
    iterates: np.ndarray    # final iterate on all time nodes

    @property
    def ratios(self) -> np.ndarray:
        """Successive contraction ratios, skipping pairs already at round-off."""
        d = self.distances
        floor = 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(self.iterates))))
        keep = d[:-1] > floor
        return d[1:][keep] / d[:-1][keep]


def picard_solve(p: GridProblem, t0_window: float, n_iter: int, n_time_nodes: int = 64,
                 stall_tol: float = 0.0) -> PicardResult:
    """Fixed-point iteration ``w <- u0 + int_0^t Op w`` on ``[0, t0_window]``.

    Time integrals use the trapezoid rule on ``n_time_nodes`` uniform nodes.
    The window must satisfy ``q = 2 t0 max(Lambda) < 1``.  Iteration stops
    after ``n_iter`` sweeps or once the update falls below ``stall_tol``.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    tab = p.rate_table()
    q = 2.0 * t0_window * float(tab.total_rate.max())
    if q >= 1.0:
        raise SolverError(f"window {t0_window:.3e} too long: contraction factor {q:.3f} >= 1")
    tau = np.linspace(0.0, t0_window, n_time_nodes)
    u0 = p.u0(p.points).astype(float)
    gext = [tab.exterior_values(p.g, t) for t in tau]
    W = np.broadcast_to(u0, (n_time_nodes, u0.shape[0])).copy()
    dist = []
    dtau = np.diff(tau)
    for _ in range(n_iter):
        F = np.array([tab.apply(W[k], gext[k]) for k in range(n_time_nodes)])
        incr = np.concatenate([np.zeros((1, u0.shape[0])),
                               np.cumsum(0.5 * dtau[:, None] * (F[1:] + F[:-1]), axis=0)])
        W_new = u0 + incr
        d = float(np.max(np.abs(W_new - W)))
        dist.append(d)
        W = W_new
        if d <= stall_tol:
            break
    return PicardResult(EvolutionState(t0_window, W[-1].copy()), np.array(dist), q, tau, W)


@dataclass
class ComparisonReport:
    min_difference: float
    ok: bool
    where: np.ndarray | None
    when: float | None
    steps: int


def check_comparison(pA: GridProblem, pB: GridProblem, dt: float | None = None,
                     tol: float = 1e-10) -> ComparisonReport:
    """Run two data-ordered problems in lock step and track ``min(uA - uB)``."""
    if pA.n_interior != pB.n_interior or not np.array_equal(pA.points, pB.points):
        raise ValueError("problems must share the grid")
    dt = min(dt_max(pA), dt_max(pB)) if dt is None else dt
    sA, sB = initial_state(pA), initial_state(pB)
    worst = (np.inf, None, 0.0)
    steps = 0

    def track(a, b):
        nonlocal worst
        diff = a.values - b.values
        i = int(np.argmin(diff))
        if diff[i] < worst[0]:
            worst = (float(diff[i]), pA.points[i], a.t)

    track(sA, sB)
    while pA.T - sA.t > 1e-12 * max(1.0, pA.T):
        step = min(dt, pA.T - sA.t)
        sA = step_explicit(pA, sA, step)
        sB = step_explicit(pB, sB, step)
        steps += 1
        track(sA, sB)
    return ComparisonReport(worst[0], worst[0] >= -tol, worst[1], worst[2], steps)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.points.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"x{k + 1}" for k in range(n)] + ["value"])
        for t, frame in zip(traj.times, traj.values):
            for x, v in zip(traj.points, frame):
                wr.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(v))])
