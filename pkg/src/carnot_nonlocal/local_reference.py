"""Finite-difference reference solver for the local parabolic limits.

Left-invariant derivatives are rewritten through coordinate partials,
``X_i = sum_k J_ki d_k``, so that

    sum a_ij X_i X_j v + sum b_i X_i v = sum D_kl d_k d_l v + sum beta_l d_l v

with ``D = J1 a J1^T`` (``J1`` the horizontal columns of ``J``) and
``beta_l = sum a_ij J_ki d_k J_lj + sum b_i J_li``.  Both are frozen per
node and applied with centered differences on a uniform box grid.
Dirichlet values come from ``g`` on the grid's boundary nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coefficients import CoefficientSet
from .fields import ScalarField, as_field
from .group import StratifiedGroup, left_jacobian, multiply

__all__ = [
    "LocalGrid",
    "StencilField",
    "CoordinateOperator",
    "LocalState",
    "LocalProblem",
    "LocalTrajectory",
    "LocalCFLError",
    "build_stencils",
    "coordinate_operator",
    "step_local",
    "step_fokker_planck",
    "solve_local",
    "richardson_ratio",
    "discrete_local_apply",
]

C_STAB = 0.4
BUILTIN_GROUPS = ("R1", "R2", "R3", "H1")


class LocalCFLError(RuntimeError):
    pass


@dataclass(eq=False)
class LocalGrid:
    lo: np.ndarray
    hi: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, float)
        self.hi = np.asarray(self.hi, float)
        self.h = np.broadcast_to(np.asarray(self.h, float), self.lo.shape).copy()
        if np.any(self.h <= 0) or np.any(self.hi <= self.lo):
            raise ValueError("need h > 0 and a nonempty box")
        self.ncells = np.rint((self.hi - self.lo) / self.h).astype(np.int64)
        if np.any(np.abs(self.ncells * self.h - (self.hi - self.lo)) > 1e-9 * (self.hi - self.lo)):
            raise ValueError(f"spacing {self.h} does not divide the box")
        if np.any(self.ncells < 2):
            raise ValueError("grid has no interior node")
        self.shape = tuple(int(c) + 1 for c in self.ncells)
        self.strides = np.array([int(np.prod(self.shape[k + 1:])) for k in range(len(self.shape))],
                                np.int64)
        self.axes = [self.lo[k] + self.h[k] * np.arange(self.shape[k]) for k in range(len(self.shape))]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.points = np.stack([m.ravel() for m in mesh], -1)
        multi = np.stack(np.unravel_index(np.arange(self.points.shape[0]), self.shape), -1)
        inner = np.all((multi > 0) & (multi < np.array(self.shape) - 1), axis=-1)
        self.interior = np.flatnonzero(inner)
        self.boundary = np.flatnonzero(~inner)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def node_index(self, x) -> np.ndarray:
        """Flat indices of grid nodes at coordinates ``x`` (must be nodes)."""
        s = (np.asarray(x, float) - self.lo) / self.h
        m = np.rint(s).astype(np.int64)
        if np.any(np.abs(s - m) > 1e-6) or np.any(m < 0) or np.any(m > self.ncells):
            raise ValueError("points are not nodes of this grid")
        return m @ self.strides


@dataclass
class StencilField:
    """Per-node Jacobian ``J[p, k, i]`` and its derivative ``dJ[p, k, l, j] = d_k J_lj``."""

    grid: LocalGrid
    J: np.ndarray
    dJ: np.ndarray
    method: str
    nodes: np.ndarray  # flat grid indices the rows refer to


def build_stencils(G: StratifiedGroup, grid: LocalGrid, method: str = "auto",
                   nodes: np.ndarray | None = None) -> StencilField:
    """Jacobians at ``grid.interior`` (or at the flat indices ``nodes``).

    ``analytic`` uses the closed form of the step-2 group law; ``fd``
    differences :func:`multiply` directly.  ``auto`` picks ``analytic`` for
    the built-in groups.
    """
    if method == "auto":
        method = "analytic" if G.name in BUILTIN_GROUPS else "fd"
    idx = grid.interior if nodes is None else nodes
    x = grid.points[idx]
    n = G.n
    if method == "analytic":
        J = left_jacobian(G, x)
        dJ = np.broadcast_to(0.5 * np.transpose(G.structure_constants, (0, 2, 1)),
                             (x.shape[0], n, n, n)).copy()
    elif method == "fd":
        J = _fd_jacobian(G, x)
        dJ = np.empty((x.shape[0], n, n, n))
        s = 1e-2
        for k in range(n):
            e = np.zeros(n)
            e[k] = s
            dJ[:, k] = (_fd_jacobian(G, x + e) - _fd_jacobian(G, x - e)) / (2 * s)
    else:
        raise ValueError(f"unknown stencil method {method!r}")
    return StencilField(grid, J, dJ, method, np.asarray(idx))


def _fd_jacobian(G, x, t=1e-3):
    # the product is affine in t for step <= 2, so central differences are exact
    n = G.n
    J = np.empty(x.shape[:-1] + (n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = t
        J[..., :, i] = (multiply(G, x, e) - multiply(G, x, -e)) / (2 * t)
    return J


@dataclass
class CoordinateOperator:
    D: np.ndarray        # (P, n, n)
    beta: np.ndarray     # (P, n)
    centers: np.ndarray  # flat grid indices
    flux: ScalarField | None
    rate: float          # max_x of the explicit stability functional

    def dt_max(self) -> float:
        return C_STAB / self.rate


def coordinate_operator(G: StratifiedGroup, stencils: StencilField, cs: CoefficientSet | None = None,
                        a_scalar=None) -> CoordinateOperator:
    """Freeze ``D`` and ``beta`` per node.

    With ``cs`` this is the anisotropic-drift operator; with ``a_scalar``
    the Fokker-Planck operator ``sum_i X_i X_i (a v)``, whose coordinate
    form acts on ``w = a v``.
    """
    grid = stencils.grid
    x = grid.points[stencils.nodes]
    n1, n12 = G.n1, G.n12
    J, dJ = stencils.J, stencils.dJ
    J1 = J[:, :, :n1]
    flux = None
    if a_scalar is not None:
        flux = as_field(a_scalar)
        A = np.broadcast_to(np.eye(n1), (J.shape[0], n1, n1))
        b = np.zeros((J.shape[0], n12))
    else:
        A = cs.diffusion(x)
        b = cs.drift(x)
    D = J1 @ A @ np.swapaxes(J1, -1, -2)
    # sum_ij a_ij sum_k J_ki dJ[k, l, j]
    beta = np.einsum("pij,pki,pklj->pl", A, J1, dJ[:, :, :, :n1])
    beta += np.einsum("pi,pli->pl", b, J[:, :, :n12])
    inv_h = 1.0 / grid.h
    diag = np.einsum("pkk,k->p", D, inv_h ** 2)
    absD = np.abs(D) * np.outer(inv_h, inv_h)
    off = 0.25 * (absD.sum((-1, -2)) - np.einsum("pkk->p", absD))
    rate = diag + off
    if flux is not None:
        rate = rate * np.abs(flux(x))
    return CoordinateOperator(np.ascontiguousarray(D), np.ascontiguousarray(beta),
                              stencils.nodes, flux, float(rate.max()))


@dataclass
class LocalState:
    t: float
    values: np.ndarray  # all grid nodes, boundary included


def _apply(op: CoordinateOperator, grid: LocalGrid, w):
    return _kernels.grid_operator(w, op.centers, grid.strides, 1.0 / grid.h, op.D, op.beta)


def _impose(grid, values, g, t):
    gb = g(grid.points[grid.boundary], t)
    if not np.all(np.isfinite(gb)):
        raise ValueError(f"boundary datum missing (non-finite) at t = {t:.6g}")
    values[grid.boundary] = gb


def _check_dt(op, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > op.dt_max() * (1 + 1e-12):
        raise LocalCFLError(f"dt {dt:.3e} exceeds the explicit bound {op.dt_max():.3e}")


def step_local(G: StratifiedGroup, cs: CoefficientSet, stencils: StencilField, state: LocalState,
               dt: float, g, scheme: str = "centered", op: CoordinateOperator | None = None
               ) -> LocalState:
    """Euler step of ``v_t = sum a_ij X_i X_j v + sum b_i X_i v``."""
    if scheme != "centered":
        raise ValueError(f"unsupported scheme {scheme!r}")
    op = op or coordinate_operator(G, stencils, cs)
    _check_dt(op, dt)
    grid = stencils.grid
    new = state.values.copy()
    new[grid.interior] += dt * _apply(op, grid, state.values)
    _impose(grid, new, as_field(g), state.t + dt)
    return LocalState(state.t + dt, new)


def step_fokker_planck(G: StratifiedGroup, a_scalar, stencils: StencilField, state: LocalState,
                       dt: float, g, op: CoordinateOperator | None = None,
                       a_nodes: np.ndarray | None = None) -> LocalState:
    """Euler step of ``v_t = sum_{i <= n1} X_i X_i (a v)``."""
    op = op or coordinate_operator(G, stencils, a_scalar=a_scalar)
    _check_dt(op, dt)
    grid = stencils.grid
    if a_nodes is None:
        a_nodes = as_field(a_scalar)(grid.points)
    new = state.values.copy()
    new[grid.interior] += dt * _apply(op, grid, a_nodes * state.values)
    _impose(grid, new, as_field(g), state.t + dt)
    return LocalState(state.t + dt, new)


@dataclass(eq=False)
class LocalProblem:
    """Local Dirichlet problem on a box; ``kind`` is ``"K"`` or ``"L"``.

    The subLaplacian flow ``(C/2) J`` is the ``K`` case with diffusion
    ``(C/2) I`` and no drift.
    """

    group: StratifiedGroup
    lo: np.ndarray
    hi: np.ndarray
    g: ScalarField
    u0: ScalarField
    T: float
    kind: str = "K"
    coefficients: CoefficientSet | None = None
    output_times: np.ndarray | None = None
    stencil_method: str = "auto"
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ("K", "L"):
            raise ValueError(f"local problems are of kind K or L, not {self.kind!r}")
        if self.coefficients is None:
            raise ValueError("a coefficient set is required")
        if self.kind == "L" and self.coefficients.mode != "fokker-planck":
            raise ValueError("kind L needs fokker-planck coefficients")
        self.g = as_field(self.g)
        self.u0 = as_field(self.u0)
        if self.output_times is None:
            self.output_times = np.linspace(0.0, self.T, 11)[1:] if self.T > 0 else np.array([0.0])
        self.output_times = np.asarray(self.output_times, float)

    def setup(self, h):
        key = tuple(np.broadcast_to(np.asarray(h, float), np.shape(self.lo)))
        if key not in self._cache:
            grid = LocalGrid(self.lo, self.hi, np.array(key))
            st = build_stencils(self.group, grid, self.stencil_method)
            if self.kind == "L":
                op = coordinate_operator(self.group, st, a_scalar=self.coefficients.a_scalar)
            else:
                op = coordinate_operator(self.group, st, self.coefficients)
            self._cache[key] = (grid, st, op)
        return self._cache[key]


@dataclass
class LocalTrajectory:
    times: np.ndarray
    grid: LocalGrid
    values: np.ndarray  # (len(times), all nodes)
    dt: float
    steps: int

    def at_points(self, x) -> np.ndarray:
        """Values at grid nodes ``x`` for every output time."""
        return self.values[:, self.grid.node_index(x)]


def solve_local(problem: LocalProblem, dt: float | None = None, h=1 / 64) -> LocalTrajectory:
    """March to ``T`` with uniform steps no larger than ``dt``, landing on every output time."""
    G = problem.group
    grid, st, op = problem.setup(h)
    dt = op.dt_max() if dt is None else float(dt)
    _check_dt(op, dt)
    v = problem.u0(grid.points).astype(float)
    state = LocalState(0.0, v)
    _impose(grid, state.values, problem.g, 0.0)
    a_nodes = problem.coefficients.a_scalar(grid.points) if problem.kind == "L" else None
    frames, steps, t_prev = [], 0, 0.0
    for target in problem.output_times:
        span = target - t_prev
        k = int(np.ceil(span / dt * (1 - 1e-12))) if span > 0 else 0
        for j in range(k):
            step = span / k
            if problem.kind == "L":
                state = step_fokker_planck(G, None, st, state, step, problem.g, op, a_nodes)
            else:
                state = step_local(G, problem.coefficients, st, state, step, problem.g, op=op)
            steps += 1
        state.t = target
        t_prev = target
        frames.append(state.values.copy())
    return LocalTrajectory(problem.output_times, grid, np.array(frames), dt, steps)


def richardson_ratio(problem: LocalProblem, h: float, margin: float = 1.1) -> float:
    """``|v_h - v_{h/2}| / |v_{h/2} - v_{h/4}|`` at time ``T`` on the coarse nodes.

    Time steps shrink by exactly 4 per halving of ``h`` so the ratio
    measures the combined ``O(h^2 + dt)`` error.
    """
    single = LocalProblem(problem.group, problem.lo, problem.hi, problem.g, problem.u0, problem.T,
                          problem.kind, problem.coefficients, np.array([problem.T]),
                          problem.stencil_method)
    n0 = None
    sols = []
    for r in (1, 2, 4):
        grid, _, op = single.setup(h / r)
        if n0 is None:
            n0 = int(np.ceil(margin * problem.T / op.dt_max()))
        dt = problem.T / (n0 * r * r)
        tr = solve_local(single, dt, h / r)
        sols.append(tr)
    coarse = sols[0].grid.points[sols[0].grid.interior]
    v = [s.at_points(coarse)[-1] for s in sols]
    return float(np.max(np.abs(v[0] - v[1])) / np.max(np.abs(v[1] - v[2])))


def discrete_local_apply(G: StratifiedGroup, f, x, h: float, cs: CoefficientSet | None = None,
                         a_scalar=None, method: str = "auto") -> np.ndarray:
    """The solver's discrete operator evaluated at isolated points ``x``.

    Each point gets its own ``3^n`` patch of spacing ``h``; the result is
    exactly what :func:`step_local` would add per unit time at that node.
    """
    x = np.atleast_2d(np.asarray(x, float))
    f = as_field(f)
    out = np.empty(x.shape[0])
    for p, xp in enumerate(x):
        grid = LocalGrid(xp - h, xp + h, h)
        st = build_stencils(G, grid, method)
        if a_scalar is not None:
            op = coordinate_operator(G, st, a_scalar=a_scalar)
            w = as_field(a_scalar)(grid.points) * f(grid.points)
        else:
            op = coordinate_operator(G, st, cs)
            w = f(grid.points)
        out[p] = _apply(op, grid, w)[0]
    return out
