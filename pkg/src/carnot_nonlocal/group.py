"""Stratified (Carnot) groups of step <= 2 in exponential coordinates.

A point is an array whose trailing axis holds the coordinates
``(x_1, ..., x_n)`` of ``exp(sum x_j X_j)``.  All functions broadcast over
leading axes.  Basis indices are 0-based in the Python API and 1-based in
config files.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import as_field

__all__ = [
    "StratifiedGroup",
    "GroupValidationError",
    "UnsupportedStepError",
    "abelian",
    "heisenberg",
    "builtin",
    "group_from_config",
    "load_group",
    "multiply",
    "inverse",
    "dilate",
    "homogeneous_norm",
    "vector_field_apply",
    "second_order_apply",
    "taylor2",
    "Taylor2",
    "left_jacobian",
    "fd_step",
    "law_checks",
]

_EPS = np.finfo(float).eps


class GroupValidationError(ValueError):
    pass


class UnsupportedStepError(NotImplementedError):
    pass


@dataclass(eq=False)
class StratifiedGroup:
    """Lie algebra data of a stratified group.

    ``structure_constants[i, j, k]`` is c_{ij}^k in ``[X_i, X_j] = sum_k c_{ij}^k X_k``.
    """

    strata_sizes: tuple
    structure_constants: np.ndarray
    name: str = "custom"
    dilation_exponents: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.strata_sizes = tuple(int(s) for s in self.strata_sizes)
        if not self.strata_sizes or any(s <= 0 for s in self.strata_sizes):
            raise GroupValidationError(f"strata sizes must be positive, got {self.strata_sizes}")
        if len(self.strata_sizes) > 2:
            raise UnsupportedStepError(
                f"step {len(self.strata_sizes)} groups are not supported (step <= 2 only)")
        n = sum(self.strata_sizes)
        c = np.asarray(self.structure_constants, dtype=float)
        if c.shape != (n, n, n):
            raise GroupValidationError(f"structure constants must have shape {(n, n, n)}, got {c.shape}")
        c.setflags(write=False)
        self.structure_constants = c
        lam = np.concatenate([np.full(s, k + 1) for k, s in enumerate(self.strata_sizes)])
        lam.setflags(write=False)
        self.dilation_exponents = lam

    @property
    def n(self) -> int:
        return sum(self.strata_sizes)

    @property
    def step(self) -> int:
        return len(self.strata_sizes)

    @property
    def n1(self) -> int:
        return self.strata_sizes[0]

    @property
    def n12(self) -> int:
        """Number of coordinates in the first two strata."""
        return sum(self.strata_sizes[:2])

    @property
    def Q(self) -> int:
        return sum((k + 1) * s for k, s in enumerate(self.strata_sizes))

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.structure_constants)

    def bracket(self, x, y):
        """Lie bracket of algebra elements given by coordinate vectors."""
        return np.einsum("...i,...j,ijk->...k", x, y, self.structure_constants)

    def validate(self, tol: float = 1e-12) -> None:
        """Check antisymmetry, grading, Jacobi and generation by the first stratum."""
        c = self.structure_constants
        lam = self.dilation_exponents
        bad = np.argwhere(np.abs(c + c.transpose(1, 0, 2)) > tol)
        if bad.size:
            i, j, k = bad[0]
            raise GroupValidationError(f"antisymmetry violated at c[{i + 1},{j + 1}]^{k + 1}")
        graded = lam[None, None, :] == lam[:, None, None] + lam[None, :, None]
        bad = np.argwhere((np.abs(c) > tol) & ~graded)
        if bad.size:
            i, j, k = bad[0]
            raise GroupValidationError(
                f"grading violated: c[{i + 1},{j + 1}]^{k + 1} != 0 but weights "
                f"{lam[i]}+{lam[j]} != {lam[k]}")
        # sum_l c_jk^l c_il^m + c_ki^l c_jl^m + c_ij^l c_kl^m = 0
        jac = (np.einsum("jkl,ilm->ijkm", c, c)
               + np.einsum("kil,jlm->ijkm", c, c)
               + np.einsum("ijl,klm->ijkm", c, c))
        bad = np.argwhere(np.abs(jac) > tol * max(1.0, np.abs(c).max() ** 2))
        if bad.size:
            i, j, k, m = bad[0]
            raise GroupValidationError(
                f"Jacobi identity fails on (X{i + 1}, X{j + 1}, X{k + 1}), component {m + 1}")
        if self.step == 2:
            n1 = self.n1
            image = c[:n1, :n1, n1:].reshape(n1 * n1, -1)
            if np.linalg.matrix_rank(image, tol=1e-10) < self.strata_sizes[1]:
                raise GroupValidationError("first stratum does not generate the second")

    def to_config(self) -> dict:
        trip = [[int(i) + 1, int(j) + 1, int(k) + 1, float(self.structure_constants[i, j, k])]
                for i, j, k in np.argwhere(self.structure_constants != 0) if i < j]
        return {"dimension": self.n, "strata": list(self.strata_sizes),
                "structure_constants": trip}


def abelian(d: int) -> StratifiedGroup:
    """Euclidean R^d as a step-1 group."""
    return StratifiedGroup((d,), np.zeros((d, d, d)), name=f"R{d}")


def heisenberg() -> StratifiedGroup:
    """First Heisenberg group H^1: [X1, X2] = X3."""
    c = np.zeros((3, 3, 3))
    c[0, 1, 2] = 1.0
    c[1, 0, 2] = -1.0
    return StratifiedGroup((2, 1), c, name="H1")


def builtin(name: str) -> StratifiedGroup:
    key = name.lower().replace("-", "").replace("_", "")
    if key in ("heisenberg", "h1", "heisenberg1"):
        return heisenberg()
    for d in (1, 2, 3):
        if key in (f"r{d}", f"abelian{d}", f"euclidean{d}"):
            return abelian(d)
    raise KeyError(f"unknown built-in group {name!r}")


def group_from_config(cfg: dict) -> StratifiedGroup:
    """Build and validate a group from a JSON-compatible mapping.

    Accepts ``{"builtin": "heisenberg"}`` or the explicit form with
    ``dimension``, ``strata`` and ``structure_constants`` as 1-based
    ``[i, j, k, value]`` entries.  A missing antisymmetric partner is
    filled in; an inconsistent one is rejected.
    """
    if "builtin" in cfg:
        G = builtin(cfg["builtin"])
        if "dimension" in cfg and int(cfg["dimension"]) != G.n:
            raise GroupValidationError("dimension does not match the built-in group")
        return G
    n = int(cfg["dimension"])
    strata = tuple(cfg.get("strata", [n]))
    if sum(strata) != n:
        raise GroupValidationError(f"strata {strata} do not sum to dimension {n}")
    c = np.zeros((n, n, n))
    given = np.zeros((n, n, n), dtype=bool)
    for entry in cfg.get("structure_constants", []):
        if len(entry) != 4:
            raise GroupValidationError(f"structure constant entry {entry} is not [i, j, k, value]")
        i, j, k = (int(v) - 1 for v in entry[:3])
        if not all(0 <= v < n for v in (i, j, k)):
            raise GroupValidationError(f"index out of range in {entry}")
        val = float(entry[3])
        if given[i, j, k] and c[i, j, k] != val:
            raise GroupValidationError(f"conflicting values for c[{i + 1},{j + 1}]^{k + 1}")
        c[i, j, k] = val
        given[i, j, k] = True
    for i, j, k in zip(*np.nonzero(given)):
        if given[j, i, k]:
            continue
        c[j, i, k] = -c[i, j, k]
    G = StratifiedGroup(strata, c, name=cfg.get("name", "custom"))
    G.validate()
    return G


def load_group(path) -> StratifiedGroup:
    with open(Path(path)) as fh:
        cfg = json.load(fh)
    return group_from_config(cfg.get("group", cfg))


def _check_dim(G: StratifiedGroup, *xs):
    for x in xs:
        if np.shape(x)[-1:] != (G.n,):
            raise ValueError(f"point of shape {np.shape(x)} does not live in a {G.n}-dimensional group")


def multiply(G: StratifiedGroup, x, y):
    """Group product via the step-2 BCH formula ``x + y + [x, y]/2``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_dim(G, x, y)
    if G.is_abelian:
        return x + y
    return x + y + 0.5 * G.bracket(x, y)


def inverse(G: StratifiedGroup, x):
    return -np.asarray(x, dtype=float)


def dilate(G: StratifiedGroup, r, x):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("dilation factor must be positive")
    x = np.asarray(x, dtype=float)
    _check_dim(G, x)
    return x * np.power(r[..., None], G.dilation_exponents)


def homogeneous_norm(G: StratifiedGroup, x, rtol: float = 1e-12):
    """Gauge ``1/r(X)`` where ``||delta_r X||_2 = 1``.

    The root is found in ``s = log r`` where ``log ||delta_{e^s} X||^2`` is
    convex and increasing; Newton steps are safeguarded by a bisection
    bracket derived from the slope bounds ``2 <= d/ds <= 2 max(lambda)``.
    """
    x = np.asarray(x, dtype=float)
    _check_dim(G, x)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite coordinates")
    lam = G.dilation_exponents.astype(float)
    c2 = x * x
    nz = np.any(c2 > 0, axis=-1)
    out = np.zeros(x.shape[:-1])
    if not np.any(nz):
        return out if out.ndim else float(out)
    c2 = c2[nz]
    scale = c2.max(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        logw = np.log(c2 / scale)  # -inf for zero coordinates

    def phi(s):
        # log ||delta_{e^s} X||^2 evaluated stably in log space
        a = logw + 2.0 * lam * s[:, None]
        m = a.max(-1, keepdims=True)
        e = np.exp(a - m)
        val = m[:, 0] + np.log(e.sum(-1)) + np.log(scale[:, 0])
        der = 2.0 * (e * lam).sum(-1) / e.sum(-1)
        return val, der

    phi0 = np.log(c2.sum(-1))
    lmax = lam.max()
    a = np.where(phi0 >= 0, -phi0 / 2.0, -phi0 / (2.0 * lmax))
    b = np.where(phi0 >= 0, -phi0 / (2.0 * lmax), -phi0 / 2.0)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    s = 0.5 * (lo + hi)
    for _ in range(200):
        val, der = phi(s)
        lo = np.where(val < 0, s, lo)
        hi = np.where(val >= 0, s, hi)
        step = s - val / der
        inside = (step > lo) & (step < hi)
        s_new = np.where(inside, step, 0.5 * (lo + hi))
        done = np.abs(s_new - s) <= rtol * 1e-2 * np.maximum(1.0, np.abs(s))
        s = s_new
        if np.all(done):
            break
    out[nz] = np.exp(-s)
    return out if out.ndim else float(out)


def fd_step(order: int, smoothness: float = math.inf) -> float:
    """Relative finite-difference step for a derivative of the given order."""
    if order == 1:
        return _EPS ** (1 / 3) if smoothness >= 3 else _EPS ** 0.5
    return _EPS ** 0.25 if smoothness >= 4 else _EPS ** (1 / 3)


def _basis(G, i, t):
    e = np.zeros(np.shape(t) + (G.n,))
    e[..., i] = t
    return e


def _default_h(x, order, f):
    smooth = getattr(f, "smoothness", math.inf)
    return fd_step(order, smooth) * np.maximum(1.0, np.linalg.norm(x, axis=-1))


def _check_index(G, *idx):
    for i in idx:
        if not 0 <= i < G.n:
            raise IndexError(f"basis index {i} out of range for dimension {G.n}")


def vector_field_apply(G: StratifiedGroup, i: int, f, x, h=None):
    """Left-invariant derivative ``X_i f(x)`` by central differences along ``t -> x exp(t X_i)``."""
    _check_index(G, i)
    f = as_field(f)
    x = np.asarray(x, dtype=float)
    _check_dim(G, x)
    h = _default_h(x, 1, f) if h is None else np.broadcast_to(np.asarray(h, float), x.shape[:-1])
    fp = f(multiply(G, x, _basis(G, i, h)))
    fm = f(multiply(G, x, _basis(G, i, -h)))
    return (fp - fm) / (2.0 * h)


def second_order_apply(G: StratifiedGroup, i: int, j: int, f, x, h=None):
    """``X_i X_j f(x)``: mixed central difference of ``f(x exp(t1 X_i) exp(t2 X_j))``."""
    _check_index(G, i, j)
    f = as_field(f)
    x = np.asarray(x, dtype=float)
    _check_dim(G, x)
    h = _default_h(x, 2, f) if h is None else np.broadcast_to(np.asarray(h, float), x.shape[:-1])
    total = 0.0
    for s1, s2, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        p = multiply(G, multiply(G, x, _basis(G, i, s1 * h)), _basis(G, j, s2 * h))
        total = total + sign * f(p)
    return total / (4.0 * h * h)


@dataclass
class Taylor2:
    """Coefficients of the homogeneous degree-2 Taylor polynomial at a point.

    ``hessian`` is the symmetrised ``(X_i X_j f + X_j X_i f)/2`` over the
    first stratum; only the symmetric part enters the expansion.
    """

    value: float
    gradient: np.ndarray  # X_i f for the first two strata
    hessian: np.ndarray

    def predict(self, t):
        """Taylor prediction of ``f(x exp(sum t_i X_i))``."""
        t = np.asarray(t, dtype=float)
        k = self.gradient.shape[0]
        m = self.hessian.shape[0]
        lin = t[..., :k] @ self.gradient
        quad = np.einsum("...i,ij,...j->...", t[..., :m], self.hessian, t[..., :m])
        return self.value + lin + 0.5 * quad


def taylor2(G: StratifiedGroup, f, x) -> Taylor2:
    f = as_field(f)
    x = np.asarray(x, dtype=float)
    _check_dim(G, x)
    k, m = G.n12, G.n1
    grad = np.array([float(vector_field_apply(G, i, f, x)) for i in range(k)])
    H = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            if i == j:
                H[i, i] = float(second_order_apply(G, i, i, f, x))
            else:
                H[i, j] = H[j, i] = 0.5 * float(second_order_apply(G, i, j, f, x)
                                                + second_order_apply(G, j, i, f, x))
    return Taylor2(float(f(x)), grad, H)


def left_jacobian(G: StratifiedGroup, x):
    """Coordinate expression of the left-invariant fields.

    Returns ``J`` with ``J[..., k, i] = d/dt [x exp(t X_i)]_k`` at ``t = 0``,
    so that ``X_i = sum_k J[k, i] d/dx_k``.  Exact for step <= 2:
    ``J = I + (1/2) sum_j c_{ji}^k x_j``.
    """
    x = np.asarray(x, dtype=float)
    _check_dim(G, x)
    eye = np.broadcast_to(np.eye(G.n), x.shape[:-1] + (G.n, G.n))
    return eye + 0.5 * np.einsum("...j,jik->...ki", x, G.structure_constants)


def law_checks(G: StratifiedGroup, trials: int = 10_000, seed: int = 0, scale: float = 5.0) -> dict:
    """Largest absolute defects of the group axioms over ``trials`` random triples.

    Coordinates are uniform in ``[-scale, scale]`` and dilation factors in
    ``[0.1, 10]``.  Keys: ``associativity``, ``identity``, ``inverse``,
    ``automorphism`` (dilations distribute over products, measured relative
    to ``max(1, |value|)`` since dilated coordinates reach ``10^2 scale^2``) and
    ``jacobian_det``, the largest ``|det d(x y)/dy - 1|`` from a central
    difference Jacobian of left translation.
    """
    rng = np.random.default_rng(seed)
    x, y, z = (rng.uniform(-scale, scale, (trials, G.n)) for _ in range(3))
    r = rng.uniform(0.1, 10.0, trials)
    e = np.zeros(G.n)
    gap = lambda a, b: float(np.max(np.abs(a - b)))
    rel = lambda a, b: float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))
    step = 1e-3
    jac = np.empty((trials, G.n, G.n))
    for j in range(G.n):
        d = np.zeros(G.n)
        d[j] = step
        jac[:, :, j] = (multiply(G, x, y + d) - multiply(G, x, y - d)) / (2 * step)
    return {
        "associativity": gap(multiply(G, multiply(G, x, y), z), multiply(G, x, multiply(G, y, z))),
        "identity": max(gap(multiply(G, x, e), x), gap(multiply(G, e, x), x)),
        "inverse": max(gap(multiply(G, x, inverse(G, x)), 0.0), gap(multiply(G, inverse(G, x), x), 0.0)),
        "automorphism": rel(dilate(G, r, multiply(G, x, y)),
                            multiply(G, dilate(G, r, x), dilate(G, r, y))),
        "jacobian_det": float(np.max(np.abs(np.linalg.det(jac) - 1.0))),
    }
