"""Coefficient fields for the anisotropic-drift and Fokker-Planck operators."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import ScalarField, as_field, parse_expression
from .group import StratifiedGroup

__all__ = [
    "CoefficientSet",
    "Derived",
    "CholeskyError",
    "cholesky",
    "derive",
    "preset",
    "coefficients_from_config",
    "PRESETS",
]

PRESETS = ("constant", "sin-perturbed", "fokker-planck-demo")


class CholeskyError(np.linalg.LinAlgError):
    pass


def cholesky(A, rel_pivot: float = 1e-12):
    """Batched lower Cholesky factor of symmetric matrices ``A[..., k, k]``.

    Fails when a pivot drops to ``rel_pivot * trace`` or below.
    """
    A = np.asarray(A, dtype=float)
    k = A.shape[-1]
    L = np.zeros_like(A)
    floor = rel_pivot * np.trace(A, axis1=-2, axis2=-1)
    for j in range(k):
        d = A[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        if np.any(d <= floor):
            raise CholeskyError(f"non-positive pivot in column {j + 1}: min {np.min(d - floor):.3e}")
        L[..., j, j] = np.sqrt(d)
        for i in range(j + 1, k):
            L[..., i, j] = (A[..., i, j] - np.sum(L[..., i, :j] * L[..., j, :j], axis=-1)) / L[..., j, j]
    return L


def _as_matrix_field(entries, dim) -> Callable:
    fields = [[as_field(e) if not isinstance(e, str) else parse_expression(e, dim) for e in row]
              for row in entries]

    def a_of(x):
        x = np.asarray(x, float)
        return np.stack([np.stack([f(x) for f in row], -1) for row in fields], -2)
    return a_of


def _as_vector_field(entries, dim) -> Callable:
    fields = [as_field(e) if not isinstance(e, str) else parse_expression(e, dim) for e in entries]

    def b_of(x):
        x = np.asarray(x, float)
        return np.stack([f(x) for f in fields], -1)
    return b_of


@dataclass(eq=False)
class CoefficientSet:
    """Coefficients of one of the two operator families.

    ``mode == "anisotropic-drift"``: ``a(x)`` returns the ``n1 x n1``
    diffusion matrix and ``b(x)`` the drift for the first two strata.
    ``mode == "fokker-planck"``: ``a_scalar`` is the scalar mobility.
    ``M`` and ``beta`` are the weight constants of the drift kernel.
    """

    group: StratifiedGroup
    mode: str = "anisotropic-drift"
    a: Callable | None = None
    b: Callable | None = None
    a_scalar: ScalarField | None = None
    M: float = 2.0
    beta: float = 1.0
    label: str = ""

    def __post_init__(self):
        if self.mode not in ("anisotropic-drift", "fokker-planck"):
            raise ValueError(f"unknown coefficient mode {self.mode!r}")
        G = self.group
        if self.mode == "anisotropic-drift":
            if self.a is None:
                eye = np.eye(G.n1)
                self.a = lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + eye.shape)
            if self.b is None:
                self.b = lambda x: np.zeros(np.shape(x)[:-1] + (G.n12,))
        elif self.a_scalar is None:
            raise ValueError("fokker-planck coefficients need a_scalar")
        else:
            self.a_scalar = as_field(self.a_scalar)

    @classmethod
    def from_expressions(cls, G, a=None, b=None, **kw):
        a_f = _as_matrix_field(a, G.n) if a is not None else None
        b_f = _as_vector_field(b, G.n) if b is not None else None
        return cls(G, "anisotropic-drift", a_f, b_f, **kw)

    @classmethod
    def fokker_planck(cls, G, a_scalar, **kw):
        if isinstance(a_scalar, str):
            a_scalar = parse_expression(a_scalar, G.n)
        return cls(G, "fokker-planck", a_scalar=as_field(a_scalar), **kw)

    def diffusion(self, x):
        return np.asarray(self.a(np.asarray(x, float)), dtype=float)

    def drift(self, x):
        return np.asarray(self.b(np.asarray(x, float)), dtype=float)

    def min_ellipticity(self, x) -> float:
        """Smallest eigenvalue of the diffusion matrix over the given points."""
        A = self.diffusion(x)
        if not np.allclose(A, np.swapaxes(A, -1, -2), atol=1e-14):
            raise ValueError("diffusion matrix is not symmetric")
        return float(np.linalg.eigvalsh(A).min())

    def weight(self, w):
        """The drift-kernel weight ``a(w) = sum_i w_i + M`` (w in coordinates)."""
        return np.sum(np.asarray(w, float), axis=-1) + self.M


@dataclass
class Derived:
    """Per-point matrices of the drift kernel, all ``n x n`` block-diagonal."""

    A: np.ndarray
    L: np.ndarray
    Linv: np.ndarray
    W: np.ndarray
    E: np.ndarray
    c: np.ndarray
    b_tilde: np.ndarray


def derive(cs: CoefficientSet, C_J: float, x, eps: float) -> Derived:
    """Build A, L, L^{-1}, W, E and c at the points ``x`` for scale ``eps``."""
    G = cs.group
    x = np.asarray(x, float)
    n, n1, n12 = G.n, G.n1, G.n12
    lead = x.shape[:-1]
    At = cs.diffusion(x)
    Lt = cholesky(At)
    A = np.broadcast_to(np.eye(n), lead + (n, n)).copy()
    A[..., :n1, :n1] = At
    L = np.broadcast_to(np.eye(n), lead + (n, n)).copy()
    L[..., :n1, :n1] = Lt
    Linv = np.broadcast_to(np.eye(n), lead + (n, n)).copy()
    Linv[..., :n1, :n1] = np.linalg.inv(Lt)
    b = cs.drift(x)
    bt = np.ones(lead + (n,))
    bt[..., :n1] = b[..., :n1]
    if n12 > n1:
        bt[..., n1:n12] = b[..., n1:n12] / eps ** 2
    W = np.zeros(lead + (n, n))
    idx = np.arange(n)
    W[..., idx, idx] = bt
    Ainv = np.linalg.inv(A)
    E = 0.5 * cs.M * W @ Ainv
    detA = np.linalg.det(At)
    c = 2.0 / (C_J * cs.M * np.sqrt(detA))
    return Derived(A, L, Linv, W, E, c, bt)


def preset(name: str, G: StratifiedGroup, **kw) -> CoefficientSet:
    """Named coefficient presets.

    ``constant``: identity diffusion, no drift.  ``sin-perturbed``:
    ``a11 = 1 + sin(x1)/2`` (and ``a22 = 1 + cos(x2)/2``,
    ``a12 = sin(x1 + x2)/4`` in two or more horizontal directions), drift
    ``b1 = cos(x1)/4``, ``b2 = sin(x2)/4``, second-stratum drift
    ``cos(x3)/10``.  ``fokker-planck-demo``: ``a = 2 + sin(x1)``.
    """
    n1, n12 = G.n1, G.n12
    if name == "constant":
        return CoefficientSet(G, "anisotropic-drift", label=name, **kw)
    if name == "sin-perturbed":
        diag = ["1 + 0.5*sin(x1)", "1 + 0.5*cos(x2)", "1 + 0.5*sin(x3)"]
        a = [["0"] * n1 for _ in range(n1)]
        for i in range(n1):
            a[i][i] = diag[i]
        if n1 >= 2:
            a[0][1] = a[1][0] = "0.25*sin(x1 + x2)"
        horiz_b = ["0.25*cos(x1)", "0.25*sin(x2)", "0.25*cos(x3)"]
        b = horiz_b[:n1] + ["0.1*cos(x{})".format(k + 1) for k in range(n1, n12)]
        return CoefficientSet.from_expressions(G, a, b, label=name, **kw)
    if name == "fokker-planck-demo":
        return CoefficientSet.fokker_planck(G, "2 + sin(x1)", label=name, **kw)
    raise KeyError(f"unknown coefficient preset {name!r}; expected one of {PRESETS}")


def coefficients_from_config(cfg: dict, G: StratifiedGroup) -> CoefficientSet:
    """``{"preset": name}`` or literal expressions::

        {"mode": "anisotropic-drift", "a": [["1 + x1**2"]], "b": ["0.5"]}
        {"mode": "fokker-planck", "a": "2 + sin(x1)"}
    """
    kw = {k: float(cfg[k]) for k in ("M", "beta") if k in cfg}
    if "preset" in cfg:
        return preset(cfg["preset"], G, **kw)
    mode = cfg.get("mode", "anisotropic-drift")
    if mode == "fokker-planck":
        return CoefficientSet.fokker_planck(G, cfg["a"], **kw)
    return CoefficientSet.from_expressions(G, cfg.get("a"), cfg.get("b"), **kw)
