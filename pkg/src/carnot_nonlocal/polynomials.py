"""Exact polynomial fields on the group, used as a symbolic oracle.

Left-invariant derivatives of polynomials are computed in closed form via
``X_i = d_i + (1/2) sum_{j,k} c_{ji}^k x_j d_k`` (exact for step <= 2),
independently of the finite-difference machinery in :mod:`group`.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from .group import StratifiedGroup

__all__ = ["Poly", "lie_derivative", "random_homogeneous_poly"]


class Poly:
    """Sparse polynomial ``sum c_I x^I`` in exponential coordinates."""

    smoothness = np.inf
    time_dependent = False

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        self.terms = {tuple(k): float(v) for k, v in (terms or {}).items() if v != 0.0}

    def __call__(self, x, t=None):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for exps, c in self.terms.items():
            out = out + c * np.prod(x ** np.asarray(exps, dtype=float), axis=-1)
        return out

    def __add__(self, other: "Poly") -> "Poly":
        acc = defaultdict(float, self.terms)
        for k, v in other.terms.items():
            acc[k] += v
        return Poly(self.n, acc)

    def scale(self, s: float) -> "Poly":
        return Poly(self.n, {k: s * v for k, v in self.terms.items()})

    def times_coordinate(self, j: int) -> "Poly":
        out = {}
        for k, v in self.terms.items():
            e = list(k)
            e[j] += 1
            out[tuple(e)] = v
        return Poly(self.n, out)

    def partial(self, k: int) -> "Poly":
        out = {}
        for exps, c in self.terms.items():
            if exps[k] == 0:
                continue
            e = list(exps)
            e[k] -= 1
            out[tuple(e)] = c * exps[k]
        return Poly(self.n, out)

    def homogeneous_degree(self, G: StratifiedGroup) -> int:
        lam = G.dilation_exponents
        return max((int(np.dot(k, lam)) for k in self.terms), default=0)

    def __repr__(self):
        return f"Poly({self.terms})"


def lie_derivative(G: StratifiedGroup, p: Poly, i: int) -> Poly:
    out = p.partial(i)
    c = G.structure_constants
    for j, k in zip(*np.nonzero(c[:, i, :])):
        out = out + p.partial(k).times_coordinate(j).scale(0.5 * c[j, i, k])
    return out


def random_homogeneous_poly(G: StratifiedGroup, rng, max_degree: int = 2) -> Poly:
    """Random polynomial of homogeneous degree <= ``max_degree`` with U(-1, 1) coefficients."""
    lam = G.dilation_exponents
    n = G.n
    monos = []

    def rec(prefix, remaining):
        if len(prefix) == n:
            monos.append(tuple(prefix))
            return
        w = lam[len(prefix)]
        for e in range(remaining // w + 1):
            rec(prefix + [e], remaining - e * w)

    rec([], max_degree)
    return Poly(n, {m: rng.uniform(-1.0, 1.0) for m in monos})
