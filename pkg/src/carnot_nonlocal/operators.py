"""Rescaled nonlocal operators and their local limits.

Every nonlocal operator is evaluated through a *stencil*: the images
``y_q(x)`` of the kernel's quadrature nodes and nonnegative weights
``omega_q(x)``, so that

    E_eps u(x) = sum_q omega_q (u(y_q) - u(x))
    K_eps u(x) = sum_q omega_q (u(y_q) - u(x))
    L_eps u(x) = sum_q omega_q (a(y_q) u(y_q) - a(x) u(x))

The solvers reuse the same stencils, which keeps the pointwise operators
and the discretised evolution in lock step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet, derive
from .fields import as_field
from .group import (StratifiedGroup, dilate, inverse, multiply, second_order_apply,
                    vector_field_apply)
from .kernel import KernelJ, tensor_gauss_legendre
from .polynomials import Poly, lie_derivative

__all__ = [
    "Stencil",
    "E_stencil",
    "K_stencil",
    "L_stencil",
    "stencil",
    "apply_E_eps",
    "apply_K_eps",
    "apply_L_eps",
    "eval_K_eps",
    "direct_K_eps",
    "compute_M_and_Fprime",
    "FPrimeSample",
    "apply_local_K",
    "apply_local_L",
    "apply_subLaplacian",
    "local_operator",
    "nonlocal_operator",
]


@dataclass
class Stencil:
    points: np.ndarray   # (..., q, n) sample points y_q(x)
    weights: np.ndarray  # (..., q) nonnegative for admissible eps


def _points(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise ValueError(f"points of shape {x.shape} do not live in dimension {n}")
    return x


def E_stencil(G: StratifiedGroup, J: KernelJ, x, eps: float) -> Stencil:
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = _points(x, G.n)
    disp = dilate(G, eps, inverse(G, J.points))            # delta_eps(y^{-1})
    pts = multiply(G, x[..., None, :], disp)
    w = np.broadcast_to(J.masses / eps ** 2, pts.shape[:-1])
    return Stencil(pts, w)


def K_stencil(cs: CoefficientSet, J: KernelJ, x, eps: float) -> Stencil:
    """Transformed drift-kernel stencil.

    Nodes ``t`` map to ``y = x exp(-delta_eps L(x) t)`` with weight
    ``2/(eps^2 C M) * m_t * (M - (M/2) sum_j eps^lambda_j b~_j (L^{-T} t)_j)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    G = cs.group
    if cs.mode != "anisotropic-drift":
        raise ValueError("K_eps needs anisotropic-drift coefficients")
    x = _points(x, G.n)
    d = derive(cs, J.C, x, eps)
    t = J.points
    Lt = np.einsum("...ij,qj->...qi", d.L, t)
    disp = -dilate(G, eps, Lt)
    pts = multiply(G, x[..., None, :], disp)
    LinvT_t = np.einsum("...ji,qj->...qi", d.Linv, t)
    scale = np.power(eps, G.dilation_exponents) * d.b_tilde           # (..., n)
    drift = np.einsum("...i,...qi->...q", scale, LinvT_t)
    M = cs.M
    w = 2.0 / (eps ** 2 * J.C * M) * J.masses * (M - 0.5 * M * drift)
    return Stencil(pts, w)


def L_stencil(G: StratifiedGroup, J: KernelJ, x, eps: float) -> Stencil:
    """Fokker-Planck stencil; prefactor ``2/C(J)`` so the limit is ``sum X_i^2 (a u)``."""
    st = E_stencil(G, J, x, eps)
    return Stencil(st.points, st.weights * (2.0 / J.C))


def stencil(kind: str, G, J, x, eps, cs: CoefficientSet | None = None) -> Stencil:
    kind = kind.upper()
    if kind == "E":
        return E_stencil(G, J, x, eps)
    if kind == "K":
        return K_stencil(cs, J, x, eps)
    if kind == "L":
        return L_stencil(G, J, x, eps)
    raise ValueError(f"unknown operator kind {kind!r}")


def _reduce(st: Stencil, vals_y, val_x):
    out = np.sum(st.weights * (vals_y - val_x[..., None]), axis=-1)
    return out if out.ndim else float(out)


def apply_E_eps(G: StratifiedGroup, J: KernelJ, u, x, eps: float):
    u = as_field(u)
    st = E_stencil(G, J, x, eps)
    return _reduce(st, u(st.points), u(np.asarray(x, float)))


def apply_K_eps(cs: CoefficientSet, J: KernelJ, u, x, eps: float):
    u = as_field(u)
    st = K_stencil(cs, J, x, eps)
    return _reduce(st, u(st.points), u(np.asarray(x, float)))


def apply_L_eps(G: StratifiedGroup, J: KernelJ, a_scalar, u, x, eps: float):
    a, u = as_field(a_scalar), as_field(u)
    x = np.asarray(x, float)
    st = L_stencil(G, J, x, eps)
    return _reduce(st, a(st.points) * u(st.points), a(x) * u(x))


def eval_K_eps(cs: CoefficientSet, J: KernelJ, x, y, eps: float):
    """Untransformed drift kernel ``K_eps(x, y)``.

    ``c(x)/eps^(Q+2) * a((exp(E(x) log(y^{-1} x)))^{-1}) * J(L^{-1}(x) delta_{1/eps}(y^{-1} x))``
    """
    G = cs.group
    x = _points(x, G.n)
    y = _points(y, G.n)
    d = derive(cs, J.C, x, eps)
    v = multiply(G, inverse(G, y), x)
    a_arg = -np.einsum("...ij,...j->...i", d.E, v)
    s = np.einsum("...ij,...j->...i", d.Linv, dilate(G, 1.0 / eps, v))
    out = d.c / eps ** (G.Q + 2) * cs.weight(a_arg) * J(s)
    return out if np.ndim(out) else float(out)


def direct_K_eps(cs: CoefficientSet, J: KernelJ, u, x, eps: float,
                 nodes: int = 64, panels: int = 8, chunk: int = 200_000,
                 method: str = "box") -> float:
    """``int K_eps(x, y) (u(y) - u(x)) dy`` evaluated from the untransformed kernel.

    ``method="box"``: composite Gauss-Legendre over the bounding box of the
    support at ``x``; accurate to a few digits because of the support kink.
    ``method="polar"``: substitute ``y = x delta_eps(-w)`` and integrate in
    polar coordinates in ``w``, locating the support boundary on each ray by
    bisection, with ``nodes`` radial and ``nodes`` polar nodes.  Converges
    spectrally.  Neither path uses the change of variables of
    :func:`apply_K_eps`.
    """
    G = cs.group
    u = as_field(u)
    x = _points(x, G.n)
    if method == "polar":
        return _direct_polar(cs, J, u, x, eps, nodes)
    if method != "box":
        raise ValueError(f"unknown method {method!r}")
    d = derive(cs, J.C, x, eps)
    # bounding box from a dense sample of the support cube
    ref, _ = tensor_gauss_legendre(G.n, 9, -J.R, J.R)
    corners = np.array(np.meshgrid(*([[-J.R, J.R]] * G.n), indexing="ij")).reshape(G.n, -1).T
    probe = np.concatenate([ref, corners])
    img = multiply(G, x, -dilate(G, eps, probe @ d.L.T))
    lo, hi = img.min(0), img.max(0)
    if G.n == 1:
        # support is exactly the interval, no panels needed
        pts1, w1 = tensor_gauss_legendre(1, nodes * panels, lo[0], hi[0])
        pts, wts = pts1, w1
    else:
        edges = [np.linspace(lo[k], hi[k], panels + 1) for k in range(G.n)]
        g, gw = np.polynomial.legendre.leggauss(nodes)
        axes, axw = [], []
        for e in edges:
            mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * (e[1:] - e[:-1])
            axes.append((mid[:, None] + half[:, None] * g).ravel())
            axw.append((half[:, None] * gw).ravel())
        mesh = np.meshgrid(*axes, indexing="ij")
        wmesh = np.meshgrid(*axw, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], -1)
        wts = np.prod(np.stack([m.ravel() for m in wmesh], -1), -1)
    ux = float(u(x))
    total = 0.0
    for s in range(0, len(wts), chunk):
        yy = pts[s:s + chunk]
        k = eval_K_eps(cs, J, np.broadcast_to(x, yy.shape), yy, eps)
        total += float(np.sum(wts[s:s + chunk] * k * (u(yy) - ux)))
    return total


def _ray_directions(n: int, m: int):
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    g, gw = np.polynomial.legendre.leggauss(m)
    phi = np.pi * (np.arange(2 * m) + 0.5) / m
    wphi = np.full(2 * m, np.pi / m)
    if n == 2:
        return np.stack([np.cos(phi), np.sin(phi)], -1), wphi
    if n == 3:
        st = np.sqrt(1.0 - g ** 2)
        dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                         np.outer(g, np.ones_like(phi))], -1).reshape(-1, 3)
        return dirs, np.outer(gw, wphi).ravel()
    raise ValueError("polar quadrature implemented for n <= 3")


def _direct_polar(cs, J, u, x, eps, nodes):
    G = cs.group
    dirs, dw = _ray_directions(G.n, nodes)
    xb = np.broadcast_to(x, dirs.shape)

    def y_of(w):
        return multiply(G, np.broadcast_to(x, w.shape), dilate(G, eps, -w))

    def inside(r):
        w = r[:, None] * dirs
        return eval_K_eps(cs, J, xb, y_of(w), eps) > 0

    # support radius along each ray, bracketed then bisected
    hi = np.ones(len(dirs))
    for _ in range(60):
        out = inside(hi)
        if not out.any():
            break
        hi[out] *= 2
    lo = np.zeros(len(dirs))
    for _ in range(55):
        mid = 0.5 * (lo + hi)
        ok = inside(mid)
        lo, hi = np.where(ok, mid, lo), np.where(ok, hi, mid)
    R = 0.5 * (lo + hi)
    g, gw = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * R[:, None] * (g + 1)
    wr = 0.5 * R[:, None] * gw * r ** (G.n - 1) * dw[:, None]
    w = (r[..., None] * dirs[:, None, :]).reshape(-1, G.n)
    y = y_of(w)
    k = eval_K_eps(cs, J, np.broadcast_to(x, w.shape), y, eps)
    # dy = eps^Q dw: translations, inversion and dilations act with unit or eps^Q Jacobian
    return eps ** G.Q * float(np.sum(wr.ravel() * k * (u(y) - float(u(x)))))


@dataclass
class FPrimeSample:
    M: float
    points: np.ndarray
    s_min: float


def compute_M_and_Fprime(G: StratifiedGroup, J: KernelJ, box, L_field, eps_max: float,
                         beta: float = 1.0, sample_density: int = 33,
                         inflation: float = 0.0) -> FPrimeSample:
    """Sample ``F' = {y exp(delta_eps L(y) log(z^{-1}))}`` and pick the weight constant ``M``.

    ``y`` runs over a uniform grid of the closed box (``sample_density``
    points per axis), ``z`` over the kernel nodes plus the extreme points
    ``+-R e_i`` of the support, at ``eps = eps_max * (1 + inflation)``.
    ``L_field(y)`` returns the (full, block-diagonal) Cholesky factor.
    Returns ``M = max(1, beta - s_min) + beta`` with ``s_min`` the sampled
    minimum of ``sum_i phi_i``, so ``sum phi + M >= beta`` on every sample.
    """
    lo, hi = (np.asarray(b, float) for b in box)
    if lo.shape != (G.n,) or np.any(hi <= lo):
        raise ValueError("empty or malformed domain box")
    if eps_max <= 0:
        raise ValueError("eps_max must be positive")
    axes = [np.linspace(lo[k], hi[k], sample_density) for k in range(G.n)]
    y = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], -1)
    ext = np.concatenate([J.R * np.eye(G.n), -J.R * np.eye(G.n)])
    z = np.concatenate([J.points, ext])
    L = np.asarray(L_field(y), float)
    if L.shape != (len(y), G.n, G.n):
        raise ValueError("L_field must return (points, n, n) factors")
    if np.any(np.abs(np.linalg.det(L)) < 1e-12):
        raise ValueError("degenerate Cholesky factor in F' sampling")
    eps = eps_max * (1.0 + inflation)
    disp = dilate(G, eps, np.einsum("pij,qj->pqi", L, -z))
    pts = multiply(G, y[:, None, :], disp).reshape(-1, G.n)
    s_min = float(np.min(pts.sum(-1)))
    M = max(1.0, beta - s_min) + beta
    return FPrimeSample(M, pts, s_min)


# local limit operators ---------------------------------------------------

def _local_XiXj(G, f, x, i, j):
    if isinstance(f, Poly):
        return lie_derivative(G, lie_derivative(G, f, j), i)(x)
    return second_order_apply(G, i, j, f, x)


def _local_Xi(G, f, x, i):
    if isinstance(f, Poly):
        return lie_derivative(G, f, i)(x)
    return vector_field_apply(G, i, f, x)


def apply_local_K(G: StratifiedGroup, cs: CoefficientSet, v, x):
    """``sum a_ij X_i X_j v + sum b_i X_i v``.

    Polynomials (:class:`Poly`) are differentiated exactly; other fields by
    central differences through :mod:`group`.
    """
    if not isinstance(v, Poly):
        v = as_field(v)
    x = _points(x, G.n)
    A = cs.diffusion(x)
    b = cs.drift(x)
    out = np.zeros(x.shape[:-1])
    for i in range(G.n1):
        for j in range(G.n1):
            out = out + A[..., i, j] * _local_XiXj(G, v, x, i, j)
    for i in range(G.n12):
        out = out + b[..., i] * _local_Xi(G, v, x, i)
    return out if out.ndim else float(out)


def apply_local_L(G: StratifiedGroup, a_scalar, v, x):
    """``sum_{i <= n1} X_i X_i (a v)``."""
    x = _points(x, G.n)
    if isinstance(a_scalar, Poly) and isinstance(v, Poly):
        prod = a_scalar
        acc = Poly(G.n)
        for k1, c1 in a_scalar.terms.items():
            for k2, c2 in v.terms.items():
                acc = acc + Poly(G.n, {tuple(np.add(k1, k2)): c1 * c2})
        prod = acc
    else:
        prod = as_field(a_scalar) * as_field(v)
    out = sum(_local_XiXj(G, prod, x, i, i) for i in range(G.n1))
    return out if np.ndim(out) else float(out)


def apply_subLaplacian(G: StratifiedGroup, v, x):
    """``sum_{j <= n1} X_j^2 v`` (minus the sub-Laplacian in sign convention)."""
    if not isinstance(v, Poly):
        v = as_field(v)
    x = _points(x, G.n)
    out = sum(_local_XiXj(G, v, x, i, i) for i in range(G.n1))
    return out if np.ndim(out) else float(out)


def local_operator(kind: str, G, J, x, v, cs=None):
    """Local limit of the nonlocal operator of the given kind."""
    kind = kind.upper()
    if kind == "E":
        return 0.5 * J.C * apply_subLaplacian(G, v, x)
    if kind == "K":
        return apply_local_K(G, cs, v, x)
    if kind == "L":
        return apply_local_L(G, cs.a_scalar, v, x)
    raise ValueError(f"unknown operator kind {kind!r}")


def nonlocal_operator(kind: str, G, J, x, v, eps, cs=None):
    kind = kind.upper()
    if kind == "E":
        return apply_E_eps(G, J, v, x, eps)
    if kind == "K":
        return apply_K_eps(cs, J, v, x, eps)
    if kind == "L":
        return apply_L_eps(G, J, cs.a_scalar, v, x, eps)
    raise ValueError(f"unknown operator kind {kind!r}")

