"""Hot loops: multilinear interpolation stencils, CSR products, grid FD operator.

Each kernel has a numba implementation and a pure-numpy one with the same
signature.  ``CARNOT_NONLOCAL_BACKEND=numpy`` (or a missing numba) selects
the numpy path; the default is numba.
"""
from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "interp_corners",
    "csr_matvec",
    "grid_operator",
    "set_threads",
    "IMPLEMENTATIONS",
]

try:
    import numba
    from numba import njit, prange
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
else:
    # skip the TBB probe, which warns on hosts with an old TBB
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_requested = os.environ.get("CARNOT_NONLOCAL_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"CARNOT_NONLOCAL_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and numba is not None) else "numpy"


def set_threads(n: int) -> None:
    if numba is not None and n and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


# multilinear corners ------------------------------------------------------

def _corner_offsets(d):
    return ((np.arange(2 ** d)[:, None] >> np.arange(d)) & 1).astype(np.int64)


def _interp_corners_np(points, lo, h, ncells, strides):
    """Flat grid indices and weights of the ``2^d`` cell corners of each point."""
    d = points.shape[1]
    s = (points - lo) / h
    cell = np.clip(np.floor(s).astype(np.int64), 0, ncells - 1)
    frac = s - cell
    offs = _corner_offsets(d)                                   # (2^d, d)
    idx = (cell[:, None, :] + offs[None]) @ strides             # (P, 2^d)
    w = np.prod(np.where(offs[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=-1)
    return idx, w


def _csr_matvec_np(indptr, indices, data, z):
    prod = data * z[indices]
    out = np.zeros(len(indptr) - 1)
    nonempty = np.diff(indptr) > 0
    if prod.size:
        sums = np.add.reduceat(prod, indptr[:-1][nonempty])
        out[nonempty] = sums
    return out


def _grid_operator_np(v, centers, strides, inv_h, D, beta):
    """``sum D_kl d_k d_l v + sum beta_k d_k v`` at ``centers`` (flat indices)."""
    d = strides.shape[0]
    vc = v[centers]
    out = np.zeros(centers.shape[0])
    for k in range(d):
        sk = strides[k]
        vp, vm = v[centers + sk], v[centers - sk]
        out += D[:, k, k] * (vp - 2.0 * vc + vm) * inv_h[k] ** 2
        out += beta[:, k] * (vp - vm) * (0.5 * inv_h[k])
        for m in range(k + 1, d):
            sm = strides[m]
            cross = (v[centers + sk + sm] - v[centers + sk - sm]
                     - v[centers - sk + sm] + v[centers - sk - sm])
            out += (D[:, k, m] + D[:, m, k]) * cross * (0.25 * inv_h[k] * inv_h[m])
    return out


if numba is not None:
    @njit(cache=True, nogil=True)
    def _interp_corners_nb(points, lo, h, ncells, strides):
        P, d = points.shape
        nc = 1 << d
        idx = np.empty((P, nc), dtype=np.int64)
        w = np.empty((P, nc))
        cell = np.empty(d, dtype=np.int64)
        frac = np.empty(d)
        for p in range(P):
            for k in range(d):
                s = (points[p, k] - lo[k]) / h[k]
                c = int(np.floor(s))
                if c < 0:
                    c = 0
                elif c > ncells[k] - 1:
                    c = ncells[k] - 1
                cell[k] = c
                frac[k] = s - c
            for corner in range(nc):
                flat = 0
                wt = 1.0
                for k in range(d):
                    bit = (corner >> k) & 1
                    flat += (cell[k] + bit) * strides[k]
                    wt *= frac[k] if bit == 1 else 1.0 - frac[k]
                idx[p, corner] = flat
                w[p, corner] = wt
        return idx, w

    @njit(cache=True, nogil=True, parallel=True)
    def _csr_matvec_nb(indptr, indices, data, z):
        n = indptr.shape[0] - 1
        out = np.zeros(n)
        for i in prange(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * z[indices[k]]
            out[i] = acc
        return out

    @njit(cache=True, nogil=True, parallel=True)
    def _grid_operator_nb(v, centers, strides, inv_h, D, beta):
        d = strides.shape[0]
        n = centers.shape[0]
        out = np.zeros(n)
        for p in prange(n):
            c = centers[p]
            vc = v[c]
            acc = 0.0
            for k in range(d):
                sk = strides[k]
                vp = v[c + sk]
                vm = v[c - sk]
                acc += D[p, k, k] * (vp - 2.0 * vc + vm) * inv_h[k] * inv_h[k]
                acc += beta[p, k] * (vp - vm) * 0.5 * inv_h[k]
                for m in range(k + 1, d):
                    sm = strides[m]
                    cross = (v[c + sk + sm] - v[c + sk - sm]
                             - v[c - sk + sm] + v[c - sk - sm])
                    acc += (D[p, k, m] + D[p, m, k]) * cross * 0.25 * inv_h[k] * inv_h[m]
            out[p] = acc
        return out

    IMPLEMENTATIONS = {
        "numpy": {"interp_corners": _interp_corners_np, "csr_matvec": _csr_matvec_np,
                  "grid_operator": _grid_operator_np},
        "numba": {"interp_corners": _interp_corners_nb, "csr_matvec": _csr_matvec_nb,
                  "grid_operator": _grid_operator_nb},
    }
else:  # pragma: no cover
    IMPLEMENTATIONS = {
        "numpy": {"interp_corners": _interp_corners_np, "csr_matvec": _csr_matvec_np,
                  "grid_operator": _grid_operator_np},
    }


def _dispatch(name):
    impl = IMPLEMENTATIONS[BACKEND][name]

    def call(*args):
        return impl(*args)
    call.__name__ = name
    call.__doc__ = IMPLEMENTATIONS["numpy"][name].__doc__
    return call


interp_corners = _dispatch("interp_corners")
csr_matvec = _dispatch("csr_matvec")
grid_operator = _dispatch("grid_operator")
