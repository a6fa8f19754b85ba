"""Compare the numba and numpy backends of the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel is run once to compile, then timed ``--repeat`` times; the
best time is reported together with the largest disagreement between the
two backends.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from carnot_nonlocal import _kernels
from carnot_nonlocal.fields import parse_expression
from carnot_nonlocal.group import heisenberg
from carnot_nonlocal.kernel import make_bump_kernel
from carnot_nonlocal.nonlocal_solver import GridProblem


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(scale: float, rng):
    # multilinear corners for a 3D cloud
    P = int(400_000 * scale)
    pts = rng.uniform(0, 1, (P, 3))
    nc = np.array([32, 32, 32])
    strides = np.array([33 * 33, 33, 1], np.int64)
    yield "interp_corners", (pts, np.zeros(3), np.full(3, 1 / 32), nc, strides)

    # a real rate table: E stencil on H^1, h = 1/32
    G = heisenberg()
    J = make_bump_kernel(G, nodes=8)
    f = parse_expression("x1*x2 + x3", 3)
    p = GridProblem(G, [0] * 3, [1] * 3, 1 / 32, f, f, 0.1, "E", 0.2, J)
    m = p.rate_table().matrix
    z = rng.normal(size=m.shape[1])
    yield "csr_matvec", (m.indptr, m.indices, m.data, z)

    # 3D grid operator with a full coefficient matrix
    n = int(round(64 * scale ** (1 / 3)))
    shape = (n + 1,) * 3
    strides = np.array([shape[1] * shape[2], shape[2], 1], np.int64)
    idx = np.stack(np.meshgrid(*(np.arange(1, n),) * 3, indexing="ij"), -1).reshape(-1, 3)
    centers = idx @ strides
    v = rng.normal(size=int(np.prod(shape)))
    A = rng.normal(size=(centers.shape[0], 3, 3))
    D = np.ascontiguousarray(A @ np.swapaxes(A, 1, 2))
    beta = rng.normal(size=(centers.shape[0], 3))
    yield "grid_operator", (v, centers, strides, np.full(3, float(n)), D, beta)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    args = ap.parse_args(argv)
    if "numba" not in _kernels.IMPLEMENTATIONS:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':16s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speedup':>9s} {'max diff':>10s}")
    for name, call_args in cases(args.scale, rng):
        t_np, out_np = best_of(_kernels.IMPLEMENTATIONS["numpy"][name], call_args, args.repeat)
        t_nb, out_nb = best_of(_kernels.IMPLEMENTATIONS["numba"][name], call_args, args.repeat)
        if isinstance(out_np, tuple):
            diff = max(float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))
                       for a, b in zip(out_np, out_nb))
        else:
            diff = float(np.max(np.abs(out_np - out_nb)))
        print(f"{name:16s} {1e3 * t_np:12.2f} {1e3 * t_nb:12.2f} {t_np / t_nb:8.1f}x {diff:10.2e}")


if __name__ == "__main__":
    main()
