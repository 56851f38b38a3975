"""Timing of the far-field kernels: numba against the vectorized numpy path.

Times the single-layer Galerkin matrix (element-pair kernel) and a pointwise
single-layer evaluation at Chebyshev points (point kernel) on uniformly
refined circle meshes, checks that both backends agree, and prints a table.

    python3 benchmarks/bench_kernels.py [--levels 4 5 6 7] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from nurbsbem import kernels
from nurbsbem.assembly import assemble_V, weak_space
from nurbsbem.evaluation import cheby_points, eval_V_at
from nurbsbem.geometry import builtin_geometry
from nurbsbem.splines import uniform_refine


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[4, 5, 6, 7])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not available (or disabled by NURBSBEM_DISABLE_NUMBA)")

    curve = builtin_geometry("circle")
    kv, w = curve.kv, np.array(curve.weights)
    for _ in range(min(args.levels)):
        kv, w, _ = uniform_refine(kv, w)

    # compile outside the timed region
    warm = weak_space(curve, kv, w)
    assemble_V(warm, backend="numba")
    eval_V_at(warm, lambda x, nu: np.ones(x.shape[:-1]), cheby_points(warm.mesh, 4), backend="numba")

    print(f"{'elements':>8} {'kernel':>6} {'numba [s]':>10} {'numpy [s]':>10} {'speedup':>8} {'max rel diff':>13}")
    level = min(args.levels)
    for target in sorted(args.levels):
        while level < target:
            kv, w, _ = uniform_refine(kv, w)
            level += 1
        space = weak_space(curve, kv, w)
        n = space.mesh.n
        tb, Ab = _best(lambda: assemble_V(space, backend="numba"), args.repeat)
        tn, An = _best(lambda: assemble_V(space, backend="numpy"), args.repeat)
        diff = np.max(np.abs(Ab - An)) / np.max(np.abs(An))
        print(f"{n:8d} {'pairs':>6} {tb:10.4f} {tn:10.4f} {tn / tb:8.1f} {diff:13.2e}")

        pts = cheby_points(space.mesh, 8)
        dens = lambda x, nu: np.cos(3 * np.arctan2(x[..., 1], x[..., 0]))  # noqa: E731
        tb, vb = _best(lambda: eval_V_at(space, dens, pts, backend="numba"), args.repeat)
        tn, vn = _best(lambda: eval_V_at(space, dens, pts, backend="numpy"), args.repeat)
        diff = np.max(np.abs(vb - vn)) / np.max(np.abs(vn))
        print(f"{n:8d} {'points':>6} {tb:10.4f} {tn:10.4f} {tn / tb:8.1f} {diff:13.2e}")


if __name__ == "__main__":
    main()
