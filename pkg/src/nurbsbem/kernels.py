"""Dense far-field quadrature kernels.

Two hot loops dominate every run: the regular (non-touching) element pairs of
the Galerkin double integrals, and the regular elements of pointwise potential
evaluations.  Both come in a numba version and a vectorized numpy version.
Set ``NURBSBEM_DISABLE_NUMBA=1`` to force the numpy path.

Kernel ids:
    LOG  : -1/(2 pi) log|x - y|
    DLP  :  1/(2 pi) (x - y).nu(y) / |x - y|^2
    ADLP : -1/(2 pi) (x - y).nu(x) / |x - y|^2
"""

from __future__ import annotations

import math
import os

import numpy as np

LOG, DLP, ADLP = 0, 1, 2
_C = 1.0 / (2.0 * math.pi)

__all__ = ["LOG", "DLP", "ADLP", "BACKEND", "far_pairs", "far_points", "far_pairs_numpy", "far_points_numpy",
           "set_threads"]


def _numba_requested() -> bool:
    return os.environ.get("NURBSBEM_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not _numba_requested():
        raise ImportError
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def set_threads(k: int) -> None:
    """Cap the numba worker count (no-op on the numpy path)."""
    if HAVE_NUMBA and k > 0:
        numba.set_num_threads(min(int(k), numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# Both kernels receive element data at two quadrature orders: the regular
# order (X, F, H, NY) and a reduced order for well-separated pairs (the *c
# arrays).  Element e has center cen[e] and a radius bound ln[e]; a pair is
# well separated when |cen_j - cen_k| - ln_j - ln_k >= ratio * max(ln_j, ln_k).
# ---------------------------------------------------------------------------
# numpy versions


def _separated(cj, lj, cen, ln, ratio):
    dist = np.hypot(cen[:, 0] - cj[0], cen[:, 1] - cj[1]) - lj - ln
    return dist >= ratio * np.maximum(lj, ln)


def _pair_block(Xj, Fj, Xk, Hk, NYk, kernel):
    d = Xj[:, None, None, :] - Xk[None, :, :, :]
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    if kernel == LOG:
        g = (-0.5 * _C) * np.log(r2)
    else:
        g = _C * np.einsum("ankd,nkd->ank", d, NYk) / r2
    u = np.einsum("ank,nkr->anr", g, Hk)
    return np.einsum("as,anr->snr", Fj, u)


def far_pairs_numpy(X, F, H, NY, Xc, Fc, Hc, NYc, cen, ln, ratio, It, Ir, nbr, kernel, upper, out):
    """Accumulate regular element-pair blocks into ``out``.

    X: (n, q, 2) quadrature points, shared by test and trial side.
    F: (n, q, at) test values times weights; H: (n, q, ar) trial values times weights.
    It, Ir: local-to-global maps, already shifted so that dropped entries point
    at the last row/column of ``out``.  NY: normals at the points.
    nbr: (n, 2) neighbor elements whose pairs are excluded (-1 for none).
    upper: only pairs j < j' are summed (symmetric forms).
    """
    n = X.shape[0]
    cols = np.arange(n)
    for j in range(n):
        keep = cols > j if upper else cols != j
        keep[nbr[j][nbr[j] >= 0]] = False
        sep = _separated(cen[j], ln[j], cen, ln, ratio)
        for idx, (XX, FF, HH, NN) in ((cols[keep & ~sep], (X, F, H, NY)), (cols[keep & sep], (Xc, Fc, Hc, NYc))):
            if idx.size:
                blk = _pair_block(XX[j], FF[j], XX[idx], HH[idx], NN[idx], kernel)
                np.add.at(out, (It[j][:, None, None], Ir[idx][None, :, :]), blk)
    return out


def _point_sum(P, NP, Y, NY, D, mask, kernel):
    d = P[:, None, None, :] - Y[None, :, :, :]
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    r2 = np.where(mask[:, :, None], r2, 1.0)
    if kernel == LOG:
        g = (-0.5 * _C) * np.log(r2)
    elif kernel == DLP:
        g = _C * np.einsum("mnkd,nkd->mnk", d, NY) / r2
    else:
        g = -_C * np.einsum("mnkd,md->mnk", d, NP) / r2
    g = np.where(mask[:, :, None], g, 0.0)
    return np.einsum("mnk,nk->m", g, D)


def far_points_numpy(P, NP, skip, Y, NY, D, Yc, NYc, Dc, cen, ln, ratio, kernel, block=64):
    """sum over elements e not in skip[i] and points k of D[e,k] * G(P[i], Y[e,k])."""
    m = P.shape[0]
    n = Y.shape[0]
    out = np.zeros(m)
    for s in range(0, m, block):
        sl = slice(s, min(m, s + block))
        nb = sl.stop - sl.start
        mask = np.ones((nb, n), dtype=bool)
        rows = np.repeat(np.arange(nb), skip.shape[1])
        sk = skip[sl].ravel()
        ok = sk >= 0
        mask[rows[ok], sk[ok]] = False
        dist = np.hypot(P[sl, None, 0] - cen[None, :, 0], P[sl, None, 1] - cen[None, :, 1]) - ln[None, :]
        sep = dist >= ratio * ln[None, :]
        out[sl] = _point_sum(P[sl], NP[sl], Y, NY, D, mask & ~sep, kernel)
        out[sl] += _point_sum(P[sl], NP[sl], Yc, NYc, Dc, mask & sep, kernel)
    return out


# ---------------------------------------------------------------------------
# numba versions

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_pair(X, F, H, NY, j, jp, kernel, g, u, It, Ir, out):
        q = X.shape[1]
        at = F.shape[2]
        ar = H.shape[2]
        for a in range(q):
            x0 = X[j, a, 0]
            x1 = X[j, a, 1]
            for b in range(q):
                d0 = x0 - X[jp, b, 0]
                d1 = x1 - X[jp, b, 1]
                r2 = d0 * d0 + d1 * d1
                if kernel == 0:
                    g[a, b] = (-0.5 * _C) * math.log(r2)
                else:
                    g[a, b] = _C * (d0 * NY[jp, b, 0] + d1 * NY[jp, b, 1]) / r2
        for a in range(q):
            for r in range(ar):
                acc = 0.0
                for b in range(q):
                    acc += g[a, b] * H[jp, b, r]
                u[a, r] = acc
        for s in range(at):
            row = It[j, s]
            for r in range(ar):
                acc = 0.0
                for a in range(q):
                    acc += F[j, a, s] * u[a, r]
                out[row, Ir[jp, r]] += acc

    @njit(cache=True)
    def far_pairs_numba(X, F, H, NY, Xc, Fc, Hc, NYc, cen, ln, ratio, It, Ir, nbr, kernel, upper, out):
        n, q, _ = X.shape
        qc = Xc.shape[1]
        ar = H.shape[2]
        g = np.empty((q, q))
        u = np.empty((q, ar))
        gc = np.empty((qc, qc))
        uc = np.empty((qc, ar))
        for j in range(n):
            start = j + 1 if upper else 0
            for jp in range(start, n):
                if jp == j or jp == nbr[j, 0] or jp == nbr[j, 1]:
                    continue
                dist = math.hypot(cen[j, 0] - cen[jp, 0], cen[j, 1] - cen[jp, 1]) - ln[j] - ln[jp]
                if dist >= ratio * max(ln[j], ln[jp]):
                    _nb_pair(Xc, Fc, Hc, NYc, j, jp, kernel, gc, uc, It, Ir, out)
                else:
                    _nb_pair(X, F, H, NY, j, jp, kernel, g, u, It, Ir, out)
        return out

    @njit(cache=True)
    def _nb_point(x0, x1, n0, n1, Y, NY, D, e, kernel):
        acc = 0.0
        for b in range(Y.shape[1]):
            d0 = x0 - Y[e, b, 0]
            d1 = x1 - Y[e, b, 1]
            r2 = d0 * d0 + d1 * d1
            if kernel == 0:
                g = (-0.5 * _C) * math.log(r2)
            elif kernel == 1:
                g = _C * (d0 * NY[e, b, 0] + d1 * NY[e, b, 1]) / r2
            else:
                g = -_C * (d0 * n0 + d1 * n1) / r2
            acc += D[e, b] * g
        return acc

    @njit(cache=True)
    def far_points_numba(P, NP, skip, Y, NY, D, Yc, NYc, Dc, cen, ln, ratio, kernel):
        m = P.shape[0]
        n = Y.shape[0]
        ns = skip.shape[1]
        out = np.zeros(m)
        for i in range(m):
            x0 = P[i, 0]
            x1 = P[i, 1]
            acc = 0.0
            for e in range(n):
                hit = False
                for k in range(ns):
                    if skip[i, k] == e:
                        hit = True
                if hit:
                    continue
                dist = math.hypot(x0 - cen[e, 0], x1 - cen[e, 1]) - ln[e]
                if dist >= ratio * ln[e]:
                    acc += _nb_point(x0, x1, NP[i, 0], NP[i, 1], Yc, NYc, Dc, e, kernel)
                else:
                    acc += _nb_point(x0, x1, NP[i, 0], NP[i, 1], Y, NY, D, e, kernel)
            out[i] = acc
        return out

    _far_pairs_impl = far_pairs_numba
    _far_points_impl = far_points_numba
else:  # pragma: no cover
    far_pairs_numba = None
    far_points_numba = None
    _far_pairs_impl = far_pairs_numpy
    _far_points_impl = far_points_numpy


def _f(a, dtype=float):
    return np.ascontiguousarray(a, dtype=dtype)


def far_pairs(fine, coarse, geom, It, Ir, nbr, kernel, upper, nt, nr, backend=None):
    """Dense (nt, nr) matrix of regular element-pair contributions.

    ``fine`` and ``coarse`` are tuples (X, F, H, NY) at the regular and the
    reduced order; ``geom`` is (centers, radii, ratio).  Index -1 in ``It``/``Ir``
    drops the entry.  With ``upper`` only pairs j < j' are accumulated.
    """
    impl = _pick(backend, far_pairs_numba, far_pairs_numpy, _far_pairs_impl)
    It = np.where(It < 0, nt, It).astype(np.int64)
    Ir = np.where(Ir < 0, nr, Ir).astype(np.int64)
    out = np.zeros((nt + 1, nr + 1))
    cen, ln, ratio = geom
    impl(*[_f(a) for a in fine], *[_f(a) for a in coarse], _f(cen), _f(ln), float(ratio), It, Ir,
         _f(nbr, np.int64), int(kernel), bool(upper), out)
    return out[:nt, :nr]


def far_points(P, NP, skip, fine, coarse, geom, kernel, backend=None):
    """Regular part of a potential at points P with per-point skipped elements.

    ``fine``/``coarse`` are (Y, NY, D) with D the density times weights.
    """
    impl = _pick(backend, far_points_numba, far_points_numpy, _far_points_impl)
    cen, ln, ratio = geom
    return impl(_f(P), _f(NP), _f(skip, np.int64), *[_f(a) for a in fine], *[_f(a) for a in coarse],
                _f(cen), _f(ln), float(ratio), int(kernel))


def _pick(backend, nb, npy, default):
    if backend is None:
        return default
    if backend == "numpy":
        return npy
    if backend == "numba":
        if nb is None:
            raise RuntimeError("numba backend unavailable")
        return nb
    raise ValueError(f"unknown backend {backend!r}")
