"""Pointwise values of the boundary integral operators on the boundary.

A trace point is an element together with a local coordinate sigma in [0, 1].
For a point x = gamma_j(sigma) the integral over Gamma is split into

* the own element, cut at sigma into two branches parametrized from x
  outwards, so the kernel singularity sits at tau = 0.  The logarithm is split
  as log(|x - y| / tau) + log(tau); the first part is smooth and integrated by
  Gauss, the second by the log-weighted rule.  Normal-derivative kernels are
  bounded on a smooth element and need Gauss only;
* the two neighbours, integrated by a composite Gauss rule graded towards the
  shared node (the kernel is smooth but may be nearly singular);
* all other elements, handled by the far-field kernel in ``kernels``.

The hypersingular operator is evaluated as W u = -d/ds V(du/ds): V is sampled
at Chebyshev nodes of the element and the interpolant is differentiated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .assembly import DataFunction, Space
from .geometry import BoundaryMesh
from .quadrature import (
    QuadConfig,
    cheby_nodes,
    gauss_legendre,
    graded_rule,
    lagrange_deriv_matrix,
    lagrange_interp_matrix,
    log_gauss,
)

__all__ = [
    "TracePoints",
    "eval_V_at",
    "eval_K_at",
    "eval_Kp_at",
    "eval_W_at",
    "potential_at",
    "cheby_points",
    "values_at_cheby",
    "interp_from_cheby",
    "dinterp_from_cheby",
]

_C = 1.0 / (2.0 * math.pi)
# Gauss points per subinterval of the graded neighbour rule
_NEAR_POINTS = 10
_MAX_LEVELS = 50


@dataclass(frozen=True)
class TracePoints:
    """A batch of boundary points given as (element, local coordinate)."""

    elem: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.elem, dtype=np.int64))
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if e.shape != s.shape or e.ndim != 1:
            raise ValueError("elem and sigma must be 1d arrays of equal length")
        if np.any((s < 0.0) | (s > 1.0)):
            raise ValueError("local coordinates must lie in [0, 1]")
        object.__setattr__(self, "elem", e)
        object.__setattr__(self, "sigma", s)

    def __len__(self) -> int:
        return len(self.elem)

    @classmethod
    def from_params(cls, mesh: BoundaryMesh, s, side: str = "right") -> "TracePoints":
        """Points gamma(s); at a node ``side`` picks the element to its left or right."""
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any((s < mesh.kv.a) | (s > mesh.kv.b)):
            raise ValueError("parameter outside the mesh")
        if side == "right":
            e = np.minimum(np.searchsorted(mesh.x, s, side="right") - 1, mesh.n - 1)
        else:
            e = np.searchsorted(mesh.x, s, side="left") - 1
            if mesh.closed:
                e = np.where(e < 0, mesh.n - 1, e)
                s = np.where(e == mesh.n - 1, np.where(s == mesh.kv.a, mesh.kv.b, s), s)
            e = np.maximum(e, 0)
        sig = np.clip((s - mesh.left[e]) / mesh.h[e], 0.0, 1.0)
        return cls(e, sig)

    def params(self, mesh: BoundaryMesh) -> np.ndarray:
        return mesh.left[self.elem] + self.sigma * mesh.h[self.elem]


def _mesh_quad(obj, quad):
    if isinstance(obj, Space):
        return obj.mesh, (obj.quad if quad is None else quad)
    if isinstance(obj, BoundaryMesh):
        return obj, (QuadConfig() if quad is None else quad)
    raise TypeError("expected a Space or a BoundaryMesh")


def _as_density(mesh, f):
    """Density with respect to the local coordinate: f(gamma) |d gamma / d sigma|."""
    if callable(f) and not hasattr(f, "values"):
        f = DataFunction(mesh, f)
    return lambda e, s, jac: np.asarray(f.values(e, s), dtype=float) * jac


def _kernel(kernel, P, NP, Y, NY):
    d = P[:, None, :] - Y
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    if kernel == kernels.DLP:
        return _C * np.sum(d * NY, axis=-1) / r2
    return -_C * np.sum(d * NP[:, None, :], axis=-1) / r2


def _chord_ratio(mesh, e, s, t, P, Y, dist):
    """|x - y| / |sigma_x - sigma_y|, using the cancellation-free chord where
    the distance is small against the coordinates."""
    d = P[:, None, :] - Y
    dist = np.broadcast_to(dist, d.shape[:-1])
    q = np.hypot(d[..., 0], d[..., 1]) / dist
    scale = np.maximum(np.hypot(P[:, 0], P[:, 1]), 1.0)[:, None]
    bad = q * dist < 1e-6 * scale
    if np.any(bad):
        i, j = np.nonzero(bad)
        c = mesh.chord(e[i], s[i], t[i, j])
        q[i, j] = np.hypot(c[:, 0], c[:, 1]) / dist[i, j]
    return q


def _own(mesh, quad, dens, e, sig, P, NP, kernel):
    """Integral over the element containing x, split at x."""
    out = np.zeros(len(e))
    g = gauss_legendre(quad.regular_order)
    lg = log_gauss(quad.singular_order)
    for sign in (-1.0, 1.0):
        ell = sig if sign < 0 else 1.0 - sig
        ok = ell > 0.0
        if not np.any(ok):
            continue
        ee, ss, ll, PP, NN = e[ok], sig[ok], ell[ok], P[ok], NP[ok]
        tau = g.nodes[None, :]
        t = ss[:, None] + sign * tau * ll[:, None]
        Y, _, jac, nu = mesh.local(ee[:, None], t)
        dv = dens(ee[:, None], t, jac)
        if kernel == kernels.LOG:
            q = _chord_ratio(mesh, ee, ss, t, PP, Y, tau * ll[:, None])
            val = -_C * (dv * np.log(q)) @ g.weights
            t2 = ss[:, None] + sign * lg.nodes[None, :] * ll[:, None]
            Y2, _, jac2, _ = mesh.local(ee[:, None], t2)
            # log(|x-y|) = log(|x-y| / (tau ell)) + log(tau) + log(ell)
            dv2 = dens(ee[:, None], t2, jac2)
            val += -_C * (dv2 @ lg.weights)
            val += -_C * np.log(ll) * (dv @ g.weights)
        else:
            val = (_kernel(kernel, PP, NN, Y, nu) * dv) @ g.weights
        out[ok] += ll * val
    return out


def _near(mesh, dens, nb, P, NP, delta, at_end, kernel):
    """Neighbour element integrals, graded towards the node shared with x."""
    out = np.zeros(len(nb))
    with np.errstate(divide="ignore"):
        lev = np.ceil(np.log2(1.0 / np.maximum(delta, 2.0 ** -_MAX_LEVELS)))
    lev = np.clip(lev, 0, _MAX_LEVELS).astype(int)
    for L in np.unique(lev):
        sel = np.nonzero(lev == L)[0]
        rule = graded_rule(int(L), _NEAR_POINTS)
        tt = np.where(at_end[sel, None], 1.0 - rule.nodes[None, :], rule.nodes[None, :])
        Y, _, jac, nu = mesh.local(nb[sel, None], tt)
        dv = dens(nb[sel, None], tt, jac)
        if kernel == kernels.LOG:
            d = P[sel, None, :] - Y
            K = (-0.5 * _C) * np.log(d[..., 0] ** 2 + d[..., 1] ** 2)
        else:
            K = _kernel(kernel, P[sel], NP[sel], Y, nu)
        out[sel] = (K * dv) @ rule.weights
    return out


def _far_data(mesh, quad, dens):
    e = np.arange(mesh.n)
    data = []
    for order in (quad.regular_order, quad.far_order):
        g = gauss_legendre(order)
        Y, _, jac, nu = mesh.local(e, g.nodes)
        data.append((Y, nu, dens(e, g.nodes, jac) * g.weights[None, :]))
    cen = mesh.local(e, np.array([0.5]))[0][:, 0, :]
    return data, (cen, mesh.arclength, quad.far_ratio)


def potential_at(obj, density, points: TracePoints, kernel: int, quad: Optional[QuadConfig] = None,
                 backend: Optional[str] = None, _dens=None) -> np.ndarray:
    """int_Gamma G(x, y) psi(y) dy at the trace points for kernel LOG, DLP or ADLP.

    ``density`` has a ``values(elems, sigma)`` method or is a callable of
    (points, normals).  Points at the common node of two elements are moved to
    sigma = 0 of the right element; both elements are then split-integrated.
    """
    mesh, quad = _mesh_quad(obj, quad)
    dens = _dens if _dens is not None else _as_density(mesh, density)
    e = points.elem.copy()
    sig = points.sigma.copy()
    if np.any(e >= mesh.n) or np.any(e < 0):
        raise ValueError("element index outside the mesh")
    shift = (sig == 1.0) & (mesh.next[e] >= 0)
    e[shift] = mesh.next[e[shift]]
    sig[shift] = 0.0
    P, _, _, NP = mesh.local(e[:, None], sig[:, None])
    P, NP = P[:, 0], NP[:, 0]
    if kernel == kernels.ADLP and np.any(sig == 0.0):
        # the normal at a node is taken from the element the point was given on
        NP = NP.copy()
        back = shift & (sig == 0.0)
        if np.any(back):
            NP[back] = mesh.local(points.elem[back][:, None], np.ones((int(back.sum()), 1)))[3][:, 0]
    out = _own(mesh, quad, dens, e, sig, P, NP, kernel)
    prev, nxt = mesh.prev[e], mesh.next[e]
    at0 = (sig == 0.0) & (prev >= 0)
    if np.any(at0):
        out[at0] += _own(mesh, quad, dens, prev[at0], np.ones(int(at0.sum())), P[at0], NP[at0], kernel)
    L = mesh.arclength
    own_len = L[e]
    for nb, dist, at_end in ((prev, sig * own_len, True), (nxt, (1.0 - sig) * own_len, False)):
        ok = (nb >= 0) & (nb != e)
        if at_end:
            ok &= ~at0
        if not np.any(ok):
            continue
        delta = dist[ok] / L[nb[ok]]
        out[ok] += _near(mesh, dens, nb[ok], P[ok], NP[ok], delta, np.full(int(ok.sum()), at_end), kernel)
    skip = np.column_stack([e, prev, nxt])
    (fine, coarse), geom = _far_data(mesh, quad, dens)
    out += kernels.far_points(P, NP, skip, fine, coarse, geom, kernel, backend=backend)
    return out


def _corner_check(mesh: BoundaryMesh, points: TracePoints, what: str) -> None:
    node = (points.sigma == 0.0) | (points.sigma == 1.0)
    if not np.any(node):
        return
    s = points.params(mesh)[node]
    corners = mesh.curve.kv.nodes
    if np.any(np.isin(s, corners)):
        raise ValueError(f"{what} is not defined at nodes of the curve parametrization")


def eval_V_at(obj, psi, points: TracePoints, quad: Optional[QuadConfig] = None,
              backend: Optional[str] = None) -> np.ndarray:
    """Single-layer potential [V psi](x) at trace points."""
    return potential_at(obj, psi, points, kernels.LOG, quad, backend)


def eval_K_at(obj, u, points: TracePoints, quad: Optional[QuadConfig] = None,
              backend: Optional[str] = None) -> np.ndarray:
    """Double-layer potential [K u](x) (principal value on Gamma)."""
    return potential_at(obj, u, points, kernels.DLP, quad, backend)


def eval_Kp_at(obj, phi, points: TracePoints, quad: Optional[QuadConfig] = None,
               backend: Optional[str] = None) -> np.ndarray:
    """Adjoint double-layer [K' phi](x); the normal is taken at x."""
    mesh, _ = _mesh_quad(obj, quad)
    _corner_check(mesh, points, "K'")
    return potential_at(obj, phi, points, kernels.ADLP, quad, backend)


# ---------------------------------------------------------------------------
# Chebyshev sampling per element


def cheby_points(mesh: BoundaryMesh, m: int, elems=None) -> TracePoints:
    """The m Chebyshev nodes of every element (element-major order)."""
    elems = np.arange(mesh.n) if elems is None else np.asarray(elems)
    c = cheby_nodes(m)
    return TracePoints(np.repeat(elems, m), np.tile(c, len(elems)))


def values_at_cheby(obj, fn, m: Optional[int] = None, elems=None, quad: Optional[QuadConfig] = None) -> np.ndarray:
    """(E, m) array of ``fn(points)`` at the Chebyshev nodes of the elements."""
    mesh, quad = _mesh_quad(obj, quad)
    m = quad.interp_points if m is None else m
    pts = cheby_points(mesh, m, elems)
    return np.asarray(fn(pts), dtype=float).reshape(-1, m)


def interp_from_cheby(vals: np.ndarray, sigma) -> np.ndarray:
    """Evaluate per-element interpolants (rows of ``vals``) at local coordinates."""
    L = lagrange_interp_matrix(cheby_nodes(vals.shape[1]), sigma)
    return vals @ L.T


def dinterp_from_cheby(vals: np.ndarray, sigma) -> np.ndarray:
    """d/dsigma of the per-element interpolants at local coordinates."""
    c = cheby_nodes(vals.shape[1])
    D = lagrange_deriv_matrix(c)
    L = lagrange_interp_matrix(c, sigma)
    return vals @ (L @ D).T


def eval_W_at(space: Space, U, points: TracePoints, quad: Optional[QuadConfig] = None,
              backend: Optional[str] = None) -> np.ndarray:
    """Hypersingular operator [W U](x) = -d/ds [V dU/ds](x) of a continuous spline U."""
    if space.kind != "hyp":
        raise ValueError("W acts on continuous splines")
    mesh, quad = _mesh_quad(space, quad)
    _corner_check(mesh, points, "W")
    m = quad.interp_points
    elems, inv = np.unique(points.elem, return_inverse=True)
    dens = lambda e, s, jac: U.dvalues(e, s)
    cp = cheby_points(mesh, m, elems)
    v = potential_at(space, None, cp, kernels.LOG, quad, backend, _dens=dens).reshape(-1, m)
    D = lagrange_deriv_matrix(cheby_nodes(m))
    L = lagrange_interp_matrix(cheby_nodes(m), points.sigma)
    dv = np.sum((L @ D) * v[inv], axis=1)
    jac = mesh.local(points.elem[:, None], points.sigma[:, None])[2][:, 0]
    return -dv / jac
