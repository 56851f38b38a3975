"""Node-based a-posteriori error indicators.

Every indicator is assembled from element contributions: the indicator of a
node x is the root of the sum over the (one or two) elements of its patch.
Quantities that need operator values (residuals) are sampled at the Chebyshev
nodes of every element and replaced by their interpolation polynomials; the
same samples serve the Faermann and the weighted-residual estimator.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .assembly import (
    DataFunction,
    DiscreteFunction,
    PiecewisePolynomial,
    Space,
    coeffs_to_refined,
    data_rule,
)
from .evaluation import cheby_points, dinterp_from_cheby, eval_K_at, eval_Kp_at, eval_V_at, interp_from_cheby, potential_at
from .geometry import BoundaryMesh, ModelProblem
from .quadrature import QuadConfig, gauss_legendre
from .splines import uniform_refine

__all__ = [
    "IndicatorField",
    "patch_indicators",
    "est_hh2_weak",
    "est_hh2_hyp",
    "est_faermann",
    "est_res_weak",
    "est_res_hyp",
    "oscillations",
    "combine_hyp",
    "residual_weak",
    "residual_hyp",
    "faermann_element_terms",
    "res_weak_from_samples",
    "faermann_from_samples",
]


@dataclass(frozen=True)
class IndicatorField:
    """Nonnegative indicator per node of a mesh."""

    values: np.ndarray
    nodes: np.ndarray
    kind: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        x = np.asarray(self.nodes, dtype=float)
        if v.shape != x.shape or v.ndim != 1:
            raise ValueError("one indicator value per node")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("indicators must be finite and nonnegative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "nodes", x)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def total(self) -> float:
        return float(math.sqrt(np.sum(self.values**2)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("node,value\n")
        for x, v in zip(self.nodes, self.values):
            buf.write(f"{float(x)!r},{float(v)!r}\n")
        return buf.getvalue()


def patch_indicators(mesh: BoundaryMesh, elem_sq, kind: str, extra_sq=None) -> IndicatorField:
    """Root of the summed element contributions over each node patch (plus ``extra_sq``)."""
    elem_sq = np.asarray(elem_sq, dtype=float)
    pad = np.append(elem_sq, 0.0)
    p = np.where(mesh.patches < 0, mesh.n, mesh.patches)
    sq = pad[p[:, 0]] + pad[p[:, 1]]
    if extra_sq is not None:
        sq = sq + extra_sq
    return IndicatorField(np.sqrt(np.maximum(sq, 0.0)), mesh.node_param.copy(), kind)


def _gauss(mesh: BoundaryMesh, quad: QuadConfig):
    g = gauss_legendre(quad.regular_order)
    e = np.arange(mesh.n)
    X, _, jac, nu = mesh.local(e, g.nodes)
    return g, e, X, jac, nu


# ---------------------------------------------------------------------------
# (h - h/2) estimators


def _hh2_difference(coarse: DiscreteFunction, fine: DiscreteFunction) -> DiscreteFunction:
    sc, sf = coarse.space, fine.space
    expected = uniform_refine(sc.kv)[0]
    if sf.kv != expected:
        raise ValueError("fine space is not the uniform refinement of the coarse space")
    return DiscreteFunction(sf, fine.coeffs - coeffs_to_refined(coarse, sf).coeffs)


def _fine_to_coarse(sc: Space, sf: Space, fine_sq: np.ndarray) -> np.ndarray:
    parent = np.searchsorted(sc.mesh.x, sf.mesh.left, side="right") - 1
    out = np.zeros(sc.mesh.n)
    np.add.at(out, parent, fine_sq)
    return out


def est_hh2_weak(coarse: DiscreteFunction, fine: DiscreteFunction) -> IndicatorField:
    """||h^(1/2) (Phi_fine - Phi)||_{L2(patch)} per node of the coarse mesh."""
    d = _hh2_difference(coarse, fine)
    sf = fine.space
    g, e, _, jac, _ = _gauss(sf.mesh, sf.quad)
    fine_sq = (d.values(e, g.nodes) ** 2 * jac) @ g.weights
    sq = _fine_to_coarse(coarse.space, sf, fine_sq) * coarse.space.mesh.arclength
    return patch_indicators(coarse.space.mesh, sq, "hh2")


def est_hh2_hyp(coarse: DiscreteFunction, fine: DiscreteFunction) -> IndicatorField:
    """||h^(1/2) d/ds (U_fine - U)||_{L2(patch)} per node of the coarse mesh."""
    d = _hh2_difference(coarse, fine)
    sf = fine.space
    g, e, _, jac, _ = _gauss(sf.mesh, sf.quad)
    fine_sq = (d.dvalues(e, g.nodes) ** 2 / jac) @ g.weights
    sq = _fine_to_coarse(coarse.space, sf, fine_sq) * coarse.space.mesh.arclength
    return patch_indicators(coarse.space.mesh, sq, "hh2")


# ---------------------------------------------------------------------------
# weakly singular residual: Faermann and weighted residual


def residual_weak(space: Space, Phi: DiscreteFunction, problem: ModelProblem, backend: Optional[str] = None) -> np.ndarray:
    """f - V Phi at the Chebyshev nodes of every element, shape (n, m).

    f = u for the indirect and f = (1/2 + K) u for the direct formulation.
    """
    mesh = space.mesh
    m = space.quad.interp_points
    pts = cheby_points(mesh, m)
    u = DataFunction(mesh, problem.u)
    f = u.values(pts.elem[:, None], pts.sigma[:, None])[:, 0]
    if problem.approach == "direct":
        f = 0.5 * f + eval_K_at(space, u, pts, backend=backend)
    r = f - eval_V_at(space, Phi, pts, backend=backend)
    return r.reshape(mesh.n, m)


def est_res_weak(space: Space, Phi: DiscreteFunction, problem: ModelProblem, residual: Optional[np.ndarray] = None,
                 backend: Optional[str] = None) -> IndicatorField:
    """||h^(1/2) d/ds (f - V Phi)||_{L2(patch)} per node."""
    r = residual_weak(space, Phi, problem, backend) if residual is None else residual
    return res_weak_from_samples(space.mesh, r, space.quad)


def res_weak_from_samples(mesh: BoundaryMesh, r: np.ndarray, quad: QuadConfig = QuadConfig()) -> IndicatorField:
    g, e, _, jac, _ = _gauss(mesh, quad)
    dr = dinterp_from_cheby(r, g.nodes)
    sq = mesh.arclength * ((dr**2 / jac) @ g.weights)
    return patch_indicators(mesh, sq, "res")


def _diff_quotient(mesh, r, ea, sa, eb, sb):
    """(r(y) - r(z))^2 / |y - z|^2 * jac(y) jac(z) with y on ea at sa and z on eb at sb."""
    us, si = np.unique(sa, return_inverse=True)
    ut, ti = np.unique(sb, return_inverse=True)
    Xa, _, ja, _ = mesh.local(ea, us)
    Xb, _, jb, _ = mesh.local(eb, ut)
    Ra = interp_from_cheby(r[ea], us)[:, si]
    Rb = interp_from_cheby(r[eb], ut)[:, ti]
    d = Xa[:, si] - Xb[:, ti]
    return (Ra - Rb) ** 2 / (d[..., 0] ** 2 + d[..., 1] ** 2) * ja[:, si] * jb[:, ti]


def faermann_element_terms(mesh: BoundaryMesh, r: np.ndarray, quad: QuadConfig = QuadConfig()):
    """Element seminorms |r|^2_{H^1/2(Q)} and cross terms of every node patch.

    Returns (sem, cross); cross[k] is int_Q int_Q' |r(y)-r(z)|^2/|y-z|^2 for the
    two elements of the patch of node k (0 for one-element patches).
    """
    g = gauss_legendre(quad.singular_order)
    sg, tg = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    w = (np.outer(g.weights, g.weights) * sg).ravel()
    sg, tg = sg.ravel(), tg.ravel()
    e = np.arange(mesh.n)
    # symmetric integrand: twice the triangle t < s, Duffy (s, t) = (sigma, sigma tau)
    sem = 2.0 * (_diff_quotient(mesh, r, e, sg, e, sg * tg) @ w)
    cross = np.zeros(mesh.n_nodes)
    two = (mesh.patches[:, 0] >= 0) & (mesh.patches[:, 1] >= 0) & (mesh.patches[:, 0] != mesh.patches[:, 1])
    if np.any(two):
        ql = mesh.patches[two, 0]  # node at sigma = 1
        qr = mesh.patches[two, 1]  # node at sigma = 0
        s = np.concatenate([sg * tg, sg])
        t = np.concatenate([1.0 - sg, 1.0 - sg * tg])
        ww = np.concatenate([w, w])
        cross[two] = _diff_quotient(mesh, r, qr, s, ql, t) @ ww
    return sem, cross


def est_faermann(space: Space, Phi: DiscreteFunction, problem: ModelProblem, residual: Optional[np.ndarray] = None,
                 backend: Optional[str] = None) -> IndicatorField:
    """|f - V Phi|_{H^1/2(patch)} per node (Sobolev-Slobodeckij seminorm)."""
    r = residual_weak(space, Phi, problem, backend) if residual is None else residual
    return faermann_from_samples(space.mesh, r, space.quad)


def faermann_from_samples(mesh: BoundaryMesh, r: np.ndarray, quad: QuadConfig = QuadConfig()) -> IndicatorField:
    sem, cross = faermann_element_terms(mesh, r, quad)
    return patch_indicators(mesh, sem, "fae", 2.0 * cross)


# ---------------------------------------------------------------------------
# hypersingular residual and oscillations


def residual_hyp(space: Space, U: DiscreteFunction, problem: ModelProblem, proj: PiecewisePolynomial,
                 backend: Optional[str] = None) -> np.ndarray:
    """g - W U at the regular Gauss nodes of every element, shape (n, q).

    g = P phi (indirect) or (1/2 - K') P phi (direct), P the L2 projection.
    W U and K' P phi are sampled at Chebyshev nodes and interpolated.
    """
    mesh = space.mesh
    g, e, _, jac, _ = _gauss(mesh, space.quad)
    m = space.quad.interp_points
    pts = cheby_points(mesh, m)
    v = potential_at(space, None, pts, kernels.LOG, backend=backend, _dens=lambda ee, s, j: U.dvalues(ee, s))
    WU = -dinterp_from_cheby(v.reshape(mesh.n, m), g.nodes) / jac
    gv = proj.values(e, g.nodes)
    if problem.approach == "direct":
        kp = eval_Kp_at(space, proj, pts, backend=backend).reshape(mesh.n, m)
        gv = 0.5 * gv - interp_from_cheby(kp, g.nodes)
    return gv - WU


def est_res_hyp(space: Space, U: DiscreteFunction, problem: ModelProblem, proj: PiecewisePolynomial,
                residual: Optional[np.ndarray] = None, backend: Optional[str] = None) -> IndicatorField:
    """||h^(1/2) (g - W U)||_{L2(patch)} per node."""
    r = residual_hyp(space, U, problem, proj, backend) if residual is None else residual
    g, e, _, jac, _ = _gauss(space.mesh, space.quad)
    sq = space.mesh.arclength * ((r**2 * jac) @ g.weights)
    return patch_indicators(space.mesh, sq, "res")


def oscillations(mesh: BoundaryMesh, phi, proj: PiecewisePolynomial, quad: QuadConfig = QuadConfig()) -> IndicatorField:
    """||h^(1/2) (phi - P phi)||_{L2(patch)} per node; phi a callable of (points, normals).

    Elements touching a node of the curve use the graded data rule, since
    phi may be singular at corners.
    """
    sq = np.zeros(mesh.n)
    e1, g1, e2, g2 = data_rule(mesh, quad)
    for e, g in ((e1, g1), (e2, g2)):
        if len(e) == 0:
            continue
        X, _, jac, nu = mesh.local(e, g.nodes)
        fv = phi.values(e, g.nodes) if hasattr(phi, "values") else np.asarray(phi(X, nu), dtype=float)
        sq[e] = ((fv - proj.values(e, g.nodes)) ** 2 * jac) @ g.weights
    return patch_indicators(mesh, sq * mesh.arclength, "osc")


def combine_hyp(eta: IndicatorField, osc: IndicatorField) -> IndicatorField:
    """Nodewise (eta^2 + osc^2)^(1/2)."""
    if len(eta) != len(osc) or not np.array_equal(eta.nodes, osc.nodes):
        raise ValueError("indicator fields live on different meshes")
    return IndicatorField(np.hypot(eta.values, osc.values), eta.nodes.copy(), f"{eta.kind}+{osc.kind}")
