"""Galerkin systems for the single-layer and hypersingular equations.

Every double integral is computed element pair by element pair on the unit
square.  Pairs without a common point use tensor Gauss quadrature (see
``kernels``); identical elements use the Duffy transform with the logarithm
split off into log-weighted rules; elements sharing one node are rotated so the
shared node sits at (sigma, tau) = (0, 1) and then treated the same way.
The hypersingular form is reduced to the single-layer one by Maue's formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import kernels
from .geometry import BoundaryMesh, ModelProblem, NurbsCurve, build_mesh
from .quadrature import QuadConfig, gauss_legendre, log_gauss
from .splines import KnotVector, nurbs_at_span, refine_to

__all__ = [
    "NumericalError",
    "Space",
    "weak_space",
    "hyp_space",
    "DiscreteFunction",
    "PiecewisePolynomial",
    "DataFunction",
    "GalerkinSystem",
    "LocalSet",
    "basis_values",
    "basis_derivs",
    "function_values",
    "double_integral",
    "assemble_V",
    "assemble_W",
    "assemble_rhs_weak",
    "assemble_rhs_hyp",
    "mass_vector",
    "project_phi",
    "data_rule",
    "solve",
    "coeffs_to_refined",
    "energy_norm",
    "weak_system",
    "hyp_system",
]

_C = 1.0 / (2.0 * math.pi)
_CHUNK = 128


class NumericalError(RuntimeError):
    """Raised when a Galerkin matrix is not positive definite or a solve fails."""


# ---------------------------------------------------------------------------
# ansatz spaces


class Space:
    """Transported (rational) splines on a boundary mesh.

    ``kind="weak"``: all N basis functions, discontinuities allowed (p+1-fold knots).
    ``kind="hyp"``: continuous functions; on closed curves the first and last basis
    functions are merged, on open curves both are dropped (zero at the endpoints).
    """

    def __init__(self, curve: NurbsCurve, kv: KnotVector, weights, kind: str, quad: QuadConfig = QuadConfig()):
        if kind not in ("weak", "hyp"):
            raise ValueError("space kind must be weak or hyp")
        w = np.asarray(weights, dtype=float)
        if w.shape != (kv.n_basis,) or np.any(w <= 0):
            raise ValueError("weights must be positive, one per basis function")
        N, p = kv.n_basis, kv.p
        if kind == "hyp":
            if p < 1:
                raise ValueError("continuous spaces need p >= 1")
            mult = kv.multiplicities()[1:-1]
            if mult.size and mult.max() > p:
                raise ValueError("interior knot multiplicity must be <= p for continuous spaces")
            if kv.closed and w[0] != w[-1]:
                raise ValueError("closed continuous spaces need equal first and last weight")
        self.curve = curve
        self.kv = kv
        self.weights = w
        self.kind = kind
        self.quad = quad
        self.p = p
        self.mesh: BoundaryMesh = build_mesh(curve, kv, quad.regular_order)
        if kv.closed and self.mesh.n < 3:
            raise ValueError("closed boundaries need at least 3 elements")
        dof = np.arange(N)
        if kind == "hyp":
            if kv.closed:
                dof[N - 1] = 0
            else:
                dof = dof - 1
                dof[0] = dof[N - 1] = -1
        self.dof = dof
        self.ndof = N if kind == "weak" else (N - 1 if kv.closed else N - 2)
        if self.ndof < 1:
            raise ValueError("space has no degrees of freedom")
        self.local_index = self.mesh.span[:, None] - p + np.arange(p + 1)
        self.elem_dofs = dof[self.local_index]
        self._cache: dict = {}

    @property
    def closed(self) -> bool:
        return self.kv.closed

    def local_basis(self, elems, sigma, deriv: bool = False):
        """Rational basis on elements (and d/dsigma if ``deriv``), trailing axis p+1."""
        m = self.mesh
        elems = np.asarray(elems)
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 1 and elems.ndim == 1:
            sigma = sigma[None, :]
        ee = elems[..., None] if elems.ndim == sigma.ndim - 1 else elems
        off = sigma * m.h[ee]
        span = np.broadcast_to(m.span[ee], off.shape)
        org = m.left[ee]
        if not deriv:
            return nurbs_at_span(self.kv.full, self.p, self.weights, span, off, origin=org)
        R, dR = nurbs_at_span(self.kv.full, self.p, self.weights, span, off, deriv=True, origin=org)
        return R, dR * m.h[ee][..., None]

    def gauss_data(self, order: Optional[int] = None):
        """Cached geometry at the Gauss nodes of every element."""
        order = self.quad.regular_order if order is None else order
        key = ("gauss", order)
        if key not in self._cache:
            g = gauss_legendre(order)
            e = np.arange(self.mesh.n)
            X, dX, jac, nu = self.mesh.local(e, g.nodes)
            self._cache[key] = (g, X, jac, nu)
        return self._cache[key]

    def separation_data(self):
        """Element centers and radius bounds for the far-field order switch."""
        if "sep" not in self._cache:
            cen = self.mesh.local(np.arange(self.mesh.n), np.array([0.5]))[0][:, 0, :]
            self._cache["sep"] = (cen, self.mesh.arclength.copy(), self.quad.far_ratio)
        return self._cache["sep"]


def weak_space(curve, kv, weights, quad: QuadConfig = QuadConfig()) -> Space:
    return Space(curve, kv, weights, "weak", quad)


def hyp_space(curve, kv, weights, quad: QuadConfig = QuadConfig()) -> Space:
    return Space(curve, kv, weights, "hyp", quad)


# ---------------------------------------------------------------------------
# functions on the boundary


class DiscreteFunction:
    """Coefficient vector against the basis of a ``Space``."""

    def __init__(self, space: Space, coeffs):
        c = np.asarray(coeffs, dtype=float)
        if c.shape != (space.ndof,):
            raise ValueError(f"expected {space.ndof} coefficients, got {c.shape}")
        self.space = space
        self.coeffs = c

    def full_coeffs(self) -> np.ndarray:
        """Coefficients against all N rational basis functions."""
        d = self.space.dof
        return np.where(d >= 0, self.coeffs[np.maximum(d, 0)], 0.0)

    def values(self, elems, sigma):
        R = self.space.local_basis(elems, sigma)
        c = self.full_coeffs()[self.space.local_index[_elems_like(elems, R)]]
        return np.sum(R * c, axis=-1)

    def dvalues(self, elems, sigma):
        """d/dsigma of the function on each element (parameter derivative times h)."""
        _, dR = self.space.local_basis(elems, sigma, deriv=True)
        c = self.full_coeffs()[self.space.local_index[_elems_like(elems, dR)]]
        return np.sum(dR * c, axis=-1)

    def __call__(self, t):
        m = self.space.mesh
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = np.array([m.element_of(x) for x in t])
        return self.values(e[:, None], ((t - m.left[e]) / m.h[e])[:, None])[:, 0]


def _elems_like(elems, arr):
    elems = np.asarray(elems)
    return elems.reshape(elems.shape + (1,) * (arr.ndim - 1 - elems.ndim))


class PiecewisePolynomial:
    """Element-wise polynomials in the local coordinate, Legendre basis P_k(2 sigma - 1)."""

    def __init__(self, mesh: BoundaryMesh, coeffs):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != mesh.n:
            raise ValueError("need one coefficient row per element")
        self.mesh = mesh
        self.coeffs = c
        self.degree = c.shape[1] - 1

    @staticmethod
    def legendre(sigma, degree: int):
        x = 2.0 * np.asarray(sigma, dtype=float) - 1.0
        out = [np.ones_like(x)]
        if degree >= 1:
            out.append(x)
        for k in range(2, degree + 1):
            out.append(((2 * k - 1) * x * out[-1] - (k - 1) * out[-2]) / k)
        return np.stack(out, axis=-1)

    def values(self, elems, sigma):
        elems = np.asarray(elems)
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 1 and elems.ndim == 1:
            sigma = sigma[None, :]
        ee = elems if elems.ndim == sigma.ndim else elems[..., None]
        ee, sigma = np.broadcast_arrays(ee, sigma)
        L = self.legendre(sigma, self.degree)
        c = self.coeffs[ee]
        return np.sum(L * c, axis=-1)

    def scaled(self, a: float) -> "PiecewisePolynomial":
        return PiecewisePolynomial(self.mesh, a * self.coeffs)


class DataFunction:
    """A function given by a callable of boundary points and normals."""

    def __init__(self, mesh: BoundaryMesh, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        self.mesh = mesh
        self.fn = fn

    def values(self, elems, sigma):
        X, _, _, nu = self.mesh.local(elems, sigma)
        return np.asarray(self.fn(X, nu), dtype=float)


# ---------------------------------------------------------------------------
# local function sets and the double-integral engine


@dataclass
class LocalSet:
    """Local functions on every element, as densities w.r.t. the local coordinate.

    ``evaluate(elems, sigma, jac)`` returns (E, m, nl) values; ``index`` maps
    local to global numbers (-1 drops); ``size`` is the global count.
    """

    evaluate: Callable
    index: np.ndarray
    size: int


def basis_values(space: Space) -> LocalSet:
    """Basis functions times |gamma_e'| (single-layer densities)."""
    return LocalSet(lambda e, s, jac: space.local_basis(e, s) * jac[..., None], space.elem_dofs, space.ndof)


def basis_derivs(space: Space) -> LocalSet:
    """Arclength derivatives of basis functions times |gamma_e'|, i.e. d/dsigma."""
    return LocalSet(lambda e, s, jac: space.local_basis(e, s, deriv=True)[1], space.elem_dofs, space.ndof)


def function_values(f, mesh: BoundaryMesh) -> LocalSet:
    """A single function times |gamma_e'|."""
    return LocalSet(lambda e, s, jac: (f.values(e, s) * jac)[..., None], np.zeros((mesh.n, 1), dtype=int), 1)


_FULL, _LOGQ, _CONST = 0, 1, 2


@dataclass(frozen=True)
class _Samples:
    s: np.ndarray
    t: np.ndarray
    w: np.ndarray
    mode: np.ndarray
    d: np.ndarray
    # unique local coordinates on each side and the gather maps back to samples
    us: np.ndarray = None
    s_inv: np.ndarray = None
    ut: np.ndarray = None
    t_inv: np.ndarray = None


def _pack(parts) -> _Samples:
    cols = [np.concatenate([np.ravel(np.broadcast_to(p[k], np.shape(p[0]))) for p in parts]) for k in range(5)]
    us, s_inv = np.unique(cols[0], return_inverse=True)
    ut, t_inv = np.unique(cols[1], return_inverse=True)
    return _Samples(*cols, us, s_inv, ut, t_inv)


@lru_cache(maxsize=None)
def _same_element_samples(kernel: int, nr: int, ns: int) -> _Samples:
    g, lg = gauss_legendre(nr), log_gauss(ns)
    sg, tg = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    wg = np.outer(g.weights, g.weights) * sg
    if kernel != kernels.LOG:
        a = (sg, sg * tg, wg, _FULL, 0.0)
        return _pack([a, (a[1], a[0], wg, _FULL, 0.0)])
    d = sg * (1.0 - tg)
    parts = [(sg, sg * tg, wg, _LOGQ, d), (sg * tg, sg, wg, _LOGQ, d)]
    # log(sigma) factor: log-Gauss in sigma
    sl, tl = np.meshgrid(lg.nodes, g.nodes, indexing="ij")
    wl = np.outer(lg.weights, g.weights) * sl
    parts += [(sl, sl * tl, wl, _CONST, 1.0), (sl * tl, sl, wl, _CONST, 1.0)]
    # log(1 - tau) factor, reflected to log(tau): log-Gauss in tau
    s2, t2 = np.meshgrid(g.nodes, lg.nodes, indexing="ij")
    w2 = np.outer(g.weights, lg.weights) * s2
    parts += [(s2, s2 * (1.0 - t2), w2, _CONST, 1.0), (s2 * (1.0 - t2), s2, w2, _CONST, 1.0)]
    return _pack(parts)


@lru_cache(maxsize=None)
def _common_node_samples(kernel: int, nr: int, ns: int) -> _Samples:
    """Test element at s (shared node s=0), trial at t (shared node t=1)."""
    g, lg = gauss_legendre(nr), log_gauss(ns)
    sg, tg = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    wg = np.outer(g.weights, g.weights) * sg
    mode = _FULL if kernel != kernels.LOG else _LOGQ
    parts = [(sg * tg, 1.0 - sg, wg, mode, sg), (sg, 1.0 - sg * tg, wg, mode, sg)]
    if kernel == kernels.LOG:
        sl, tl = np.meshgrid(lg.nodes, g.nodes, indexing="ij")
        wl = np.outer(lg.weights, g.weights) * sl
        parts += [(sl * tl, 1.0 - sl, wl, _CONST, 1.0), (sl, 1.0 - sl * tl, wl, _CONST, 1.0)]
    return _pack(parts)


def _robust_distance(mesh, e1, e2, us, ut, smp, Xs, shared, r):
    """Replace tiny distances (relative to the coordinates) by chord sums.

    ``shared`` is None for pairs on one element, else the local coordinates
    of the common node on the test and the trial element.
    """
    scale = np.maximum(np.hypot(Xs[..., 0], Xs[..., 1]), 1.0)
    bad = (r < 1e-6 * scale) & (smp.mode == _LOGQ)
    if not np.any(bad):
        return r
    i, j = np.nonzero(bad)
    s, t = us[smp.s_inv[j]], ut[smp.t_inv[j]]
    if shared is None:
        c = mesh.chord(e1[i], s, t)
    else:
        c = mesh.chord(e1[i], s, np.full_like(s, shared[0])) + mesh.chord(e2[i], np.full_like(t, shared[1]), t)
    r = r.copy()
    r[i, j] = np.hypot(c[:, 0], c[:, 1])
    return r


def _sample_kernel(kernel, smp: _Samples, Xs, Xt, jac_t, nu_s, nu_t, r=None):
    d = Xs - Xt
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    if kernel == kernels.LOG:
        r = np.sqrt(r2) if r is None else r
        q = np.where(smp.d > 1e-12, r / np.maximum(smp.d, 1e-300), jac_t)
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        return np.where(smp.mode == _LOGQ, -_C * logq, -_C)
    if kernel == kernels.DLP:
        return _C * np.sum(d * nu_t, axis=-1) / r2
    return -_C * np.sum(d * nu_s, axis=-1) / r2


def _scatter(A, rows, cols, blk):
    np.add.at(A, (rows[:, :, None], cols[:, None, :]), blk)


def _side(mesh, funcs, elems, u, inv):
    X, _, jac, nu = mesh.local(elems, u)
    vals = funcs.evaluate(elems, u, jac)
    return X[:, inv], jac[:, inv], nu[:, inv], vals[:, inv]


def _sample_blocks(mesh, test, trial, kernel, smp, ej, ek, flip, A, mirror, shared=None):
    us, ut = (1.0 - smp.us, 1.0 - smp.ut) if flip else (smp.us, smp.ut)
    for c0 in range(0, len(ej), _CHUNK):
        e1, e2 = ej[c0 : c0 + _CHUNK], ek[c0 : c0 + _CHUNK]
        Xs, js, ns_, Fv = _side(mesh, test, e1, us, smp.s_inv)
        Xt, jt, nt_, Hv = _side(mesh, trial, e2, ut, smp.t_inv)
        r = None
        if kernel == kernels.LOG:
            d = Xs - Xt
            r = _robust_distance(mesh, e1, e2, us, ut, smp, Xs, shared, np.hypot(d[..., 0], d[..., 1]))
        K = _sample_kernel(kernel, smp, Xs, Xt, jt, ns_, nt_, r) * smp.w
        blk = np.matmul((Fv * K[..., None]).transpose(0, 2, 1), Hv)
        ri = np.where(test.index[e1] < 0, A.shape[0] - 1, test.index[e1])
        ci = np.where(trial.index[e2] < 0, A.shape[1] - 1, trial.index[e2])
        _scatter(A, ri, ci, blk)
        if mirror:
            ri2 = np.where(trial.index[e2] < 0, A.shape[0] - 1, trial.index[e2])
            ci2 = np.where(test.index[e1] < 0, A.shape[1] - 1, test.index[e1])
            _scatter(A, ri2, ci2, blk.transpose(0, 2, 1))


def double_integral(space: Space, test: LocalSet, trial: LocalSet, kernel: int, symmetric: bool = False,
                    backend: Optional[str] = None) -> np.ndarray:
    """Matrix of int int test_a(x) trial_b(y) G(x, y) over all element pairs.

    ``symmetric`` declares test and trial to be the same family and the kernel
    symmetric; only half of the pairs are then computed and mirrored.
    """
    mesh = space.mesh
    q = space.quad
    e = np.arange(mesh.n)
    data = []
    for order in (q.regular_order, q.far_order):
        g, X, jac, nu = space.gauss_data(order)
        F = test.evaluate(e, g.nodes, jac) * g.weights[None, :, None]
        H = F if symmetric else trial.evaluate(e, g.nodes, jac) * g.weights[None, :, None]
        data.append((X, F, H, nu))
    nbr = np.column_stack([mesh.prev, mesh.next])
    A = kernels.far_pairs(data[0], data[1], space.separation_data(), test.index, trial.index, nbr, kernel,
                          symmetric, test.size, trial.size, backend=backend)
    if symmetric:
        A = A + A.T
    Ap = np.zeros((test.size + 1, trial.size + 1))
    Ap[:-1, :-1] = A
    same = _same_element_samples(kernel, q.regular_order, q.singular_order)
    _sample_blocks(mesh, test, trial, kernel, same, e, e, False, Ap, False)
    common = _common_node_samples(kernel, q.regular_order, q.singular_order)
    has_prev = e[mesh.prev >= 0]
    _sample_blocks(mesh, test, trial, kernel, common, has_prev, mesh.prev[has_prev], False, Ap, symmetric, (0.0, 1.0))
    if not symmetric:
        has_next = e[mesh.next >= 0]
        _sample_blocks(mesh, test, trial, kernel, common, has_next, mesh.next[has_next], True, Ap, False, (1.0, 0.0))
    return Ap[:-1, :-1]


def mass_vector(space: Space, f) -> np.ndarray:
    """Vector of int f R_i ds over Gamma for the basis of ``space``; f has ``values``."""
    g, X, jac, nu = space.gauss_data()
    e = np.arange(space.mesh.n)
    R = space.local_basis(e, g.nodes)
    fv = np.ones_like(jac) if f is None else f.values(e, g.nodes)
    loc = np.einsum("eqa,eq->ea", R, fv * jac * g.weights)
    out = np.zeros(space.ndof + 1)
    idx = np.where(space.elem_dofs < 0, space.ndof, space.elem_dofs)
    np.add.at(out, idx, loc)
    return out[:-1]


# ---------------------------------------------------------------------------
# systems


@dataclass
class GalerkinSystem:
    A: np.ndarray
    b: np.ndarray
    space: Space
    stabilization: Optional[np.ndarray] = None
    projection: Optional[PiecewisePolynomial] = None


def assemble_V(space: Space, backend: Optional[str] = None) -> np.ndarray:
    """Single-layer Galerkin matrix <V R_j, R_i>."""
    bv = basis_values(space)
    return double_integral(space, bv, bv, kernels.LOG, symmetric=True, backend=backend)


def assemble_W(space: Space, backend: Optional[str] = None, stabilize: bool = True):
    """Hypersingular matrix via Maue's formula plus <u,1><v,1> on closed curves."""
    if space.kind != "hyp":
        raise ValueError("the hypersingular form needs a continuous space")
    bd = basis_derivs(space)
    A = double_integral(space, bd, bd, kernels.LOG, symmetric=True, backend=backend)
    if space.closed and stabilize:
        m = mass_vector(space, None)
        return A + np.outer(m, m), m
    return A, None


def assemble_rhs_weak(space: Space, problem: ModelProblem, backend: Optional[str] = None) -> np.ndarray:
    """<f, R_i> with f = u (indirect) or f = (1/2 + K) u (direct)."""
    if problem.u is None:
        raise ValueError("problem has no Dirichlet data")
    u = DataFunction(space.mesh, problem.u)
    if problem.approach == "indirect":
        return mass_vector(space, u)
    b = 0.5 * mass_vector(space, u)
    K = double_integral(space, basis_values(space), function_values(u, space.mesh), kernels.DLP, backend=backend)
    return b + K[:, 0]


# data may be singular at corners of the curve (r^(tau-1) behaviour)
_DATA_LEVELS = 30
_DATA_POINTS = 8


def data_rule(mesh: BoundaryMesh, quad: QuadConfig = QuadConfig()):
    """Quadrature for boundary data: Gauss per element, and on elements touching
    a node of the curve parametrization a rule graded towards both ends.

    Returns (elems_regular, rule_regular, elems_graded, rule_graded).
    """
    nodes = mesh.curve.kv.nodes
    touch = np.isin(mesh.left, nodes) | np.isin(mesh.x[1:], nodes)
    e = np.arange(mesh.n)
    return e[~touch], gauss_legendre(quad.regular_order), e[touch], _double_graded(_DATA_LEVELS, _DATA_POINTS)


@lru_cache(maxsize=None)
def _double_graded(levels: int, n: int):
    from .quadrature import QuadratureRule, graded_rule

    r = graded_rule(levels, n)
    x = np.concatenate([0.5 * r.nodes, 1.0 - 0.5 * r.nodes[::-1]])
    w = np.concatenate([0.5 * r.weights, 0.5 * r.weights[::-1]])
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w, "unit")


def project_phi(mesh: BoundaryMesh, phi, degree: int, quad: QuadConfig = QuadConfig()) -> PiecewisePolynomial:
    """Element-wise L2 projection (arclength measure) onto polynomials of ``degree``."""
    coeffs = np.zeros((mesh.n, degree + 1))
    for e, g in _split_rule(mesh, quad):
        if len(e) == 0:
            continue
        X, _, jac, nu = mesh.local(e, g.nodes)
        vals = phi.values(e, g.nodes) if hasattr(phi, "values") else np.asarray(phi(X, nu), dtype=float)
        L = PiecewisePolynomial.legendre(g.nodes, degree)
        wj = jac * g.weights
        M = np.einsum("qa,qb,eq->eab", L, L, wj)
        r = np.einsum("qa,eq->ea", L, vals * wj)
        coeffs[e] = np.linalg.solve(M, r[..., None])[..., 0]
    return PiecewisePolynomial(mesh, coeffs)


def _split_rule(mesh, quad):
    e1, g1, e2, g2 = data_rule(mesh, quad)
    return ((e1, g1), (e2, g2))


def assemble_rhs_hyp(space: Space, problem: ModelProblem, phi_proj: PiecewisePolynomial,
                     backend: Optional[str] = None, tol: float = 1e-6) -> np.ndarray:
    """<g, R^c_i> with g = P phi (indirect) or (1/2 - K') P phi (direct).

    The adjoint double layer never acts on phi directly: <K' P phi, R> is
    computed as <K R, P phi>.
    """
    if space.closed:
        total = scale = 0.0
        for e, g in _split_rule(space.mesh, space.quad):
            if len(e):
                jac = space.mesh.local(e, g.nodes)[2]
                vals = phi_proj.values(e, g.nodes)
                total += np.sum(vals * jac * g.weights)
                scale += np.sum(np.abs(vals) * jac * g.weights)
        if abs(total) > tol * max(scale, 1e-300):
            raise ValueError(f"Neumann data has nonzero mean {total:.3e} on a closed boundary")
    if problem.approach == "indirect":
        return mass_vector(space, phi_proj)
    b = 0.5 * mass_vector(space, phi_proj)
    K = double_integral(space, function_values(phi_proj, space.mesh), basis_values(space), kernels.DLP,
                        backend=backend)
    return b - K[0]


def weak_system(space: Space, problem: ModelProblem, backend: Optional[str] = None) -> GalerkinSystem:
    return GalerkinSystem(assemble_V(space, backend), assemble_rhs_weak(space, problem, backend), space)


def hyp_system(space: Space, problem: ModelProblem, backend: Optional[str] = None) -> GalerkinSystem:
    A, stab = assemble_W(space, backend)
    proj = project_phi(space.mesh, DataFunction(space.mesh, problem.phi), space.p, space.quad)
    b = assemble_rhs_hyp(space, problem, proj, backend)
    return GalerkinSystem(A, b, space, stab, proj)


def solve(system: GalerkinSystem) -> DiscreteFunction:
    """Cholesky solve of the SPD Galerkin system."""
    try:
        cf = scipy.linalg.cho_factor(system.A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Galerkin matrix is not positive definite: {exc}") from exc
    c = scipy.linalg.cho_solve(cf, system.b)
    return DiscreteFunction(system.space, c)


def coeffs_to_refined(coarse: DiscreteFunction, fine: Space) -> DiscreteFunction:
    """Represent a coarse discrete function in a refined space (exactly)."""
    sp = coarse.space
    if sp.kind != fine.kind:
        raise ValueError("spaces of different kind")
    c = coarse.full_coeffs()
    kv, w, cw = refine_to(sp.kv, sp.weights, c * sp.weights, fine.kv)
    if not np.allclose(w, fine.weights, rtol=1e-12, atol=0.0):
        raise ValueError("fine weights are not the transferred coarse weights")
    cf = cw / w
    if fine.kind == "weak":
        return DiscreteFunction(fine, cf)
    if fine.closed:
        return DiscreteFunction(fine, cf[:-1])
    return DiscreteFunction(fine, cf[1:-1])


def energy_norm(A: np.ndarray, e) -> float:
    """sqrt(e^T A e) for a coefficient vector or discrete function."""
    c = e.coeffs if isinstance(e, DiscreteFunction) else np.asarray(e, dtype=float)
    if c.shape != (A.shape[0],):
        raise ValueError("dimension mismatch")
    return float(math.sqrt(max(float(c @ A @ c), 0.0)))
