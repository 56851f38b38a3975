"""Quadrature rules on the unit interval and polynomial interpolation helpers.

All rules live on [0, 1] and have nodes strictly inside the interval, so
integrands with endpoint singularities are never evaluated at the endpoints.
Rules are cached; the returned arrays are marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

__all__ = [
    "QuadratureRule",
    "QuadConfig",
    "gauss_legendre",
    "log_gauss",
    "tensor_rule",
    "graded_rule",
    "cheby_nodes",
    "lagrange_deriv_matrix",
    "lagrange_interp_matrix",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a rule on [0, 1] (or the unit square for tensor rules).

    ``kind`` is ``"unit"`` for the plain Lebesgue measure and ``"log"`` for the
    weight ``log(t)``; log rules have negative weights summing to -1.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "unit"

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature orders shared by assembly, evaluation and estimators.

    Element pairs (and point/element pairs) whose distance exceeds
    ``far_ratio`` times the larger element length use ``far_order`` Gauss points
    per direction instead of ``regular_order``.
    """

    regular_order: int = 16
    singular_order: int = 16
    interp_points: int = 8
    far_order: int = 8
    far_ratio: float = 1.5

    def __post_init__(self):
        for name in ("regular_order", "singular_order", "far_order"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if int(self.interp_points) < 2:
            raise ValueError("interp_points must be >= 2")


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [0, 1], exact up to degree 2n-1."""
    if n < 1:
        raise ValueError("rule order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(_frozen(0.5 * (x + 1.0)), _frozen(0.5 * w), "unit")


def _log_recurrence(n: int):
    """Three-term recurrence of the monic orthogonal polynomials for -log(t) on [0,1].

    Chebyshev's algorithm on the ordinary moments 1/(k+1)^2, run in
    extended precision since the moment map is badly conditioned.
    """
    with mpmath.workdps(40 + 2 * n):
        mom = [mpmath.mpf(1) / (k + 1) ** 2 for k in range(2 * n)]
        alpha = [mom[1] / mom[0]]
        beta = [mom[0]]
        prev = [mpmath.mpf(0)] * (2 * n)
        cur = list(mom)
        for k in range(1, n):
            nxt = [mpmath.mpf(0)] * (2 * n)
            for l in range(k, 2 * n - k):
                nxt[l] = cur[l + 1] - alpha[k - 1] * cur[l] - beta[k - 1] * prev[l]
            alpha.append(nxt[k + 1] / nxt[k] - cur[k] / cur[k - 1])
            beta.append(nxt[k] / cur[k - 1])
            prev, cur = cur, nxt
        return [float(a) for a in alpha], [float(b) for b in beta]


@lru_cache(maxsize=None)
def log_gauss(n: int) -> QuadratureRule:
    """n-point rule for the integral of f(t) log(t) over [0, 1].

    Exact for polynomials up to degree 2n-1; moments are -1/(k+1)^2.
    """
    if n < 1:
        raise ValueError("rule order must be >= 1")
    alpha, beta = _log_recurrence(n)
    jac = np.diag(alpha) + np.diag(np.sqrt(beta[1:]), 1) + np.diag(np.sqrt(beta[1:]), -1)
    x, v = np.linalg.eigh(jac)
    w = beta[0] * v[0] ** 2
    return QuadratureRule(_frozen(x), _frozen(-w), "log")


def tensor_rule(ra: QuadratureRule, rb: QuadratureRule) -> QuadratureRule:
    """Product rule on the unit square; nodes are rows (s, t), s from ``ra``."""
    s, t = np.meshgrid(ra.nodes, rb.nodes, indexing="ij")
    w = np.outer(ra.weights, rb.weights)
    kind = ra.kind if ra.kind == rb.kind else f"{ra.kind}x{rb.kind}"
    return QuadratureRule(_frozen(np.column_stack([s.ravel(), t.ravel()])), _frozen(w.ravel()), kind)


@lru_cache(maxsize=None)
def graded_rule(levels: int, n: int) -> QuadratureRule:
    """Composite Gauss rule on [0, 1] refined geometrically towards 0.

    Subintervals are [0, 2^-L], [2^-L, 2^-L+1], ..., [1/2, 1] with n points each.
    Integrands with a singularity at distance >= 2^-L left of 0 are resolved
    uniformly well.
    """
    g = gauss_legendre(n)
    if levels <= 0:
        return g
    edges = np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1)])
    lo, hi = edges[:-1], edges[1:]
    x = (lo[:, None] + (hi - lo)[:, None] * g.nodes[None, :]).ravel()
    w = ((hi - lo)[:, None] * g.weights[None, :]).ravel()
    return QuadratureRule(_frozen(x), _frozen(w), "unit")


@lru_cache(maxsize=None)
def cheby_nodes(m: int) -> np.ndarray:
    """Chebyshev points of the first kind mapped to [0, 1], ascending, interior."""
    if m < 1:
        raise ValueError("need at least one node")
    k = np.arange(m)
    return _frozen(0.5 * (1.0 - np.cos((2 * k + 1) * np.pi / (2 * m))))


def _bary_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise ValueError("interpolation nodes must be distinct")
    return 1.0 / np.prod(diff, axis=1)


def lagrange_deriv_matrix(nodes) -> np.ndarray:
    """Matrix D with (D v)_k = q'(x_k), q the interpolant of v at ``nodes``."""
    x = np.asarray(nodes, dtype=float)
    lam = _bary_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (lam[None, :] / lam[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def lagrange_interp_matrix(nodes, targets) -> np.ndarray:
    """Matrix L with (L v)_k = q(y_k), q the interpolant of v at ``nodes``."""
    x = np.asarray(nodes, dtype=float)
    y = np.atleast_1d(np.asarray(targets, dtype=float))
    lam = _bary_weights(x)
    diff = y[:, None] - x[None, :]
    hit = diff == 0.0
    diff[hit] = 1.0
    c = lam[None, :] / diff
    out = c / c.sum(axis=1, keepdims=True)
    rows = np.any(hit, axis=1)
    out[rows] = hit[rows].astype(float)
    return out
