"""B-splines and NURBS on [a, b]: evaluation, derivatives, knot insertion.

A knot vector stores the knots in (a, b] whose last p+1 entries equal b.
The clamped extension prepends p+1 copies of a, so with N stored knots there
are N basis functions, indexed 0..N-1 here.  Basis function i is supported
on [T[i], T[i+p+1]] with T the extended array.

Evaluation is right-continuous; evaluation at b (or the left limit at an
interior knot) is requested with ``left=True``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KnotVector",
    "eval_bspline",
    "eval_bspline_deriv",
    "eval_nurbs",
    "eval_comb",
    "eval_comb_deriv",
    "insert_knot",
    "uniform_refine",
    "find_span",
    "basis_at_span",
    "nurbs_at_span",
    "refine_to",
]


@dataclass(frozen=True)
class KnotVector:
    p: int
    a: float
    b: float
    knots: np.ndarray
    closed: bool = False
    full: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = int(self.p)
        if p < 0:
            raise ValueError("degree must be nonnegative")
        k = np.array(self.knots, dtype=float).ravel()
        a, b = float(self.a), float(self.b)
        if not a < b:
            raise ValueError("need a < b")
        if len(k) < p + 1 or np.any(k[-(p + 1):] != b):
            raise ValueError("the last p+1 knots must equal b")
        if np.any(np.diff(k) < 0):
            raise ValueError("knots must be nondecreasing")
        if np.any(k <= a):
            raise ValueError("knots must lie in (a, b]")
        _, counts = np.unique(k[k < b], return_counts=True)
        if counts.size and counts.max() > p + 1:
            raise ValueError("interior multiplicity exceeds p+1")
        k.setflags(write=False)
        full = np.concatenate([np.full(p + 1, a), k])
        full.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "closed", bool(self.closed))
        object.__setattr__(self, "full", full)

    def __eq__(self, other):
        if not isinstance(other, KnotVector):
            return NotImplemented
        return (self.p, self.a, self.b, self.closed) == (other.p, other.a, other.b, other.closed) and np.array_equal(
            self.knots, other.knots
        )

    def __hash__(self):
        return hash((self.p, self.a, self.b, self.closed, self.knots.tobytes()))

    @property
    def N(self) -> int:
        return len(self.knots)

    @property
    def n_basis(self) -> int:
        return len(self.knots)

    @property
    def nodes(self) -> np.ndarray:
        """Distinct breakpoints a = x_0 < x_1 < ... < x_n = b."""
        return np.concatenate([[self.a], np.unique(self.knots)])

    @property
    def n_elements(self) -> int:
        return len(self.nodes) - 1

    def multiplicity(self, x: float) -> int:
        """Multiplicity of x in the extended knot array (p+1 at a and b)."""
        return int(np.count_nonzero(self.full == x))

    def multiplicities(self) -> np.ndarray:
        """Multiplicities of the nodes x_0..x_n (exact equality)."""
        return np.array([self.multiplicity(x) for x in self.nodes])

    def element_spans(self) -> np.ndarray:
        """Span index (into ``full``) of every element [x_{j}, x_{j+1}]."""
        return np.searchsorted(self.full, self.nodes[:-1], side="right") - 1

    def with_knots(self, knots) -> "KnotVector":
        return KnotVector(self.p, self.a, self.b, knots, self.closed)

    def to_dict(self) -> dict:
        return {"p": self.p, "a": self.a, "b": self.b, "knots": [float(x) for x in self.knots], "closed": self.closed}


def _check_t(kv: KnotVector, t: float, left: bool) -> float:
    t = float(t)
    if left:
        if not kv.a < t <= kv.b:
            raise ValueError(f"left-limit evaluation needs t in (a, b], got {t}")
    elif not kv.a <= t < kv.b:
        raise ValueError(f"t={t} outside [a, b); use left=True at b")
    return t


def _check_index(kv: KnotVector, i: int) -> int:
    if not 0 <= i < kv.n_basis:
        raise IndexError(f"basis index {i} out of range 0..{kv.n_basis - 1}")
    return int(i)


def _div(num: float, den: float) -> float:
    # (.)/0 := 0
    return 0.0 if den == 0.0 else num / den


def _cox_de_boor(T: np.ndarray, i: int, p: int, t: float, left: bool) -> float:
    if p == 0:
        if left:
            return 1.0 if T[i] < t <= T[i + 1] else 0.0
        return 1.0 if T[i] <= t < T[i + 1] else 0.0
    v = 0.0
    c1 = _div(t - T[i], T[i + p] - T[i])
    if c1:
        v += c1 * _cox_de_boor(T, i, p - 1, t, left)
    c2 = _div(T[i + p + 1] - t, T[i + p + 1] - T[i + 1])
    if c2:
        v += c2 * _cox_de_boor(T, i + 1, p - 1, t, left)
    return v


def eval_bspline(kv: KnotVector, i: int, t: float, left: bool = False) -> float:
    """B-spline i of degree p at t by the Cox-de Boor recursion."""
    t = _check_t(kv, t, left)
    return _cox_de_boor(kv.full, _check_index(kv, i), kv.p, t, left)


def eval_bspline_deriv(kv: KnotVector, i: int, t: float, left: bool = False) -> float:
    """Right (or left) derivative of B-spline i via the two-term lower-degree formula."""
    p = kv.p
    if p == 0:
        raise ValueError("derivative formula needs p >= 1")
    t = _check_t(kv, t, left)
    i = _check_index(kv, i)
    T = kv.full
    d = _div(p, T[i + p] - T[i]) * _cox_de_boor(T, i, p - 1, t, left)
    d -= _div(p, T[i + p + 1] - T[i + 1]) * _cox_de_boor(T, i + 1, p - 1, t, left)
    return d


def _check_weights(kv: KnotVector, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (kv.n_basis,):
        raise ValueError(f"expected {kv.n_basis} weights, got shape {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return w


def eval_nurbs(kv: KnotVector, weights, i: int, t: float, left: bool = False) -> float:
    """Rational basis function w_i B_i / sum_k w_k B_k at t."""
    w = _check_weights(kv, weights)
    i = _check_index(kv, i)
    span = find_span(kv, t, left)
    vals = basis_at_span(kv.full, kv.p, span, np.float64(t))
    lo = span - kv.p
    if not lo <= i <= span:
        return 0.0
    den = float(np.dot(vals, w[lo : span + 1]))
    return float(w[i] * vals[i - lo] / den)


def _check_coeffs(kv: KnotVector, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if c.shape[0] != kv.n_basis:
        raise ValueError(f"expected {kv.n_basis} coefficients, got {c.shape[0]}")
    return c


def eval_comb(kv: KnotVector, coeffs, t, left: bool = False):
    """Spline sum_i a_i B_i at t (scalar or array)."""
    c = _check_coeffs(kv, coeffs)
    t = np.asarray(t, dtype=float)
    span = np.asarray(find_span(kv, t, left))
    vals = basis_at_span(kv.full, kv.p, span, t)
    idx = span[..., None] - kv.p + np.arange(kv.p + 1)
    return np.einsum("...k,...k->...", vals, c[idx]) if c.ndim == 1 else np.einsum("...k,...kd->...d", vals, c[idx])


def eval_comb_deriv(kv: KnotVector, coeffs, t, left: bool = False):
    """Right (or left) derivative of sum_i a_i B_i at t."""
    c = _check_coeffs(kv, coeffs)
    t = np.asarray(t, dtype=float)
    span = np.asarray(find_span(kv, t, left))
    _, ders = basis_at_span(kv.full, kv.p, span, t, deriv=True)
    idx = span[..., None] - kv.p + np.arange(kv.p + 1)
    return np.einsum("...k,...k->...", ders, c[idx]) if c.ndim == 1 else np.einsum("...k,...kd->...d", ders, c[idx])


def find_span(kv: KnotVector, t, left: bool = False):
    """Index k into ``kv.full`` with T[k] <= t < T[k+1] (T[k] < t <= T[k+1] if left)."""
    t_arr = np.asarray(t, dtype=float)
    if left:
        if np.any(t_arr <= kv.a) or np.any(t_arr > kv.b):
            raise ValueError("left-limit evaluation needs t in (a, b]")
        span = np.searchsorted(kv.full, t_arr, side="left") - 1
    else:
        if np.any(t_arr < kv.a) or np.any(t_arr >= kv.b):
            raise ValueError("t outside [a, b); use left=True at b")
        span = np.searchsorted(kv.full, t_arr, side="right") - 1
    return span if span.ndim else int(span)


def basis_at_span(T: np.ndarray, p: int, span, t, deriv: bool = False, origin=None):
    """Values (and first derivatives) of the p+1 B-splines nonzero on a span.

    ``span`` and ``t`` broadcast against each other; the result has a trailing
    axis of length p+1 holding B_{span-p}, ..., B_{span}.  The polynomial piece
    of the span is used even when t lies outside it, which is what element-wise
    quadrature wants at element endpoints.

    With ``origin`` given, ``t`` is the offset from it.  All differences
    t - T_i are then formed without rounding t itself, which keeps elements
    far below the resolution of the parameter usable.
    """
    span = np.asarray(span)
    t = np.asarray(t, dtype=float)
    if origin is None:
        span, t = np.broadcast_arrays(span, t)
        o = 0.0
    else:
        span, t, o = np.broadcast_arrays(span, t, np.asarray(origin, dtype=float))
    shape = t.shape
    n = np.zeros(shape + (p + 1,))
    n[..., 0] = 1.0
    left = np.empty(shape + (p + 1,))
    right = np.empty(shape + (p + 1,))
    lower = None
    for j in range(1, p + 1):
        if j == p:
            lower = n[..., :p].copy()
        left[..., j] = t - (T[span + 1 - j] - o)
        right[..., j] = (T[span + j] - o) - t
        saved = np.zeros(shape)
        for r in range(j):
            den = right[..., r + 1] + left[..., j - r]
            tmp = np.divide(n[..., r], den, out=np.zeros(shape), where=den != 0)
            n[..., r] = saved + right[..., r + 1] * tmp
            saved = left[..., j - r] * tmp
        n[..., j] = saved
    if not deriv:
        return n
    d = np.zeros_like(n)
    if p == 0:
        return n, d
    # B'_{k,p} = p/(T[k+p]-T[k]) B_{k,p-1} - p/(T[k+p+1]-T[k+1]) B_{k+1,p-1}
    for r in range(p + 1):
        k = span - p + r
        if r >= 1:
            den = T[k + p] - T[k]
            d[..., r] += np.divide(p * lower[..., r - 1], den, out=np.zeros(shape), where=den != 0)
        if r < p:
            den = T[k + p + 1] - T[k + 1]
            d[..., r] -= np.divide(p * lower[..., r], den, out=np.zeros(shape), where=den != 0)
    return n, d


def nurbs_at_span(T: np.ndarray, p: int, weights: np.ndarray, span, t, deriv: bool = False, origin=None):
    """Rational basis R_{span-p..span} (and derivatives) with weights ``weights``."""
    span = np.asarray(span)
    idx = span[..., None] - p + np.arange(p + 1)
    w = weights[idx]
    if not deriv:
        b = basis_at_span(T, p, span, t, origin=origin)
        wb = w * b
        return wb / wb.sum(axis=-1, keepdims=True)
    b, db = basis_at_span(T, p, span, t, deriv=True, origin=origin)
    wb = w * b
    W = wb.sum(axis=-1, keepdims=True)
    dW = (w * db).sum(axis=-1, keepdims=True)
    R = wb / W
    dR = (w * db) / W - wb * dW / W**2
    return R, dR


def _insert_once(kv: KnotVector, weights, coeffs, tn: float):
    p, T = kv.p, kv.full
    if not kv.a < tn < kv.b:
        raise ValueError(f"inserted knot {tn} must lie in (a, b) (b already has multiplicity p+1)")
    if kv.multiplicity(tn) + 1 > p + 1:
        raise ValueError(f"multiplicity of {tn} would exceed p+1")
    k = int(np.searchsorted(T, tn, side="right") - 1)
    N = kv.n_basis
    i = np.arange(N + 1)
    alpha = np.ones(N + 1)
    alpha[i >= k + 1] = 0.0
    mid = (i >= k - p + 1) & (i <= k)
    im = i[mid]
    alpha[mid] = (tn - T[im]) / (T[im + p] - T[im])

    def transfer(c):
        if c is None:
            return None
        c = np.asarray(c, dtype=float)
        prev = np.concatenate([c[:1], c])
        nxt = np.concatenate([c, c[-1:]])
        a = alpha.reshape((-1,) + (1,) * (c.ndim - 1))
        return a * nxt + (1.0 - a) * prev

    new = kv.with_knots(np.insert(kv.knots, np.searchsorted(kv.knots, tn, side="right"), tn))
    return new, transfer(weights), transfer(coeffs)


def insert_knot(kv: KnotVector, weights, coeffs, t_new: float, times: int = 1):
    """Insert t_new ``times`` times; returns (knot vector, weights, coefficients).

    Coefficients are B-spline coefficients (scalars or rows of points).  The
    weight vector is transferred the same way, so the weight function is
    unchanged; to refine a rational spline pass numerator coefficients c*w.
    Either of ``weights`` and ``coeffs`` may be None.
    """
    if weights is not None:
        weights = _check_weights(kv, weights)
    if coeffs is not None:
        coeffs = _check_coeffs(kv, coeffs)
    if times < 1:
        raise ValueError("times must be >= 1")
    if kv.multiplicity(float(t_new)) + times > kv.p + 1:
        raise ValueError(f"multiplicity of {t_new} would exceed p+1")
    for _ in range(times):
        kv, weights, coeffs = _insert_once(kv, weights, coeffs, float(t_new))
    return kv, weights, coeffs


def refine_to(kv: KnotVector, weights, coeffs, fine: KnotVector):
    """Transfer (weights, coeffs) from ``kv`` to a finer knot vector by insertion."""
    if (fine.p, fine.a, fine.b, fine.closed) != (kv.p, kv.a, kv.b, kv.closed):
        raise ValueError("knot vectors differ in degree, interval or boundary kind")
    extra = _multiset_difference(fine.knots, kv.knots)
    for tn in extra:
        kv, weights, coeffs = _insert_once(kv, weights, coeffs, float(tn))
    return kv, weights, coeffs


def _multiset_difference(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray:
    uf, cf = np.unique(fine, return_counts=True)
    uc, cc = np.unique(coarse, return_counts=True)
    have = dict(zip(uc.tolist(), cc.tolist()))
    out = []
    for x, c in zip(uf.tolist(), cf.tolist()):
        d = c - have.pop(x, 0)
        if d < 0:
            raise ValueError("fine knot vector is not a refinement of the coarse one")
        out.extend([x] * d)
    if have:
        raise ValueError("fine knot vector is not a refinement of the coarse one")
    return np.array(out)


def uniform_refine(kv: KnotVector, weights=None, coeffs=None):
    """Bisect every element, inserting each midpoint once."""
    x = kv.nodes
    for m in 0.5 * (x[:-1] + x[1:]):
        kv, weights, coeffs = _insert_once(kv, weights, coeffs, float(m))
    return kv, weights, coeffs
