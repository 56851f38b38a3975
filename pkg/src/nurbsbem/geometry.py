"""NURBS boundary curves, boundary meshes and the built-in model problems."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .quadrature import gauss_legendre
from .splines import KnotVector, basis_at_span, find_span

__all__ = [
    "NurbsCurve",
    "BoundaryMesh",
    "ModelProblem",
    "eval_curve",
    "eval_curve_deriv",
    "outward_normal",
    "arclength_deriv",
    "build_mesh",
    "mesh_ratio",
    "builtin_geometry",
    "builtin_problem",
    "GEOMETRY_NAMES",
    "curve_to_json",
    "curve_from_json",
]


@dataclass(frozen=True)
class NurbsCurve:
    """gamma = sum_i C_i R_i on [a, b]; ``kv.closed`` marks a closed boundary."""

    kv: KnotVector
    weights: np.ndarray
    control_points: np.ndarray
    name: str = ""

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        c = np.array(self.control_points, dtype=float)
        if self.kv.p < 1:
            raise ValueError("curve degree must be >= 1")
        if w.shape != (self.kv.n_basis,) or c.shape != (self.kv.n_basis, 2):
            raise ValueError("weights/control points do not match the knot vector")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if self.kv.closed and (w[0] != w[-1] or np.any(c[0] != c[-1])):
            raise ValueError("closed curve needs equal first/last weight and control point")
        w.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "control_points", c)

    @property
    def closed(self) -> bool:
        return self.kv.closed

    @property
    def nodes(self) -> np.ndarray:
        return self.kv.nodes

    def at_span(self, span, t, origin=None):
        """Position and parameter derivative using the polynomial piece of ``span``
        (``t`` an offset from ``origin`` if that is given)."""
        p, w, c = self.kv.p, self.weights, self.control_points
        span = np.asarray(span)
        idx = span[..., None] - p + np.arange(p + 1)
        b, db = basis_at_span(self.kv.full, p, span, t, deriv=True, origin=origin)
        wl = w[idx]
        cl = c[idx]
        wb = wl * b
        wdb = wl * db
        W = np.sum(wb, axis=-1)
        dW = np.sum(wdb, axis=-1)
        A = np.sum(wb[..., None] * cl, axis=-2)
        dA = np.sum(wdb[..., None] * cl, axis=-2)
        pos = A / W[..., None]
        der = (dA * W[..., None] - A * dW[..., None]) / (W**2)[..., None]
        return pos, der


def eval_curve(curve: NurbsCurve, t, left: bool = False) -> np.ndarray:
    """gamma(t); ``left=True`` gives the left limit (needed at b)."""
    t = np.asarray(t, dtype=float)
    return curve.at_span(find_span(curve.kv, t, left), t)[0]


def eval_curve_deriv(curve: NurbsCurve, t, left: bool = False) -> np.ndarray:
    """Right (or left) derivative gamma'(t)."""
    t = np.asarray(t, dtype=float)
    d = curve.at_span(find_span(curve.kv, t, left), t)[1]
    if np.any(np.hypot(d[..., 0], d[..., 1]) == 0):
        raise ValueError("degenerate curve derivative")
    return d


def _is_corner(curve: NurbsCurve, t: np.ndarray) -> np.ndarray:
    inner = curve.kv.nodes[1:-1]
    if curve.closed:
        inner = np.concatenate([inner, [curve.kv.a]])
    return np.isin(t, inner)


def outward_normal(curve: NurbsCurve, t, side: Optional[str] = None) -> np.ndarray:
    """nu = (g2', -g1')/|g'|.  At curve nodes a side ('left'/'right') is required."""
    t = np.asarray(t, dtype=float)
    if side is None and np.any(_is_corner(curve, t)):
        raise ValueError("normal at a curve node needs an explicit side")
    d = eval_curve_deriv(curve, t, left=(side == "left"))
    n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def arclength_deriv(curve: NurbsCurve, du, t, left: bool = False):
    """Arclength derivative (u o gamma)'(t) / |gamma'(t)|; ``du`` is d/dt of u o gamma."""
    t = np.asarray(t, dtype=float)
    g = np.linalg.norm(eval_curve_deriv(curve, t, left), axis=-1)
    vals = du(t) if callable(du) else np.asarray(du, dtype=float)
    return vals / g


def mesh_ratio(kv: KnotVector) -> float:
    """Largest ratio of parameter lengths of adjacent elements (wrapping if closed)."""
    h = np.diff(kv.nodes)
    if len(h) < 2:
        return 1.0
    a, b = h[:-1], h[1:]
    if kv.closed:
        a = np.append(a, h[-1])
        b = np.append(b, h[0])
    return float(np.max(np.maximum(a / b, b / a)))


_CHORD_RULE = gauss_legendre(4)


class BoundaryMesh:
    """Elements [x_j, x_{j+1}] of a discretization knot vector on a curve.

    Node list: for closed curves the nodes x_1..x_n (a is identified with b),
    node k being the right end of element k and the left end of element k+1
    (mod n); for open curves x_0..x_n, node k sitting between elements k-1 and k.
    """

    def __init__(self, curve: NurbsCurve, kv: KnotVector, arclength_order: int = 16):
        if (kv.a, kv.b, kv.closed) != (curve.kv.a, curve.kv.b, curve.kv.closed):
            raise ValueError("discretization and curve disagree on [a, b] or boundary kind")
        x = kv.nodes
        if not np.all(np.isin(curve.kv.nodes, x)):
            raise ValueError("mesh nodes must contain all nodes of the curve")
        self.curve = curve
        self.kv = kv
        self.closed = kv.closed
        self.x = x
        self.n = len(x) - 1
        self.left = x[:-1].copy()
        self.h = np.diff(x)
        self.geo_span = np.searchsorted(curve.kv.full, self.left, side="right") - 1
        self.span = kv.element_spans()
        n = self.n
        e = np.arange(n)
        if self.closed:
            self.prev = (e - 1) % n
            self.next = (e + 1) % n
            self.node_param = x[1:].copy()
            self.elem_nodes = np.column_stack([(e - 1) % n, e])
            self.patches = np.column_stack([e, (e + 1) % n])
            if n == 1:
                self.prev = np.full(1, -1)
                self.next = np.full(1, -1)
                self.patches = np.array([[0, -1]])
        else:
            self.prev = e - 1
            self.next = np.where(e + 1 < n, e + 1, -1)
            self.node_param = x.copy()
            self.elem_nodes = np.column_stack([e, e + 1])
            patches = np.full((n + 1, 2), -1)
            patches[1:, 0] = e
            patches[:-1, 1] = e
            self.patches = patches
        if n == 2 and self.closed:
            # both elements share both nodes; neighbor lists hold each other once
            self.prev = np.array([1, 0])
            self.next = np.array([-1, -1])
        g = gauss_legendre(arclength_order)
        jac = self.local(e, g.nodes)[2]
        self.arclength = jac @ g.weights
        self.kappa = mesh_ratio(kv)

    @property
    def n_nodes(self) -> int:
        return len(self.node_param)

    def local(self, elems, sigma):
        """Geometry at local coordinates sigma in [0,1] of elements ``elems``.

        Returns positions, d/dsigma of the position, the Jacobian |d/dsigma|
        and the unit normal; sigma broadcasts against ``elems[:, None]``.
        """
        elems = np.asarray(elems)
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim == 1 and elems.ndim == 1:
            sigma = sigma[None, :]
        ee = elems[..., None] if elems.ndim == sigma.ndim - 1 else elems
        pos, der = self.curve.at_span(self.geo_span[ee], sigma * self.h[ee], self.left[ee])
        dx = der * self.h[ee][..., None]
        jac = np.hypot(dx[..., 0], dx[..., 1])
        nu = np.stack([dx[..., 1], -dx[..., 0]], axis=-1) / jac[..., None]
        return pos, dx, jac, nu

    def chord(self, elems, s, t):
        """gamma(s) - gamma(t) on the same elements, from the averaged derivative.

        Free of the cancellation that the difference of two nearby positions
        suffers on elements far below the coordinate scale.
        """
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        g = _CHORD_RULE
        u = t[..., None] + g.nodes * (s - t)[..., None]
        ee = np.broadcast_to(np.asarray(elems)[..., None], u.shape)
        dX = self.local(ee, u)[1]
        return (s - t)[..., None] * np.einsum("...qd,q->...d", dX, g.weights)

    def element_of(self, s: float) -> int:
        """Element containing parameter s (right-continuous, last element at b)."""
        if not self.kv.a <= s <= self.kv.b:
            raise ValueError(f"parameter {s} outside [a, b]")
        return int(min(np.searchsorted(self.x, s, side="right") - 1, self.n - 1))

    def node_h(self) -> np.ndarray:
        return self.arclength


def build_mesh(curve: NurbsCurve, kv: KnotVector, arclength_order: int = 16) -> BoundaryMesh:
    return BoundaryMesh(curve, kv, arclength_order)


# ---------------------------------------------------------------------------
# built-in geometries


def _arc(center, radius, th0, th1):
    """Rational quadratic Bezier arc (counterclockwise from th0 to th1, sweep < pi)."""
    half = 0.5 * (th1 - th0)
    mid = 0.5 * (th0 + th1)
    c = np.asarray(center, dtype=float)
    p0 = c + radius * np.array([math.cos(th0), math.sin(th0)])
    p1 = c + radius / math.cos(half) * np.array([math.cos(mid), math.sin(mid)])
    p2 = c + radius * np.array([math.cos(th1), math.sin(th1)])
    return [p0, p1, p2], [1.0, math.cos(half), 1.0]


def _line(p0, p2):
    p0, p2 = np.asarray(p0, dtype=float), np.asarray(p2, dtype=float)
    return [p0, 0.5 * (p0 + p2), p2], [1.0, 1.0, 1.0]


def _c0_quadratic(pieces, breaks, name, closed=True) -> NurbsCurve:
    """Join quadratic Bezier pieces with C0 knots at ``breaks`` on [0, 1]."""
    pts, ws = [pieces[0][0][0]], [pieces[0][1][0]]
    for (cp, w) in pieces:
        pts.extend(cp[1:])
        ws.extend(w[1:])
    knots = []
    for x in breaks:
        knots += [x, x]
    knots += [1.0, 1.0, 1.0]
    pts = np.array(pts)
    if closed:
        pts[-1] = pts[0]
    return NurbsCurve(KnotVector(2, 0.0, 1.0, knots, closed), np.array(ws), pts, name)


PACMAN_RADIUS = 0.25
PACMAN_TAU = 4.0 / 7.0
CIRCLE_RADIUS = 0.4
HEART_SIZE = 0.25
HEART_TAU = 2.0 / 3.0


def _pacman() -> NurbsCurve:
    r = PACMAN_RADIUS
    top = 0.5 * math.pi / PACMAN_TAU  # 7 pi / 8
    o = np.zeros(2)
    pieces = [
        _arc(o, r, 0.0, 0.5 * top),
        _arc(o, r, 0.5 * top, top),
        _line(r * np.array([math.cos(top), math.sin(top)]), o),
        _line(o, r * np.array([math.cos(-top), math.sin(-top)])),
        _arc(o, r, -top, -0.5 * top),
        _arc(o, r, -0.5 * top, 0.0),
    ]
    return _c0_quadratic(pieces, [1 / 6, 1 / 3, 0.5, 2 / 3, 5 / 6], "pacman")


def _circle() -> NurbsCurve:
    r = CIRCLE_RADIUS
    q = math.pi / 2
    pieces = [_arc((0.0, 0.0), r, k * q, (k + 1) * q) for k in range(4)]
    return _c0_quadratic(pieces, [0.25, 0.5, 0.75], "circle")


def _heart() -> NurbsCurve:
    s = HEART_SIZE
    c = s / math.sqrt(2.0)
    q = math.pi / 2
    right = (c, -c)
    left = (-c, -c)
    pieces = [_arc(right, s, -3 * q / 2 + k * q, -3 * q / 2 + (k + 1) * q) for k in range(3)]
    pieces += [_arc(left, s, q / 2 + k * q, q / 2 + (k + 1) * q) for k in range(3)]
    cv = _c0_quadratic(pieces, [1 / 6, 1 / 3, 0.5, 2 / 3, 5 / 6], "heart")
    # snap the corner points exactly
    pts = cv.control_points.copy()
    pts[6] = 0.0
    pts[0] = pts[-1] = (0.0, -math.sqrt(2.0) * s)
    return NurbsCurve(cv.kv, cv.weights, pts, "heart")


def _slit() -> NurbsCurve:
    kv = KnotVector(1, -1.0, 1.0, [-0.5, 0.0, 0.5, 1.0, 1.0], closed=False)
    pts = np.column_stack([[-1.0, -0.5, 0.0, 0.5, 1.0], np.zeros(5)])
    return NurbsCurve(kv, np.ones(5), pts, "slit")


_GEOMETRIES = {"pacman": _pacman, "slit": _slit, "circle": _circle, "heart": _heart}
GEOMETRY_NAMES = tuple(_GEOMETRIES)


def builtin_geometry(name: str) -> NurbsCurve:
    try:
        return _GEOMETRIES[name]()
    except KeyError:
        raise ValueError(f"unknown geometry {name!r}; choose from {', '.join(GEOMETRY_NAMES)}") from None


def curve_to_json(curve: NurbsCurve) -> str:
    rec = {
        "name": curve.name,
        "p_gamma": curve.kv.p,
        "a": curve.kv.a,
        "b": curve.kv.b,
        "knots": [float(x) for x in curve.kv.knots],
        "weights": [float(x) for x in curve.weights],
        "control_points": [[float(x), float(y)] for x, y in curve.control_points],
        "closed": curve.closed,
    }
    return json.dumps(rec, indent=2)


def curve_from_json(text_or_dict) -> NurbsCurve:
    rec = json.loads(text_or_dict) if isinstance(text_or_dict, str) else dict(text_or_dict)
    try:
        kv = KnotVector(int(rec["p_gamma"]), float(rec.get("a", 0.0)), float(rec.get("b", 1.0)), rec["knots"], bool(rec["closed"]))
        return NurbsCurve(kv, np.array(rec["weights"]), np.array(rec["control_points"]), rec.get("name", ""))
    except KeyError as exc:
        raise ValueError(f"geometry record lacks field {exc}") from None


# ---------------------------------------------------------------------------
# model problems

DataFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelProblem:
    """Boundary data for one of the two integral equations.

    ``kind`` is "weak" (single layer) or "hyp" (hypersingular).  Data callables
    take boundary points and unit normals (arrays with a trailing axis of 2).
    For the weak equation ``u`` is the Dirichlet datum (direct) or the right-hand
    side f (indirect); for the hyp equation ``phi`` is the Neumann datum.
    """

    name: str
    geometry: str
    kind: str
    approach: str
    u: Optional[DataFn] = None
    phi: Optional[DataFn] = None
    exact_potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in ("weak", "hyp") or self.approach not in ("direct", "indirect"):
            raise ValueError("kind must be weak|hyp and approach direct|indirect")
        if self.kind == "weak" and self.u is None:
            raise ValueError("weak problems need Dirichlet data u")
        if self.kind == "hyp" and self.phi is None:
            raise ValueError("hyp problems need Neumann data phi")


def _polar_power(tau: float, cut: float):
    """P = r^tau cos(tau beta) with beta in (cut - 2 pi, cut), and its gradient."""

    def angle(x):
        beta = np.arctan2(x[..., 1], x[..., 0])
        return np.where(beta >= cut, beta - 2 * np.pi, beta)

    def pot(x):
        r = np.hypot(x[..., 0], x[..., 1])
        return r**tau * np.cos(tau * angle(x))

    def grad(x):
        r = np.hypot(x[..., 0], x[..., 1])
        beta = angle(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = tau * r ** (tau - 1)
        g1 = np.cos(beta) * np.cos(tau * beta) + np.sin(beta) * np.sin(tau * beta)
        g2 = np.sin(beta) * np.cos(tau * beta) - np.cos(beta) * np.sin(tau * beta)
        return np.stack([f * g1, f * g2], axis=-1)

    return pot, grad


def _dirichlet(pot):
    return lambda x, nu: pot(x)


def _neumann(grad):
    return lambda x, nu: np.sum(grad(x) * nu, axis=-1)


def _exp_pot(x):
    return np.exp(x[..., 0]) * np.cos(x[..., 1])


def _exp_grad(x):
    e = np.exp(x[..., 0])
    return np.stack([e * np.cos(x[..., 1]), -e * np.sin(x[..., 1])], axis=-1)


def builtin_problem(name: str, kind: Optional[str] = None) -> ModelProblem:
    """Model problems on the built-in geometries.

    pacman: weak direct, P = r^(4/7) cos(4/7 beta), corner at the origin.
    slit: weak indirect, f(x, 0) = -x/2 with density -x/sqrt(1-x^2).
    heart: hyp direct, P = r^(2/3) cos(2/3 beta), beta in (-3pi/2, pi/2).
    circle: smooth P = exp(x1) cos(x2), weak direct (default) or hyp direct.
    """
    if name == "pacman":
        pot, grad = _polar_power(PACMAN_TAU, math.pi)
        k = kind or "weak"
        return ModelProblem(name, "pacman", k, "direct", _dirichlet(pot), _neumann(grad), pot, grad)
    if name == "slit":
        if kind not in (None, "weak"):
            raise ValueError("the slit problem is weakly singular")
        return ModelProblem(
            name,
            "slit",
            "weak",
            "indirect",
            u=lambda x, nu: -0.5 * x[..., 0],
            phi=lambda x, nu: -x[..., 0] / np.sqrt(1.0 - x[..., 0] ** 2),
        )
    if name == "heart":
        pot, grad = _polar_power(HEART_TAU, 0.5 * math.pi)
        k = kind or "hyp"
        return ModelProblem(name, "heart", k, "direct", _dirichlet(pot), _neumann(grad), pot, grad)
    if name == "circle":
        k = kind or "weak"
        return ModelProblem(name, "circle", k, "direct", _dirichlet(_exp_pot), _neumann(_exp_grad), _exp_pot, _exp_grad)
    raise ValueError(f"unknown problem {name!r}; choose from {', '.join(GEOMETRY_NAMES)}")
