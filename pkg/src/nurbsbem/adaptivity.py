"""Doerfler marking, knot refinement with multiplicity increase, adaptive loops.

Refinement works on the parameter domain.  Marked nodes are turned into
marked elements (both end nodes marked) and multiplicity increases (a marked
node alone); nodes that cannot take a further knot mark their elements
instead.  Marked elements are bisected and the mesh is closed by further
bisections until adjacent parameter lengths differ by at most 2 kappa_0.
"""

from __future__ import annotations

import enum
import io
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .assembly import (
    DiscreteFunction,
    coeffs_to_refined,
    energy_norm,
    hyp_space,
    hyp_system,
    solve,
    weak_space,
    weak_system,
)
from .estimators import (
    IndicatorField,
    combine_hyp,
    est_hh2_hyp,
    est_hh2_weak,
    est_res_hyp,
    faermann_from_samples,
    oscillations,
    res_weak_from_samples,
    residual_weak,
)
from .geometry import BoundaryMesh, ModelProblem, NurbsCurve, builtin_geometry, mesh_ratio
from .quadrature import QuadConfig
from .splines import KnotVector, refine_to, uniform_refine

__all__ = [
    "RefinementStrategy",
    "MarkingOutcome",
    "LevelRecord",
    "AdaptiveRunLog",
    "doerfler_mark",
    "classify_marks",
    "refine",
    "initial_knots",
    "adaptive_loop_weak",
    "adaptive_loop_hyp",
    "fit_slope",
    "error_proxy",
    "ANSATZ_KINDS",
    "WEAK_ESTIMATORS",
    "HYP_ESTIMATORS",
]

ANSATZ_KINDS = ("nurbs", "spline", "pcw_poly")
WEAK_ESTIMATORS = ("res", "fae", "hh2")
HYP_ESTIMATORS = ("res", "hh2")


class RefinementStrategy(str, enum.Enum):
    MULTIPLICITY = "multiplicity_increase"
    H_FULL = "h_only_full_regularity"
    H_LOWEST = "h_only_lowest_regularity"


def _max_mult(p: int, kind: str) -> int:
    """Largest admissible interior multiplicity: p+1 (discontinuous) or p (continuous)."""
    return p + 1 if kind == "weak" else p


# ---------------------------------------------------------------------------
# marking


def doerfler_mark(indicators, theta: float) -> np.ndarray:
    """Smallest prefix of nodes sorted by indicator (descending, ties by index)
    with theta * eta^2 <= sum of marked eta(x)^2.  Returns sorted node indices;
    an empty result means all indicators vanish.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    v = np.asarray(indicators.values if isinstance(indicators, IndicatorField) else indicators, dtype=float)
    sq = v**2
    if sq.size == 0 or not np.any(sq > 0):
        return np.zeros(0, dtype=int)
    order = np.lexsort((np.arange(len(sq)), -sq))
    if theta == 1.0:
        return np.sort(np.nonzero(sq > 0)[0])
    csum = np.cumsum(sq[order])
    k = int(np.searchsorted(csum, theta * csum[-1], side="left"))
    return np.sort(order[: min(k, len(sq) - 1) + 1])


@dataclass(frozen=True)
class MarkingOutcome:
    marked_nodes: np.ndarray
    marked_elements: np.ndarray
    mult_nodes: np.ndarray


def classify_marks(mesh: BoundaryMesh, marked, strategy: RefinementStrategy, p: int, kind: str = "weak") -> MarkingOutcome:
    """Split marked nodes into element bisections and multiplicity increases."""
    strategy = RefinementStrategy(strategy)
    marked = np.unique(np.asarray(marked, dtype=int))
    is_marked = np.zeros(mesh.n_nodes, dtype=bool)
    is_marked[marked] = True
    en = mesh.elem_nodes
    both = np.nonzero(is_marked[en[:, 0]] & is_marked[en[:, 1]])[0]
    covered = np.zeros(mesh.n_nodes, dtype=bool)
    covered[en[both].ravel()] = True
    others = marked[~covered[marked]]
    elems = set(both.tolist())
    mult = []
    cap = _max_mult(p, kind) - 1  # increase only while the multiplicity is at most this
    for k in others.tolist():
        x = float(mesh.node_param[k])
        if strategy is RefinementStrategy.MULTIPLICITY and x not in (mesh.kv.a, mesh.kv.b) and mesh.kv.multiplicity(x) <= cap:
            mult.append(k)
        else:
            elems.update(int(q) for q in mesh.patches[k] if q >= 0)
    return MarkingOutcome(marked, np.array(sorted(elems), dtype=int), np.array(mult, dtype=int))


# ---------------------------------------------------------------------------
# refinement


def _closure(x: np.ndarray, closed: bool, bound: float) -> List[float]:
    """Extra bisection points so that adjacent lengths differ by at most ``bound``."""
    x = list(map(float, x))
    extra = []
    tol = bound * (1.0 + 1e-12)
    while True:
        h = np.diff(x)
        a, b = h[:-1], h[1:]
        if closed and len(h) > 1:
            a = np.append(a, h[-1])
            b = np.append(b, h[0])
        if len(a) == 0:
            return extra
        r = np.maximum(a / b, b / a)
        i = int(np.argmax(r))
        if r[i] <= tol:
            return extra
        # element indices of the pair (i, i+1 mod n); bisect the larger
        j = i if a[i] >= b[i] else (i + 1) % len(h)
        mid = 0.5 * (x[j] + x[j + 1])
        x.insert(j + 1, mid)
        extra.append(mid)


def refine(kv: KnotVector, weights, outcome: MarkingOutcome, kappa0: float,
           strategy: RefinementStrategy = RefinementStrategy.MULTIPLICITY, kind: str = "weak"):
    """Multiplicity increase and bisection of marked elements, then mesh-ratio closure.

    Returns the refined knot vector and the transferred weights (the weight
    function is unchanged).
    """
    strategy = RefinementStrategy(strategy)
    p = kv.p
    knots = list(map(float, kv.knots))
    x = kv.nodes
    mesh_nodes = x[1:] if kv.closed else x
    for k in outcome.mult_nodes.tolist():
        t = float(mesh_nodes[k])
        if kv.multiplicity(t) + 1 > _max_mult(p, kind):
            raise ValueError(f"multiplicity increase at {t} exceeds the cap")
        knots.append(t)
    times = _max_mult(p, kind) if strategy is RefinementStrategy.H_LOWEST else 1
    mids = [0.5 * (x[q] + x[q + 1]) for q in outcome.marked_elements.tolist()]
    nodes = np.unique(np.concatenate([x, mids]))
    mids += _closure(nodes, kv.closed, 2.0 * kappa0)
    for m in mids:
        knots.extend([m] * times)
    fine = kv.with_knots(np.sort(knots))
    _, w, _ = refine_to(kv, weights, None, fine)
    return fine, w


def initial_knots(curve: NurbsCurve, p: int, ansatz: str, kind: str = "weak"):
    """Initial knot vector and weights for the three ansatz families.

    nurbs: the geometry's own knots and weights (p must equal its degree);
    spline: geometry nodes once each (maximal smoothness), weights 1;
    pcw_poly: geometry nodes with multiplicity p+1 (weak) or p (hyp), weights 1.
    """
    kg = curve.kv
    if ansatz == "nurbs":
        if p != kg.p:
            raise ValueError(f"the nurbs ansatz uses the geometry degree {kg.p}")
        return kg, np.array(curve.weights)
    inner = kg.nodes[1:-1]
    if ansatz == "spline":
        mult = 1
    elif ansatz == "pcw_poly":
        mult = _max_mult(p, kind)
    else:
        raise ValueError(f"unknown ansatz {ansatz!r}")
    knots = np.concatenate([np.repeat(inner, mult), np.full(p + 1, kg.b)])
    kv = KnotVector(p, kg.a, kg.b, knots, kg.closed)
    return kv, np.ones(kv.n_basis)


# ---------------------------------------------------------------------------
# run log


@dataclass
class LevelRecord:
    level: int
    N: int
    eta: float
    error_proxy: float
    kappa: float
    seconds: float
    indicators: Optional[IndicatorField] = None
    knots: Optional[np.ndarray] = None


@dataclass
class AdaptiveRunLog:
    problem: str
    kind: str
    p: int
    theta: float
    estimator: str
    strategy: str
    levels: List[LevelRecord] = field(default_factory=list)
    final_kv: Optional[KnotVector] = None
    final_weights: Optional[np.ndarray] = None
    stop_reason: str = ""

    COLUMNS = ("level", "N", "eta", "error_proxy", "kappa", "seconds")

    def append(self, rec: LevelRecord) -> None:
        if self.levels and rec.N <= self.levels[-1].N:
            raise ValueError("N must increase strictly across levels")
        self.levels.append(rec)

    @property
    def N(self) -> np.ndarray:
        return np.array([r.N for r in self.levels])

    @property
    def eta(self) -> np.ndarray:
        return np.array([r.eta for r in self.levels])

    @property
    def error_proxy(self) -> np.ndarray:
        return np.array([r.error_proxy for r in self.levels])

    @property
    def kappa(self) -> np.ndarray:
        return np.array([r.kappa for r in self.levels])

    def to_csv(self, with_seconds: bool = True) -> str:
        buf = io.StringIO()
        cols = self.COLUMNS if with_seconds else self.COLUMNS[:-1]
        buf.write(",".join(cols) + "\n")
        for r in self.levels:
            row = [str(r.level), str(r.N), repr(float(r.eta)), repr(float(r.error_proxy)), repr(float(r.kappa))]
            if with_seconds:
                row.append(repr(round(float(r.seconds), 6)))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def slope(self, k: Optional[int] = None, which: str = "eta") -> float:
        y = self.eta if which == "eta" else self.error_proxy
        return fit_slope(self.N, y, k)


def fit_slope(N, y, k: Optional[int] = None) -> float:
    """Least-squares slope of log y against log N over the trailing window.

    Default window: the last 8 levels or all levels within the last decade of
    N, whichever is larger.
    """
    N = np.asarray(N, dtype=float)
    y = np.asarray(y, dtype=float)
    if k is None:
        k = max(8, int(np.count_nonzero(N >= N[-1] / 10.0)))
    k = min(k, len(N))
    if k < 2:
        return float("nan")
    lx, ly = np.log(N[-k:]), np.log(y[-k:])
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------------------
# adaptive loops


def error_proxy(space, sol: DiscreteFunction, problem: ModelProblem, backend: Optional[str] = None,
                fine_sol: Optional[DiscreteFunction] = None, fine_A: Optional[np.ndarray] = None) -> float:
    """Energy norm of U_fine - U, U_fine the Galerkin solution after one uniform refinement."""
    return _proxy(space, sol, problem, backend, fine_sol, fine_A)


def _proxy(space, sol, problem, backend, fine_sol, fine_A):
    if fine_sol is None:
        make_space = weak_space if space.kind == "weak" else hyp_space
        make_system = weak_system if space.kind == "weak" else hyp_system
        kvf, wf, _ = uniform_refine(space.kv, space.weights)
        fine_sys = make_system(make_space(space.curve, kvf, wf, space.quad), problem, backend)
        fine_sol, fine_A = solve(fine_sys), fine_sys.A
    return energy_norm(fine_A, fine_sol.coeffs - coeffs_to_refined(sol, fine_sol.space).coeffs)


def _check_common(theta, strategy, n_max, ansatz_strategy=None):
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if n_max < 1:
        raise ValueError("N_max must be positive")
    return RefinementStrategy(strategy)


def _run(problem: ModelProblem, p: int, kv0: KnotVector, w0, theta: float, estimator: str, strategy,
         n_max: int, eta_tol: float, error_proxy: bool, keep_indicators: bool, quad: QuadConfig,
         backend: Optional[str], curve: Optional[NurbsCurve], kind: str, callback: Optional[Callable]):
    strategy = _check_common(theta, strategy, n_max)
    if kv0.p != p:
        raise ValueError("degree of the initial knot vector differs from p")
    allowed = WEAK_ESTIMATORS if kind == "weak" else HYP_ESTIMATORS
    if estimator not in allowed:
        raise ValueError(f"estimator must be one of {', '.join(allowed)}")
    if problem.kind != kind:
        raise ValueError(f"problem {problem.name!r} is not a {kind} problem")
    curve = builtin_geometry(problem.geometry) if curve is None else curve
    make_space = weak_space if kind == "weak" else hyp_space
    make_system = weak_system if kind == "weak" else hyp_system
    kappa0 = mesh_ratio(kv0)
    log = AdaptiveRunLog(problem.name, kind, p, theta, estimator, strategy.value)
    kv, w = kv0, np.asarray(w0, dtype=float)
    level = 0
    while True:
        t0 = time.perf_counter()
        space = make_space(curve, kv, w, quad)
        system = make_system(space, problem, backend)
        sol = solve(system)
        fine = fine_sol = fine_sys = None
        if estimator == "hh2" or error_proxy:
            kvf, wf, _ = uniform_refine(kv, w)
            fine = make_space(curve, kvf, wf, quad)
            fine_sys = make_system(fine, problem, backend)
            fine_sol = solve(fine_sys)
        if kind == "weak":
            if estimator == "hh2":
                ind = est_hh2_weak(sol, fine_sol)
            else:
                r = residual_weak(space, sol, problem, backend)
                ind = (res_weak_from_samples if estimator == "res" else faermann_from_samples)(space.mesh, r, quad)
        else:
            eta_part = est_hh2_hyp(sol, fine_sol) if estimator == "hh2" else est_res_hyp(space, sol, problem, system.projection, backend=backend)
            osc = oscillations(space.mesh, problem.phi, system.projection, quad)
            ind = combine_hyp(eta_part, osc)
        proxy = float("nan")
        if error_proxy:
            proxy = _proxy(space, sol, problem, backend, fine_sol, fine_sys.A)
        rec = LevelRecord(level, kv.N, ind.total, proxy, space.mesh.kappa, time.perf_counter() - t0,
                          ind if keep_indicators else None, np.array(kv.knots))
        log.append(rec)
        log.final_kv, log.final_weights = kv, w
        if callback is not None:
            callback(rec, space, sol, ind)
        if ind.total <= eta_tol:
            log.stop_reason = "eta_tol"
            break
        marked = doerfler_mark(ind, theta)
        if marked.size == 0:
            log.stop_reason = "zero_indicators"
            break
        outcome = classify_marks(space.mesh, marked, strategy, p, kind)
        kv_new, w_new = refine(kv, w, outcome, kappa0, strategy, kind)
        if kv_new.N > n_max:
            log.stop_reason = "N_max"
            break
        kv, w = kv_new, w_new
        level += 1
    return log


def adaptive_loop_weak(problem: ModelProblem, p: int, kv0: KnotVector, weights0, theta: float = 0.75,
                       estimator: str = "res", strategy=RefinementStrategy.MULTIPLICITY, n_max: int = 2048,
                       eta_tol: float = 1e-6, error_proxy: bool = False, keep_indicators: bool = False,
                       quad: QuadConfig = QuadConfig(), backend: Optional[str] = None,
                       curve: Optional[NurbsCurve] = None, callback: Optional[Callable] = None) -> AdaptiveRunLog:
    """Solve, estimate, mark, refine for the weakly singular equation.

    Stops when eta <= eta_tol or when the next knot vector would exceed n_max knots.
    """
    return _run(problem, p, kv0, weights0, theta, estimator, strategy, n_max, eta_tol, error_proxy,
                keep_indicators, quad, backend, curve, "weak", callback)


def adaptive_loop_hyp(problem: ModelProblem, p: int, kv0: KnotVector, weights0, theta: float = 0.5,
                      estimator: str = "res", strategy=RefinementStrategy.MULTIPLICITY, n_max: int = 2048,
                      eta_tol: float = 1e-6, error_proxy: bool = False, keep_indicators: bool = False,
                      quad: QuadConfig = QuadConfig(), backend: Optional[str] = None,
                      curve: Optional[NurbsCurve] = None, callback: Optional[Callable] = None) -> AdaptiveRunLog:
    """Adaptive loop for the hypersingular equation; indicators include oscillations."""
    if p < 1:
        raise ValueError("the hypersingular equation needs p >= 1")
    return _run(problem, p, kv0, weights0, theta, estimator, strategy, n_max, eta_tol, error_proxy,
                keep_indicators, quad, backend, curve, "hyp", callback)
