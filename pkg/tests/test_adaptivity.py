import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nurbsbem.adaptivity import (
    AdaptiveRunLog,
    LevelRecord,
    RefinementStrategy,
    adaptive_loop_hyp,
    adaptive_loop_weak,
    classify_marks,
    doerfler_mark,
    error_proxy,
    fit_slope,
    initial_knots,
    refine,
)
from nurbsbem.assembly import weak_space
from nurbsbem.estimators import IndicatorField
from nurbsbem.geometry import build_mesh, builtin_geometry, builtin_problem, mesh_ratio
from nurbsbem.splines import KnotVector, eval_comb, uniform_refine

MULT = RefinementStrategy.MULTIPLICITY


# ---------------------------------------------------------------------------
# marking


def test_doerfler_examples():
    assert doerfler_mark([1.0, 2.0, 3.0], 0.5).tolist() == [2]
    assert doerfler_mark([1.0, 2.0, 3.0], 0.75).tolist() == [1, 2]
    assert doerfler_mark([1.0, 2.0, 3.0], 1.0).tolist() == [0, 1, 2]
    # ties are broken by the lower index
    assert doerfler_mark([1.0, 1.0, 1.0, 1.0], 0.5).tolist() == [0, 1]
    assert doerfler_mark([0.0, 0.0], 0.5).size == 0
    assert doerfler_mark([0.0, 2.0, 0.0], 1.0).tolist() == [1]
    field = IndicatorField(np.array([3.0, 1.0]), np.array([0.5, 1.0]))
    assert doerfler_mark(field, 0.5).tolist() == [0]


@pytest.mark.parametrize("theta", [0.0, -0.1, 1.5, float("nan")])
def test_doerfler_rejects_theta(theta):
    with pytest.raises(ValueError):
        doerfler_mark([1.0, 2.0], theta)


@given(st.lists(st.integers(0, 20), min_size=1, max_size=8), st.integers(1, 20))
def test_doerfler_is_minimal_by_brute_force(vals, k):
    theta = k / 20
    v = np.array(vals, dtype=float)
    sq = v**2
    total = sq.sum()
    marked = doerfler_mark(v, theta)
    if total == 0:
        assert marked.size == 0
        return
    assert sq[marked].sum() >= theta * total
    best = min(
        r for r in range(len(v) + 1)
        for sub in itertools.combinations(range(len(v)), r)
        if sq[list(sub)].sum() >= theta * total
    )
    if theta < 1:
        assert len(marked) == best
    else:
        assert set(marked.tolist()) == set(np.nonzero(sq)[0].tolist())


# ---------------------------------------------------------------------------
# refinement


def slit_mesh(p, knots):
    c = builtin_geometry("slit")
    return build_mesh(c, KnotVector(p, -1.0, 1.0, list(knots) + [1.0] * (p + 1), False))


def test_classify_marks():
    mesh = slit_mesh(1, [-0.5, 0.0, 0.5])  # nodes -1, -0.5, 0, 0.5, 1
    out = classify_marks(mesh, [1, 2], MULT, 1)
    assert out.marked_elements.tolist() == [1] and out.mult_nodes.size == 0
    out = classify_marks(mesh, [1, 3], MULT, 1)
    assert out.marked_elements.size == 0 and out.mult_nodes.tolist() == [1, 3]
    out = classify_marks(mesh, [1, 3], RefinementStrategy.H_FULL, 1)
    assert out.marked_elements.tolist() == [0, 1, 2, 3] and out.mult_nodes.size == 0
    # endpoints always refine their element
    out = classify_marks(mesh, [0, 4], MULT, 1)
    assert out.marked_elements.tolist() == [0, 3] and out.mult_nodes.size == 0


def test_classify_marks_respects_caps():
    # knot 0 already has multiplicity 2 = p + 1 (weak cap) with p = 1
    mesh = slit_mesh(1, [-0.5, 0.0, 0.0, 0.5])
    out = classify_marks(mesh, [2], MULT, 1, "weak")
    assert out.mult_nodes.size == 0 and out.marked_elements.tolist() == [1, 2]
    # multiplicity 1 may grow to p = 1 only for the continuous space: it cannot
    mesh = slit_mesh(1, [-0.5, 0.0, 0.5])
    assert classify_marks(mesh, [2], MULT, 1, "hyp").mult_nodes.size == 0
    assert classify_marks(mesh, [2], MULT, 1, "weak").mult_nodes.tolist() == [2]


def test_refine_bisects_marked_element():
    c = builtin_geometry("circle")
    kv = KnotVector(0, 0.0, 1.0, [0.25, 0.5, 0.75, 1.0], True)
    mesh = build_mesh(c, kv)
    out = classify_marks(mesh, [0, 1], MULT, 0)  # both nodes of element 1
    fine, w = refine(kv, np.ones(4), out, mesh_ratio(kv))
    assert fine.nodes.tolist() == [0.0, 0.25, 0.5, 0.625, 0.75, 1.0] or fine.nodes.tolist() == [0.0, 0.25, 0.375, 0.5, 0.75, 1.0]
    assert fine.n_elements == 5 and mesh_ratio(fine) == 2.0
    assert np.all(w == 1.0)


def test_refine_multiplicity_increase():
    kv = KnotVector(1, -1.0, 1.0, [-0.5, 0.0, 0.5, 1.0, 1.0], False)
    mesh = build_mesh(builtin_geometry("slit"), kv)
    out = classify_marks(mesh, [2], MULT, 1)
    fine, _ = refine(kv, np.ones(kv.n_basis), out, mesh_ratio(kv))
    assert fine.multiplicity(0.0) == 2 and fine.n_elements == kv.n_elements


def test_repeated_marking_keeps_mesh_ratio():
    kv = KnotVector(0, -1.0, 1.0, [-0.5, 0.0, 0.5, 1.0], False)
    c = builtin_geometry("slit")
    k0 = mesh_ratio(kv)
    for _ in range(10):
        mesh = build_mesh(c, kv)
        out = classify_marks(mesh, [0, 1], MULT, 0)
        kv, _ = refine(kv, np.ones(kv.n_basis), out, k0)
        assert mesh_ratio(kv) <= 2 * k0 * (1 + 1e-12)
    assert kv.nodes[1] - kv.nodes[0] == pytest.approx(0.5 / 2**10)


def test_refine_preserves_weight_function():
    c = builtin_geometry("circle")
    kv, w = c.kv, np.array(c.weights)
    rng = np.random.default_rng(11)
    for _ in range(4):
        mesh = build_mesh(c, kv)
        marked = rng.choice(mesh.n_nodes, size=max(1, mesh.n_nodes // 3), replace=False)
        out = classify_marks(mesh, marked, MULT, 2)
        fine, wf = refine(kv, w, out, mesh_ratio(c.kv))
        t = rng.uniform(0, 1, 100)
        assert np.allclose(eval_comb(fine, wf, t), eval_comb(kv, w, t), rtol=0, atol=1e-14)
        kv, w = fine, wf


def test_h_lowest_inserts_full_multiplicity():
    kv = KnotVector(1, -1.0, 1.0, [-0.5, -0.5, 0.0, 0.0, 0.5, 0.5, 1.0, 1.0], False)
    mesh = build_mesh(builtin_geometry("slit"), kv)
    out = classify_marks(mesh, [0, 1], RefinementStrategy.H_LOWEST, 1)
    fine, _ = refine(kv, np.ones(kv.n_basis), out, mesh_ratio(kv), RefinementStrategy.H_LOWEST)
    assert fine.multiplicity(-0.75) == 2


def test_initial_knots():
    c = builtin_geometry("pacman")
    kv, w = initial_knots(c, 2, "nurbs")
    assert kv == c.kv and np.array_equal(w, c.weights)
    kv, w = initial_knots(c, 1, "spline")
    assert np.array_equal(kv.nodes, c.kv.nodes) and kv.multiplicities()[1:-1].max() == 1
    kv, _ = initial_knots(c, 1, "pcw_poly", "weak")
    assert kv.multiplicities()[1:-1].min() == 2
    kv, _ = initial_knots(c, 2, "pcw_poly", "hyp")
    assert kv.multiplicities()[1:-1].min() == 2
    with pytest.raises(ValueError):
        initial_knots(c, 1, "nurbs")
    with pytest.raises(ValueError):
        initial_knots(c, 1, "bezier")


# ---------------------------------------------------------------------------
# run log and loops


def test_fit_slope_of_power_law():
    N = np.array([10, 20, 40, 80, 160, 320, 640, 1280, 2000])
    assert fit_slope(N, 3.0 * N**-1.5) == pytest.approx(-1.5)
    assert np.isnan(fit_slope([10], [1.0]))


def test_run_log_checks_and_csv():
    log = AdaptiveRunLog("slit", "weak", 0, 0.5, "res", "multiplicity_increase")
    log.append(LevelRecord(0, 4, 1.0, float("nan"), 1.0, 0.1))
    with pytest.raises(ValueError):
        log.append(LevelRecord(1, 4, 0.5, float("nan"), 1.0, 0.1))
    lines = log.to_csv(with_seconds=False).splitlines()
    assert lines[0] == "level,N,eta,error_proxy,kappa" and lines[1].startswith("0,4,1.0,nan,1.0")


def test_uniform_theta_equals_uniform_refinement():
    pr = builtin_problem("slit")
    kv, w = initial_knots(builtin_geometry("slit"), 1, "spline")
    seen = []
    log = adaptive_loop_weak(pr, 1, kv, w, theta=1.0, n_max=64, eta_tol=0.0,
                             callback=lambda rec, *a: seen.append(rec.knots))
    assert log.stop_reason == "N_max"
    ref = kv
    for knots in seen:
        assert np.array_equal(knots, ref.knots)
        ref = uniform_refine(ref)[0]


def _is_sub_multiset(small, big):
    a, ca = np.unique(small, return_counts=True)
    b, cb = np.unique(big, return_counts=True)
    idx = np.searchsorted(b, a)
    return np.all(idx < len(b)) and np.all(b[np.minimum(idx, len(b) - 1)] == a) and np.all(cb[idx] >= ca)


def test_adaptive_weak_run_contracts():
    pr = builtin_problem("pacman")
    c = builtin_geometry("pacman")
    kv, w = initial_knots(c, 0, "spline")
    log = adaptive_loop_weak(pr, 0, kv, w, theta=0.5, n_max=120, eta_tol=0.0, keep_indicators=True, error_proxy=True)
    assert log.stop_reason == "N_max" and len(log.levels) > 4
    assert np.all(np.diff(log.N) > 0)
    assert np.all(log.kappa <= 2 * mesh_ratio(kv) * (1 + 1e-12))
    assert log.eta[-1] < log.eta[0]
    for a, b in zip(log.levels[:-1], log.levels[1:]):
        assert _is_sub_multiset(a.knots, b.knots)
    # the proxy stays within a fixed factor of the estimator
    ratio = log.eta / log.error_proxy
    assert ratio.max() / ratio.min() < 10
    last = log.levels[-1]
    space = weak_space(c, log.final_kv, log.final_weights)
    from nurbsbem.assembly import solve, weak_system

    sol = solve(weak_system(space, pr))
    assert error_proxy(space, sol, pr) == pytest.approx(last.error_proxy, rel=1e-10)


def test_adaptive_hyp_run_smoke():
    pr = builtin_problem("heart")
    kv, w = initial_knots(builtin_geometry("heart"), 1, "spline")
    log = adaptive_loop_hyp(pr, 1, kv, w, theta=0.5, n_max=40, eta_tol=0.0, estimator="hh2")
    assert log.stop_reason == "N_max" and log.eta[-1] < log.eta[0]
    with pytest.raises(ValueError):
        adaptive_loop_hyp(pr, 1, kv, w, estimator="fae")
    with pytest.raises(ValueError):
        adaptive_loop_weak(pr, 1, kv, w)


def test_loop_stops_on_tolerance():
    pr = builtin_problem("circle")
    kv, w = initial_knots(builtin_geometry("circle"), 2, "nurbs")
    log = adaptive_loop_weak(pr, 2, kv, w, eta_tol=1.0)
    assert log.stop_reason == "eta_tol" and len(log.levels) == 1
