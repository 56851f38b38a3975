import math

import numpy as np
import pytest

from nurbsbem.assembly import DiscreteFunction, PiecewisePolynomial, hyp_space, project_phi, solve, weak_space, weak_system
from nurbsbem.estimators import (
    IndicatorField,
    combine_hyp,
    est_faermann,
    est_hh2_hyp,
    est_hh2_weak,
    est_res_weak,
    faermann_element_terms,
    faermann_from_samples,
    oscillations,
    patch_indicators,
    res_weak_from_samples,
)
from nurbsbem.evaluation import cheby_points, interp_from_cheby
from nurbsbem.geometry import ModelProblem, build_mesh, builtin_geometry
from nurbsbem.quadrature import QuadConfig, gauss_legendre
from nurbsbem.splines import KnotVector, uniform_refine

M = QuadConfig().interp_points


def slit_mesh(knots):
    c = builtin_geometry("slit")
    kv = KnotVector(1, -1.0, 1.0, list(knots) + [1.0, 1.0], False)
    return build_mesh(c, kv)


def samples(mesh, fn):
    """Residual samples at the Chebyshev nodes of every element."""
    pts = cheby_points(mesh, M)
    X = mesh.local(pts.elem[:, None], pts.sigma[:, None])[0][:, 0]
    return fn(X).reshape(mesh.n, M)


GRADED = [-0.9, -0.5, -0.2, 0.0, 0.1, 0.5, 0.6]


def test_slit_is_straight():
    mesh = slit_mesh(GRADED)
    X = mesh.local(np.arange(mesh.n), np.linspace(0, 1, 5))[0]
    assert np.allclose(X[..., 1], 0) and np.allclose(mesh.arclength, mesh.h)


def test_faermann_of_linear_residual_is_patch_length():
    # |r(y) - r(z)| = |y - z| on a segment: each patch gives (L_a + L_b)^2
    mesh = slit_mesh(GRADED)
    ind = faermann_from_samples(mesh, samples(mesh, lambda X: X[:, 0]))
    L = mesh.arclength
    pad = np.append(L, 0.0)
    p = np.where(mesh.patches < 0, mesh.n, mesh.patches)
    assert np.allclose(ind.values, pad[p[:, 0]] + pad[p[:, 1]], rtol=1e-12)


def test_residual_indicator_of_quadratic():
    # r = x1^2: h_e * int_e (2 x1)^2 = h_e * 4/3 (b^3 - a^3)
    mesh = slit_mesh(GRADED)
    ind = res_weak_from_samples(mesh, samples(mesh, lambda X: X[:, 0] ** 2))
    a, b = mesh.x[:-1], mesh.x[1:]
    elem = (b - a) * 4.0 / 3.0 * (b**3 - a**3)
    pad = np.append(elem, 0.0)
    p = np.where(mesh.patches < 0, mesh.n, mesh.patches)
    assert np.allclose(ind.values**2, pad[p[:, 0]] + pad[p[:, 1]], rtol=1e-12)


def test_constant_residual_gives_zero():
    mesh = slit_mesh(GRADED)
    r = np.full((mesh.n, M), 3.7)
    assert np.max(faermann_from_samples(mesh, r).values) < 1e-12
    assert np.max(res_weak_from_samples(mesh, r).values) < 1e-12


def test_homogeneity():
    c = builtin_geometry("heart")
    mesh = build_mesh(c, uniform_refine(c.kv)[0])
    r = samples(mesh, lambda X: np.sin(4 * X[:, 0]) * X[:, 1])
    for fn in (faermann_from_samples, res_weak_from_samples):
        a, b = fn(mesh, r), fn(mesh, -2.5 * r)
        assert np.allclose(b.values, 2.5 * a.values, rtol=1e-13)


def test_faermann_terms_against_brute_force():
    # single patch on a curved boundary, tensor Gauss with offset orders
    c = builtin_geometry("circle")
    mesh = build_mesh(c, c.kv)
    r = samples(mesh, lambda X: np.exp(X[:, 0]) * np.cos(3 * X[:, 1]))
    sem, cross = faermann_element_terms(mesh, r)
    g1, g2 = gauss_legendre(64), gauss_legendre(63)

    def brute(ea, eb):
        Xa, _, ja, _ = mesh.local(np.array([ea]), g1.nodes)
        Xb, _, jb, _ = mesh.local(np.array([eb]), g2.nodes)
        ra = interp_from_cheby(r[[ea]], g1.nodes)[0]
        rb = interp_from_cheby(r[[eb]], g2.nodes)[0]
        d = Xa[0][:, None] - Xb[0][None]
        q = (ra[:, None] - rb[None]) ** 2 / np.sum(d**2, axis=-1)
        return (g1.weights * ja[0]) @ q @ (g2.weights * jb[0])

    for e in range(mesh.n):
        assert sem[e] == pytest.approx(brute(e, e), rel=1e-9)
    for k in range(mesh.n_nodes):
        a, b = mesh.patches[k]
        assert cross[k] == pytest.approx(brute(b, a), rel=1e-6)


def test_residual_estimators_small_for_exact_solution():
    # V psi = 1 on the circle has a constant solution, reproduced exactly
    c = builtin_geometry("circle")
    kv = KnotVector(0, 0.0, 1.0, [0.25, 0.5, 0.75, 1.0], True)
    sp = weak_space(c, kv, np.ones(4))
    pr = ModelProblem("one", "circle", "weak", "indirect", u=lambda x, nu: np.ones(x.shape[:-1]))
    sol = solve(weak_system(sp, pr))
    assert est_res_weak(sp, sol, pr).total < 1e-8
    assert est_faermann(sp, sol, pr).total < 1e-8


def _refined_pair(kind):
    c = builtin_geometry("pacman")
    make = weak_space if kind == "weak" else hyp_space
    sc = make(c, c.kv, c.weights)
    kvf, wf, _ = uniform_refine(c.kv, c.weights)
    return sc, make(c, kvf, wf)


@pytest.mark.parametrize("kind", ["weak", "hyp"])
def test_hh2_zero_and_homogeneous(kind):
    from nurbsbem.assembly import coeffs_to_refined

    sc, sf = _refined_pair(kind)
    est = est_hh2_weak if kind == "weak" else est_hh2_hyp
    rng = np.random.default_rng(4)
    coarse = DiscreteFunction(sc, rng.normal(size=sc.ndof))
    same = coeffs_to_refined(coarse, sf)
    assert np.max(est(coarse, same).values) < 1e-12
    fine = DiscreteFunction(sf, same.coeffs + rng.normal(size=sf.ndof))
    a = est(coarse, fine)
    fine3 = DiscreteFunction(sf, same.coeffs + 3 * (fine.coeffs - same.coeffs))
    assert np.allclose(est(coarse, fine3).values, 3 * a.values, rtol=1e-12)
    with pytest.raises(ValueError):
        est(coarse, coarse)


def test_hh2_weak_of_single_bump():
    # p = 0 on the slit: a fine difference of 1 on one half element
    c = builtin_geometry("slit")
    kv = KnotVector(0, -1.0, 1.0, [-0.5, 0.0, 0.5, 1.0], False)
    sc = weak_space(c, kv, np.ones(4))
    kf = uniform_refine(kv)[0]
    sf = weak_space(c, kf, np.ones(8))
    d = np.zeros(8)
    d[2] = 1.0  # fine element [-0.5, -0.25]
    ind = est_hh2_weak(DiscreteFunction(sc, np.zeros(4)), DiscreteFunction(sf, d))
    # coarse element [-0.5, 0] has length 0.5; the difference squared integrates to 0.25
    assert np.allclose(ind.values**2, [0.0, 0.125, 0.125, 0.0, 0.0])


def test_oscillations_vanish_on_polynomials():
    c = builtin_geometry("heart")
    mesh = build_mesh(c, uniform_refine(c.kv)[0])
    rng = np.random.default_rng(5)
    poly = PiecewisePolynomial(mesh, rng.normal(size=(mesh.n, 3)))
    proj = project_phi(mesh, poly, 2)
    assert np.max(oscillations(mesh, poly, proj).values) < 1e-10
    rough = lambda x, nu: np.exp(3 * x[..., 0])  # noqa: E731
    assert oscillations(mesh, rough, project_phi(mesh, rough, 2)).total > 0


def test_combine_and_field_checks():
    x = np.array([0.1, 0.5, 1.0])
    a = IndicatorField(np.array([3.0, 0.0, 1.0]), x, "res")
    b = IndicatorField(np.array([4.0, 2.0, 0.0]), x, "osc")
    c = combine_hyp(a, b)
    assert np.allclose(c.values, [5.0, 2.0, 1.0]) and c.kind == "res+osc"
    assert c.total == pytest.approx(math.sqrt(30))
    with pytest.raises(ValueError):
        combine_hyp(a, IndicatorField(np.ones(2), x[:2]))
    with pytest.raises(ValueError):
        IndicatorField(np.array([-1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        IndicatorField(np.array([np.nan]), np.array([0.0]))
    assert a.to_csv().splitlines()[0] == "node,value"
    assert len(a.to_csv().splitlines()) == 4


def test_patch_indicators_open_and_closed():
    mesh = slit_mesh([-0.5, 0.0, 0.5])
    ind = patch_indicators(mesh, np.array([1.0, 4.0, 9.0, 16.0]), "x")
    assert np.allclose(ind.values**2, [1.0, 5.0, 13.0, 25.0, 16.0])
    c = builtin_geometry("circle")
    closed = build_mesh(c, c.kv)
    ind = patch_indicators(closed, np.array([1.0, 2.0, 3.0, 4.0]), "x")
    # node k closes element k and opens element k+1
    assert np.allclose(ind.values**2, [3.0, 5.0, 7.0, 5.0])
