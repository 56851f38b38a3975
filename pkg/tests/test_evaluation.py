import json
import math
from pathlib import Path

import numpy as np
import pytest

from nurbsbem import kernels
from nurbsbem.assembly import DiscreteFunction, hyp_space, weak_space
from nurbsbem.evaluation import (
    TracePoints,
    cheby_points,
    dinterp_from_cheby,
    eval_K_at,
    eval_Kp_at,
    eval_V_at,
    eval_W_at,
    interp_from_cheby,
    values_at_cheby,
)
from nurbsbem.geometry import CIRCLE_RADIUS, build_mesh, builtin_geometry
from nurbsbem.quadrature import QuadConfig, cheby_nodes, gauss_legendre
from nurbsbem.splines import uniform_refine

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())
R = CIRCLE_RADIUS


def one(x, nu):
    return np.ones(x.shape[:-1])


def circle_mesh(levels=1):
    c = builtin_geometry("circle")
    kv, w = c.kv, np.array(c.weights)
    for _ in range(levels):
        kv, w, _ = uniform_refine(kv, w)
    return c, kv, w, build_mesh(c, kv)


def sample_points(mesh):
    # interior points, both element ends and nodes of the curve
    pts = cheby_points(mesh, 5)
    e = np.arange(mesh.n)
    return TracePoints(np.concatenate([pts.elem, e, e]),
                       np.concatenate([pts.sigma, np.zeros(mesh.n), np.ones(mesh.n)]))


def test_V_of_constant_on_circle():
    _, _, _, mesh = circle_mesh(1)
    v = eval_V_at(mesh, one, sample_points(mesh))
    assert np.max(np.abs(v / (-R * math.log(R)) - 1)) < 1e-8


def test_K_of_constant_on_circle():
    _, _, _, mesh = circle_mesh(1)
    assert np.max(np.abs(eval_K_at(mesh, one, sample_points(mesh)) + 0.5)) < 1e-7


def test_Kp_of_constant_on_circle():
    _, _, _, mesh = circle_mesh(1)
    pts = cheby_points(mesh, 5)
    assert np.max(np.abs(eval_Kp_at(mesh, one, pts) + 0.5)) < 1e-7


def test_V_of_cosine_is_eigenfunction():
    # V cos(k theta) = r / (2k) cos(k theta) on the circle
    _, _, _, mesh = circle_mesh(2)
    pts = sample_points(mesh)
    X = mesh.local(pts.elem[:, None], pts.sigma[:, None])[0][:, 0]
    th = np.arctan2(X[:, 1], X[:, 0])
    for k in (1, 3):
        v = eval_V_at(mesh, lambda x, nu: np.cos(k * np.arctan2(x[..., 1], x[..., 0])), pts)
        assert np.max(np.abs(v - R / (2 * k) * np.cos(k * th))) < 1e-9


def test_rotation_invariance_of_point_values():
    # the value at a point does not depend on which side of a node it is given from
    _, _, _, mesh = circle_mesh(1)
    s = mesh.x[1:-1]
    f = lambda x, nu: x[..., 0] ** 2 + x[..., 1]  # noqa: E731
    left = eval_V_at(mesh, f, TracePoints.from_params(mesh, s, "left"))
    right = eval_V_at(mesh, f, TracePoints.from_params(mesh, s, "right"))
    assert np.allclose(left, right, rtol=0, atol=1e-13)


def _pacman_density(x, nu):
    return 1.0 + x[..., 0] - 2.0 * x[..., 1] ** 2


def _pacman_double(x, nu):
    return x[..., 0] ** 2 - 0.5 * x[..., 1]


@pytest.mark.parametrize("levels", [0, 2])
def test_pacman_potentials_match_frozen(levels):
    ref = FROZEN["pacman"]
    c = builtin_geometry("pacman")
    kv, w = c.kv, np.array(c.weights)
    for _ in range(levels):
        kv, w, _ = uniform_refine(kv, w)
    mesh = build_mesh(c, kv)
    pts = TracePoints.from_params(mesh, ref["params"])
    assert np.allclose(eval_V_at(mesh, _pacman_density, pts), ref["V"], rtol=1e-12, atol=1e-14)
    assert np.allclose(eval_K_at(mesh, _pacman_double, pts), ref["K"], rtol=1e-10, atol=1e-12)


def test_W_annihilates_constants():
    c, kv, w, _ = circle_mesh(1)
    sp = hyp_space(c, kv, w)
    U = DiscreteFunction(sp, np.ones(sp.ndof))
    pts = cheby_points(sp.mesh, 3)
    assert np.max(np.abs(eval_W_at(sp, U, pts))) < 1e-8


@pytest.mark.parametrize("m", [8, 12])
def test_W_of_coordinate_on_circle(m):
    # U = x1 = r cos(theta) is represented exactly; W U = x1 / (2 r)
    c, kv, w, _ = circle_mesh(2)
    sp = hyp_space(c, kv, w)
    ctrl = c.control_points
    kvf = c.kv
    from nurbsbem.splines import refine_to

    _, _, cw = refine_to(kvf, c.weights, ctrl[:, 0] * c.weights, kv)
    U = DiscreteFunction(sp, (cw / w)[:-1])
    pts = cheby_points(sp.mesh, 5)
    X = sp.mesh.local(pts.elem[:, None], pts.sigma[:, None])[0][:, 0]
    assert np.max(np.abs(U.values(pts.elem[:, None], pts.sigma[:, None])[:, 0] - X[:, 0])) < 1e-14
    got = eval_W_at(sp, U, pts, quad=QuadConfig(interp_points=m))
    tol = 1e-5 if m == 8 else 1e-7
    assert np.max(np.abs(got - X[:, 0] / (2 * R))) < tol


def test_adjoint_identity_on_circle():
    # <K' phi, v> = <phi, K v> for smooth phi, v
    _, _, _, mesh = circle_mesh(1)
    phi = lambda x, nu: np.exp(x[..., 0]) * (1 + x[..., 1])  # noqa: E731
    v = lambda x, nu: np.cos(3 * x[..., 0]) + x[..., 1] ** 2  # noqa: E731
    g = gauss_legendre(12)
    e = np.repeat(np.arange(mesh.n), len(g.nodes))
    s = np.tile(g.nodes, mesh.n)
    pts = TracePoints(e, s)
    X, _, jac, nu = mesh.local(e[:, None], s[:, None])
    X, jac, nu = X[:, 0], jac[:, 0], nu[:, 0]
    wt = np.tile(g.weights, mesh.n) * jac
    lhs = np.sum(eval_Kp_at(mesh, phi, pts) * v(X, nu) * wt)
    rhs = np.sum(phi(X, nu) * eval_K_at(mesh, v, pts) * wt)
    assert abs(lhs - rhs) <= 1e-6 * abs(rhs)


def test_Kp_and_W_refuse_curve_nodes():
    c = builtin_geometry("pacman")
    mesh = build_mesh(c, c.kv)
    corner = TracePoints.from_params(mesh, [0.5])
    with pytest.raises(ValueError):
        eval_Kp_at(mesh, one, corner)
    sp = hyp_space(c, c.kv, c.weights)
    with pytest.raises(ValueError):
        eval_W_at(sp, DiscreteFunction(sp, np.ones(sp.ndof)), corner)
    with pytest.raises(ValueError):
        eval_W_at(weak_space(c, c.kv, c.weights), None, corner)


def test_trace_points_validation():
    with pytest.raises(ValueError):
        TracePoints([0, 1], [0.5])
    with pytest.raises(ValueError):
        TracePoints([0], [1.5])
    _, _, _, mesh = circle_mesh(0)
    with pytest.raises(ValueError):
        TracePoints.from_params(mesh, [2.0])
    with pytest.raises(ValueError):
        eval_V_at(mesh, one, TracePoints([mesh.n], [0.5]))
    pts = TracePoints.from_params(mesh, [0.3, 0.6])
    assert np.allclose(pts.params(mesh), [0.3, 0.6])


def test_backends_agree():
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    c = builtin_geometry("heart")
    mesh = build_mesh(c, uniform_refine(c.kv)[0])
    pts = cheby_points(mesh, 4)
    f = lambda x, nu: np.sin(5 * x[..., 0]) + x[..., 1]  # noqa: E731
    for fn in (eval_V_at, eval_K_at):
        a = fn(mesh, f, pts, backend="numba")
        b = fn(mesh, f, pts, backend="numpy")
        assert np.allclose(a, b, rtol=1e-13, atol=1e-15)


def test_cheby_interpolation_is_exact_for_polynomials():
    rng = np.random.default_rng(2)
    coef = rng.normal(size=(3, 6))
    c = cheby_nodes(6)
    vals = np.polynomial.polynomial.polyval(c, coef.T)
    s = np.linspace(0, 1, 11)
    assert np.allclose(interp_from_cheby(vals, s), np.polynomial.polynomial.polyval(s, coef.T), atol=1e-12)
    d = np.polynomial.polynomial.polyder(coef.T)
    assert np.allclose(dinterp_from_cheby(vals, s), np.polynomial.polynomial.polyval(s, d), atol=1e-10)


def test_values_at_cheby_shape():
    _, _, _, mesh = circle_mesh(0)
    out = values_at_cheby(mesh, lambda pts: pts.sigma, m=4)
    assert out.shape == (mesh.n, 4)
    assert np.allclose(out, np.tile(cheby_nodes(4), (mesh.n, 1)))


def test_symmetric_points_give_equal_values():
    # cos(4 theta) is invariant under quarter turns and the reflection at 45 degrees
    _, _, _, mesh = circle_mesh(1)
    s0 = 0.07
    s = np.concatenate([s0 + 0.25 * np.arange(4), 0.25 - s0 + 0.25 * np.arange(4)])
    pts = TracePoints.from_params(mesh, s)
    f = lambda x, nu: np.cos(4 * np.arctan2(x[..., 1], x[..., 0]))  # noqa: E731
    for fn in (eval_V_at, eval_K_at, eval_Kp_at):
        v = fn(mesh, f, pts)
        assert np.ptp(v) <= 1e-10 * max(np.max(np.abs(v)), 1e-3)


def test_evaluators_are_linear():
    c, kv, w, mesh = circle_mesh(1)
    pts = cheby_points(mesh, 4)
    f = lambda x, nu: np.exp(x[..., 0])  # noqa: E731
    g = lambda x, nu: x[..., 1] ** 2 - x[..., 0]  # noqa: E731
    h = lambda x, nu: 2.0 * f(x, nu) - 3.0 * g(x, nu)  # noqa: E731
    for fn in (eval_V_at, eval_K_at, eval_Kp_at):
        a, b, ab = fn(mesh, f, pts), fn(mesh, g, pts), fn(mesh, h, pts)
        assert np.allclose(ab, 2 * a - 3 * b, rtol=0, atol=1e-13 * np.max(np.abs(ab)))
    sp = hyp_space(c, kv, w)
    rng = np.random.default_rng(9)
    u1, u2 = rng.normal(size=sp.ndof), rng.normal(size=sp.ndof)
    W = lambda u: eval_W_at(sp, DiscreteFunction(sp, u), pts)  # noqa: E731
    assert np.allclose(W(u1 - 4 * u2), W(u1) - 4 * W(u2), rtol=0, atol=1e-12 * np.max(np.abs(W(u1))))


def test_W_values_match_assembled_form():
    # <W U, V> from point values against v^T A u; U = x1 is smooth across the nodes
    from nurbsbem.assembly import assemble_W
    from nurbsbem.splines import refine_to

    c = builtin_geometry("circle")
    sp = hyp_space(c, c.kv, c.weights)
    assert sp.mesh.n == 4
    w = np.array(c.weights)
    u = (refine_to(c.kv, w, c.control_points[:, 0] * w, c.kv)[2] / w)[:-1]
    v = np.random.default_rng(12).normal(size=sp.ndof)
    A = assemble_W(sp, stabilize=False)[0]
    g = gauss_legendre(24)
    e = np.repeat(np.arange(sp.mesh.n), len(g.nodes))
    s = np.tile(g.nodes, sp.mesh.n)
    pts = TracePoints(e, s)
    jac = sp.mesh.local(e[:, None], s[:, None])[2][:, 0]
    WU = eval_W_at(sp, DiscreteFunction(sp, u), pts, quad=QuadConfig(interp_points=12))
    V = DiscreteFunction(sp, v).values(e[:, None], s[:, None])[:, 0]
    got = np.sum(WU * V * jac * np.tile(g.weights, sp.mesh.n))
    ref = v @ A @ u
    assert abs(got - ref) <= 1e-6 * abs(ref)
