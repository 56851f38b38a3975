"""Adaptive isogeometric Galerkin BEM for the 2D Laplace equation.

Modules:
    splines      knot vectors, B-splines/NURBS, knot insertion
    geometry     NURBS boundary curves, meshes, built-in model problems
    quadrature   Gauss, log-weighted Gauss and graded rules
    assembly     ansatz spaces, Galerkin matrices and right-hand sides
    evaluation   pointwise boundary integral operators
    estimators   a posteriori error indicators
    adaptivity   marking, refinement and the adaptive loops
    cli          command-line driver
"""

from .adaptivity import (
    AdaptiveRunLog,
    MarkingOutcome,
    RefinementStrategy,
    adaptive_loop_hyp,
    adaptive_loop_weak,
    classify_marks,
    doerfler_mark,
    fit_slope,
    initial_knots,
    refine,
)
from .assembly import (
    DiscreteFunction,
    GalerkinSystem,
    NumericalError,
    Space,
    assemble_V,
    assemble_W,
    hyp_space,
    hyp_system,
    solve,
    weak_space,
    weak_system,
)
from .geometry import BoundaryMesh, ModelProblem, NurbsCurve, builtin_geometry, builtin_problem
from .quadrature import QuadConfig, QuadratureRule, gauss_legendre, log_gauss
from .splines import KnotVector, insert_knot, refine_to, uniform_refine

__version__ = "0.1.0"
