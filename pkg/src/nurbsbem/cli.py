"""Command-line driver: adaptive runs, geometry dumps and a quick self-check.

    nurbsbem run --config cfg.json --out results/ [--with-error-proxy] [--dump-indicators]
    nurbsbem geometry pacman
    nurbsbem selftest

Exit codes: 0 ok, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .adaptivity import (
    ANSATZ_KINDS,
    HYP_ESTIMATORS,
    WEAK_ESTIMATORS,
    RefinementStrategy,
    adaptive_loop_hyp,
    adaptive_loop_weak,
    initial_knots,
)
from .assembly import NumericalError
from .geometry import GEOMETRY_NAMES, builtin_geometry, builtin_problem, curve_to_json
from .quadrature import QuadConfig

__all__ = ["RunConfig", "ConfigError", "cmd_run", "cmd_geometry", "cmd_selftest", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    p: int
    geometry: Optional[str] = None
    kind: Optional[str] = None
    theta: float = 0.75
    estimator: str = "res"
    strategy: str = RefinementStrategy.MULTIPLICITY.value
    ansatz: str = "spline"
    N_max: int = 2048
    eta_tol: float = 1e-6
    quad: dict = field(default_factory=dict)
    error_proxy: bool = False
    slope_window: Optional[int] = None
    backend: Optional[str] = None

    @classmethod
    def from_dict(cls, rec: dict) -> "RunConfig":
        if not isinstance(rec, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = sorted(set(rec) - known)
        if extra:
            raise ConfigError(f"unknown configuration fields: {', '.join(extra)}")
        for req in ("problem", "p"):
            if req not in rec:
                raise ConfigError(f"missing field {req!r}")
        cfg = cls(**rec)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
        return cls.from_dict(rec)

    def quad_config(self) -> QuadConfig:
        try:
            return QuadConfig(**self.quad)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad quad settings: {exc}") from None

    def validate(self) -> None:
        if self.problem not in GEOMETRY_NAMES:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.geometry not in (None, self.problem) and self.problem != "circle":
            raise ConfigError("the built-in problem data belong to the geometry of the same name")
        if not isinstance(self.p, int) or isinstance(self.p, bool) or self.p < 0:
            raise ConfigError("p must be a nonnegative integer")
        if not isinstance(self.theta, (int, float)) or not 0.0 < float(self.theta) <= 1.0:
            raise ConfigError("theta must lie in (0, 1]")
        if self.ansatz not in ANSATZ_KINDS:
            raise ConfigError(f"ansatz must be one of {', '.join(ANSATZ_KINDS)}")
        try:
            RefinementStrategy(self.strategy)
        except ValueError:
            raise ConfigError(f"unknown strategy {self.strategy!r}") from None
        if not isinstance(self.N_max, int) or self.N_max < 1:
            raise ConfigError("N_max must be a positive integer")
        if not isinstance(self.eta_tol, (int, float)) or self.eta_tol < 0:
            raise ConfigError("eta_tol must be nonnegative")
        if self.slope_window is not None and (not isinstance(self.slope_window, int) or self.slope_window < 2):
            raise ConfigError("slope_window must be an integer >= 2")
        if self.backend not in (None, "numba", "numpy"):
            raise ConfigError("backend must be numba or numpy")
        try:
            prob = builtin_problem(self.problem, self.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        allowed = WEAK_ESTIMATORS if prob.kind == "weak" else HYP_ESTIMATORS
        if self.estimator not in allowed:
            raise ConfigError(f"estimator for the {prob.kind} equation must be one of {', '.join(allowed)}")
        if prob.kind == "hyp" and self.p < 1:
            raise ConfigError("the hypersingular equation needs p >= 1")
        if self.ansatz == "nurbs" and self.p != builtin_geometry(prob.geometry).kv.p:
            raise ConfigError("the nurbs ansatz uses the degree of the geometry")
        self.quad_config()


def _fmt_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def execute(cfg: RunConfig, error_proxy: bool = False, keep_indicators: bool = False):
    """Run the adaptive loop described by ``cfg``; returns the run log."""
    prob = builtin_problem(cfg.problem, cfg.kind)
    curve = builtin_geometry(prob.geometry)
    kv, w = initial_knots(curve, cfg.p, cfg.ansatz, prob.kind)
    strategy = RefinementStrategy(cfg.strategy)
    if cfg.ansatz == "pcw_poly":
        strategy = RefinementStrategy.H_LOWEST
    loop = adaptive_loop_weak if prob.kind == "weak" else adaptive_loop_hyp
    return loop(prob, cfg.p, kv, w, float(cfg.theta), cfg.estimator, strategy, n_max=cfg.N_max,
                eta_tol=float(cfg.eta_tol), error_proxy=error_proxy or cfg.error_proxy,
                keep_indicators=keep_indicators, quad=cfg.quad_config(), backend=cfg.backend, curve=curve)


def summary_record(cfg: RunConfig, log) -> dict:
    slope = log.slope(cfg.slope_window)
    rec = {
        "config": asdict(cfg),
        "levels": len(log.levels),
        "N_final": int(log.levels[-1].N),
        "eta_final": float(log.levels[-1].eta),
        "slope": None if math.isnan(slope) else slope,
        "slope_window": cfg.slope_window,
        "stop_reason": log.stop_reason,
        "backend": cfg.backend or kernels.BACKEND,
    }
    proxy = log.error_proxy
    if np.all(np.isfinite(proxy)) and np.all(proxy > 0):
        rec["error_proxy_slope"] = log.slope(cfg.slope_window, which="proxy")
        ratio = log.eta / proxy
        rec["eta_over_proxy"] = [float(ratio.min()), float(ratio.max())]
    return rec


def cmd_run(cfg: RunConfig, out: Path, error_proxy: bool = False, dump_indicators: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        log = execute(cfg, error_proxy, dump_indicators)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    (out / "runlog.csv").write_text(log.to_csv())
    kv = log.final_kv
    knots = kv.to_dict()
    knots["weights"] = [float(x) for x in log.final_weights]
    (out / "knots_final.json").write_text(_fmt_json(knots))
    if dump_indicators:
        ind = out / "indicators"
        ind.mkdir(exist_ok=True)
        for rec in log.levels:
            (ind / f"level_{rec.level:03d}.csv").write_text(rec.indicators.to_csv())
    summary = summary_record(cfg, log)
    (out / "summary.json").write_text(_fmt_json(summary))
    print(f"{cfg.problem}: {len(log.levels)} levels, N={summary['N_final']}, eta={summary['eta_final']:.3e}, "
          f"slope={summary['slope']}")
    return EXIT_OK


def cmd_geometry(name: str) -> str:
    """JSON record of a built-in geometry (raises ValueError for unknown names)."""
    return curve_to_json(builtin_geometry(name)) + "\n"


def _selftest_checks():
    from .adaptivity import MarkingOutcome, doerfler_mark, refine
    from .assembly import assemble_V, weak_space
    from .evaluation import TracePoints, eval_V_at
    from .geometry import mesh_ratio
    from .quadrature import gauss_legendre, log_gauss
    from .splines import KnotVector, eval_comb, insert_knot, uniform_refine

    def quadrature():
        for n in (2, 4, 8, 16):
            g = gauss_legendre(n)
            for k in range(2 * n):
                assert abs(g.weights @ g.nodes**k - 1.0 / (k + 1)) < 1e-14
        lg = log_gauss(8)
        for k in range(16):
            assert abs(lg.weights @ lg.nodes**k + 1.0 / (k + 1) ** 2) < 1e-12

    def splines():
        kv = KnotVector(3, 0.0, 1.0, [0.2, 0.5, 0.5, 0.7, 1, 1, 1, 1])
        t = np.linspace(0.0, 0.999, 57)
        assert np.allclose(eval_comb(kv, np.ones(kv.n_basis), t), 1.0, atol=1e-14)
        c = np.cos(np.arange(kv.n_basis))
        w = np.ones(kv.n_basis)
        kv2, w2, cw2 = insert_knot(kv, w, c, 0.33, 2)
        assert np.allclose(eval_comb(kv2, cw2, t), eval_comb(kv, c, t), atol=1e-12)
        kv3, _, _ = uniform_refine(kv)
        assert kv3.n_elements == 2 * kv.n_elements

    def circle():
        curve = builtin_geometry("circle")
        space = weak_space(curve, curve.kv, curve.weights)
        pts = TracePoints.from_params(space.mesh, np.linspace(0.01, 0.99, 7))
        r = 0.4
        v = eval_V_at(space, lambda x, nu: np.ones(x.shape[:-1]), pts)
        assert np.allclose(v, -r * math.log(r), rtol=1e-8)
        A = assemble_V(space)
        assert np.allclose(A, A.T, atol=1e-12)
        np.linalg.cholesky(A)

    def marking():
        assert list(doerfler_mark(np.array([4.0, 3.0, 2.0, 1.0]), 0.5)) == [0]
        assert list(doerfler_mark(np.array([0.0, 2.0, 1.0]), 1.0)) == [1, 2]
        kv = KnotVector(0, 0.0, 1.0, [0.25, 0.5, 0.75, 1.0])
        for _ in range(10):
            kv, _ = refine(kv, np.ones(kv.n_basis), MarkingOutcome(np.zeros(0, int), np.array([0]), np.zeros(0, int)),
                           1.0)
        assert mesh_ratio(kv) <= 2.0 * (1 + 1e-12)

    return [("quadrature", quadrature), ("splines", splines), ("circle operators", circle), ("marking", marking)]


def cmd_selftest(stream=None) -> int:
    stream = stream or sys.stdout
    failed = 0
    for name, fn in _selftest_checks():
        try:
            fn()
            print(f"ok    {name}", file=stream)
        except Exception as exc:  # noqa: BLE001 - report every failing check
            failed += 1
            print(f"FAIL  {name}: {exc!r}", file=stream)
    return EXIT_OK if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nurbsbem", description="Adaptive isogeometric BEM for the 2D Laplace equation")
    ap.add_argument("--threads", type=int, default=None, help="cap on numba worker threads")
    sub = ap.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="run an adaptive loop from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--with-error-proxy", action="store_true")
    run.add_argument("--dump-indicators", action="store_true")
    run.add_argument("--threads", type=int, default=None, dest="threads_sub")
    geo = sub.add_parser("geometry", help="print a built-in geometry as JSON")
    geo.add_argument("name")
    geo.add_argument("--out", type=Path, default=None)
    sub.add_parser("selftest", help="quick invariant checks")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads_sub", None) or args.threads
    if threads:
        kernels.set_threads(threads)
    if args.cmd == "geometry":
        try:
            text = cmd_geometry(args.name)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.out is not None:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if args.cmd == "selftest":
        return cmd_selftest()
    try:
        cfg = RunConfig.load(args.config)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return cmd_run(cfg, args.out, args.with_error_proxy, args.dump_indicators)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
