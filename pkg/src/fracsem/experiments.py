"""Experiment configs and the studies behind the command line interface.

Configs are TOML documents with the tables ``problem``, ``mesh``,
``hmatrix``, ``solver`` and ``sweep`` plus the top-level keys ``study``,
``seed`` and ``threads``. Missing keys take the defaults below; unknown keys
are rejected. :func:`dump_config` writes the resolved config, which
:func:`load_config` reads back unchanged.
"""

from dataclasses import asdict, dataclass, field, fields
import statistics
import time

import numpy as np
import tomlkit

from .assembly import reconstruct_and_error, sample_points
from .basis import ElementSpace
from .hmatrix import block_to_dense, build_hmatrix
from .krylov import condition_diagnostics
from .mesh import make_mesh
from .problem import FractionalProblem, PowerForcing, example_power_solution, example_two_sided
from .solver import OPERATORS, PATHS, SolveCache, solve
from .toeplitz import UnsupportedMeshError

SCHEMA_VERSION = 1

SCHEMAS = {
    "matrix-error": ["lam", "R", "N", "P", "n_dof", "frobenius_error", "relative_error", "build_seconds"],
    "refine": [
        "kind", "N", "P", "n_dof", "path", "operator", "R", "linf_error", "setup_seconds",
        "factorize_seconds", "iterate_seconds", "total_seconds", "iterations", "matvecs",
        "converged", "cond_A", "cond_At", "cond_prec",
    ],
    "fastmv-timing": [
        "N", "P", "n_dof", "R", "with_fm_seconds", "without_fm_seconds", "hmatrix_seconds",
        "factorize_seconds", "toeplitz_setup_seconds", "iterations_fm", "iterations_dense",
        "matvecs_fm", "matvecs_dense", "max_solution_diff",
    ],
}
SCHEMAS["refine-h"] = SCHEMAS["refine-p"] = SCHEMAS["solve"] = SCHEMAS["refine"]

STUDIES = ("matrix-error", "refine-h", "refine-p", "fastmv-timing", "solve")


class ConfigError(ValueError):
    def __init__(self, message):
        super().__init__(f"config-invalid: {message}")


@dataclass
class ProblemSpec:
    example: str = "power"
    alpha: float = 1.6
    theta: float = 1.0
    rho: float = 0.0
    a: float = 0.0
    b: float = 10.0
    gamma: float = 0.8
    c1: float = 0.0
    c2: float = 0.0
    forcing: list = field(default_factory=list)


@dataclass
class MeshSpec:
    kind: str = "graded"
    grading: float = 5.0
    ratio: float = 1.1
    grading_left: float = 7.0
    grading_right: float = 5.0


@dataclass
class HMatrixSpec:
    lam: list = field(default_factory=lambda: [1.0])
    R: list = field(default_factory=lambda: [2, 4, 7])
    n_min: int = 8


@dataclass
class SolverSpec:
    paths: list = field(default_factory=lambda: ["direct", "hlu", "preconditioned"])
    operator: str = "dense"
    tol: float = 1e-13
    hlu_tol: float = 1e-13
    precond_tol: float = 1e-3
    max_iter: int = 500
    repeats: int = 3
    condition: bool = False
    cond_limit: int = 6000
    error_points: int = 50


@dataclass
class SweepSpec:
    N: list = field(default_factory=lambda: [50, 100, 200, 400])
    P: list = field(default_factory=lambda: [3])


@dataclass
class ExperimentConfig:
    study: str = "refine-h"
    seed: int = 0
    threads: int = 1
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    hmatrix: HMatrixSpec = field(default_factory=HMatrixSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data.pop("manifest", None)
        sections = {f.name: f.type for f in fields(cls) if f.name in
                    ("problem", "mesh", "hmatrix", "solver", "sweep")}
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"[{key}] must be a table")
                kwargs[key] = _section(sections[key], key, value)
            elif key in ("study", "seed", "threads"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown key {key!r}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads must be a positive integer")
        if self.problem.example not in ("power", "two-sided", "custom"):
            raise ConfigError(f"unknown example {self.problem.example!r}")
        for name in ("N", "P"):
            vals = getattr(self.sweep, name)
            if not vals or any(int(v) != v or v < 1 for v in vals):
                raise ConfigError(f"sweep.{name} must be a non-empty list of positive integers")
        if any(p < 2 for p in self.sweep.P):
            raise ConfigError("degrees must be at least 2")
        if not self.hmatrix.R or any(int(r) != r or r < 0 for r in self.hmatrix.R):
            raise ConfigError("hmatrix.R must be a non-empty list of non-negative integers")
        if not self.hmatrix.lam or any(not lam >= 0 for lam in self.hmatrix.lam):
            raise ConfigError("hmatrix.lam must be a non-empty list of non-negative numbers")
        if self.hmatrix.n_min < 1:
            raise ConfigError("hmatrix.n_min must be positive")
        s = self.solver
        if not s.paths or any(p not in PATHS for p in s.paths):
            raise ConfigError(f"solver.paths must be taken from {PATHS}")
        if s.operator not in OPERATORS:
            raise ConfigError(f"solver.operator must be one of {OPERATORS}")
        for name in ("tol", "hlu_tol", "precond_tol"):
            if not getattr(s, name) > 0:
                raise ConfigError(f"solver.{name} must be positive")
        if s.max_iter < 1 or s.repeats < 1 or s.error_points < 1:
            raise ConfigError("solver.max_iter, repeats and error_points must be positive")


def _section(cls, name, data):
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    out = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        ref = getattr(defaults, key)
        try:
            if isinstance(ref, bool):
                if not isinstance(value, bool):
                    raise TypeError
                out[key] = value
            elif isinstance(ref, int):
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                out[key] = int(value)
            elif isinstance(ref, float):
                out[key] = float(value)
            elif isinstance(ref, str):
                if not isinstance(value, str):
                    raise TypeError
                out[key] = value
            elif isinstance(ref, list):
                if not isinstance(value, list):
                    raise TypeError
                out[key] = list(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}.{key} has the wrong type") from None
    return cls(**out)


def load_config(path=None, text=None):
    """Parse a config file (or string) into a validated :class:`ExperimentConfig`."""
    if text is None:
        if path is None:
            return ExperimentConfig()
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        data = tomlkit.parse(text).unwrap()
    except Exception as exc:  # tomlkit raises its own parse errors
        raise ConfigError(f"unreadable config: {exc}") from None
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig, extra=None):
    """TOML text of the resolved config (plus an optional ``[manifest]`` table)."""
    doc = tomlkit.document()
    data = cfg.to_dict()
    for key in ("study", "seed", "threads"):
        doc[key] = data[key]
    for key in ("problem", "mesh", "hmatrix", "solver", "sweep"):
        doc[key] = data[key]
    if extra:
        doc["manifest"] = extra
    return tomlkit.dumps(doc)


# ---------------------------------------------------------------- builders


def build_problem(spec: ProblemSpec):
    if spec.example == "power":
        return example_power_solution(spec.alpha, spec.gamma, spec.a, spec.b, spec.rho)
    if spec.example == "two-sided":
        return example_two_sided(spec.alpha, spec.theta, spec.a, spec.b, spec.rho)
    terms = []
    for t in spec.forcing:
        if len(t) != 3 or t[2] not in ("left", "right"):
            raise ConfigError("forcing terms are [coef, exponent, 'left'|'right']")
        terms.append((float(t[0]), float(t[1]), t[2]))
    f = PowerForcing(tuple(terms), spec.a, spec.b)
    return FractionalProblem(alpha=spec.alpha, theta=spec.theta, rho=spec.rho, a=spec.a, b=spec.b,
                             c1=spec.c1, c2=spec.c2, f=f, name="custom")


def build_space(cfg: ExperimentConfig, problem, N, P):
    m = cfg.mesh
    params = {
        "uniform": {},
        "geometric": {"ratio": m.ratio},
        "graded": {"grading": m.grading},
        "two-sided-graded": {"grading_left": m.grading_left, "grading_right": m.grading_right},
    }
    if m.kind not in params:
        raise ConfigError(f"unknown mesh kind {m.kind!r}")
    mesh = make_mesh(m.kind, problem.a, problem.b, int(N), **params[m.kind])
    return ElementSpace.uniform(mesh, int(P))


# ---------------------------------------------------------------- studies


def run_matrix_error_study(cfg: ExperimentConfig):
    """Rows ``(lam, R, ||A - Ã||_F)`` at ``N = sweep.N[0]``, ``P = sweep.P[0]``."""
    problem = build_problem(cfg.problem)
    N, P = cfg.sweep.N[0], cfg.sweep.P[0]
    space = build_space(cfg, problem, N, P)
    cache = SolveCache(problem, space)
    sysm = cache.dense()
    A = sysm.A
    normA = np.linalg.norm(A)
    rows = []
    for lam in cfg.hmatrix.lam:
        for R in cfg.hmatrix.R:
            t0 = time.perf_counter()
            H = build_hmatrix(problem, space, lam, int(R), cfg.hmatrix.n_min)
            dt = time.perf_counter() - t0
            At = block_to_dense(H.system_blocks(problem.theta, problem.rho, sysm.M))
            err = float(np.linalg.norm(A - At))
            rows.append({"lam": lam, "R": int(R), "N": N, "P": P, "n_dof": space.n_dof,
                         "frobenius_error": err, "relative_error": err / normA, "build_seconds": dt})
    return rows


def _median_timings(results):
    keys = results[0].timings.keys()
    return {k: statistics.median(r.timings[k] for r in results) for k in keys}


def _timed(problem, space, repeats, **kw):
    """Solve ``repeats`` times from scratch; median timings, last solution."""
    results = [solve(SolveCache(problem, space), **kw) for _ in range(repeats)]
    res = results[-1]
    res.timings = _median_timings(results)
    return res


def _reference(cfg, problem, points):
    """Finest preconditioned solve of the sweep, used when no exact solution exists."""
    N, P = points[-1]
    space = build_space(cfg, problem, N, P)
    s = cfg.solver
    res = solve(SolveCache(problem, space), "preconditioned", s.operator, max(cfg.hmatrix.R),
                cfg.hmatrix.lam[0], cfg.hmatrix.n_min, s.tol, s.hlu_tol, s.precond_tol, s.max_iter, cfg.seed)
    return lambda x: problem.lifting(x) + space.evaluate(res.X, x)


def _error(X, problem, space, m, reference):
    if problem.u_exact is not None:
        return reconstruct_and_error(X, problem, space, m)[1]
    x = sample_points(space.mesh, m)
    uh = problem.lifting(x) + space.evaluate(X, x)
    return float(np.max(np.abs(uh - reference(x))))


def run_refinement_study(cfg: ExperimentConfig, kind="h"):
    """One row per sweep point, path and rank (the direct path has no rank)."""
    if kind not in ("h", "p"):
        raise ConfigError("refinement kind must be 'h' or 'p'")
    problem = build_problem(cfg.problem)
    s, hm = cfg.solver, cfg.hmatrix
    if kind == "h":
        points = [(int(N), int(cfg.sweep.P[0])) for N in cfg.sweep.N]
    else:
        points = [(int(cfg.sweep.N[0]), int(P)) for P in cfg.sweep.P]
    reference = None if problem.u_exact is not None else _reference(cfg, problem, points)
    lam = hm.lam[0]
    rows = []
    for N, P in points:
        space = build_space(cfg, problem, N, P)
        cond_A = np.nan
        want_cond = s.condition and space.n_dof <= s.cond_limit
        if want_cond:
            cache = SolveCache(problem, space)
            A = cache.dense().A
            cond_A = condition_diagnostics(A, limit=s.cond_limit)[0]
        for path in s.paths:
            ranks = [None] if path in ("direct", "bicgstab") else [int(R) for R in hm.R]
            for R in ranks:
                res = _timed(problem, space, s.repeats, path=path, operator=s.operator,
                             R=R if R is not None else 0, lam=lam, n_min=hm.n_min, tol=s.tol,
                             hlu_tol=s.hlu_tol, precond_tol=s.precond_tol, max_iter=s.max_iter, seed=cfg.seed)
                cond_At = cond_prec = np.nan
                if want_cond and path in ("hlu", "preconditioned"):
                    tol = s.hlu_tol if path == "hlu" else s.precond_tol
                    F = cache.hlu(R, lam, hm.n_min, tol)
                    At = block_to_dense(cache.hmatrix(R, lam, hm.n_min).system_blocks(
                        problem.theta, problem.rho, cache.mass()))
                    _, cond_At, cond_prec = condition_diagnostics(A, At, F.solve, s.cond_limit)
                rep = res.report
                rows.append({
                    "kind": kind, "N": N, "P": P, "n_dof": space.n_dof, "path": path,
                    "operator": s.operator if path in ("preconditioned", "bicgstab") else "",
                    "R": "" if R is None else R,
                    "linf_error": _error(res.X, problem, space, s.error_points, reference),
                    "setup_seconds": res.timings["setup"], "factorize_seconds": res.timings["factorize"],
                    "iterate_seconds": res.timings["iterate"], "total_seconds": res.timings["total"],
                    "iterations": rep.iterations if rep else "", "matvecs": rep.matvecs if rep else "",
                    "converged": rep.converged if rep else True,
                    "cond_A": cond_A, "cond_At": cond_At, "cond_prec": cond_prec,
                })
    return rows


def run_fastmv_timing(cfg: ExperimentConfig):
    """Preconditioned solves with FFT and with direct O(N^2) matvecs.

    The H-LU preconditioner is built once per N and shared; the reported
    path times are medians of ``solver.repeats`` iterative solves.
    """
    if cfg.mesh.kind not in ("uniform", "geometric"):
        raise UnsupportedMeshError("unsupported-mesh: fast matvec needs a uniform or geometric mesh")
    problem = build_problem(cfg.problem)
    s, hm = cfg.solver, cfg.hmatrix
    R, lam, P = int(hm.R[0]), hm.lam[0], int(cfg.sweep.P[0])
    rows = []
    for N in cfg.sweep.N:
        space = build_space(cfg, problem, int(N), P)
        cache = SolveCache(problem, space)
        cache.hlu(R, lam, hm.n_min, s.precond_tol)
        cache.toeplitz()
        runs = {}
        for op in ("fast-toeplitz", "toeplitz-direct"):
            out = [solve(cache, "preconditioned", op, R, lam, hm.n_min, s.tol, s.hlu_tol, s.precond_tol,
                         s.max_iter, cfg.seed) for _ in range(s.repeats)]
            runs[op] = (out[-1], statistics.median(r.timings["iterate"] for r in out))
        fm, dm = runs["fast-toeplitz"], runs["toeplitz-direct"]
        rows.append({
            "N": int(N), "P": P, "n_dof": space.n_dof, "R": R,
            "with_fm_seconds": fm[1], "without_fm_seconds": dm[1],
            "hmatrix_seconds": cache.seconds(("hmatrix", R, lam, hm.n_min)),
            "factorize_seconds": cache.seconds(("hlu", R, lam, hm.n_min, s.precond_tol)),
            "toeplitz_setup_seconds": cache.seconds(("toeplitz",)),
            "iterations_fm": fm[0].report.iterations, "iterations_dense": dm[0].report.iterations,
            "matvecs_fm": fm[0].report.matvecs, "matvecs_dense": dm[0].report.matvecs,
            "max_solution_diff": float(np.max(np.abs(fm[0].X - dm[0].X))),
        })
    return rows


def run_solve(cfg: ExperimentConfig):
    """Single solve: first N, first P, first path, first rank of the config."""
    problem = build_problem(cfg.problem)
    s, hm = cfg.solver, cfg.hmatrix
    N, P = int(cfg.sweep.N[0]), int(cfg.sweep.P[0])
    space = build_space(cfg, problem, N, P)
    path = s.paths[0]
    R = int(hm.R[0])
    res = _timed(problem, space, s.repeats, path=path, operator=s.operator, R=R, lam=hm.lam[0],
                 n_min=hm.n_min, tol=s.tol, hlu_tol=s.hlu_tol, precond_tol=s.precond_tol,
                 max_iter=s.max_iter, seed=cfg.seed)
    err = reconstruct_and_error(res.X, problem, space, s.error_points)[1] if problem.u_exact else np.nan
    rep = res.report
    row = {
        "kind": "single", "N": N, "P": P, "n_dof": space.n_dof, "path": path,
        "operator": s.operator if path in ("preconditioned", "bicgstab") else "",
        "R": R if path in ("hlu", "preconditioned") else "", "linf_error": err,
        "setup_seconds": res.timings["setup"], "factorize_seconds": res.timings["factorize"],
        "iterate_seconds": res.timings["iterate"], "total_seconds": res.timings["total"],
        "iterations": rep.iterations if rep else "", "matvecs": rep.matvecs if rep else "",
        "converged": rep.converged if rep else True, "cond_A": np.nan, "cond_At": np.nan, "cond_prec": np.nan,
    }
    return [row]


def run_study(cfg: ExperimentConfig):
    if cfg.study == "matrix-error":
        return run_matrix_error_study(cfg)
    if cfg.study == "refine-h":
        return run_refinement_study(cfg, "h")
    if cfg.study == "refine-p":
        return run_refinement_study(cfg, "p")
    if cfg.study == "fastmv-timing":
        return run_fastmv_timing(cfg)
    return run_solve(cfg)
