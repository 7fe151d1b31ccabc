"""End-to-end solution paths shared by the estimator and the experiment drivers.

Paths:

* ``direct``: dense assembly of A and LU with partial pivoting,
* ``hlu``: H-LU factorisation of the H-matrix system Ã, used as the solver,
* ``preconditioned``: BICGSTAB on A, left preconditioned by an H-LU of Ã,
* ``bicgstab``: BICGSTAB on A without preconditioning.

Operators for A inside BICGSTAB: ``dense`` (assembled matrix),
``fast-toeplitz`` (FFT matvec, uniform/geometric meshes), ``toeplitz-direct``
(the same Toeplitz blocks summed directly, O(N^2) without storing A) and
``hmatvec`` (applies Ã itself).
"""

from dataclasses import dataclass, field
import time

import numpy as np

from .assembly import assemble_mass, assemble_rhs, assemble_system
from .basis import ElementSpace
from .hlu import hlu_factorize
from .hmatrix import build_hmatrix
from .krylov import SolveConfig, SolveReport, bicgstab, dense_direct_solve
from .toeplitz import build_toeplitz_operator

PATHS = ("direct", "hlu", "preconditioned", "bicgstab")
OPERATORS = ("dense", "fast-toeplitz", "toeplitz-direct", "hmatvec")


@dataclass
class SolveResult:
    X: np.ndarray
    path: str
    report: SolveReport = None
    timings: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)


class SolveCache:
    """Reuses assembled systems, H-matrices and factorisations between paths."""

    def __init__(self, problem, space: ElementSpace):
        self.problem = problem
        self.space = space
        self._store = {}
        self.timings = {}

    def _get(self, key, build):
        if key not in self._store:
            t0 = time.perf_counter()
            self._store[key] = build()
            self.timings[key] = time.perf_counter() - t0
        return self._store[key]

    def dense(self):
        return self._get(("dense",), lambda: assemble_system(self.problem, self.space))

    def rhs(self):
        if ("dense",) in self._store:
            return self._store[("dense",)].G
        return self._get(("rhs",), lambda: assemble_rhs(self.problem, self.space))

    def mass(self):
        if ("dense",) in self._store:
            return self._store[("dense",)].M
        return self._get(("mass",), lambda: assemble_mass(self.space))

    def hmatrix(self, R, lam, n_min):
        return self._get(("hmatrix", R, lam, n_min), lambda: build_hmatrix(self.problem, self.space, lam, R, n_min))

    def hlu(self, R, lam, n_min, tol):
        def build():
            H = self.hmatrix(R, lam, n_min)
            p = self.problem
            return hlu_factorize(H.system_blocks(p.theta, p.rho, self.mass()), tol)

        return self._get(("hlu", R, lam, n_min, tol), build)

    def toeplitz(self):
        return self._get(("toeplitz",), lambda: build_toeplitz_operator(self.problem, self.space))

    def seconds(self, key):
        return self.timings.get(key, 0.0)


def _operator(cache: SolveCache, operator, R, lam, n_min):
    p = cache.problem
    if operator == "dense":
        A = cache.dense().A
        return lambda v: A @ v
    if operator in ("fast-toeplitz", "toeplitz-direct"):
        op = cache.toeplitz()
        M = cache.mass()
        if operator == "fast-toeplitz":
            return lambda v: op.apply_system(v, p.theta, p.rho, M)

        def direct(v):
            y = p.theta * op.apply_dense(v)
            if p.theta != 1.0:
                y = y + (1.0 - p.theta) * op.apply_dense(v, transpose=True)
            return y + p.rho * (M @ v) if p.rho else y

        return direct
    if operator == "hmatvec":
        H = cache.hmatrix(R, lam, n_min)
        M = cache.mass()
        return lambda v: H.apply_system(v, p.theta, p.rho, M)
    raise ValueError(f"config-invalid: unknown operator {operator!r}")


def solve(cache: SolveCache, path="preconditioned", operator="dense", R=7, lam=1.0, n_min=8,
          tol=1e-13, hlu_tol=1e-13, precond_tol=1e-3, max_iter=500, seed=0):
    """Run one solution path; setup and factorisation times come from ``cache``."""
    if path not in PATHS:
        raise ValueError(f"config-invalid: unknown path {path!r}")
    timings = {}
    if path == "direct":
        sysm = cache.dense()
        t0 = time.perf_counter()
        X = dense_direct_solve(sysm.A, sysm.G)
        timings["setup"] = cache.seconds(("dense",))
        timings["factorize"] = time.perf_counter() - t0
        timings["iterate"] = 0.0
        return SolveResult(X, path, timings=_total(timings))

    if path == "hlu":
        F = cache.hlu(R, lam, n_min, hlu_tol)
        G = cache.rhs()
        t0 = time.perf_counter()
        X = F.solve(G)
        timings["setup"] = cache.seconds(("hmatrix", R, lam, n_min))
        timings["factorize"] = cache.seconds(("hlu", R, lam, n_min, hlu_tol))
        timings["iterate"] = time.perf_counter() - t0
        info = {"max_rank": F.max_rank()}
        return SolveResult(X, path, timings=_total(timings), info=info)

    config = SolveConfig(tol=tol, max_iter=max_iter,
                         operator="dense" if operator == "toeplitz-direct" else operator,
                         preconditioner="hlu" if path == "preconditioned" else "none",
                         precond_tol=precond_tol)
    applyA = _operator(cache, operator, R, lam, n_min)
    G = cache.rhs()
    precond = None
    timings["setup"] = 0.0
    timings["factorize"] = 0.0
    if path == "preconditioned":
        F = cache.hlu(R, lam, n_min, precond_tol)
        precond = F.solve
        timings["setup"] = cache.seconds(("hmatrix", R, lam, n_min))
        timings["factorize"] = cache.seconds(("hlu", R, lam, n_min, precond_tol))
    op_key = ("dense",) if operator == "dense" else ("toeplitz",) if "toeplitz" in operator else None
    if op_key is not None:
        timings["setup"] += cache.seconds(op_key)
    X, report = bicgstab(applyA, G, config, precond, seed=seed)
    timings["iterate"] = report.iterate_seconds
    report.setup_seconds = timings["setup"]
    report.factorize_seconds = timings["factorize"]
    return SolveResult(X, path, report, _total(timings))


def _total(t):
    t["total"] = t.get("setup", 0.0) + t.get("factorize", 0.0) + t.get("iterate", 0.0)
    return t
