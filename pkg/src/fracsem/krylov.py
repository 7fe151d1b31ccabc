"""Left-preconditioned BICGSTAB, a dense direct reference solve and condition numbers."""

from dataclasses import dataclass, field
import time

import numpy as np
import scipy.linalg


class SolverError(ArithmeticError):
    pass


@dataclass
class SolveConfig:
    """Solver settings; ``preconditioner`` is ``"none"`` or ``"hlu"``."""

    tol: float = 1e-13
    max_iter: int = 500
    operator: str = "dense"
    preconditioner: str = "hlu"
    precond_tol: float = 1e-3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("config-invalid: tol must be positive")
        if self.max_iter < 1:
            raise ValueError("config-invalid: max_iter must be at least 1")
        if self.operator not in ("dense", "fast-toeplitz", "hmatvec"):
            raise ValueError(f"config-invalid: unknown operator {self.operator!r}")
        if self.preconditioner not in ("none", "hlu"):
            raise ValueError(f"config-invalid: unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveReport:
    """Outcome of one iterative solve.

    ``iterations`` counts BICGSTAB steps, a converged half step counting as
    one; ``matvecs`` counts applications of the (preconditioned) operator.
    """

    iterations: int = 0
    matvecs: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False
    breakdown: bool = False
    maxiter: bool = False
    restarts: int = 0
    setup_seconds: float = 0.0
    factorize_seconds: float = 0.0
    iterate_seconds: float = 0.0

    @property
    def final_residual(self):
        return self.residuals[-1]


def bicgstab(applyA, b, config=None, precond=None, x0=None, seed=0):
    """Solve ``precond(A) x = precond(b)`` by BICGSTAB.

    ``applyA`` and ``precond`` are callables on vectors (``precond`` may be
    None). Convergence is tested in the preconditioned residual norm after
    each half step. On a breakdown (rho or omega numerically zero) the
    iteration restarts once from the current iterate with a random shadow
    vector; a second breakdown is reported in the returned report.
    """
    config = config or SolveConfig()
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side is not finite")
    M = precond if precond is not None else (lambda v: v)
    rng = np.random.default_rng(seed)
    report = SolveReport()
    t0 = time.perf_counter()

    def op(v):
        report.matvecs += 1
        return M(applyA(v))

    c = M(b)
    cnorm = np.linalg.norm(c)
    n = b.size
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if cnorm == 0.0:
        report.residuals.append(0.0)
        report.converged = True
        return np.zeros(n), report
    r = c - op(x) if x0 is not None else c.copy()
    report.residuals.append(np.linalg.norm(r) / cnorm)
    if report.residuals[-1] <= config.tol:
        report.converged = True
        return x, report

    r_hat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    tiny = np.finfo(float).eps ** 2
    while report.iterations < config.max_iter:
        rho = r_hat @ r
        if abs(rho) <= tiny * np.linalg.norm(r_hat) * np.linalg.norm(r) or omega == 0.0:
            if report.restarts >= 1:
                report.breakdown = True
                break
            report.restarts += 1
            r = c - op(x)
            r_hat = rng.standard_normal(n)
            rho_old = alpha = omega = 1.0
            v = np.zeros(n)
            p = np.zeros(n)
            continue
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        v = op(p)
        denom = r_hat @ v
        if denom == 0.0:
            omega = 0.0
            continue
        alpha = rho / denom
        s = r - alpha * v
        report.iterations += 1
        res = np.linalg.norm(s) / cnorm
        if res <= config.tol:
            x = x + alpha * p
            report.residuals.append(res)
            report.converged = True
            break
        t = op(s)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * p + omega * s
        r = s - omega * t
        rho_old = rho
        report.residuals.append(np.linalg.norm(r) / cnorm)
        if report.residuals[-1] <= config.tol:
            report.converged = True
            break
    else:
        report.maxiter = True
    if not report.converged and not report.breakdown:
        report.maxiter = True
    report.iterate_seconds = time.perf_counter() - t0
    return x, report


def dense_direct_solve(A, G):
    """LU with partial pivoting."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("dimension-mismatch: A must be square")
    try:
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"singular-matrix: {exc}") from exc
    d = np.abs(np.diag(lu))
    if d.min() <= np.finfo(float).eps * d.max() * 1e-3 or d.min() == 0.0:
        raise SolverError("singular-matrix: zero pivot")
    return scipy.linalg.lu_solve((lu, piv), np.asarray(G, dtype=float))


def condition_number(A):
    """2-norm condition number by dense SVD."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def condition_diagnostics(A, At=None, solve_At=None, limit=6000):
    """``(cond(A), cond(At), cond(At^{-1} A))`` by dense SVD.

    ``solve_At`` applies the preconditioner to a matrix of right-hand
    sides; missing pieces are reported as NaN.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[0] > limit:
        raise ValueError(f"too-large: {A.shape[0]} unknowns exceed the dense limit {limit}")
    cA = condition_number(A)
    cAt = condition_number(At) if At is not None else np.nan
    cP = condition_number(solve_At(A)) if solve_At is not None else np.nan
    return cA, cAt, cP
