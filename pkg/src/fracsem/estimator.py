"""Scikit-learn style front end: hyperparameters in ``__init__``, state in ``fit``.

``fit`` takes a :class:`~fracsem.problem.FractionalProblem` (the "data" of a
PDE solve) instead of a feature matrix; ``predict`` evaluates the computed
solution at points of the domain.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .assembly import reconstruct_and_error
from .basis import ElementSpace
from .mesh import make_mesh
from .problem import FractionalProblem
from .solver import OPERATORS, PATHS, SolveCache, solve


class FractionalSEMSolver(BaseEstimator):
    """Spectral element solver for the two-sided fractional diffusion problem.

    Parameters
    ----------
    mesh : {"uniform", "geometric", "graded", "two-sided-graded"}
    n_elements : int
    mesh_params : dict or None
        Generator arguments such as ``{"grading": 5.0}`` or ``{"ratio": 1.1}``.
    degree : int
        Polynomial degree P on every element.
    method : {"direct", "hlu", "preconditioned", "bicgstab"}
    operator : {"dense", "fast-toeplitz", "toeplitz-direct", "hmatvec"}
        How BICGSTAB applies A.
    rank, lam, n_min : H-matrix rank R, admissibility parameter and leaf size.
    tol, hlu_tol, precond_tol, max_iter : solver tolerances.
    seed : int
        Seeds the shadow vector used after a BICGSTAB restart.
    """

    def __init__(self, mesh="graded", n_elements=100, mesh_params=None, degree=3,
                 method="preconditioned", operator="dense", rank=7, lam=1.0, n_min=8,
                 tol=1e-13, hlu_tol=1e-13, precond_tol=1e-3, max_iter=500, seed=0):
        self.mesh = mesh
        self.n_elements = n_elements
        self.mesh_params = mesh_params
        self.degree = degree
        self.method = method
        self.operator = operator
        self.rank = rank
        self.lam = lam
        self.n_min = n_min
        self.tol = tol
        self.hlu_tol = hlu_tol
        self.precond_tol = precond_tol
        self.max_iter = max_iter
        self.seed = seed

    def _validate(self):
        if self.method not in PATHS:
            raise ValueError(f"config-invalid: unknown method {self.method!r}")
        if self.operator not in OPERATORS:
            raise ValueError(f"config-invalid: unknown operator {self.operator!r}")
        if int(self.rank) < 0 or not self.lam >= 0:
            raise ValueError("config-invalid: rank and lam must be non-negative")

    def fit(self, problem: FractionalProblem, y=None):
        """Discretise and solve ``problem``; returns ``self``."""
        if not isinstance(problem, FractionalProblem):
            raise TypeError("fit expects a FractionalProblem")
        self._validate()
        mesh = make_mesh(self.mesh, problem.a, problem.b, int(self.n_elements), **(self.mesh_params or {}))
        space = ElementSpace.uniform(mesh, int(self.degree))
        cache = SolveCache(problem, space)
        res = solve(cache, self.method, self.operator, int(self.rank), float(self.lam), int(self.n_min),
                    self.tol, self.hlu_tol, self.precond_tol, int(self.max_iter), self.seed)
        self.problem_ = problem
        self.mesh_ = mesh
        self.space_ = space
        self.coef_ = res.X
        self.report_ = res.report
        self.timings_ = res.timings
        self.n_dof_ = space.n_dof
        return self

    def predict(self, x):
        """Values of the discrete solution (lifting included) at ``x``."""
        check_is_fitted(self, "coef_")
        x = np.asarray(x, dtype=float)
        return self.problem_.lifting(x) + self.space_.evaluate(self.coef_, x)

    def linf_error(self, m=50):
        """Maximum error against the exact solution on ``m`` points per element."""
        check_is_fitted(self, "coef_")
        return reconstruct_and_error(self.coef_, self.problem_, self.space_, m)[1]

    def score(self, problem=None, y=None):
        """Negative L-infinity error (larger is better)."""
        return -self.linf_error()
