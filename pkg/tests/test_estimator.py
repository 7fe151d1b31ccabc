import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fracsem.estimator import FractionalSEMSolver
from fracsem.problem import FractionalProblem


def test_params_round_trip():
    est = FractionalSEMSolver(n_elements=40, degree=4, rank=5, mesh_params={"grading": 3.0})
    params = est.get_params()
    assert params["n_elements"] == 40 and params["rank"] == 5
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(method="direct")
    assert est.method == "direct"


def test_not_fitted():
    with pytest.raises(NotFittedError):
        FractionalSEMSolver().predict([0.5])


@pytest.mark.parametrize("method", ["direct", "hlu", "preconditioned", "bicgstab"])
def test_fit_predict_score(power_problem, method):
    est = FractionalSEMSolver(n_elements=30, mesh_params={"grading": 5.0}, method=method, max_iter=2000,
                              tol=1e-12)
    est.fit(power_problem)
    x = np.linspace(0.5, 9.5, 7)
    err = np.abs(est.predict(x) - power_problem.u_exact(x)).max()
    assert err < 1e-2 * np.abs(power_problem.u_exact(x)).max()
    assert est.score() == pytest.approx(-est.linf_error())
    assert est.coef_.shape == (est.n_dof_,)


def test_boundary_values_come_from_lifting():
    prob = FractionalProblem(alpha=1.5, a=0.0, b=1.0, c1=1.0, c2=3.0)
    est = FractionalSEMSolver(mesh="uniform", n_elements=8, method="direct").fit(prob)
    np.testing.assert_allclose(est.predict([0.0, 1.0]), [1.0, 3.0], atol=1e-12)


def test_fast_operator_path(power_problem):
    est = FractionalSEMSolver(mesh="uniform", n_elements=32, operator="fast-toeplitz", rank=4)
    est.fit(power_problem)
    ref = FractionalSEMSolver(mesh="uniform", n_elements=32, method="direct").fit(power_problem)
    assert np.abs(est.coef_ - ref.coef_).max() <= 1e-9 * np.abs(ref.coef_).max()
    assert est.report_.converged


@pytest.mark.parametrize("kw", [{"method": "svd"}, {"operator": "csr"}, {"rank": -1}])
def test_invalid_hyperparameters(power_problem, kw):
    with pytest.raises(ValueError, match="config-invalid"):
        FractionalSEMSolver(n_elements=4, **kw).fit(power_problem)


def test_fit_rejects_arrays():
    with pytest.raises(TypeError):
        FractionalSEMSolver().fit(np.zeros((3, 2)))
