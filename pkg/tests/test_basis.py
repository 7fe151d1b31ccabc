from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from fracsem.basis import ElementSpace, gauss_rule, legendre_eval, legendre_table, modal_eval, nodal_eval
from fracsem.mesh import make_custom_mesh, make_graded_mesh, make_uniform_mesh


@pytest.mark.parametrize("p", range(8))
def test_legendre_endpoint_values(p):
    assert legendre_eval(p, 1.0)[0] == pytest.approx(1.0)
    assert legendre_eval(p, -1.0)[0] == pytest.approx((-1.0) ** p)


def test_legendre_small_cases():
    assert legendre_eval(0, 0.3) == (1.0, 0.0)
    assert legendre_eval(2, 0.5)[0] == pytest.approx(-0.125, abs=1e-16)
    assert legendre_eval(2, 0.5)[1] == pytest.approx(1.5)


def test_legendre_orthogonality():
    rule = gauss_rule("gauss-legendre", 20)
    val, _ = legendre_table(12, rule.points)
    G = (val * rule.weights) @ val.T
    np.testing.assert_allclose(G, np.diag(2.0 / (2 * np.arange(13) + 1)), atol=1e-12)


@pytest.mark.parametrize("p", range(1, 9))
def test_modal_vanishes_at_endpoints(p):
    assert modal_eval(p, 1.0)[0] == pytest.approx(0.0, abs=1e-14)
    assert modal_eval(p, -1.0)[0] == pytest.approx(0.0, abs=1e-14)


def test_modal_examples():
    v, d = modal_eval(1, 0.0)
    assert v == pytest.approx(1.5)
    assert d == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        modal_eval(0, 0.0)


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 10), xi=st.floats(-0.99, 0.99))
def test_modal_derivative_identity(p, xi):
    step = 1e-6
    fd = (modal_eval(p, xi + step)[0] - modal_eval(p, xi - step)[0]) / (2 * step)
    assert modal_eval(p, xi)[1] == pytest.approx(fd, abs=1e-8 * max(1.0, p * p))


def test_nodal_hat():
    m = make_custom_mesh([0.0, 0.5, 2.0, 3.0])
    assert nodal_eval(1, 0.5, m) == 1.0
    assert nodal_eval(1, 0.0, m) == 0.0 and nodal_eval(1, 2.0, m) == 0.0
    assert nodal_eval(1, 2.5, m) == 0.0
    assert nodal_eval(2, 1.25, m) == pytest.approx(0.5)
    with pytest.raises(IndexError):
        nodal_eval(3, 1.0, m)


def test_gauss_legendre_rules():
    r = gauss_rule("gauss-legendre", 1)
    np.testing.assert_allclose(r.points, [0.0], atol=1e-16)
    np.testing.assert_allclose(r.weights, [2.0])
    assert gauss_rule("gauss-legendre", 2).integrate(lambda x: x**2) == pytest.approx(2 / 3, rel=1e-14)
    with pytest.raises(ValueError, match="unsupported"):
        gauss_rule("gauss-hermite", 3)


@pytest.mark.parametrize("n", [1, 3, 6, 11])
def test_gauss_legendre_exactness(n):
    rule = gauss_rule("gauss-legendre", n)
    for m in range(2 * n):
        exact = 0.0 if m % 2 else 2.0 / (m + 1)
        assert rule.integrate(lambda x: x**m) == pytest.approx(exact, rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("m", range(8))
def test_gauss_jacobi_exactness(m):
    rule = gauss_rule("gauss-jacobi", 4, 0.4)
    # x^m = ((1 + x) - 1)^m expanded binomially, each term integrated exactly
    ref = sum(comb(m, k) * (-1.0) ** (m - k) * 2.0 ** (k + 1.4) / (k + 1.4) for k in range(m + 1))
    assert ref == pytest.approx(quad(lambda x: (1 + x) ** 0.4 * x**m, -1, 1)[0], rel=1e-7)
    assert rule.integrate(lambda x: x**m) == pytest.approx(ref, rel=1e-12, abs=1e-14)


def test_space_counts_and_enumeration():
    mesh = make_uniform_mesh(0, 1, 5)
    space = ElementSpace(mesh, np.array([2, 3, 4, 3, 2]))
    assert space.n_modal == 1 + 2 + 3 + 2 + 1
    assert space.n_dof == space.n_modal + 4
    seen = set()
    for e, P in enumerate(space.degrees):
        for p in range(1, P):
            k = space.modal_index(e, p)
            assert space.describe(k) == ("modal", e, p)
            seen.add(k)
    for j in range(1, 5):
        k = space.nodal_index(j)
        assert space.describe(k) == ("nodal", j)
        seen.add(k)
    assert seen == set(range(space.n_dof))
    assert not space.is_uniform_degree


def test_degree_too_low():
    with pytest.raises(ValueError, match="degree-too-low"):
        ElementSpace.uniform(make_uniform_mesh(0, 1, 3), 1)


@settings(max_examples=25, deadline=None)
@given(N=st.integers(2, 12), P=st.integers(2, 7), seed=st.integers(0, 10_000))
def test_evaluate_matches_basis_sum(N, P, seed):
    mesh = make_graded_mesh(0.0, 2.0, N, 2.0)
    space = ElementSpace.uniform(mesh, P)
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(space.n_dof)
    x = rng.uniform(0.0, 2.0, 9)
    ref = np.zeros_like(x)
    for k in range(space.n_dof):
        d = space.describe(k)
        if d[0] == "nodal":
            ref += coef[k] * nodal_eval(d[1], x, mesh)
        else:
            e, p = d[1], d[2]
            lo, hi = mesh.nodes[e], mesh.nodes[e + 1]
            inside = (x >= lo) & (x < hi) if e < N - 1 else (x >= lo) & (x <= hi)
            xi = (2 * x - lo - hi) / (hi - lo)
            ref += np.where(inside, coef[k] * modal_eval(p, np.clip(xi, -1, 1))[0], 0.0)
    np.testing.assert_allclose(space.evaluate(coef, x), ref, atol=1e-12 * (1 + np.abs(coef).sum()))


def test_piecewise_linear_is_represented_exactly():
    mesh = make_graded_mesh(0.0, 1.0, 6, 2.0)
    space = ElementSpace.uniform(mesh, 3)
    coef = np.zeros(space.n_dof)
    u = lambda x: np.sin(3 * x)
    coef[space.n_modal:] = u(mesh.nodes[1:-1])
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(space.evaluate(coef, x), np.interp(x, mesh.nodes, np.r_[0, u(mesh.nodes[1:-1]), 0]), atol=1e-14)
