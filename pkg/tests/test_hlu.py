import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsem.assembly import assemble_system
from fracsem.basis import ElementSpace
from fracsem.hlu import HLUError, hlu_factorize, hlu_solve, truncate
from fracsem.hmatrix import DenseBlock, HierBlock, LowRankBlock, block_to_dense, build_hmatrix, iter_leaves
from fracsem.mesh import make_graded_mesh, make_uniform_mesh
from fracsem.problem import example_power_solution


def dense_tree(A, leaf=4, lo=0, hi=None):
    """Hierarchical block tree of dense leaves over a plain matrix."""
    hi = A.shape[0] if hi is None else hi

    def build(r0, r1, c0, c1):
        if r1 - r0 <= leaf or c1 - c0 <= leaf:
            return DenseBlock((r0, r1), (c0, c1), np.array(A[r0:r1, c0:c1], dtype=float))
        rm, cm = (r0 + r1 + 1) // 2, (c0 + c1 + 1) // 2
        return HierBlock((r0, r1), (c0, c1), [[build(r0, rm, c0, cm), build(r0, rm, cm, c1)],
                                               [build(rm, r1, c0, cm), build(rm, r1, cm, c1)]])

    return build(lo, hi, lo, hi)


@pytest.fixture(scope="module")
def example_system():
    p = example_power_solution()
    space = ElementSpace.uniform(make_graded_mesh(0, 10, 60, 5), 3)
    sysm = assemble_system(p, space)
    H = build_hmatrix(p, space, 1.0, 4)
    return sysm, H


def test_truncate_examples(rng):
    u, v = rng.standard_normal((2, 12, 1))
    U, V = truncate(u, v, 1e-13)
    assert U.shape[1] == 1
    np.testing.assert_allclose(U @ V.T, u @ v.T, atol=1e-13 * np.abs(u @ v.T).max())

    base = rng.standard_normal((15, 3))
    U, V = truncate(np.hstack([base, base]), rng.standard_normal((10, 6)), 1e-12)
    assert U.shape[1] == 3

    A = rng.standard_normal((20, 5)) @ rng.standard_normal((5, 20)) + 1e-9 * rng.standard_normal((20, 20))
    U, V = truncate(A, np.eye(20), 1e-6)
    s1 = np.linalg.svd(A, compute_uv=False)[0]
    assert U.shape[1] == 5
    assert np.abs(U @ V.T - A).max() <= 1e-6 * s1 * np.sqrt(5)

    U, V = truncate(np.zeros((4, 2)), np.zeros((3, 2)), 1e-10)
    assert U.shape == (4, 0) and V.shape == (3, 0)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 15), n=st.integers(1, 15), k=st.integers(0, 8), seed=st.integers(0, 999))
def test_truncate_never_grows_rank(m, n, k, seed):
    rng = np.random.default_rng(seed)
    U, V = rng.standard_normal((m, k)), rng.standard_normal((n, k))
    U2, V2 = truncate(U, V, 1e-12)
    assert U2.shape[1] <= min(k, m, n)
    scale = max(1.0, np.abs(U @ V.T).max()) if k else 1.0
    np.testing.assert_allclose(U2 @ V2.T, U @ V.T, atol=1e-10 * scale)


def test_identity_factors_to_identity():
    F = hlu_factorize(dense_tree(np.eye(17)), tol=0.0)
    for leaf in iter_leaves(F.root):
        if leaf.rows == leaf.cols:
            np.testing.assert_array_equal(leaf.data, np.eye(leaf.data.shape[0]))
        else:
            assert not np.any(block_to_dense(leaf))
    x = np.arange(17.0)
    np.testing.assert_array_equal(F.solve(x), x)


def test_all_dense_tree_matches_dense_solve(example_system, rng):
    sysm, _ = example_system
    A = sysm.A
    F = hlu_factorize(dense_tree(A, leaf=16), tol=0.0)
    G = rng.standard_normal(A.shape[0])
    X = F.solve(G)
    np.testing.assert_allclose(X, np.linalg.solve(A, G), rtol=0, atol=1e-10 * np.abs(np.linalg.solve(A, G)).max())


def test_solver_tolerance_residuals(example_system):
    sysm, H = example_system
    At = block_to_dense(H.system_blocks())
    F = hlu_factorize(H.system_blocks(), 1e-13)
    X = hlu_solve(F, sysm.G)
    assert np.linalg.norm(At @ X - sysm.G) / np.linalg.norm(sysm.G) <= 1e-8
    assert np.all(F.solve(np.zeros_like(sysm.G)) == 0.0)
    ones = np.ones(F.n)
    np.testing.assert_allclose(F.solve(At @ ones), ones, atol=1e-7)


@pytest.mark.parametrize("tol", [1e-13, 1e-6, 1e-3])
def test_probe_identity(example_system, rng, tol):
    _, H = example_system
    At = block_to_dense(H.system_blocks())
    F = hlu_factorize(H.system_blocks(), tol)
    norm = np.linalg.norm(At)
    for _ in range(20):
        x = rng.standard_normal(F.n)
        x /= np.linalg.norm(x)
        assert np.linalg.norm(F.apply(x) - At @ x) <= 100 * tol * norm + 1e-14 * norm


def test_triangular_action(example_system):
    _, H = example_system
    F = hlu_factorize(H.system_blocks(), 1e-6)
    diag = sorted(leaf.rows for leaf in iter_leaves(F.root) if leaf.rows == leaf.cols)
    for r0, r1 in diag[:: max(1, len(diag) // 6)]:
        for k in (r0, r1 - 1):
            e = np.zeros(F.n)
            e[k] = 1.0
            assert not np.any(F.apply_lower(e)[:r0])
            assert not np.any(F.apply_upper(e)[r1:])


def test_singular_pivot_is_reported():
    A = np.eye(12)
    A[:4, :4] = 0.0
    with pytest.raises(HLUError, match="singular-pivot"):
        hlu_factorize(dense_tree(A), tol=0.0)


def test_dimension_mismatch(example_system):
    _, H = example_system
    F = hlu_factorize(H.system_blocks(), 1e-3)
    with pytest.raises(ValueError, match="dimension-mismatch"):
        F.solve(np.ones(F.n + 2))
    assert F.storage() > 0 and F.max_rank() >= 0
    assert isinstance(F.stats, dict) and F.seconds > 0


def test_factorisation_and_solve_scaling():
    p = example_power_solution()
    fact, solve = {}, {}
    for N in (512, 1024, 2048):
        space = ElementSpace.uniform(make_uniform_mesh(0, 10, N), 3)
        H = build_hmatrix(p, space, 1.0, 4)
        F = hlu_factorize(H.system_blocks(), 1e-3)
        fact[N] = F.seconds
        g = np.ones(F.n)
        t = []
        for _ in range(5):
            t0 = time.perf_counter()
            F.solve(g)
            t.append(time.perf_counter() - t0)
        solve[N] = min(t)
    assert fact[1024] / fact[512] <= 3.0 and fact[2048] / fact[1024] <= 3.0
    # N log N growth with a factor-of-two slack
    assert solve[2048] / solve[512] <= 2 * (2048 * 11) / (512 * 9)
    assert any(isinstance(l, LowRankBlock) for l in iter_leaves(H.root))
