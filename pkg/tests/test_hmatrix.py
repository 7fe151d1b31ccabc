import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracsem.assembly import StiffnessAssembler, assemble_mass, assemble_stiffness_dense
from fracsem.basis import ElementSpace
from fracsem.hmatrix import (
    DenseBlock,
    LowRankBlock,
    build_cluster_tree,
    build_dof_tree,
    build_hmatrix,
    is_admissible,
    leaf_entry_bounds,
    lowrank_block,
    taylor_factors,
    taylor_kernel,
    theoretical_entry_bound,
)
from fracsem.mesh import make_geometric_mesh, make_graded_mesh, make_uniform_mesh
from fracsem.problem import FractionalProblem


@pytest.fixture(scope="module")
def graded_case():
    p = FractionalProblem(alpha=1.6, a=0.0, b=10.0)
    space = ElementSpace.uniform(make_graded_mesh(0, 10, 48, 3), 3)
    return p, space, assemble_stiffness_dense(p, space)


def test_cluster_tree_examples():
    assert build_cluster_tree(make_uniform_mesh(0, 4, 4), 1).depth() == 2
    single = build_cluster_tree(make_uniform_mesh(0, 4, 4), 4)
    assert single.is_leaf
    root = build_cluster_tree(make_uniform_mesh(0, 5, 5), 2)
    assert [c.size for c in root.children] == [3, 2]
    with pytest.raises(ValueError):
        build_cluster_tree(make_uniform_mesh(0, 1, 3), 0)


def test_dof_tree_covers_unknowns(small_graded_space):
    root = build_dof_tree(small_graded_space, 4)
    ranges = sorted(leaf.dofs for leaf in root.leaves())
    assert ranges[0][0] == 0 and ranges[-1][1] == small_graded_space.n_dof
    assert all(a[1] == b[0] for a, b in zip(ranges[:-1], ranges[1:]))


def test_admissibility_examples():
    assert is_admissible((0, 1), (2, 3), 1.0)
    assert not is_admissible((0, 2), (3, 4), 1.0)
    assert not is_admissible((0, 1), (1, 2), 100.0)


def test_taylor_zeroth_term_and_expansion_point():
    h0, g0 = taylor_factors(0, 3.0, 1.2, 1.0, 1.6)
    assert h0 == pytest.approx(2.0 ** -0.6) and g0 == 1.0
    for R in (1, 3, 7):
        assert taylor_kernel(3.0, 1.0, 1.0, 1.6, R) == pytest.approx(2.0 ** -0.6, rel=1e-15)


@settings(max_examples=80, deadline=None)
@given(
    alpha=st.floats(1.05, 1.95),
    lam=st.floats(0.1, 2.0),
    rad=st.floats(1e-3, 5.0),
    u=st.floats(-1.0, 1.0),
    extra=st.floats(0.0, 10.0),
    R=st.integers(1, 10),
)
def test_taylor_remainder_bound(alpha, lam, rad, u, extra, R):
    # sigma = [s0 - rad, s0 + rad], tau starts at distance d with 2 rad <= lam d
    s0 = 0.0
    d = 2 * rad / lam
    t = s0 + rad + d + extra
    s = s0 + u * rad
    err = abs((t - s) ** (1 - alpha) - taylor_kernel(t, s, s0, alpha, R))
    delta = lam / (2 + lam)
    bound = (d) ** (1 - alpha) * (1 + lam / 2) * delta**R
    assert err <= bound * (1 + 1e-12) + 1e-15


def test_entry_bound_formula():
    args = dict(alpha=1.6, dist=1.0, s_offset=0.5, h_i=0.1, h_ip1=0.2)
    b = [theoretical_entry_bound("B", R, 1.0, **args) for R in range(1, 40)]
    assert b[-1] / b[-2] == pytest.approx(1 / 3, rel=0.05)
    assert all(x > y for x, y in zip(b[3:], b[4:]))
    kinds = {k: theoretical_entry_bound(k, 4, 1.0, **args) for k in "BCEF"}
    assert kinds["B"] == pytest.approx(2 * kinds["F"])
    assert kinds["E"] == pytest.approx(1.5 * kinds["F"])  # 2 (h_i + h_i+1) against 4 h_i
    assert kinds["C"] == pytest.approx(0.075 * kinds["F"])  # (h_i + h_i+1) h_i against 4 h_i
    with pytest.raises(ValueError, match="inadmissible"):
        theoretical_entry_bound("B", 4, 1.0, 1.6, 0.0, 0.5, 0.1)


def test_lambda_zero_is_exact(graded_case):
    p, space, S = graded_case
    H = build_hmatrix(p, space, lam=0.0, R=3)
    assert all(isinstance(l, DenseBlock) for l in H.leaves)
    np.testing.assert_array_equal(H.to_dense(), S)
    x = np.random.default_rng(0).standard_normal(space.n_dof)
    np.testing.assert_allclose(H.matvec(x), S @ x, rtol=1e-15, atol=1e-15 * np.abs(S @ x).max())


def test_partition_and_admissibility(graded_case):
    p, space, _ = graded_case
    H = build_hmatrix(p, space, lam=1.0, R=4, n_min=4)
    cover = np.zeros(H.shape, dtype=int)
    for leaf in H.leaves:
        cover[leaf.rows[0]:leaf.rows[1], leaf.cols[0]:leaf.cols[1]] += 1
    assert np.all(cover == 1)
    supports = {n.dofs: n.support for n in _nodes(H.tree)}
    lowrank = [l for l in H.leaves if isinstance(l, LowRankBlock)]
    assert lowrank
    for leaf in lowrank:
        assert is_admissible(supports[leaf.rows], supports[leaf.cols], 1.0)


def _nodes(t):
    yield t
    for c in t.children:
        yield from _nodes(c)


def test_high_rank_reconstructs_separated_block(graded_case):
    p, space, S = graded_case
    tree = build_dof_tree(space, 4)
    nodes = list(_nodes(tree))
    asm = StiffnessAssembler(p.alpha, space)
    pairs = [(a, b) for a in nodes for b in nodes
             if a.dofs and b.dofs and b.support[1] < a.support[0] and is_admissible(a.support, b.support, 0.5)]
    assert pairs
    for tau, sigma in pairs[:10]:
        blk = lowrank_block(tau, sigma, asm, 30, lam=0.5)
        exact = S[tau.dofs[0]:tau.dofs[1], sigma.dofs[0]:sigma.dofs[1]]
        assert np.abs(blk.U @ blk.V.T - exact).max() <= 1e-12 * np.abs(S).max()


def test_upper_blocks_are_rank_zero(graded_case):
    p, space, _ = graded_case
    H = build_hmatrix(p, space, lam=1.0, R=4, n_min=4)
    for leaf in H.leaves:
        if isinstance(leaf, LowRankBlock) and leaf.meta["side"] == "zero":
            assert leaf.rank == 0


def test_entry_errors_within_bounds(graded_case):
    p, space, S = graded_case
    for R in (2, 5, 8):
        H = build_hmatrix(p, space, lam=1.0, R=R, n_min=4)
        checked = 0
        for leaf in H.leaves:
            if isinstance(leaf, LowRankBlock) and leaf.rank:
                err = np.abs(S[leaf.rows[0]:leaf.rows[1], leaf.cols[0]:leaf.cols[1]] - leaf.U @ leaf.V.T)
                assert np.all(err <= leaf_entry_bounds(H, leaf))
                checked += err.size
        assert checked > 0


def test_frobenius_error_decays(graded_case):
    p, space, S = graded_case
    errs = [np.linalg.norm(build_hmatrix(p, space, 1.0, R, 4).to_dense() - S) for R in range(1, 8)]
    assert all(a > b for a, b in zip(errs[:-1], errs[1:]))
    smaller = np.linalg.norm(build_hmatrix(p, space, 0.5, 4, 4).to_dense() - S)
    assert smaller < errs[3]


def test_matvec_properties(graded_case, rng):
    p, space, S = graded_case
    H = build_hmatrix(p, space, lam=1.0, R=3, n_min=4)
    Hd = H.to_dense()
    assert np.all(H.matvec(np.zeros(space.n_dof)) == 0)
    x, y = rng.standard_normal((2, space.n_dof))
    assert np.linalg.norm(H.matvec(x) - S @ x) <= np.linalg.norm(Hd - S) * np.linalg.norm(x) * (1 + 1e-12)
    assert H.matvec(x) @ y == pytest.approx(x @ H.matvec(y, transpose=True), rel=1e-12)
    M = assemble_mass(space)
    sysd = 0.4 * M.toarray() + 0.7 * Hd + 0.3 * Hd.T
    np.testing.assert_allclose(H.apply_system(x, 0.7, 0.4, M), sysd @ x, rtol=1e-12, atol=1e-12 * np.abs(sysd @ x).max())
    from fracsem.hmatrix import block_to_dense

    np.testing.assert_allclose(block_to_dense(H.system_blocks(0.7, 0.4, M)), sysd, atol=1e-13 * np.abs(sysd).max())
    with pytest.raises(ValueError, match="dimension-mismatch"):
        H.matvec(np.ones(space.n_dof + 1))


def test_storage_grows_like_n_log_n():
    p = FractionalProblem(alpha=1.6, a=0.0, b=10.0)
    ratios, sizes = [], []
    for N in (64, 128, 256, 512):
        space = ElementSpace.uniform(make_uniform_mesh(0, 10, N), 3)
        H = build_hmatrix(p, space, 1.0, 4)
        sizes.append(H.storage())
        ratios.append(H.storage() / (4 * space.n_dof * np.log2(N)))
    assert all(a < b for a, b in zip(sizes[:-1], sizes[1:]))
    assert max(ratios) <= 8.0


def test_leaf_records_and_geometric_mesh():
    p = FractionalProblem(alpha=1.3, a=0.0, b=1.0)
    space = ElementSpace.uniform(make_geometric_mesh(0, 1, 40, 1.05), 2)
    H = build_hmatrix(p, space, 1.0, 4, n_min=2)
    recs = H.leaf_records()
    assert len(recs) == len(H.leaves)
    assert {r["kind"] for r in recs} == {"dense", "lowrank"}
    with pytest.raises(ValueError):
        build_hmatrix(p, space, 1.0, 0)
