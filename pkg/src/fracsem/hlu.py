"""Hierarchical LU factorisation with truncated (formatted) block arithmetic.

The factors are stored in place in one block tree: strictly lower blocks
hold L, strictly upper blocks hold U and every dense diagonal leaf holds the
LAPACK-style combined LU of that leaf together with its local row
permutation. Pivoting never crosses a leaf, so the block tree is preserved.
"""

from dataclasses import dataclass, field
import time

import numpy as np
from scipy.linalg import lu_factor, solve_triangular

from .hmatrix import DenseBlock, HierBlock, LowRankBlock, block_apply, block_storage, iter_leaves


class HLUError(ArithmeticError):
    pass


# ---------------------------------------------------------------- low rank


def truncate(U, V, tol):
    """Recompress ``U V^T`` dropping singular values ``<= tol * sigma_1``."""
    m, k = U.shape
    n = V.shape[0]
    if k == 0:
        return U, V
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V)
    W, s, Zt = np.linalg.svd(Ru @ Rv.T)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m, 0)), np.zeros((n, 0))
    r = int(np.count_nonzero(s > tol * s[0]))
    return Qu @ (W[:, :r] * s[:r]), Qv @ Zt[:r].T


def _lowrank_of_dense(D):
    """Exact factorisation of D whose rank is its smaller dimension."""
    m, n = D.shape
    if m <= n:
        return np.eye(m), D.T.copy()
    return D.copy(), np.eye(n)


def add_lowrank(C, U, V, tol):
    """C += U V^T in the format of C."""
    if U.shape[1] == 0:
        return
    if isinstance(C, DenseBlock):
        C.data += U @ V.T
    elif isinstance(C, LowRankBlock):
        C.U, C.V = truncate(np.hstack([C.U, U]), np.hstack([C.V, V]), tol)
    else:
        r0, c0 = C.rows[0], C.cols[0]
        for row in C.children:
            for ch in row:
                rs = slice(ch.rows[0] - r0, ch.rows[1] - r0)
                cs = slice(ch.cols[0] - c0, ch.cols[1] - c0)
                add_lowrank(ch, U[rs], V[cs], tol)


def add_dense(C, D, tol):
    """C += D in the format of C."""
    if isinstance(C, DenseBlock):
        C.data += D
    elif isinstance(C, LowRankBlock):
        add_lowrank(C, *_lowrank_of_dense(D), tol)
    else:
        r0, c0 = C.rows[0], C.cols[0]
        for row in C.children:
            for ch in row:
                add_dense(ch, D[ch.rows[0] - r0:ch.rows[1] - r0, ch.cols[0] - c0:ch.cols[1] - c0], tol)


def _product_lowrank(A, B, tol):
    """Low-rank factors of A B for hierarchical operands."""
    if isinstance(A, LowRankBlock):
        return A.U, block_apply(B, A.V, transpose=True)
    if isinstance(B, LowRankBlock):
        return block_apply(A, B.U), B.V
    if isinstance(A, DenseBlock):
        return _lowrank_of_dense(block_apply(B, A.data.T, transpose=True).T)
    if isinstance(B, DenseBlock):
        return _lowrank_of_dense(block_apply(A, B.data))
    m, n = A.shape[0], B.shape[1]
    r0, c0 = A.rows[0], B.cols[0]
    Us, Vs = [], []
    for i, arow in enumerate(A.children):
        for j in range(len(B.children[0])):
            for k, a in enumerate(arow):
                b = B.children[k][j]
                u, v = _product_lowrank(a, b, tol)
                if u.shape[1] == 0:
                    continue
                U = np.zeros((m, u.shape[1]))
                V = np.zeros((n, v.shape[1]))
                U[a.rows[0] - r0:a.rows[1] - r0] = u
                V[b.cols[0] - c0:b.cols[1] - c0] = v
                Us.append(U)
                Vs.append(V)
    if not Us:
        return np.zeros((m, 0)), np.zeros((n, 0))
    return truncate(np.hstack(Us), np.hstack(Vs), tol)


def mul_add(C, A, B, scale, tol):
    """C += scale * A B with truncation to the format of C."""
    if isinstance(A, LowRankBlock):
        if A.rank:
            add_lowrank(C, scale * A.U, block_apply(B, A.V, transpose=True), tol)
    elif isinstance(B, LowRankBlock):
        if B.rank:
            add_lowrank(C, scale * block_apply(A, B.U), B.V, tol)
    elif isinstance(A, DenseBlock):
        add_dense(C, scale * block_apply(B, A.data.T, transpose=True).T, tol)
    elif isinstance(B, DenseBlock):
        add_dense(C, scale * block_apply(A, B.data), tol)
    elif isinstance(C, HierBlock):
        for i, crow in enumerate(C.children):
            for j, c in enumerate(crow):
                for k, a in enumerate(A.children[i]):
                    mul_add(c, a, B.children[k][j], scale, tol)
    elif isinstance(C, LowRankBlock):
        U, V = _product_lowrank(A, B, tol)
        add_lowrank(C, scale * U, V, tol)
    else:
        C.data += scale * block_apply(A, _to_dense(B))


def _to_dense(blk):
    from .hmatrix import block_to_dense

    return block_to_dense(blk)


# ---------------------------------------------------------------- triangular


def lower_solve_dense(Lb, X):
    """Return ``L^{-1} X`` for a factored diagonal block (unit lower part)."""
    if isinstance(Lb, DenseBlock):
        return solve_triangular(Lb.data, X[Lb.piv], lower=True, unit_diagonal=True, check_finite=False)
    X = np.array(X, dtype=float, copy=True)
    r0 = Lb.rows[0]
    n = len(Lb.children)
    sl = [slice(Lb.children[k][k].rows[0] - r0, Lb.children[k][k].rows[1] - r0) for k in range(n)]
    for k in range(n):
        X[sl[k]] = lower_solve_dense(Lb.children[k][k], X[sl[k]])
        for i in range(k + 1, n):
            X[sl[i]] -= block_apply(Lb.children[i][k], X[sl[k]])
    return X


def upper_solve_dense(Ub, X):
    """Return ``U^{-1} X`` for a factored diagonal block."""
    if isinstance(Ub, DenseBlock):
        return solve_triangular(Ub.data, X, lower=False, check_finite=False)
    X = np.array(X, dtype=float, copy=True)
    r0 = Ub.rows[0]
    n = len(Ub.children)
    sl = [slice(Ub.children[k][k].rows[0] - r0, Ub.children[k][k].rows[1] - r0) for k in range(n)]
    for k in reversed(range(n)):
        X[sl[k]] = upper_solve_dense(Ub.children[k][k], X[sl[k]])
        for i in range(k):
            X[sl[i]] -= block_apply(Ub.children[i][k], X[sl[k]])
    return X


def upper_solve_right_dense(Ub, X):
    """Return ``X U^{-1}`` (X has the block's columns as its columns)."""
    if isinstance(Ub, DenseBlock):
        return solve_triangular(Ub.data, X.T, lower=False, trans="T", check_finite=False).T
    X = np.array(X, dtype=float, copy=True)
    c0 = Ub.cols[0]
    n = len(Ub.children)
    sl = [slice(Ub.children[k][k].cols[0] - c0, Ub.children[k][k].cols[1] - c0) for k in range(n)]
    for k in range(n):
        X[:, sl[k]] = upper_solve_right_dense(Ub.children[k][k], X[:, sl[k]])
        for j in range(k + 1, n):
            X[:, sl[j]] -= block_apply(Ub.children[k][j], X[:, sl[k]].T, transpose=True).T
    return X


def solve_lower(Lb, B, tol):
    """B <- L^{-1} B in place (B shares Lb's row clusters)."""
    if isinstance(B, LowRankBlock):
        if B.rank:
            B.U = lower_solve_dense(Lb, B.U)
    elif isinstance(B, DenseBlock):
        B.data = lower_solve_dense(Lb, B.data)
    else:
        n = len(Lb.children)
        for j in range(len(B.children[0])):
            for k in range(n):
                solve_lower(Lb.children[k][k], B.children[k][j], tol)
                for i in range(k + 1, n):
                    mul_add(B.children[i][j], Lb.children[i][k], B.children[k][j], -1.0, tol)


def solve_upper_right(Ub, B, tol):
    """B <- B U^{-1} in place (B shares Ub's column clusters)."""
    if isinstance(B, LowRankBlock):
        if B.rank:
            B.V = upper_solve_right_dense(Ub, B.V.T).T
    elif isinstance(B, DenseBlock):
        B.data = upper_solve_right_dense(Ub, B.data)
    else:
        n = len(Ub.children)
        for i in range(len(B.children)):
            for k in range(n):
                solve_upper_right(Ub.children[k][k], B.children[i][k], tol)
                for j in range(k + 1, n):
                    mul_add(B.children[i][j], B.children[i][k], Ub.children[k][j], -1.0, tol)


def _lu_inplace(A, tol, pivot_tol):
    if isinstance(A, DenseBlock):
        if A.data.size == 0:
            A.piv = np.zeros(0, dtype=int)
            return
        scale = np.abs(A.data).max()
        lu, piv = lu_factor(A.data, check_finite=False)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(lu)) or d.min() <= pivot_tol * max(scale, np.finfo(float).tiny):
            raise HLUError(f"singular-pivot in diagonal block rows {A.rows[0]}:{A.rows[1]}")
        perm = np.arange(piv.size)
        for i, p in enumerate(piv):
            perm[i], perm[p] = perm[p], perm[i]
        A.data, A.piv = lu, perm
        return
    if not isinstance(A, HierBlock):
        raise HLUError("diagonal block must be dense or hierarchical")
    n = len(A.children)
    for k in range(n):
        _lu_inplace(A.children[k][k], tol, pivot_tol)
        for j in range(k + 1, n):
            solve_lower(A.children[k][k], A.children[k][j], tol)
        for i in range(k + 1, n):
            solve_upper_right(A.children[k][k], A.children[i][k], tol)
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                mul_add(A.children[i][j], A.children[i][k], A.children[k][j], -1.0, tol)


def _apply_upper(blk, x):
    if isinstance(blk, DenseBlock):
        return np.triu(blk.data) @ x
    r0 = blk.rows[0]
    n = len(blk.children)
    sl = [slice(blk.children[k][k].rows[0] - r0, blk.children[k][k].rows[1] - r0) for k in range(n)]
    y = np.zeros_like(x)
    for i in range(n):
        y[sl[i]] += _apply_upper(blk.children[i][i], x[sl[i]])
        for j in range(i + 1, n):
            y[sl[i]] += block_apply(blk.children[i][j], x[sl[j]])
    return y


def _apply_lower(blk, x):
    if isinstance(blk, DenseBlock):
        y = (np.tril(blk.data, -1) + np.eye(blk.data.shape[0])) @ x
        out = np.empty_like(y)
        out[blk.piv] = y
        return out
    r0 = blk.rows[0]
    n = len(blk.children)
    sl = [slice(blk.children[k][k].rows[0] - r0, blk.children[k][k].rows[1] - r0) for k in range(n)]
    y = np.zeros_like(x)
    for i in range(n):
        y[sl[i]] += _apply_lower(blk.children[i][i], x[sl[i]])
        for j in range(i):
            y[sl[i]] += block_apply(blk.children[i][j], x[sl[j]])
    return y


# ---------------------------------------------------------------- solve plan

_INV, _MUL, _LR = 0, 1, 2


def _record_leaves(blk, ops):
    for leaf in iter_leaves(blk):
        (r0, r1), (c0, c1) = leaf.rows, leaf.cols
        if isinstance(leaf, DenseBlock):
            ops.append((_MUL, r0, r1, c0, c1, leaf.data, None))
        elif leaf.rank:
            ops.append((_LR, r0, r1, c0, c1, leaf.U, np.ascontiguousarray(leaf.V.T)))


def _plan_lower(Lb, ops):
    if isinstance(Lb, DenseBlock):
        n = Lb.data.shape[0]
        Linv = solve_triangular(Lb.data, np.eye(n), lower=True, unit_diagonal=True)
        ops.append((_INV, Lb.rows[0], Lb.rows[1], 0, 0, Linv[:, np.argsort(Lb.piv)], None))
        return
    n = len(Lb.children)
    for k in range(n):
        _plan_lower(Lb.children[k][k], ops)
        for i in range(k + 1, n):
            _record_leaves(Lb.children[i][k], ops)


def _plan_upper(Ub, ops):
    if isinstance(Ub, DenseBlock):
        n = Ub.data.shape[0]
        ops.append((_INV, Ub.rows[0], Ub.rows[1], 0, 0, solve_triangular(Ub.data, np.eye(n), lower=False), None))
        return
    n = len(Ub.children)
    for k in reversed(range(n)):
        _plan_upper(Ub.children[k][k], ops)
        for i in range(k):
            _record_leaves(Ub.children[i][k], ops)


def _run_plan(ops, X):
    for kind, r0, r1, c0, c1, A, B in ops:
        if kind == _INV:
            X[r0:r1] = A @ X[r0:r1]
        elif kind == _MUL:
            X[r0:r1] -= A @ X[c0:c1]
        else:
            X[r0:r1] -= A @ (B @ X[c0:c1])
    return X


# ---------------------------------------------------------------- factors


@dataclass(eq=False)
class HLUFactors:
    """In-place H-LU factors of Ã; ``solve`` runs the two triangular sweeps."""

    root: object
    tol: float
    seconds: float = 0.0
    stats: dict = field(default_factory=dict)
    _plan: tuple = field(default=None, repr=False)

    @property
    def n(self):
        return self.root.shape[0]

    def solve(self, G):
        G = np.asarray(G, dtype=float)
        if G.shape[0] != self.n:
            raise ValueError("dimension-mismatch")
        if self._plan is None:
            self._build_plan()
        X = np.array(G, dtype=float, copy=True)
        _run_plan(self._plan[0], X)
        return _run_plan(self._plan[1], X)

    def _build_plan(self):
        """Flatten both triangular sweeps into one list of leaf operations each."""
        lower, upper = [], []
        _plan_lower(self.root, lower)
        _plan_upper(self.root, upper)
        self._plan = (lower, upper)

    def apply(self, x):
        """``L_H (U_H x)``."""
        return _apply_lower(self.root, _apply_upper(self.root, np.asarray(x, dtype=float)))

    def apply_lower(self, x):
        return _apply_lower(self.root, np.asarray(x, dtype=float))

    def apply_upper(self, x):
        return _apply_upper(self.root, np.asarray(x, dtype=float))

    def storage(self):
        return block_storage(self.root)

    def max_rank(self):
        ranks = [leaf.rank for leaf in iter_leaves(self.root) if isinstance(leaf, LowRankBlock)]
        return max(ranks, default=0)


def hlu_factorize(blocks, tol=1e-13, pivot_tol=1e-14):
    """Factorise a block tree (consumed in place) as ``L_H U_H``.

    ``blocks`` is typically ``HMatrix.system_blocks(theta, rho, M)``.
    Raises :class:`HLUError` on a (numerically) singular pivot.
    """
    if tol < 0:
        raise ValueError("tolerance must be non-negative")
    t0 = time.perf_counter()
    _lu_inplace(blocks, tol, pivot_tol)
    f = HLUFactors(blocks, tol)
    f._build_plan()
    f.seconds = time.perf_counter() - t0
    f.stats = {"max_rank": f.max_rank(), "storage": f.storage()}
    return f


def hlu_solve(factors: HLUFactors, G):
    return factors.solve(G)
