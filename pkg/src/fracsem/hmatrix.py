"""Hierarchical-matrix approximation of the stiffness factor S_l.

Block layout
------------
One dof-level cluster tree is used. Its root holds every unknown and has two
children: a tree over the modal unknowns (median bisection of the elements)
and a tree over the nodal unknowns (median bisection of the interior nodes,
node j supported on [x_{j-1}, x_{j+1}]). The root block is never admissible,
so the first split reproduces the [B F; E C] superblocks while the global
unknown ordering is kept.

Admissible blocks get truncated Taylor factors of the kernel; all other leaf
blocks hold exact entries.
"""

from dataclasses import dataclass, field
from math import gamma as Gamma

import numpy as np
from scipy.special import binom

from .assembly import StiffnessAssembler
from .basis import ElementSpace, legendre_table
from .pairs import _gl, _n_points, pair_moments


# ---------------------------------------------------------------- clusters


@dataclass(eq=False)
class ClusterTree:
    """Binary tree over a contiguous index range ``[start, stop)``.

    ``support`` is the interval covered by the basis functions of the
    cluster; ``dofs`` is the matching range of global unknowns (filled for
    dof-level trees).
    """

    start: int
    stop: int
    support: tuple
    children: list = field(default_factory=list)
    level: int = 0
    dofs: tuple = None
    group: str = "element"

    @property
    def size(self):
        return self.stop - self.start

    @property
    def is_leaf(self):
        return not self.children

    @property
    def diam(self):
        return self.support[1] - self.support[0]

    @property
    def center(self):
        return 0.5 * (self.support[0] + self.support[1])

    @property
    def radius(self):
        return 0.5 * self.diam

    def leaves(self):
        if self.is_leaf:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]

    def depth(self):
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children)

    def dof_range(self):
        return np.arange(*self.dofs)


def _bisect(start, stop, n_min, support_of, level=0, group="element"):
    node = ClusterTree(start, stop, support_of(start, stop), level=level, group=group)
    if stop - start > n_min:
        mid = start + (stop - start + 1) // 2
        node.children = [
            _bisect(start, mid, n_min, support_of, level + 1, group),
            _bisect(mid, stop, n_min, support_of, level + 1, group),
        ]
    return node


def build_cluster_tree(mesh, n_min=8):
    """Median bisection of the element indices 0..N-1 (first half rounded up)."""
    if n_min < 1:
        raise ValueError("n_min must be positive")
    x = mesh.nodes
    return _bisect(0, mesh.n_elements, n_min, lambda a, b: (float(x[a]), float(x[b])))


def build_dof_tree(space: ElementSpace, n_min=8):
    """Dof-level tree with separate modal and nodal subtrees under one root."""
    x = space.mesh.nodes
    off = space.modal_offset
    modal = _bisect(0, space.mesh.n_elements, n_min, lambda a, b: (float(x[a]), float(x[b])), 1, "modal")
    for c in _walk(modal):
        c.dofs = (int(off[c.start]), int(off[c.stop]))
    if space.n_nodal == 0:
        modal.level = 0
        for c in _walk(modal):
            c.level -= 1
        return modal
    # nodal index j (1-based) stored as j - 1
    nodal = _bisect(
        0, space.n_nodal, n_min, lambda a, b: (float(x[a]), float(x[b + 1])), 1, "nodal"
    )
    for c in _walk(nodal):
        c.dofs = (space.n_modal + c.start, space.n_modal + c.stop)
    root = ClusterTree(0, space.n_dof, (float(x[0]), float(x[-1])), [modal, nodal], 0, (0, space.n_dof), "root")
    return root


def _walk(node):
    yield node
    for c in node.children:
        yield from _walk(c)


def is_admissible(tau, sigma, lam):
    """``max(diam) <= lam * dist`` for intervals given as (lo, hi) pairs."""
    dist = max(sigma[0] - tau[1], tau[0] - sigma[1], 0.0)
    if dist <= 0.0 or lam <= 0:
        return False
    diam = max(tau[1] - tau[0], sigma[1] - sigma[0])
    return diam <= lam * dist


# ---------------------------------------------------------------- Taylor


def taylor_h(nu, t, s0, alpha):
    """``(1/nu!) d^nu/ds^nu (t - s)^(1-alpha)`` at ``s = s0``."""
    beta = 1.0 - alpha
    return (-1.0) ** nu * binom(beta, nu) * (np.asarray(t, dtype=float) - s0) ** (beta - nu)


def taylor_g(nu, s, s0):
    return (np.asarray(s, dtype=float) - s0) ** nu


def taylor_factors(nu, t, s, s0, alpha):
    """Return ``(h_nu(t), g_nu(s))`` of the expansion in ``s`` about ``s0``."""
    return taylor_h(nu, t, s0, alpha), taylor_g(nu, s, s0)


def taylor_kernel(t, s, s0, alpha, R):
    return sum(np.multiply(*taylor_factors(nu, t, s, s0, alpha)) for nu in range(R))


def nodal_taylor_moment(mesh, j, nu, s0):
    """Closed form of ``int phi_j'(s) (s - s0)^nu ds`` for the hat at node j."""
    x = mesh.nodes
    hl, hr = x[j] - x[j - 1], x[j + 1] - x[j]
    p = nu + 1
    left = ((x[j] - s0) ** p - (x[j - 1] - s0) ** p) / (hl * p)
    right = ((x[j + 1] - s0) ** p - (x[j] - s0) ** p) / (hr * p)
    return left - right


def _element_moments(nodes, elems, L, fun_exps, center, polynomial):
    """``int_{I_e} L_m(xi_e) (sign * (x - center))^exp dx`` -> (|elems|, L, R).

    ``fun_exps`` lists the exponents; for ``polynomial`` they are the
    integers 0..R-1 and the rule is exact, otherwise the singular point
    ``center`` lies outside every element.
    """
    lo = nodes[elems]
    hi = nodes[elems + 1]
    h = hi - lo
    exps = np.asarray(fun_exps, dtype=float)
    if polynomial:
        n = int((L + exps.size) // 2 + 2)
    else:
        dist = np.minimum(np.abs(lo - center), np.abs(hi - center))
        n = int(_n_points(2.0 * dist.min() / h[np.argmin(dist)], L + exps.size).max())
        n = int(np.clip(n, 8, 64))
    x, w = _gl(n)
    pts = 0.5 * (lo + hi)[:, None] + 0.5 * h[:, None] * x
    wts = 0.5 * h[:, None] * w
    val, _ = legendre_table(L - 1, x)
    base = np.abs(pts - center)
    pw = base[:, :, None] ** exps
    return np.einsum("mj,ej,ejr->emr", val, wts, pw)


# ---------------------------------------------------------------- blocks


class Block:
    __slots__ = ("rows", "cols")

    @property
    def shape(self):
        return (self.rows[1] - self.rows[0], self.cols[1] - self.cols[0])


class DenseBlock(Block):
    __slots__ = ("data", "piv")

    def __init__(self, rows, cols, data):
        self.rows, self.cols = rows, cols
        self.data = data
        self.piv = None


class LowRankBlock(Block):
    """Block ``U @ V.T``; ``meta`` records the expansion (side, point)."""

    __slots__ = ("U", "V", "meta")

    def __init__(self, rows, cols, U, V, meta=None):
        self.rows, self.cols = rows, cols
        self.U, self.V = U, V
        self.meta = meta or {}

    @property
    def rank(self):
        return self.U.shape[1]


class HierBlock(Block):
    __slots__ = ("children",)

    def __init__(self, rows, cols, children):
        self.rows, self.cols = rows, cols
        self.children = children


def iter_leaves(blk):
    if isinstance(blk, HierBlock):
        for row in blk.children:
            for c in row:
                yield from iter_leaves(c)
    else:
        yield blk


def block_to_dense(blk):
    out = np.zeros(blk.shape)
    r0, c0 = blk.rows[0], blk.cols[0]
    for leaf in iter_leaves(blk):
        rs = slice(leaf.rows[0] - r0, leaf.rows[1] - r0)
        cs = slice(leaf.cols[0] - c0, leaf.cols[1] - c0)
        if isinstance(leaf, DenseBlock):
            out[rs, cs] = leaf.data
        elif leaf.rank:
            out[rs, cs] = leaf.U @ leaf.V.T
    return out


def block_apply(blk, X, transpose=False):
    """``blk @ X`` (or ``blk.T @ X``) for a dense array X with matching rows."""
    X = np.asarray(X)
    vec = X.ndim == 1
    X2 = X[:, None] if vec else X
    nr, nc = blk.shape
    out = np.zeros(((nc if transpose else nr), X2.shape[1]))
    r0, c0 = blk.rows[0], blk.cols[0]
    for leaf in iter_leaves(blk):
        rs = slice(leaf.rows[0] - r0, leaf.rows[1] - r0)
        cs = slice(leaf.cols[0] - c0, leaf.cols[1] - c0)
        if transpose:
            rs, cs = cs, rs
        if isinstance(leaf, DenseBlock):
            D = leaf.data.T if transpose else leaf.data
            out[rs] += D @ X2[cs]
        elif leaf.rank:
            A, B = (leaf.V, leaf.U) if transpose else (leaf.U, leaf.V)
            out[rs] += A @ (B.T @ X2[cs])
    return out[:, 0] if vec else out


def block_storage(blk):
    """Number of stored floating-point values."""
    n = 0
    for leaf in iter_leaves(blk):
        if isinstance(leaf, DenseBlock):
            n += leaf.data.size
        else:
            n += leaf.U.size + leaf.V.size
    return n


# ---------------------------------------------------------------- bounds


def theoretical_entry_bound(kind, R, lam, alpha, dist, s_offset, h_i, h_ip1=None):
    """Entrywise Taylor truncation bound for an admissible leaf.

    ``dist`` is |a' - d'| (gap between the supports), ``s_offset`` the
    distance |d' - s0| from the expansion point to the near end of the
    expanded support; ``h_i``/``h_ip1`` are the element sizes attached to
    the non-expanded unknown (for a nodal unknown the two elements of its
    support).
    """
    if not dist > 0:
        raise ValueError("inadmissible-block: supports touch")
    g0 = 1.0 / Gamma(2.0 - alpha)
    delta = lam / (2.0 + lam)
    c0 = (dist + s_offset) ** (-alpha) * (1 + lam / 2) * (R + 1 + lam / 2)
    base = c0 * g0 * delta**R
    if kind == "B":
        return 8 * h_i * base
    if kind == "C":
        return (h_i + h_ip1) * h_i * base
    if kind == "E":
        return 2 * (h_i + h_ip1) * base
    if kind == "F":
        return 4 * h_i * base
    raise ValueError(f"unknown block kind {kind!r}")


# ---------------------------------------------------------------- H-matrix


class HMatrix:
    """H-matrix approximation H of S_l (rows test, columns trial)."""

    def __init__(self, root, tree, space, alpha, lam, R, n_min):
        self.root = root
        self.tree = tree
        self.space = space
        self.alpha = alpha
        self.lam = lam
        self.R = R
        self.n_min = n_min
        self.leaves = list(iter_leaves(root))

    @property
    def shape(self):
        return self.root.shape

    def matvec(self, x, transpose=False):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.shape[1]:
            raise ValueError("dimension-mismatch")
        return block_apply(self.root, x, transpose)

    def apply_system(self, x, theta=1.0, rho=0.0, M=None):
        """``(rho M + theta H + (1 - theta) H^T) x``."""
        y = theta * self.matvec(x) if theta else np.zeros_like(x, dtype=float)
        if theta != 1.0:
            y = y + (1.0 - theta) * self.matvec(x, transpose=True)
        if rho and M is not None:
            y = y + rho * (M @ x)
        return y

    def to_dense(self):
        return block_to_dense(self.root)

    def storage(self):
        return block_storage(self.root)

    def leaf_records(self):
        recs = []
        for leaf in self.leaves:
            lr = isinstance(leaf, LowRankBlock)
            recs.append(
                {
                    "row_start": leaf.rows[0], "row_stop": leaf.rows[1],
                    "col_start": leaf.cols[0], "col_stop": leaf.cols[1],
                    "kind": "lowrank" if lr else "dense",
                    "rank": leaf.rank if lr else min(leaf.shape),
                    "side": leaf.meta.get("side", "") if lr else "",
                }
            )
        return recs

    def system_blocks(self, theta=1.0, rho=0.0, M=None):
        """Single block tree for ``rho M + theta H + (1 - theta) H^T``.

        The block partition is symmetric, so block (t, s) combines H(t, s)
        with the transpose of H(s, t).
        """
        index = {(l.rows, l.cols): l for l in self.leaves}
        Mc = M.tocsr() if (rho and M is not None) else None
        return _combine(self.root, index, theta, rho, Mc)


def _combine(blk, index, theta, rho, M):
    if isinstance(blk, HierBlock):
        return HierBlock(blk.rows, blk.cols, [[_combine(c, index, theta, rho, M) for c in row] for row in blk.children])
    mirror = index.get((blk.cols, blk.rows)) if theta != 1.0 else None
    if isinstance(blk, DenseBlock):
        D = theta * blk.data if theta != 1.0 else blk.data.copy()
        if mirror is not None:
            D = D + (1.0 - theta) * (block_to_dense(mirror).T)
        if M is not None:
            D = D + rho * M[blk.rows[0]:blk.rows[1], blk.cols[0]:blk.cols[1]].toarray()
        return DenseBlock(blk.rows, blk.cols, D)
    U, V = [theta * blk.U], [blk.V]
    if mirror is not None and mirror.rank:
        U.append((1.0 - theta) * mirror.V)
        V.append(mirror.U)
    U = np.hstack(U)
    V = np.hstack(V)
    keep = np.any(U != 0, axis=0) & np.any(V != 0, axis=0)
    return LowRankBlock(blk.rows, blk.cols, U[:, keep], V[:, keep], dict(blk.meta))


class _NearField:
    """Exact pair moments for every element pair touched by a dense leaf."""

    def __init__(self, asm: StiffnessAssembler, pairs):
        self.asm = asm
        N = asm.space.mesh.n_elements
        pairs = np.unique(pairs, axis=0) if len(pairs) else np.zeros((0, 2), dtype=int)
        self.keys = pairs[:, 0].astype(np.int64) * N + pairs[:, 1]
        self.N = N
        self.Z = pair_moments(asm.alpha, asm.L, asm.space.mesh.nodes, pairs[:, 0], pairs[:, 1]) if len(pairs) else None

    def block(self, rows, cols):
        asm = self.asm
        L = asm.L
        er = asm.elements_of(rows)
        ec = asm.elements_of(cols)
        E, F = np.meshgrid(er, ec, indexing="ij")
        keep = F <= E
        Z = np.zeros((er.size, L, ec.size, L))
        if np.any(keep):
            ii, jj = np.nonzero(keep)
            pos = np.searchsorted(self.keys, E[keep].astype(np.int64) * self.N + F[keep])
            Z[ii, :, jj, :] = self.Z[pos]
        Z = Z.reshape(er.size * L, ec.size * L)
        cr = (er[:, None] * L + np.arange(L)).ravel()
        cc = (ec[:, None] * L + np.arange(L)).ravel()
        Dr = asm.D[rows][:, cr]
        Dc = asm.D[cols][:, cc]
        return asm.gamma0 * np.asarray(Dr @ (Dc @ Z.T).T)


def _expansion_side(tau, sigma):
    """``"s"`` unless the row cluster is strictly smaller (then ``"t"``)."""
    return "t" if tau.radius < sigma.radius else "s"


def lowrank_block(tau, sigma, asm: StiffnessAssembler, R, lam=None):
    """Taylor factors ``(Q, W)`` with ``S_l[tau, sigma] ~ Q W^T``.

    Blocks whose columns lie right of the rows are exactly zero in S_l and
    are returned with rank 0.
    """
    if lam is not None and not is_admissible(tau.support, sigma.support, lam):
        raise ValueError("inadmissible-block")
    rows, cols = tau.dof_range(), sigma.dof_range()
    if sigma.support[0] >= tau.support[1]:
        z = np.zeros((0,))
        return LowRankBlock(tau.dofs, sigma.dofs, z.reshape(rows.size, 0), z.reshape(cols.size, 0), {"side": "zero"})
    if sigma.support[1] > tau.support[0]:
        raise ValueError("inadmissible-block: supports overlap")
    nodes = asm.space.mesh.nodes
    L = asm.L
    alpha = asm.alpha
    beta = 1.0 - alpha
    nu = np.arange(R)
    side = _expansion_side(tau, sigma)
    er = asm.elements_of(rows)
    ec = asm.elements_of(cols)
    cr = (er[:, None] * L + np.arange(L)).ravel()
    cc = (ec[:, None] * L + np.arange(L)).ravel()
    Dr = asm.D[rows][:, cr]
    Dc = asm.D[cols][:, cc]
    if side == "s":
        s0, rad = sigma.center, sigma.radius
        coef = (-1.0) ** nu * binom(beta, nu)
        Mt = _element_moments(nodes, er, L, beta - nu, s0, polynomial=False) * coef
        Ms = _signed_poly_moments(nodes, ec, L, nu, s0)
        Q = asm.gamma0 * (Dr @ Mt.reshape(-1, R))
        W = Dc @ Ms.reshape(-1, R)
        point = s0
    else:
        t0, rad = tau.center, tau.radius
        coef = binom(beta, nu)
        Ms = _element_moments(nodes, ec, L, beta - nu, t0, polynomial=False) * coef
        Mt = _signed_poly_moments(nodes, er, L, nu, t0)
        Q = asm.gamma0 * (Dr @ Mt.reshape(-1, R))
        W = Dc @ Ms.reshape(-1, R)
        point = t0
    scale = rad ** nu if rad > 0 else np.ones(R)
    if side == "s":
        Q, W = Q * scale, W / scale
    else:
        Q, W = Q / scale, W * scale
    return LowRankBlock(tau.dofs, sigma.dofs, np.asarray(Q), np.asarray(W), {"side": side, "point": point})


def _signed_poly_moments(nodes, elems, L, nu, c):
    """``int_{I_e} L_m(xi_e) (x - c)^nu dx`` for integer powers (exact)."""
    lo = nodes[elems]
    hi = nodes[elems + 1]
    h = hi - lo
    n = int((L + len(nu)) // 2 + 2)
    x, w = _gl(n)
    pts = 0.5 * (lo + hi)[:, None] + 0.5 * h[:, None] * x
    wts = 0.5 * h[:, None] * w
    val, _ = legendre_table(L - 1, x)
    pw = (pts - c)[:, :, None] ** np.asarray(nu, dtype=float)
    return np.einsum("mj,ej,ejr->emr", val, wts, pw)


def _partition(tau, sigma, lam, out):
    """Recursive block partition; collects leaves as (tau, sigma, kind)."""
    if is_admissible(tau.support, sigma.support, lam):
        out.append((tau, sigma, "lowrank"))
        return ("lowrank", tau, sigma)
    if tau.is_leaf or sigma.is_leaf:
        out.append((tau, sigma, "dense"))
        return ("dense", tau, sigma)
    return ("hier", tau, sigma, [[_partition(a, b, lam, out) for b in sigma.children] for a in tau.children])


def build_hmatrix(problem, space: ElementSpace, lam=1.0, R=4, n_min=8):
    """Assemble H ~ S_l: exact dense leaves, Taylor low-rank admissible leaves."""
    if R < 1:
        raise ValueError("rank R must be >= 1")
    asm = StiffnessAssembler(problem.alpha, space)
    tree = build_dof_tree(space, n_min)
    leaves = []
    skeleton = _partition(tree, tree, lam, leaves)

    pairs = []
    for tau, sigma, kind in leaves:
        if kind == "dense":
            er = asm.elements_of(tau.dof_range())
            ec = asm.elements_of(sigma.dof_range())
            E, F = np.meshgrid(er, ec, indexing="ij")
            keep = F <= E
            pairs.append(np.stack([E[keep], F[keep]], axis=1))
    near = _NearField(asm, np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int))

    def make(node):
        if node[0] == "hier":
            return HierBlock(node[1].dofs, node[2].dofs, [[make(c) for c in row] for row in node[3]])
        tau, sigma = node[1], node[2]
        if node[0] == "dense":
            return DenseBlock(tau.dofs, sigma.dofs, near.block(tau.dof_range(), sigma.dof_range()))
        return lowrank_block(tau, sigma, asm, R)

    root = make(skeleton)
    return HMatrix(root, tree, space, problem.alpha, lam, R, n_min)


def leaf_entry_bounds(hm: HMatrix, leaf: LowRankBlock):
    """Theorem-style bound for every entry of an admissible lower leaf.

    For expansions in t the roles of rows and columns are mirrored: the
    element sizes come from the column unknowns and the offset from the
    row support.
    """
    space = hm.space
    h = space.mesh.sizes
    rows = np.arange(*leaf.rows)
    cols = np.arange(*leaf.cols)
    first, _ = space.dof_elements()
    tau, sigma = _leaf_supports(hm, leaf)
    dist = tau[0] - sigma[1]
    side = leaf.meta.get("side")
    point = leaf.meta.get("point")
    if side == "s":
        offset = sigma[1] - point
        kind_of = lambda r, c: _kind(space, r, c)
    else:
        offset = point - tau[0]
        kind_of = lambda r, c: _kind(space, r, c, mirrored=True)
    out = np.empty((rows.size, cols.size))
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            k = kind_of(r, c)
            dof = r if side == "s" else c
            e0 = first[dof]
            hi1 = h[e0]
            hi2 = h[e0 + 1] if dof >= space.n_modal else None
            out[a, b] = theoretical_entry_bound(k, hm.R, hm.lam, hm.alpha, dist, offset, hi1, hi2)
    return out


def _kind(space, r, c, mirrored=False):
    rn = r >= space.n_modal
    cn = c >= space.n_modal
    if mirrored:
        rn, cn = cn, rn
    return {(False, False): "B", (True, True): "C", (True, False): "E", (False, True): "F"}[(rn, cn)]


def _leaf_supports(hm, leaf):
    key = (leaf.rows, leaf.cols)
    if not hasattr(hm, "_support_index"):
        idx = {}
        for node in _walk(hm.tree):
            idx[node.dofs] = node.support
        hm._support_index = idx
    return hm._support_index[key[0]], hm._support_index[key[1]]
