"""Reference assembly of the mass matrix, the stiffness factor S_l and the load vector.

Orientation: rows are test functions v, columns trial functions w and

    S_l[v, w] = gamma0 * int int_{s < t} v'(t) (t - s)^(1 - alpha) w'(s) ds dt.

Basis derivatives are element-local Legendre series, so S_l factors as
``gamma0 * D Z D^T`` with ``D`` the sparse derivative map of the space and
``Z`` the block lower triangular array of element-pair moments.
"""

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .basis import ElementSpace, legendre_table
from .pairs import _gj, _gl, _n_points, pair_moments
from .problem import FractionalProblem, PowerForcing


class StiffnessAssembler:
    """Exact entries of S_l for arbitrary row/column index sets."""

    def __init__(self, alpha, space: ElementSpace):
        self.alpha = float(alpha)
        self.space = space
        self.L = space.max_degree
        self.D = space.derivative_map().tocsr()
        from math import gamma as Gamma

        self.gamma0 = 1.0 / Gamma(2.0 - self.alpha)
        self._first, self._last = space.dof_elements()

    def elements_of(self, dofs):
        dofs = np.asarray(dofs, dtype=int)
        if dofs.size == 0:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([self._first[dofs], self._last[dofs]]))

    def moment_matrix(self, row_elems, col_elems):
        """Dense (|row_elems| L) x (|col_elems| L) array of pair moments."""
        L = self.L
        er, ec = np.meshgrid(row_elems, col_elems, indexing="ij")
        keep = ec <= er
        Z = np.zeros((len(row_elems), L, len(col_elems), L))
        if np.any(keep):
            ii, jj = np.nonzero(keep)
            vals = pair_moments(self.alpha, L, self.space.mesh.nodes, er[keep], ec[keep])
            Z[ii, :, jj, :] = vals
        return Z.reshape(len(row_elems) * L, len(col_elems) * L)

    def block(self, rows, cols):
        """Dense block S_l[rows, cols]."""
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        L = self.L
        er = self.elements_of(rows)
        ec = self.elements_of(cols)
        if er.size == 0 or ec.size == 0:
            return np.zeros((rows.size, cols.size))
        Z = self.moment_matrix(er, ec)
        cr = (er[:, None] * L + np.arange(L)).ravel()
        cc = (ec[:, None] * L + np.arange(L)).ravel()
        Dr = self.D[rows][:, cr]
        Dc = self.D[cols][:, cc]
        return self.gamma0 * np.asarray(Dr @ (Dc @ Z.T).T)

    def full(self):
        n = self.space.n_dof
        return self.block(np.arange(n), np.arange(n))


def stiffness_entry(test, trial, problem: FractionalProblem, space: ElementSpace):
    """Single entry S_l[test, trial] (global dof indices)."""
    asm = StiffnessAssembler(problem.alpha, space)
    return float(asm.block([test], [trial])[0, 0])


def assemble_stiffness_dense(problem: FractionalProblem, space: ElementSpace):
    return StiffnessAssembler(problem.alpha, space).full()


def assemble_mass(space: ElementSpace):
    """Sparse symmetric mass matrix in the global ordering."""
    L1 = space.max_degree + 1
    h = space.mesh.sizes
    m = np.arange(L1)
    diag = (0.5 * h[:, None] * (2.0 / (2 * m + 1))[None, :]).ravel()
    V = space.value_map()
    M = (V @ sp.diags(diag) @ V.T).tocsr()
    M.eliminate_zeros()
    return M


def power_moments(nodes, exponent, n_modes, side="left"):
    """``int_{I_e} (x - a)^exponent L_m(xi_e(x)) dx`` for all elements.

    ``side="right"`` uses ``(b - x)^exponent`` instead. Near the singular
    end the integral is the difference of two Gauss-Jacobi integrals that
    start at the endpoint (exact, since L_m(xi_e) is a polynomial in x).
    """
    nodes = np.asarray(nodes, dtype=float)
    if side == "right":
        mirrored = nodes[-1] - nodes[::-1]
        out = power_moments(mirrored, exponent, n_modes, "left")[::-1]
        return out * (-1.0) ** np.arange(n_modes)
    if exponent <= -1:
        raise ValueError("power exponent must exceed -1")
    y = nodes - nodes[0]
    lo, hi = y[:-1], y[1:]
    h = hi - lo
    out = np.zeros((lo.size, n_modes))
    near = lo < h
    deg = n_modes - 1

    if np.any(near):
        z, w = _gj(deg // 2 + 2, 0.0, float(exponent))
        for end in ("hi", "lo"):
            top = hi[near] if end == "hi" else lo[near]
            pts = 0.5 * top[:, None] * (1.0 + z)
            wts = (0.5 * top[:, None]) ** (exponent + 1.0) * w
            xi = (2 * pts - lo[near, None] - hi[near, None]) / h[near, None]
            val, _ = legendre_table(deg, xi)
            part = np.einsum("mej,ej->em", val, wts)
            out[near] += part if end == "hi" else -part

    far = ~near
    if np.any(far):
        n = _n_points(2.0 * lo[far] / h[far], n_modes + abs(exponent))
        idx_far = np.nonzero(far)[0]
        for nq in np.unique(n):
            sel = idx_far[n == nq]
            x, w = _gl(int(nq))
            pts = lo[sel, None] + 0.5 * h[sel, None] * (1.0 + x)
            wts = 0.5 * h[sel, None] * w * pts**exponent
            val, _ = legendre_table(deg, np.broadcast_to(x, pts.shape))
            out[sel] = np.einsum("mej,ej->em", val, wts)
    return out


def forcing_moments(f, nodes, n_modes, n_quad=None):
    """Element Legendre moments ``int_{I_e} f L_m(xi_e) dx``, shape (N, n_modes)."""
    nodes = np.asarray(nodes, dtype=float)
    if isinstance(f, PowerForcing):
        out = np.zeros((nodes.size - 1, n_modes))
        for c, e, side in f.terms:
            out += c * power_moments(nodes, e, n_modes, side)
        return out
    n = n_quad or n_modes + 4
    x, w = _gl(n)
    lo, hi = nodes[:-1], nodes[1:]
    pts = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * x
    wts = 0.5 * (hi - lo)[:, None] * w
    vals = np.asarray(f(pts), dtype=float) * wts
    leg, _ = legendre_table(n_modes - 1, x)
    return vals @ leg.T


def assemble_rhs(problem: FractionalProblem, space: ElementSpace, n_quad=None):
    """Load vector G including the lifting of nonzero boundary values."""
    nodes = space.mesh.nodes
    L = space.max_degree
    V = space.value_map()
    G = V @ forcing_moments(problem.f, nodes, L + 1, n_quad).ravel()
    if problem.c1 or problem.c2:
        D = space.derivative_map()
        flux = forcing_moments(problem.lifting_flux(), nodes, L)
        G = G - D @ flux.ravel()
        if problem.rho:
            kappa = (problem.c2 - problem.c1) / (problem.b - problem.a)
            uL = PowerForcing(((problem.c1, 0.0, "left"), (kappa, 1.0, "left")), problem.a, problem.b)
            G = G - problem.rho * (V @ forcing_moments(uL, nodes, L + 1).ravel())
    return np.asarray(G, dtype=float)


@dataclass(eq=False)
class DenseSystem:
    """Fully assembled reference system ``A X = G``."""

    problem: FractionalProblem
    space: ElementSpace
    M: sp.csr_matrix
    S_l: np.ndarray
    G: np.ndarray

    @property
    def S(self):
        th = self.problem.theta
        if th == 1.0:
            return self.S_l
        return th * self.S_l + (1.0 - th) * self.S_l.T

    @property
    def A(self):
        A = np.array(self.S, copy=True)
        if self.problem.rho:
            A += self.problem.rho * self.M.toarray()
        return A


def assemble_system(problem: FractionalProblem, space: ElementSpace):
    if problem.a != space.mesh.a or problem.b != space.mesh.b:
        raise ValueError("mesh does not cover the problem domain")
    return DenseSystem(
        problem=problem,
        space=space,
        M=assemble_mass(space),
        S_l=assemble_stiffness_dense(problem, space),
        G=assemble_rhs(problem, space),
    )


def sample_points(mesh, m):
    """``m + 1`` equispaced points per element (endpoints shared)."""
    t = np.linspace(0.0, 1.0, m + 1)[:-1]
    x = mesh.nodes[:-1, None] + mesh.sizes[:, None] * t
    return np.concatenate([x.ravel(), [mesh.b]])


def reconstruct_and_error(X, problem: FractionalProblem, space: ElementSpace, m=50):
    """Return ``(u_h, linf_error)``; ``u_h`` is a callable on (a, b).

    The error is the maximum over ``m`` equal sub-intervals per element.
    """
    X = np.asarray(X, dtype=float)

    def u_h(x):
        return problem.lifting(x) + space.evaluate(X, x)

    if problem.u_exact is None:
        raise ValueError("no-exact-solution: problem has no exact solution")
    x = sample_points(space.mesh, m)
    err = float(np.max(np.abs(u_h(x) - problem.u_exact(x))))
    return u_h, err


def dump_matrix(path, A):
    """Write a matrix in Matrix Market text format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A) if sp.issparse(A) else np.asarray(A))
