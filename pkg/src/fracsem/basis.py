"""Legendre/modal/nodal basis functions, quadrature rules and the element space."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .mesh import Mesh


def legendre_table(n, x):
    """Values and derivatives of L_0..L_n at the points ``x``.

    Returns two arrays of shape ``(n + 1,) + x.shape``.
    """
    x = np.asarray(x, dtype=float)
    val = np.empty((n + 1,) + x.shape)
    der = np.empty_like(val)
    val[0] = 1.0
    der[0] = 0.0
    if n >= 1:
        val[1] = x
        der[1] = 1.0
    for p in range(1, n):
        val[p + 1] = ((2 * p + 1) * x * val[p] - p * val[p - 1]) / (p + 1)
        der[p + 1] = der[p - 1] + (2 * p + 1) * val[p]
    return val, der


def legendre_eval(p, x):
    """Return ``(L_p(x), L_p'(x))`` using the three-term recurrence."""
    val, der = legendre_table(p, x)
    return val[p], der[p]


def modal_eval(p, xi):
    """Return ``(psi_p(xi), psi_p'(xi))`` with ``psi_p = L_{p-1} - L_{p+1}``.

    The derivative uses the identity ``psi_p' = -(2p + 1) L_p``.
    """
    if p < 1:
        raise ValueError("modal index must be >= 1")
    val, _ = legendre_table(p + 1, xi)
    return val[p - 1] - val[p + 1], -(2 * p + 1) * val[p]


def nodal_eval(j, x, mesh):
    """Piecewise-linear hat function attached to interior node ``j``."""
    if not 1 <= j <= mesh.n_elements - 1:
        raise IndexError(f"nodal index {j} outside 1..{mesh.n_elements - 1}")
    x = np.asarray(x, dtype=float)
    xl, xc, xr = mesh.nodes[j - 1], mesh.nodes[j], mesh.nodes[j + 1]
    up = (x - xl) / (xc - xl)
    down = (xr - x) / (xr - xc)
    out = np.where((x >= xl) & (x <= xc), up, 0.0)
    out = np.where((x > xc) & (x <= xr), down, out)
    return out


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    kind: str
    exponent: float = 0.0

    def integrate(self, f):
        return np.dot(self.weights, f(self.points))

    def mapped(self, lo, hi):
        """Nodes and weights moved to ``[lo, hi]`` (weight factor included)."""
        half = 0.5 * (hi - lo)
        pts = lo + half * (self.points + 1.0)
        return pts, self.weights * half ** (1.0 + self.exponent)


def gauss_rule(kind, n, exponent=0.0):
    """Gauss rule on [-1, 1].

    ``kind`` is ``"gauss-legendre"`` or ``"gauss-jacobi"``; the latter has
    weight ``(1 + x)**exponent``.
    """
    if n < 1:
        raise ValueError("number of points must be positive")
    if kind == "gauss-legendre":
        x, w = np.polynomial.legendre.leggauss(n)
        return QuadratureRule(x, w, kind)
    if kind == "gauss-jacobi":
        if exponent <= -1:
            raise ValueError("Jacobi exponent must exceed -1")
        x, w = roots_jacobi(n, 0.0, exponent)
        return QuadratureRule(np.asarray(x), np.asarray(w), kind, float(exponent))
    raise ValueError(f"unsupported quadrature kind: {kind!r}")


@dataclass(eq=False)
class ElementSpace:
    """Spectral element space on a mesh with per-element degrees.

    Global ordering: modal unknowns element by element, then the N - 1
    nodal unknowns. ``n_modal`` is the count of modal (interior) unknowns,
    ``n_dof`` the full length of the unknown vector.
    """

    mesh: Mesh
    degrees: np.ndarray
    modal_offset: np.ndarray = field(init=False)
    n_modal: int = field(init=False)
    n_nodal: int = field(init=False)
    n_dof: int = field(init=False)

    def __post_init__(self):
        deg = np.asarray(self.degrees, dtype=int)
        if deg.ndim == 0:
            deg = np.full(self.mesh.n_elements, int(deg))
        if deg.shape != (self.mesh.n_elements,):
            raise ValueError("need one degree per element")
        if np.any(deg < 2):
            raise ValueError("degree-too-low: every element needs P_i >= 2")
        self.degrees = deg
        counts = deg - 1
        self.modal_offset = np.concatenate([[0], np.cumsum(counts)])
        self.n_modal = int(self.modal_offset[-1])
        self.n_nodal = self.mesh.n_elements - 1
        self.n_dof = self.n_modal + self.n_nodal

    @classmethod
    def uniform(cls, mesh, degree):
        return cls(mesh, np.full(mesh.n_elements, int(degree)))

    @property
    def max_degree(self):
        return int(self.degrees.max())

    @property
    def is_uniform_degree(self):
        return bool(np.all(self.degrees == self.degrees[0]))

    def modal_index(self, element, p):
        """Global index of modal unknown ``p`` (1-based) on ``element`` (0-based)."""
        if not 1 <= p <= self.degrees[element] - 1:
            raise IndexError("modal index out of range")
        return int(self.modal_offset[element] + p - 1)

    def nodal_index(self, j):
        """Global index of the hat function at interior node ``j`` (1-based)."""
        if not 1 <= j <= self.n_nodal:
            raise IndexError("nodal index out of range")
        return self.n_modal + j - 1

    def describe(self, k):
        """Inverse of the enumeration: ``("modal", e, p)`` or ``("nodal", j)``."""
        if k < self.n_modal:
            e = int(np.searchsorted(self.modal_offset, k, side="right") - 1)
            return ("modal", e, int(k - self.modal_offset[e] + 1))
        if k < self.n_dof:
            return ("nodal", int(k - self.n_modal + 1))
        raise IndexError(k)

    def dof_elements(self):
        """For every unknown, the first and last element of its support."""
        first = np.empty(self.n_dof, dtype=int)
        last = np.empty(self.n_dof, dtype=int)
        for e in range(self.mesh.n_elements):
            sl = slice(self.modal_offset[e], self.modal_offset[e + 1])
            first[sl] = e
            last[sl] = e
        j = np.arange(1, self.n_nodal + 1)
        first[self.n_modal:] = j - 1
        last[self.n_modal:] = j
        return first, last

    def derivative_map(self):
        """Sparse map from unknowns to element-local Legendre derivative coefficients.

        Row k, column ``e * L + m`` holds c such that the derivative of basis
        function k restricted to element e equals ``sum_m c L_m(xi_e)``,
        where ``L = max_degree``.
        """
        L = self.max_degree
        h = self.mesh.sizes
        rows, cols, vals = [], [], []
        for e in range(self.mesh.n_elements):
            for p in range(1, self.degrees[e]):
                rows.append(self.modal_offset[e] + p - 1)
                cols.append(e * L + p)
                vals.append(-(2 * p + 1) * 2.0 / h[e])
        for j in range(1, self.n_nodal + 1):
            k = self.n_modal + j - 1
            rows += [k, k]
            cols += [(j - 1) * L, j * L]
            vals += [1.0 / h[j - 1], -1.0 / h[j]]
        shape = (self.n_dof, self.mesh.n_elements * L)
        return sp.csr_matrix((vals, (rows, cols)), shape=shape)

    def value_map(self):
        """Sparse map from unknowns to element-local Legendre value coefficients.

        Uses ``L + 1`` Legendre modes per element (``psi_p`` reaches degree
        ``p + 1``).
        """
        L1 = self.max_degree + 1
        rows, cols, vals = [], [], []
        for e in range(self.mesh.n_elements):
            for p in range(1, self.degrees[e]):
                k = self.modal_offset[e] + p - 1
                rows += [k, k]
                cols += [e * L1 + p - 1, e * L1 + p + 1]
                vals += [1.0, -1.0]
        for j in range(1, self.n_nodal + 1):
            k = self.n_modal + j - 1
            # rising half (1 + xi) / 2 on element j - 1, falling (1 - xi) / 2 on j
            rows += [k, k, k, k]
            cols += [(j - 1) * L1, (j - 1) * L1 + 1, j * L1, j * L1 + 1]
            vals += [0.5, 0.5, 0.5, -0.5]
        shape = (self.n_dof, self.mesh.n_elements * L1)
        return sp.csr_matrix((vals, (rows, cols)), shape=shape)

    def evaluate(self, coef, x):
        """Evaluate ``sum_k coef_k b_k(x)`` at arbitrary points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.mesh.nodes
        e = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, self.mesh.n_elements - 1)
        xi = (2 * x - nodes[e] - nodes[e + 1]) / (nodes[e + 1] - nodes[e])
        L1 = self.max_degree + 1
        leg_coef = (self.value_map().T @ np.asarray(coef, dtype=float)).reshape(-1, L1)
        val, _ = legendre_table(L1 - 1, xi)
        return np.einsum("nk,kn->n", leg_coef[e], val)
