"""Toeplitz structure of S_l on uniform and geometric meshes and its FFT matvec.

Every basis function restricted to one element is one of ``P + 1`` shapes:
the modes psi_1..psi_{P-1}, the rising half ``phi_L = (1 + x)/2`` of a hat
(element left of its node) and the falling half ``phi_R = (1 - x)/2``. For a
row element i and a column element i - k the entry of S_l between two shapes
is ``D_{h,alpha}(i) * sigma_k * D_h(i - k)`` with ``D_h = h/2`` and
``D_{h,alpha} = D_h^(-alpha)``. So S_l is a sum of (P + 1)^2 diagonally scaled
lower triangular Toeplitz matrices in the element index, each applied by a
circulant embedding of length ``2N`` (rounded up to a power of two).

Symbols follow the convention

    sigma_k = gamma0 int psi_out'(x) d/dx int (x - y(t))^(1 - alpha) psi_in(t) dt dx

on the reference row element [-1, 1], with the column element of half-length
``r^k`` placed k elements to the left (``r = h_{i-1}/h_i``). Differentiating
the inner integral produces the Galerkin term plus endpoint terms of the
half hats; the endpoint terms cancel when the two halves of a hat are added,
so the reconstruction is exact whichever split is used.
"""

from dataclasses import dataclass, field
from math import gamma as Gamma

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .assembly import power_moments
from .basis import ElementSpace
from .pairs import pair_moments


class UnsupportedMeshError(ValueError):
    pass


def zeta(qhat, k):
    """``(1 - qhat^k) / (1 - qhat)``, equal to ``k`` for ``qhat == 1``."""
    k = np.asarray(k, dtype=float)
    if qhat == 1.0:
        return k
    return (1.0 - qhat**k) / (1.0 - qhat)


def nodal_symbols_closed_form(alpha, qhat, n):
    """Closed forms of the hat-half symbols ``b_k`` (L-L) and ``e_k`` (R-R), k < n.

    ``qhat`` is the size of the element k places to the left relative to the
    row element, per lag. ``f_k = -b_k`` and ``g_k = -e_k``.
    """
    g0 = 1.0 / Gamma(2.0 - alpha)
    c = g0 * 2.0 ** (3.0 - alpha) / 4.0
    k = np.arange(1, n, dtype=float)
    z = lambda j: zeta(qhat, j)  # noqa: E731
    a2, a3 = 2.0 - alpha, 3.0 - alpha
    second = (z(k + 1) ** a3 - z(k) ** a3 + qhat**a3 * z(k - 1) ** a3 - qhat**a3 * z(k) ** a3) / (
        a2 * a3 * qhat ** (2 * k)
    )
    b = np.empty(n)
    e = np.empty(n)
    b[0] = c / (a2 * a3)
    e[0] = -c / a3
    b[1:] = c * ((z(k) ** a2 - qhat**a2 * z(k - 1) ** a2) / (-a2 * qhat**k) + second)
    e[1:] = c * ((z(k + 1) ** a2 - qhat**a2 * z(k) ** a2) / (-a2 * qhat**k) + second)
    return b, e


def _shape_coefficients(P):
    """Reference derivative of each shape as Legendre coefficients (rows)."""
    C = np.zeros((P + 1, P))
    for p in range(1, P):
        C[p - 1, p] = -(2 * p + 1)
    C[P - 1, 0] = 0.5
    C[P, 0] = -0.5
    return C


def _reference_columns(qhat, n):
    """Column elements [y0_k, y1_k] at lags 0..n-1 relative to row [-1, 1]."""
    r = qhat ** np.arange(n, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(r[1:])])
    y1 = np.empty(n)
    y1[0] = 1.0
    y1[1:] = -1.0 - 2.0 * cum[:n - 1]
    y0 = y1 - 2.0 * r
    y0[0] = -1.0
    return y0, y1, r


def _endpoint_moments(beta, y, L):
    """``int_{-1}^{1} L_m(x) (x - y)^beta dx`` for ``y <= -1``."""
    if y >= -1.0:
        return power_moments(np.array([-1.0, 1.0]), beta, L)[0]
    return power_moments(np.array([y, -1.0, 1.0]), beta, L)[1]


def compute_symbols(alpha, P, n, qhat=1.0, closed_form=True):
    """Symbols ``sigma[out, in, k]`` for the P + 1 shapes and lags k < n.

    Shape order: psi_1..psi_{P-1}, phi_L, phi_R. With ``closed_form`` the
    hat-half blocks use the closed forms of :func:`nodal_symbols_closed_form`.
    """
    if P < 2:
        raise ValueError("degree-too-low")
    beta = 1.0 - alpha
    g0 = 1.0 / Gamma(2.0 - alpha)
    C = _shape_coefficients(P)
    y0, y1, r = _reference_columns(qhat, n)

    # Galerkin part from exact element-pair moments
    nodes = np.concatenate([y0[::-1], [1.0]])
    rows = np.full(n, n - 1)
    cols = np.arange(n - 1, -1, -1)
    Z = pair_moments(alpha, P, nodes, rows, cols)  # lag k sits at index k
    sig = g0 * np.einsum("om,kmn,in->oik", C, Z, C) / r**2

    # endpoint terms of the half hats
    L_idx, R_idx = P - 1, P
    for k in range(n):
        Ik0 = _endpoint_moments(beta, y0[k], P)
        sig[:, R_idx, k] += g0 / r[k] * (C @ Ik0)
        if k >= 1:
            Ik1 = _endpoint_moments(beta, y1[k], P)
            sig[:, L_idx, k] -= g0 / r[k] * (C @ Ik1)

    if closed_form:
        b, e = nodal_symbols_closed_form(alpha, qhat, n)
        sig[L_idx, L_idx] = b
        sig[R_idx, R_idx] = e
        sig[R_idx, L_idx] = -b
        sig[L_idx, R_idx] = -e
    return sig


def fft_length(N):
    """Smallest power of two ``>= 2N``."""
    return 1 << int(np.ceil(np.log2(2 * N)))


@dataclass(eq=False)
class ToeplitzOperator:
    """FFT application of S_l on a uniform or geometric mesh with constant P."""

    space: ElementSpace
    alpha: float
    symbols: np.ndarray
    qhat: float
    spectra: np.ndarray = field(repr=False)
    n_fft: int = 0
    n_fft_calls: int = 0

    @property
    def N(self):
        return self.space.mesh.n_elements

    @property
    def P(self):
        return self.space.max_degree

    @property
    def shape(self):
        return (self.space.n_dof, self.space.n_dof)

    @property
    def D_h(self):
        return 0.5 * self.space.mesh.sizes

    @property
    def D_h_alpha(self):
        return self.D_h ** (-self.alpha)

    def _gather(self, x):
        """Global vector -> (P + 1, N) shape-by-element array."""
        N, P, nm = self.N, self.P, self.space.n_modal
        X = np.zeros((P + 1, N))
        X[:P - 1] = x[:nm].reshape(N, P - 1).T
        X[P - 1, :N - 1] = x[nm:]
        X[P, 1:] = x[nm:]
        return X

    def _scatter(self, Y):
        N, P = self.N, self.P
        y = np.empty(self.space.n_dof)
        y[:self.space.n_modal] = Y[:P - 1].T.ravel()
        y[self.space.n_modal:] = Y[P - 1, :N - 1] + Y[P, 1:]
        return y

    def apply(self, x, transpose=False):
        """``S_l x`` or ``S_l^T x``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.space.n_dof,):
            raise ValueError("dimension-mismatch")
        X = self._gather(x)
        n, N = self.n_fft, self.N
        if not transpose:
            F = np.fft.rfft(X * self.D_h, n)
            Y = np.einsum("oik,ik->ok", self.spectra, F)
            Y = np.fft.irfft(Y, n)[:, :N] * self.D_h_alpha
        else:
            F = np.fft.rfft(X * self.D_h_alpha, n)
            Y = np.einsum("oik,ok->ik", self.spectra.conj(), F)
            Y = np.fft.irfft(Y, n)[:, :N] * self.D_h
        self.n_fft_calls += 2 * X.shape[0]
        return self._scatter(Y)

    def apply_system(self, x, theta=1.0, rho=0.0, M=None):
        """``(rho M + theta S_l + (1 - theta) S_l^T) x``."""
        y = theta * self.apply(x) if theta else np.zeros(self.space.n_dof)
        if theta != 1.0:
            y = y + (1.0 - theta) * self.apply(x, transpose=True)
        if rho:
            y = y + rho * (M @ x)
        return y

    def _row_chunk(self, e0, e1):
        """Dense Toeplitz rows [e0, e1) of every (out, in) block, scaled."""
        N = self.N
        T = self.symbols.shape[0]
        pad = np.concatenate([self.symbols[:, :, ::-1], np.zeros((T, T, N - 1))], axis=2)
        # row e holds sigma[e - e'] = pad[N - 1 - e + e'] (zero for e' > e)
        win = sliding_window_view(pad, N, axis=2)[:, :, N - e1:N - e0][:, :, ::-1]
        return win * self.D_h_alpha[e0:e1, None] * self.D_h[None, :]

    def apply_dense(self, x, transpose=False):
        """Direct O(P^2 N^2) summation of the Toeplitz blocks (no FFT).

        This has the cost profile of a dense matvec without storing the
        matrix, which does not fit in memory for the largest sizes.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.space.n_dof,):
            raise ValueError("dimension-mismatch")
        X = self._gather(x)
        N = self.N
        sig = self.symbols
        Y = np.zeros_like(X)
        if not transpose:
            X *= self.D_h
            for k in range(N):
                Y[:, k:] += sig[:, :, k] @ X[:, :N - k]
            Y *= self.D_h_alpha
        else:
            X *= self.D_h_alpha
            for k in range(N):
                Y[:, :N - k] += sig[:, :, k].T @ X[:, k:]
            Y *= self.D_h
        return self._scatter(Y)

    def to_dense(self):
        """Dense S_l assembled from the scaled Toeplitz blocks."""
        n, N = self.space.n_dof, self.N
        T = self.symbols.shape[0]
        W = self._row_chunk(0, N).transpose(0, 2, 1, 3).reshape(T * N, T * N)
        G = np.stack([self._gather(e) for e in np.eye(n)]).reshape(n, T * N)
        return G @ W @ G.T

    def block_dense(self, out_shape, in_shape):
        """Dense N x N block ``diag(D_{h,alpha}) T diag(D_h)`` for one shape pair."""
        return self._row_chunk(0, self.N)[out_shape, in_shape]


def build_toeplitz_operator(problem, space: ElementSpace, closed_form=True):
    """Symbols and cached spectra for ``space``; raises on unsupported meshes."""
    mesh = space.mesh
    if mesh.kind not in ("uniform", "geometric") or mesh.ratio is None:
        raise UnsupportedMeshError("unsupported-mesh: fast matvec needs a uniform or geometric mesh")
    if not space.is_uniform_degree:
        raise UnsupportedMeshError("unsupported-mesh: fast matvec needs a constant degree")
    alpha = problem.alpha if hasattr(problem, "alpha") else float(problem)
    N = mesh.n_elements
    qhat = 1.0 / mesh.ratio
    sym = compute_symbols(alpha, space.max_degree, N, qhat, closed_form)
    n = fft_length(N)
    spectra = np.fft.rfft(sym, n, axis=2)
    spectra.setflags(write=False)
    sym.setflags(write=False)
    return ToeplitzOperator(space, alpha, sym, qhat, spectra, n)


def toeplitz_matvec(symbols, x):
    """Lower triangular Toeplitz (first column ``symbols``) times ``x`` via FFT."""
    symbols = np.asarray(symbols, dtype=float)
    N = symbols.size
    n = fft_length(N)
    return np.fft.irfft(np.fft.rfft(symbols, n) * np.fft.rfft(x, n), n)[:N]
