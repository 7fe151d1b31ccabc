"""Element-pair moments of the weakly singular kernel (t - s)^(1 - alpha).

For a "row" interval I_t and a "column" interval I_s the moment matrix is

    Z[m, n] = int_{I_t} L_m(xi_t(t)) int_{I_s, s < t} (t - s)^(1 - alpha) L_n(xi_s(s)) ds dt

with xi the affine maps onto [-1, 1]. Every stiffness entry is a short linear
combination of these moments. Three geometric cases are handled:

* identical intervals: exact reference values from Gauss-Jacobi rules after
  the substitution s = -1 + (t + 1) tau,
* touching intervals (I_s directly left of I_t): Duffy splitting of the
  corner square plus separated remainders,
* separated intervals: tensor Gauss-Legendre on a geometric subdivision that
  keeps every sub-rectangle at least its own size away from the diagonal,
  with the Legendre factors integrated by parts wherever a sub-rectangle
  spans a whole element (keeps tiny far-away elements accurate).
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .basis import legendre_table

# cap on (sub-rectangles * points) handled per vectorised chunk
_CHUNK = 4_000_000


@lru_cache(maxsize=None)
def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _gj(n, a, b):
    x, w = roots_jacobi(n, a, b)
    x, w = np.asarray(x), np.asarray(w)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def self_moments_reference(alpha, L):
    """Z for I_t = I_s = [-1, 1]; exact up to rounding."""
    beta = 1.0 - alpha
    n_out = L + 1
    n_in = L // 2 + 2
    xo, wo = _gj(n_out, 0.0, 2.0 - alpha)  # weight (1 + xi)^(2 - alpha)
    ui, wi = _gj(n_in, beta, 0.0)  # weight (1 - u)^(1 - alpha), tau = (1 + u)/2
    tau = 0.5 * (1.0 + ui)
    wt = wi * 0.5 ** (1.0 + beta)
    eta = -1.0 + (xo[:, None] + 1.0) * tau[None, :]
    Lo, _ = legendre_table(L - 1, xo)
    Li, _ = legendre_table(L - 1, eta)
    inner = np.einsum("nij,j->ni", Li, wt)
    return np.einsum("mi,ni,i->mn", Lo, inner, wo)


def _leg(L, xi):
    val, _ = legendre_table(L - 1, xi)
    return np.moveaxis(val, 0, -2)


def _n_points(dist_ratio, L):
    """Gauss points per direction for a rectangle whose distance to the
    singular diagonal is ``dist_ratio`` half-lengths."""
    d = 1.0 + dist_ratio
    rho = d + np.sqrt(d * d - 1.0)
    n = np.ceil(19.0 / np.log(rho)) + np.ceil((L - 1) / 2.0) + 1
    return np.clip(n, 4, 48).astype(int)


def _rect_moments(alpha, L, parent, rect):
    """Tensor Gauss moments over sub-rectangles of separated pairs.

    ``parent``: (R, 4) element intervals (t0, t1, s0, s1) used for the
    Legendre maps; ``rect``: (R, 4) integration sub-rectangles. Returns
    (R, L, L).

    In every direction where the sub-rectangle covers the whole element the
    Legendre factor is integrated by parts (Rodrigues' formula, boundary
    terms vanish):

        int L_m(x) F(x) dx = 1 / (2^m m!) int (1 - x^2)^m F^(m)(x) dx,

    so the weight has one sign and the kernel derivative carries the decay
    (h / dist)^m. Plain Gauss products of Legendre polynomials lose all
    relative accuracy once an element is tiny compared to its distance.
    """
    beta = 1.0 - alpha
    out = np.zeros((len(rect), L, L))
    if len(rect) == 0:
        return out
    lt = rect[:, 1] - rect[:, 0]
    ls = rect[:, 3] - rect[:, 2]
    gap = rect[:, 0] - rect[:, 3]
    whole_t = (rect[:, 0] == parent[:, 0]) & (rect[:, 1] == parent[:, 1])
    whole_s = (rect[:, 2] == parent[:, 2]) & (rect[:, 3] == parent[:, 3])
    n = _n_points(2.0 * gap / np.maximum(lt, ls), 2 * L)
    ff = np.ones(2 * L - 1)  # falling factorials beta (beta - 1) ... (beta - j + 1)
    for j in range(1, 2 * L - 1):
        ff[j] = ff[j - 1] * (beta - j + 1)
    norm = 1.0 / (2.0 ** np.arange(L) * np.cumprod(np.concatenate([[1.0], np.arange(1, L)])))
    key = n * 4 + 2 * whole_t + whole_s
    for kk in np.unique(key):
        idx = np.nonzero(key == kk)[0]
        nq, bt, bs = int(kk // 4), bool(kk & 2), bool(kk & 1)
        x, w = _gl(nq)
        bump = (1.0 - x * x)[None, :] ** np.arange(L)[:, None] * w * norm[:, None]
        step = max(1, _CHUNK // (nq * nq * L))
        for c0 in range(0, idx.size, step):
            sel = idx[c0:c0 + step]
            r = rect[sel]
            p = parent[sel]
            at = 0.5 * (r[:, 1] - r[:, 0])
            as_ = 0.5 * (r[:, 3] - r[:, 2])
            t = 0.5 * (r[:, 0] + r[:, 1])[:, None] + at[:, None] * x
            s = 0.5 * (r[:, 2] + r[:, 3])[:, None] + as_[:, None] * x
            diff = t[:, :, None] - s[:, None, :]
            if bt:
                At = bump[None] * at[:, None, None] ** (np.arange(L)[None, :, None] + 1)
            else:
                xt = (2 * t - p[:, 0:1] - p[:, 1:2]) / (p[:, 1:2] - p[:, 0:1])
                At = _leg(L, xt) * (at[:, None] * w)[:, None, :]
            if bs:
                sign = (-1.0) ** np.arange(L)
                As = bump[None] * (sign[:, None] * as_[:, None, None] ** (np.arange(L)[None, :, None] + 1))
            else:
                xs = (2 * s - p[:, 2:3] - p[:, 3:4]) / (p[:, 3:4] - p[:, 2:3])
                As = _leg(L, xs) * (as_[:, None] * w)[:, None, :]
            K = diff ** beta
            if not (bt or bs):
                out[sel] = np.einsum("rmi,rij,rnj->rmn", At, K, As, optimize=True)
                continue
            inv = 1.0 / diff
            order = lambda m, q: (m if bt else 0) + (q if bs else 0)
            top = order(L - 1, L - 1)
            Kp = [K]
            for _ in range(top):
                Kp.append(Kp[-1] * inv)
            for m in range(L):
                for q in range(L):
                    o = order(m, q)
                    out[sel, m, q] = ff[o] * np.einsum("ri,rij,rj->r", At[:, m], Kp[o], As[:, q])
    return out


def _split_t(t0, t1, anchor, c=1.0):
    """Pieces of [t0, t1] with length <= c * distance to ``anchor`` (< t0)."""
    cuts = [t0]
    p = t0
    while p < t1:
        p = min(t1, p + c * (p - anchor))
        cuts.append(p)
    return cuts


def _split_s(s0, s1, anchor, c=1.0):
    """Pieces of [s0, s1] with length <= c * distance to ``anchor`` (> s1)."""
    cuts = [s1]
    q = s1
    while q > s0:
        q = max(s0, q - c * (anchor - q))
        cuts.append(q)
    return cuts[::-1]


def separated_moments(alpha, L, parent, region=None):
    """Moments for pairs with ``region`` strictly right of the column part.

    ``parent`` holds the element intervals (t0, t1, s0, s1) defining the
    Legendre maps; ``region`` (defaults to ``parent``) is the integration
    rectangle, which must satisfy t0 > s1.
    """
    parent = np.atleast_2d(np.asarray(parent, dtype=float))
    region = parent if region is None else np.atleast_2d(np.asarray(region, dtype=float))
    gap = region[:, 0] - region[:, 3]
    if np.any(gap <= 0):
        raise ValueError("separated_moments needs a positive gap")
    lt = region[:, 1] - region[:, 0]
    ls = region[:, 3] - region[:, 2]
    simple = (lt <= gap) & (ls <= gap)
    out = np.zeros((len(parent), L, L))
    rects = [region[simple]]
    parents = [parent[simple]]
    owner = [np.nonzero(simple)[0]]
    for k in np.nonzero(~simple)[0]:
        t0, t1, s0, s1 = region[k]
        tc = _split_t(t0, t1, s1)
        sc = _split_s(s0, s1, t0)
        sub = np.array([(a, b, c, d) for a, b in zip(tc[:-1], tc[1:]) for c, d in zip(sc[:-1], sc[1:])])
        rects.append(sub)
        parents.append(np.repeat(parent[k][None, :], len(sub), axis=0))
        owner.append(np.full(len(sub), k))
    rects = np.concatenate(rects)
    parents = np.concatenate(parents)
    owner = np.concatenate(owner)
    vals = _rect_moments(alpha, L, parents, rects)
    np.add.at(out, owner, vals)
    return out


def touching_moments(alpha, L, parent):
    """Moments for pairs sharing the node t0 == s1."""
    parent = np.atleast_2d(np.asarray(parent, dtype=float))
    beta = 1.0 - alpha
    x0 = parent[:, 0]
    ht = parent[:, 1] - parent[:, 0]
    hs = parent[:, 3] - parent[:, 2]
    m = np.minimum(ht, hs)

    # Duffy square [0, m]^2 in u = t - x0, v = x0 - s
    nr = L + 1
    nt = 12 + L // 2
    rj, wj = _gj(nr, 0.0, 2.0 - alpha)
    tg, wg = _gl(nt)
    tau = 0.5 * (tg + 1.0)
    wtau = 0.5 * wg * (1.0 + tau) ** beta
    rho = 0.5 * m[:, None] * (rj + 1.0)  # (P, nr)
    wrho = wj * (0.5 * m[:, None]) ** (3.0 - alpha)
    out = np.zeros((len(parent), L, L))
    for swap in (False, True):
        u = rho[:, :, None] * (tau[None, None, :] if swap else 1.0)
        v = rho[:, :, None] * (1.0 if swap else tau[None, None, :])
        u = np.broadcast_to(u, (len(parent), nr, nt))
        v = np.broadcast_to(v, (len(parent), nr, nt))
        xt = -1.0 + 2.0 * u / ht[:, None, None]
        xs = 1.0 - 2.0 * v / hs[:, None, None]
        Lt, _ = legendre_table(L - 1, xt)
        Ls, _ = legendre_table(L - 1, xs)
        out += np.einsum("kpij,qpij,pi,j->pkq", Lt, Ls, wrho, wtau)

    # remainders away from the corner
    rest_t = ht > m * (1 + 1e-14)
    if np.any(rest_t):
        reg = np.stack([x0 + m, parent[:, 1], x0 - m, x0], axis=1)[rest_t]
        out[rest_t] += separated_moments(alpha, L, parent[rest_t], reg)
    rest_s = hs > m * (1 + 1e-14)
    if np.any(rest_s):
        reg = np.stack([x0, x0 + m, parent[:, 2], x0 - m], axis=1)[rest_s]
        out[rest_s] += separated_moments(alpha, L, parent[rest_s], reg)
    return out


def pair_moments(alpha, L, nodes, rows, cols):
    """Moments for element pairs (rows[k], cols[k]) with cols[k] <= rows[k].

    Pairs with cols > rows have no s < t overlap and are returned as zeros.
    """
    nodes = np.asarray(nodes, dtype=float)
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    out = np.zeros((rows.size, L, L))
    parent = np.stack([nodes[rows], nodes[rows + 1], nodes[cols], nodes[cols + 1]], axis=1)

    same = rows == cols
    if np.any(same):
        h = nodes[rows[same] + 1] - nodes[rows[same]]
        ref = self_moments_reference(float(alpha), int(L))
        out[same] = (0.5 * h)[:, None, None] ** (3.0 - alpha) * ref

    touch = rows == cols + 1
    if np.any(touch):
        out[touch] = _touching_cached(alpha, L, parent[touch])

    far = rows > cols + 1
    if np.any(far):
        out[far] = separated_moments(alpha, L, parent[far])
    return out


def _touching_cached(alpha, L, parent):
    """Touching moments, reusing one evaluation per distinct size ratio."""
    ht = parent[:, 1] - parent[:, 0]
    hs = parent[:, 3] - parent[:, 2]
    kappa = hs / ht
    key = np.round(kappa, 13)
    uniq, inv = np.unique(key, return_inverse=True)
    if uniq.size == len(parent):
        return touching_moments(alpha, L, parent)
    # unit row interval [0, 1] with column interval [-kappa, 0]
    ref_parent = np.stack([np.zeros_like(uniq), np.ones_like(uniq), -uniq, np.zeros_like(uniq)], axis=1)
    ref = touching_moments(alpha, L, ref_parent)
    return ht[:, None, None] ** (3.0 - alpha) * ref[inv.ravel()]
