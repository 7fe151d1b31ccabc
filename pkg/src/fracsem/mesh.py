"""Spatial partitions of the interval (a, b)."""

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Strictly increasing partition ``a = x_0 < ... < x_N = b``.

    ``kind`` is one of ``uniform``, ``geometric``, ``graded``,
    ``two-sided-graded`` or ``custom``; ``params`` keeps the generator
    arguments (e.g. the ratio of a geometric mesh).
    """

    nodes: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise MeshError("invalid-size: need at least two nodes")
        if not np.all(np.isfinite(x)):
            raise MeshError("nodes must be finite")
        if np.any(np.diff(x) <= 0.0):
            raise MeshError("nodes must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "nodes", x)

    @property
    def a(self):
        return float(self.nodes[0])

    @property
    def b(self):
        return float(self.nodes[-1])

    @property
    def n_elements(self):
        return self.nodes.size - 1

    @property
    def sizes(self):
        return np.diff(self.nodes)

    @property
    def ratio(self):
        """Constant size ratio h_{i+1}/h_i, or None when it is not constant."""
        if self.kind in ("uniform", "geometric"):
            return float(self.params["ratio"])
        h = self.sizes
        if h.size == 1:
            return 1.0
        r = h[1:] / h[:-1]
        if np.allclose(r, r[0], rtol=1e-10, atol=0.0):
            return float(self.params.get("ratio", r[0]))
        return None

    @property
    def is_structured(self):
        return self.ratio is not None

    def to_csv(self, path):
        np.savetxt(path, self.nodes, fmt="%.17g", header="x", comments="")


def _check_domain(a, b, N):
    if not a < b:
        raise MeshError("invalid-domain: need a < b")
    if int(N) != N or N < 1:
        raise MeshError("invalid-size: N must be a positive integer")


def _fix_ends(x, a, b):
    x[0] = a
    x[-1] = b
    return x


def make_uniform_mesh(a, b, N):
    _check_domain(a, b, N)
    x = a + (b - a) * np.arange(N + 1) / N
    return Mesh(_fix_ends(x, a, b), "uniform", {"ratio": 1.0})


def make_geometric_mesh(a, b, N, ratio):
    """Mesh with ``h_{i+1} = ratio * h_i``."""
    _check_domain(a, b, N)
    if not ratio > 0:
        raise MeshError("invalid-ratio: ratio must be positive")
    if ratio == 1.0:
        mesh = make_uniform_mesh(a, b, N)
        return Mesh(mesh.nodes, "geometric", {"ratio": 1.0})
    # closed form of the partial geometric sums; no accumulated rounding
    lq = np.log(ratio)
    x = a + (b - a) * np.expm1(np.arange(N + 1) * lq) / np.expm1(N * lq)
    return Mesh(_fix_ends(x, a, b), "geometric", {"ratio": float(ratio)})


def make_graded_mesh(a, b, N, grading):
    """Nodes ``a + (i/N)**grading * (b - a)``, clustered toward ``a``."""
    _check_domain(a, b, N)
    if grading < 1:
        raise MeshError("invalid-grading: grading exponent must be >= 1")
    x = a + (np.arange(N + 1) / N) ** grading * (b - a)
    return Mesh(_fix_ends(x, a, b), "graded", {"grading": float(grading)})


def make_two_sided_graded_mesh(a, b, N, grading_left, grading_right):
    """Graded toward both ends, with the midpoint (a + b)/2 as a node."""
    _check_domain(a, b, N)
    if N % 2:
        raise MeshError("invalid-size: N must be even")
    if grading_left < 1 or grading_right < 1:
        raise MeshError("invalid-grading: grading exponents must be >= 1")
    half = 0.5 * (b - a)
    i = np.arange(N + 1)
    left = a + half * (2 * i[: N // 2 + 1] / N) ** grading_left
    right = b - half * (2 * (N - i[N // 2 + 1:]) / N) ** grading_right
    x = np.concatenate([left, right])
    return Mesh(
        _fix_ends(x, a, b),
        "two-sided-graded",
        {"grading_left": float(grading_left), "grading_right": float(grading_right)},
    )


def make_custom_mesh(nodes):
    """User supplied nodes; spacings below 1e-14 are rejected as duplicates."""
    x = np.asarray(nodes, dtype=float)
    if x.ndim == 1 and x.size > 1 and np.any(np.diff(x) <= 1e-14):
        raise MeshError("nodes must be strictly increasing (duplicates within 1e-14)")
    return Mesh(x, "custom", {})


def make_mesh(kind, a, b, N, **params):
    """Dispatch on ``kind``; used by the experiment configs."""
    if kind == "uniform":
        return make_uniform_mesh(a, b, N)
    if kind == "geometric":
        return make_geometric_mesh(a, b, N, params["ratio"])
    if kind == "graded":
        return make_graded_mesh(a, b, N, params.get("grading", 5.0))
    if kind == "two-sided-graded":
        return make_two_sided_graded_mesh(
            a, b, N, params.get("grading_left", 7.0), params.get("grading_right", 5.0)
        )
    raise MeshError(f"unknown mesh kind {kind!r}")
