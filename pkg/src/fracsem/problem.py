"""Problem data for the two-sided fractional diffusion equation.

    -(theta D^alpha_{a+} + (1 - theta) D^alpha_{b-}) u + rho u = f on (a, b),
    u(a) = c1, u(b) = c2,

with Riemann-Liouville derivatives of order 1 < alpha < 2.
"""

from dataclasses import dataclass, field
from math import gamma as Gamma

import numpy as np


@dataclass(frozen=True)
class PowerForcing:
    """Sum of terms ``c * (x - a)**e`` (side ``"left"``) or ``c * (b - x)**e``.

    Terms are stored as ``(coef, exponent, side)`` triples. Exponents may be
    negative (> -1); the right-hand side assembly integrates these endpoint
    singularities exactly with Gauss-Jacobi rules.
    """

    terms: tuple
    a: float
    b: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c, e, side in self.terms:
            base = (x - self.a) if side == "left" else (self.b - x)
            out = out + c * np.where(base > 0, np.abs(base) ** e, 0.0 if e > 0 else np.inf)
        return out

    def __add__(self, other):
        if (self.a, self.b) != (other.a, other.b):
            raise ValueError("forcings live on different intervals")
        return PowerForcing(self.terms + other.terms, self.a, self.b)

    def scaled(self, s):
        return PowerForcing(tuple((s * c, e, side) for c, e, side in self.terms), self.a, self.b)


@dataclass(frozen=True)
class FractionalProblem:
    """Parameters of the model problem.

    ``f`` is either a :class:`PowerForcing` or any vectorised callable;
    ``u_exact`` is optional and only needed for error measurements.
    """

    alpha: float
    theta: float = 1.0
    rho: float = 0.0
    a: float = 0.0
    b: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    f: object = None
    u_exact: object = None
    name: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (1, 2)")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not self.a < self.b:
            raise ValueError("invalid-domain: need a < b")
        if self.f is None:
            object.__setattr__(self, "f", PowerForcing((), self.a, self.b))

    @property
    def gamma0(self):
        return 1.0 / Gamma(2.0 - self.alpha)

    def lifting(self, x):
        """Linear function matching the boundary values."""
        x = np.asarray(x, dtype=float)
        return (self.c1 * (self.b - x) + self.c2 * (x - self.a)) / (self.b - self.a)

    def lifting_flux(self):
        """Flux F_L of the lifting as a :class:`PowerForcing`.

        The bilinear form applied to the lifting reads
        ``int v' F_L + rho (u_L, v)``.
        """
        al, th = self.alpha, self.theta
        kappa = (self.c2 - self.c1) / (self.b - self.a)
        g3 = 1.0 / Gamma(3.0 - al)
        g0 = self.gamma0
        terms = (
            (th * kappa * g3, 2.0 - al, "left"),
            (th * self.c1 * g0, 1.0 - al, "left"),
            ((1 - th) * kappa * g3, 2.0 - al, "right"),
            (-(1 - th) * self.c2 * g0, 1.0 - al, "right"),
        )
        return PowerForcing(tuple(t for t in terms if t[0] != 0.0), self.a, self.b)


def rl_power_coefficient(e, alpha):
    """``D^alpha_{a+} (x - a)^e = rl_power_coefficient(e, alpha) (x - a)^(e - alpha)``."""
    # 1/Gamma vanishes at the poles (e - alpha + 1 a non-positive integer)
    from scipy.special import rgamma

    return Gamma(e + 1.0) * float(rgamma(e + 1.0 - alpha))


def example_power_solution(alpha=1.6, gamma=0.8, a=0.0, b=10.0, rho=0.0):
    """One-sided problem with exact solution ``(x-a) - (b-a)^(1-gamma) (x-a)^gamma``."""
    k = (b - a) ** (1.0 - gamma)
    terms = [
        (-rl_power_coefficient(1.0, alpha), 1.0 - alpha, "left"),
        (k * rl_power_coefficient(gamma, alpha), gamma - alpha, "left"),
    ]
    if rho:
        terms += [(rho, 1.0, "left"), (-rho * k, gamma, "left")]
    f = PowerForcing(tuple(terms), a, b)

    def u_exact(x):
        x = np.asarray(x, dtype=float)
        return (x - a) - k * np.maximum(x - a, 0.0) ** gamma

    return FractionalProblem(
        alpha=alpha, theta=1.0, rho=rho, a=a, b=b, f=f, u_exact=u_exact,
        name="power-solution", meta={"gamma": gamma},
    )


def example_two_sided(alpha=1.6, theta=0.75, a=0.0, b=10.0, rho=0.0):
    """Two-sided problem with f = 1 and homogeneous boundary values."""
    f = PowerForcing(((1.0, 0.0, "left"),), a, b)
    return FractionalProblem(alpha=alpha, theta=theta, rho=rho, a=a, b=b, f=f, name="two-sided")


def grunwald_letnikov(u, x, alpha, a, n=100_000):
    """Left Riemann-Liouville derivative of ``u`` at ``x`` by the shifted-free
    Gruenwald-Letnikov sum with ``n`` steps (first order accurate)."""
    h = (x - a) / n
    k = np.arange(n + 1)
    w = np.empty(n + 1)
    w[0] = 1.0
    w[1:] = np.cumprod((k[1:] - 1 - alpha) / k[1:])
    return np.dot(w, u(x - k * h)) / h**alpha
