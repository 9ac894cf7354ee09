"""Chemical field Psi(x; u, c, tau) from the two-sided exponential kernel.

    Psi = mu B ( e^{-l1 x} int_{-inf}^x e^{l1 y} u dy + e^{l2 x} int_x^inf e^{-l2 y} u dy )

Both one-sided integrals are first-order linear recurrences over the grid,
evaluated with scipy.signal.lfilter (left-to-right for l1, right-to-left for
l2, so every stored factor is <= 1).  Each cell is integrated exactly against
the linear interpolant of u, and the parts of the integrals beyond the grid
come from a closed-form TailModel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .constants import SystemParams, pos, rates

MAX_CELL_DECAY = 50.0


@dataclass(frozen=True)
class GridFunction:
    x0: float
    dx: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 3:
            raise ValueError("grid function needs at least 3 samples")
        if not self.dx > 0:
            raise ValueError(f"dx must be > 0, got {self.dx}")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def on(cls, x: np.ndarray, values) -> "GridFunction":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1] - x[0]), np.broadcast_to(values, x.shape))

    @classmethod
    def sample(cls, f, xl: float, xr: float, n: int) -> "GridFunction":
        x = np.linspace(xl, xr, n)
        return cls(xl, (xr - xl) / (n - 1), f(x))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n)

    @property
    def xr(self) -> float:
        return self.x0 + self.dx * (self.n - 1)

    def same_grid(self, other: "GridFunction") -> bool:
        return (self.n == other.n and math.isclose(self.x0, other.x0, abs_tol=1e-12)
                and math.isclose(self.dx, other.dx, rel_tol=1e-12))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.x0, self.dx, values)


@dataclass(frozen=True)
class TailModel:
    """Extension of grid data beyond both ends.

    Left of x0:  u(y) = left_value * exp(left_rate * (x0 - y)); left_rate = 0
    is a constant plateau.  left_value None means "match u at x0".
    Right of xR: zero if right_rate is None, else u(xR) * exp(-right_rate * (y - xR))
    (right_rate = 0 continues the last value as a constant).
    """

    left_value: float | None = None
    left_rate: float = 0.0
    right_rate: float | None = None

    def __post_init__(self):
        if self.left_value is not None and self.left_value < 0:
            raise ValueError("left tail value must be >= 0")
        if self.right_rate is not None and self.right_rate < 0:
            raise ValueError("right tail rate must be >= 0")

    @classmethod
    def plateau_exp(cls, kappa: float) -> "TailModel":
        """Constant left plateau matched at x0, exponential right tail."""
        return cls(None, 0.0, kappa)

    @classmethod
    def constant(cls) -> "TailModel":
        return cls(None, 0.0, 0.0)


@dataclass(frozen=True)
class PsiField:
    psi: GridFunction
    psi_x: GridFunction
    psi_xx: GridFunction


def _phi01(z: float) -> tuple[float, float]:
    """phi0 = (1 - e^-z)/z and phi1 = (1 - e^-z (1+z))/z^2, stable near 0."""
    if z < 1e-3:
        phi0 = 1.0 - z / 2 + z * z / 6 - z ** 3 / 24
        phi1 = 0.5 - z / 3 + z * z / 8 - z ** 3 / 30
    elif z < 0.1:
        phi0 = -math.expm1(-z) / z
        # sum_{k>=2} (-1)^k (k-1) z^(k-2) / k!
        phi1, term_z, fact = 0.0, 1.0, 2.0
        for k in range(2, 18):
            phi1 += (-1) ** k * (k - 1) * term_z / fact
            term_z *= z
            fact *= k + 1
    else:
        e = math.exp(-z)
        phi0 = (1.0 - e) / z
        phi1 = (1.0 - e * (1.0 + z)) / (z * z)
    return phi0, phi1


def _one_sided(u: np.ndarray, h: float, rate: float, start: float) -> np.ndarray:
    """I_i = e^{-rate h} I_{i-1} + int over cell (i-1, i) of e^{-rate (x_i - y)} u, I_0 = start."""
    z = rate * h
    phi0, phi1 = _phi01(z)
    near = h * (phi0 - phi1)
    far = h * phi1
    f = np.empty_like(u)
    f[0] = start
    f[1:] = near * u[1:] + far * u[:-1]
    return lfilter([1.0], [1.0, -math.exp(-z)], f)


def _sweeps(u: GridFunction, tails: TailModel, l1: float, l2: float) -> tuple[np.ndarray, np.ndarray]:
    v = u.values
    if u.dx * l1 > MAX_CELL_DECAY:
        raise ValueError(f"dx*lambda1 = {u.dx * l1:.3g} exceeds {MAX_CELL_DECAY}; refine the grid")
    uL = v[0] if tails.left_value is None else tails.left_value
    if tails.left_rate >= l1:
        raise ValueError(f"left tail rate {tails.left_rate} must be below lambda1 = {l1}")
    left_start = uL / (l1 - tails.left_rate)
    right_start = 0.0 if tails.right_rate is None else v[-1] / (l2 + tails.right_rate)
    L = _one_sided(v, u.dx, l1, left_start)
    R = _one_sided(v[::-1], u.dx, l2, right_start)[::-1]
    return L, R


def _check_density(u: GridFunction):
    if np.any(u.values < 0):
        i = int(np.argmax(u.values < 0))
        raise ValueError(f"density must be >= 0; node {i} has {u.values[i]!r}")


def psi_field(u: GridFunction, tails: TailModel, p: SystemParams, c: float) -> PsiField:
    """Psi, Psi_x and Psi_xx (the last from the elliptic identity) in one pass."""
    _check_density(u)
    l1, l2, B = rates(p.lam, p.tau, c)
    L, R = _sweeps(u, tails, l1, l2)
    psi = p.mu * B * (L + R)
    psi_x = p.mu * B * (l2 * R - l1 * L)
    psi_xx = p.lam * psi - p.tau * c * psi_x - p.mu * u.values
    return PsiField(u.with_values(psi), u.with_values(psi_x), u.with_values(psi_xx))


def psi(u: GridFunction, tails: TailModel, p: SystemParams, c: float) -> GridFunction:
    return psi_field(u, tails, p, c).psi


def psi_x(u: GridFunction, tails: TailModel, p: SystemParams, c: float) -> GridFunction:
    return psi_field(u, tails, p, c).psi_x


def psi_xx_from_identity(psi: GridFunction, psi_x: GridFunction, u: GridFunction,
                         p: SystemParams, c: float) -> GridFunction:
    """Psi_xx = lambda Psi - tau c Psi_x - mu u, no numerical differentiation."""
    if not (psi.same_grid(psi_x) and psi.same_grid(u)):
        raise ValueError("psi, psi_x and u must share one grid")
    return psi.with_values(p.lam * psi.values - p.tau * c * psi_x.values - p.mu * u.values)


def super_solution_bound_coefficient(p: SystemParams, c: float, kappa: float) -> float:
    """chi mu (B ((tau c + kappa) l2 - lambda)_+ / (l2 + kappa) + 1)."""
    _, l2, B = rates(p.lam, p.tau, c)
    return p.chi * p.mu * (B * pos((p.tau * c + kappa) * l2 - p.lam) / (l2 + kappa) + 1.0)


@dataclass(frozen=True)
class SuperSolutionCheck:
    functional: GridFunction
    bound: GridFunction
    max_excess: float
    ok: bool


class PreconditionError(ValueError):
    pass


def super_solution_functional(u: GridFunction, tails: TailModel, p: SystemParams, c: float,
                              kappa: float, M: float) -> SuperSolutionCheck:
    """chi kappa Psi_x - chi Psi_xx against its bound for 0 <= u <= M e^{-kappa x}.

    The bound is checked node by node.  Slack of (kappa dx)^2/4 relative covers
    the overshoot of the linear interpolant of the exponential majorant.
    """
    x = u.x
    env = M * np.exp(-kappa * x)
    bad = np.flatnonzero((u.values < 0) | (u.values > env * (1 + 1e-12)))
    if bad.size:
        i = int(bad[0])
        raise PreconditionError(
            f"u violates 0 <= u <= M e^(-kappa x) at node {i} (x={x[i]:.6g}, u={u.values[i]:.6g})")
    f = psi_field(u, tails, p, c)
    func = p.chi * kappa * f.psi_x.values - p.chi * f.psi_xx.values
    bound = super_solution_bound_coefficient(p, c, kappa) * env
    slack = bound * (kappa * u.dx) ** 2 / 4 + 1e-12 * M
    excess = func - bound
    return SuperSolutionCheck(u.with_values(func), u.with_values(bound),
                              float(np.max(excess)), bool(np.all(excess <= slack)))
