"""Closed-form scalars for the Keller-Segel traveling-wave problem.

Everything here is a pure function of the model constants and the frame
speed.  Suprema are computed by a dense scan plus golden-section refinement,
and the decay-threshold closed form can be cross-checked by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def pos(x):
    """(x)_+ = max{x, 0}."""
    return np.maximum(x, 0.0)


def neg(x):
    """(x)_- = max{-x, 0}."""
    return np.maximum(-x, 0.0)


@dataclass(frozen=True)
class SystemParams:
    chi: float
    mu: float
    lam: float
    a: float
    b: float
    tau: float = 0.0

    def __post_init__(self):
        for name in ("chi", "mu", "lam", "a", "b", "tau"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v!r}")
        # chi = 0 is admitted: it is the decoupled Fisher-KPP reduction.
        if self.chi < 0:
            raise ValueError(f"chi must be >= 0, got {self.chi}")
        for name in ("mu", "lam", "a", "b"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")

    @property
    def u_plateau(self) -> float:
        """Positive equilibrium a/b of the cell density."""
        return self.a / self.b

    @property
    def v_plateau(self) -> float:
        """Chemical level a*mu/(b*lambda) at the positive equilibrium."""
        return self.a * self.mu / (self.b * self.lam)

    @property
    def ceiling(self) -> float:
        """a/(b - chi*mu), the global bound under H1 (inf if H1 fails)."""
        gap = self.b - self.chi * self.mu
        return self.a / gap if gap > 0 else math.inf


@dataclass(frozen=True)
class DecayRates:
    c: float
    lambda1: float
    lambda2: float
    B: float


@dataclass(frozen=True)
class Thresholds:
    kappa_star: float
    c_star: float
    b_star: float


@dataclass(frozen=True)
class Hypotheses:
    H1: bool
    H2: bool
    H3: bool
    H4: bool

    def as_dict(self) -> dict[str, bool]:
        return {"H1": self.H1, "H2": self.H2, "H3": self.H3, "H4": self.H4}


def rates(lam: float, tau: float, c: float) -> tuple[float, float, float]:
    """(lambda1, lambda2, B) for any real c; no validation.

    lambda2 is taken from the product identity to avoid cancellation when
    tau*c is large.
    """
    tc = tau * c
    s = math.sqrt(4.0 * lam + tc * tc)
    if tc >= 0:
        l1 = 0.5 * (tc + s)
        l2 = lam / l1
    else:
        l2 = 0.5 * (s - tc)
        l1 = lam / l2
    return l1, l2, 1.0 / s


def decay_rates(p: SystemParams, c: float) -> DecayRates:
    if not c > 0:
        raise ValueError(f"frame speed must be > 0, got {c}")
    l1, l2, B = rates(p.lam, p.tau, c)
    return DecayRates(c=c, lambda1=l1, lambda2=l2, B=B)


def speed_of_kappa(a: float, kappa: float) -> float:
    """c_kappa = (a + kappa^2)/kappa.

    kappa = sqrt(a) is accepted as the continuous endpoint (value 2 sqrt(a)).
    """
    if not (0 < kappa <= math.sqrt(a)):
        raise ValueError(f"kappa must lie in (0, sqrt(a)] = (0, {math.sqrt(a)}], got {kappa}")
    return (a + kappa * kappa) / kappa


def kappa_of_speed(a: float, c: float) -> float:
    """Smaller root of kappa^2 - c kappa + a = 0, for c > 2 sqrt(a)."""
    if not c > 2.0 * math.sqrt(a):
        raise ValueError(f"speed must exceed 2*sqrt(a) = {2 * math.sqrt(a)}, got {c}")
    return 2.0 * a / (c + math.sqrt((c - 2.0 * math.sqrt(a)) * (c + 2.0 * math.sqrt(a))))


def b_star_supremand(p: SystemParams, kappa):
    """1 + l2 (kappa - l2)_+ / ((l1 + l2)(kappa + l2)) at speed c_kappa.

    Vectorised over kappa in (0, sqrt(a)].
    """
    kappa = np.asarray(kappa, dtype=float)
    c = (p.a + kappa * kappa) / kappa
    tc = p.tau * c
    s = np.sqrt(4.0 * p.lam + tc * tc)
    l1 = 0.5 * (tc + s)
    l2 = p.lam / l1
    return 1.0 + l2 * pos(kappa - l2) / (s * (kappa + l2))


def _golden_max(f, lo: float, hi: float, tol: float = 1e-13) -> tuple[float, float]:
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol * max(1.0, abs(b)):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
    x = 0.5 * (a + b)
    return x, f(x)


def b_star_scan(p: SystemParams, n: int = 10_000) -> tuple[float, float]:
    """Grid maximum of the b* supremand; returns (kappa, value).

    The grid runs from eps = 1e-8 sqrt(a) up to and including sqrt(a): the
    supremand extends continuously to the right endpoint, where the sup over
    the open interval is attained in the limit.
    """
    ra = math.sqrt(p.a)
    ks = np.linspace(1e-8 * ra, ra, n)
    vals = b_star_supremand(p, ks)
    i = int(np.argmax(vals))
    return float(ks[i]), float(vals[i])


def b_star(p: SystemParams, n: int = 10_000) -> float:
    ra = math.sqrt(p.a)
    ks = np.linspace(1e-8 * ra, ra, n)
    vals = b_star_supremand(p, ks)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo = ks[max(i - 1, 0)]
    hi = ks[min(i + 1, n - 1)]
    _, refined = _golden_max(lambda k: float(b_star_supremand(p, k)), float(lo), float(hi))
    return max(best, refined)


def b_star_tau0(a: float, lam: float) -> float:
    """Closed form of b* at tau = 0."""
    ra, rl = math.sqrt(a), math.sqrt(lam)
    return 1.0 + max(ra - rl, 0.0) / (2.0 * (ra + rl))


def kappa_star_closed(p: SystemParams) -> float:
    ra = math.sqrt(p.a)
    # (lam + tau a) / (1 - tau) >= a is the same inequality as H4; decide it there
    # so the boundary tau = (1 - lam/a)/2 gives sqrt(a) exactly despite rounding
    if p.tau >= h4_threshold(p):
        return ra
    one_minus_tau = 1.0 - p.tau
    return min(ra, math.sqrt((p.lam + p.tau * p.a) / one_minus_tau))


def _l1_minus_kappa(p: SystemParams, kappa: float) -> float:
    c = (p.a + kappa * kappa) / kappa
    l1, _, _ = rates(p.lam, p.tau, c)
    return l1 - kappa


def kappa_star_bisection(p: SystemParams, tol: float = 1e-12) -> float:
    """sup{0 < kappa < sqrt(a) : lambda1(c_kappa) - kappa >= 0} by bisection.

    The map is strictly decreasing and tends to +inf as kappa -> 0+.
    """
    ra = math.sqrt(p.a)
    if _l1_minus_kappa(p, ra) >= 0:
        return ra
    lo, hi = 1e-12 * ra, ra
    while hi - lo > tol * ra:
        mid = 0.5 * (lo + hi)
        if _l1_minus_kappa(p, mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def kappa_star(p: SystemParams, verify: bool = True) -> float:
    k = kappa_star_closed(p)
    if verify:
        kb = kappa_star_bisection(p)
        if abs(kb - k) > 1e-8 * max(1.0, k):
            raise ArithmeticError(f"kappa* closed form {k} disagrees with bisection {kb}")
    return k


def c_star(p: SystemParams) -> float:
    k = kappa_star(p, verify=False)
    if k == math.sqrt(p.a):
        return 2.0 * math.sqrt(p.a)
    return k + p.a / k


def thresholds(p: SystemParams) -> Thresholds:
    k = kappa_star(p)
    return Thresholds(kappa_star=k, c_star=c_star(p), b_star=b_star(p))


def h4_threshold(p: SystemParams) -> float:
    """Smallest tau satisfying H4: 0.5 (1 - lambda/a)_+."""
    return 0.5 * max(1.0 - p.lam / p.a, 0.0)


def check_hypotheses(p: SystemParams, bstar: float | None = None) -> Hypotheses:
    cm = p.chi * p.mu
    if bstar is None:
        bstar = b_star(p)
    h1 = p.b > cm
    h2 = p.b > bstar * cm
    h3 = p.b > 2.0 * cm
    h4 = p.tau >= h4_threshold(p)
    return Hypotheses(H1=h1, H2=h2, H3=h3, H4=h4)
