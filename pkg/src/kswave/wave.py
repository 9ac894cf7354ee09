"""Traveling-wave construction by monotone sub/super-solution iteration.

For a decay rate kappa with c = c_kappa, the class

    E~ = { u : max{U^-_D, 0} <= u <= min{M, e^{-kappa x}} },
    U^-_D(x) = e^{-kappa x} - D e^{-kappa~ x},   M = a/(b - chi mu),

is mapped into itself by u -> lim_t U(t; u), where U solves the frozen-Psi
equation from the upper envelope.  Iterating that map to a fixed point gives
the wave profile.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import (SystemParams, c_star, check_hypotheses, kappa_of_speed,
                        kappa_star, pos, rates, speed_of_kappa)
from .kernel import GridFunction, PsiField, TailModel, psi_field
from .solver import (FrameSolver, SolverConfig, SolverError, State, front_position,
                     spreading_speed)

log = logging.getLogger(__name__)


class WaveError(RuntimeError):
    pass


class HypothesisError(ValueError):
    pass


@dataclass(frozen=True)
class Envelope:
    kappa: float
    eta: float
    D: float
    M: float

    @property
    def kappa_tilde(self) -> float:
        return self.kappa + self.eta

    @property
    def xunder(self) -> float:
        """Zero of U^-_D."""
        return math.log(self.D) / self.eta

    @property
    def xbar(self) -> float:
        """Maximiser of U^-_D."""
        return math.log(self.D * self.kappa_tilde / self.kappa) / self.eta

    def phi(self, x):
        return np.exp(-self.kappa * np.asarray(x, dtype=float))

    def u_minus(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-self.kappa * x) - self.D * np.exp(-self.kappa_tilde * x)

    def u_minus_derivatives(self, x):
        """(U^-, U^-_x, U^-_xx) in closed form."""
        x = np.asarray(x, dtype=float)
        e1 = np.exp(-self.kappa * x)
        e2 = self.D * np.exp(-self.kappa_tilde * x)
        k, kt = self.kappa, self.kappa_tilde
        return e1 - e2, -k * e1 + kt * e2, k * k * e1 - kt * kt * e2

    def upper(self, x):
        """Super-solution min{M, e^{-kappa x}}."""
        return np.minimum(self.M, self.phi(x))

    def lower(self, x):
        """Sub-solution: U^-_D right of xbar, its maximum value left of it."""
        x = np.asarray(x, dtype=float)
        peak = float(self.u_minus(self.xbar))
        return np.where(x >= self.xbar, self.u_minus(x), peak)

    def class_lower(self, x):
        """Lower edge max{U^-_D, 0} of the invariant class."""
        return pos(self.u_minus(x))


def default_eta(a: float, kappa: float) -> float:
    return 0.5 * min(kappa / 2, (math.sqrt(a) - kappa) / 2)


def _check_rate(p: SystemParams, kappa: float, eta: float):
    ks = kappa_star(p, verify=False)
    if not 0 < kappa < ks:
        raise ValueError(f"kappa = {kappa} must lie in (0, kappa*) = (0, {ks})")
    top = min(kappa / 2, math.sqrt(p.a) - kappa)
    if not 0 < eta <= top * (1 + 1e-12):
        raise ValueError(f"eta = {eta} must lie in (0, min(kappa/2, sqrt(a)-kappa)] = (0, {top}]")


def _require_h2(p: SystemParams):
    h = check_hypotheses(p)
    if not h.H2:
        raise HypothesisError(f"H2 fails: b = {p.b} <= b* chi mu; the construction needs b > b* chi mu")


def envelope_build(p: SystemParams, kappa: float, eta: float, D: float) -> Envelope:
    _require_h2(p)
    _check_rate(p, kappa, eta)
    if not D >= 1:
        raise ValueError(f"D must be >= 1, got {D}")
    return Envelope(kappa=kappa, eta=eta, D=D, M=p.ceiling)


# -- admissible shift D ---------------------------------------------------

@dataclass(frozen=True)
class ScalarTerms:
    A_kappa: float
    kappa1: float
    left_term: float
    right_term: float
    damping_term: float
    value: float


def scalar_inequality(p: SystemParams, kappa: float, eta: float, D: float) -> ScalarTerms:
    """Sufficient condition D A_kappa - [..] e^{-kappa1 xunder} >= 0 for the sub-solution."""
    c = speed_of_kappa(p.a, kappa)
    l1, l2, B = rates(p.lam, p.tau, c)
    kt = kappa + eta
    A = kt * c - kt * kt - p.a
    k1 = 2 * kappa - kt
    cm = p.chi * p.mu
    left = cm * B * (kappa + p.tau * c + p.lam) * l1 / (l1 - kappa)
    right = cm * B * (kt * D + max(p.tau * c - p.lam, 0.0)) * l2 / (l2 + kappa)
    damp = p.b - cm
    decay = math.exp(-k1 * math.log(D) / eta)
    value = D * A - (left + right + damp) * decay
    return ScalarTerms(A, k1, left * decay, right * decay, damp * decay, value)


def _extremal_members(env: Envelope, xl: float, xr: float, n: int):
    x = np.linspace(xl, xr, n)
    dx = x[1] - x[0]
    low = GridFunction(xl, dx, env.class_lower(x))
    high = GridFunction(xl, dx, env.upper(x))
    return x, [(low, TailModel(0.0, 0.0, env.kappa)), (high, TailModel(None, 0.0, env.kappa))]


def subsolution_residual(p: SystemParams, env: Envelope, u: GridFunction, tails: TailModel) -> np.ndarray:
    """A_{u,c_kappa}(U^-_D) on the grid of u, with closed-form derivatives of U^-_D."""
    c = speed_of_kappa(p.a, env.kappa)
    f = psi_field(u, tails, p, c)
    U, Ux, Uxx = env.u_minus_derivatives(u.x)
    return Uxx + (c - p.chi * f.psi_x.values) * Ux + (p.a - p.chi * f.psi_xx.values - p.b * U) * U


def pointwise_subsolution_check(p: SystemParams, env: Envelope, span: float | None = None,
                                dx: float = 0.01) -> float:
    """Minimum of A(U^-_D) over (xunder, xunder + span] for both extremal class members."""
    span = 40.0 / env.kappa if span is None else span
    xu = env.xunder
    xl = min(xu, -math.log(env.M) / env.kappa) - 20.0
    xr = xu + span + 20.0 / env.kappa
    n = int(math.ceil((xr - xl) / dx)) + 1
    x, members = _extremal_members(env, xl, xr, n)
    sel = (x > xu) & (x <= xu + span)
    worst = math.inf
    for u, tails in members:
        worst = min(worst, float(np.min(subsolution_residual(p, env, u, tails)[sel])))
    return worst


def find_admissible_D(p: SystemParams, kappa: float, eta: float, rtol: float = 1e-3,
                      validate: bool = True, d_max: float = 1e12) -> float:
    """Smallest D (to rtol) with the scalar sub-solution inequality satisfied.

    Doubling from D = 1 then bisection.  With validate, A(U^-_D) >= 0 is also
    checked pointwise for the two extremal members of the class.
    """
    _require_h2(p)
    _check_rate(p, kappa, eta)
    if scalar_inequality(p, kappa, eta, 1.0).value >= 0:
        D = 1.0
    else:
        lo, hi = 1.0, 2.0
        while scalar_inequality(p, kappa, eta, hi).value < 0:
            lo, hi = hi, 2 * hi
            if hi > d_max:
                t = scalar_inequality(p, kappa, eta, d_max)
                terms = {"left (lambda1) term": t.left_term, "right (lambda2) term": t.right_term,
                         "damping term": t.damping_term}
                worst = max(terms, key=terms.get)
                raise WaveError(f"no admissible D below {d_max:g}; dominant violated term: {worst} "
                                f"= {terms[worst]:.4g} vs D*A_kappa = {d_max * t.A_kappa:.4g}")
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if scalar_inequality(p, kappa, eta, mid).value >= 0:
                hi = mid
            else:
                lo = mid
        D = hi
    if validate:
        env = Envelope(kappa, eta, D, p.ceiling)
        worst = pointwise_subsolution_check(p, env)
        if worst < -1e-8:
            raise WaveError(f"pointwise sub-solution check failed at D = {D:.6g}: min A(U^-) = {worst:.3g}")
    return D


# -- inner evolution and outer fixed point --------------------------------

@dataclass(frozen=True)
class FixedPointConfig:
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(
        xl=-40.0, xr=80.0, n=4096, dt=0.004))
    inner_tol: float = 1e-8
    outer_tol: float = 1e-6
    max_inner_time: float = 2000.0
    max_outer_iters: int = 60
    eta: float | None = None
    d_factor: float = 10.0
    mono_tol: float = 1e-8
    escape_tol: float = 1e-6
    check_every: float = 1.0

    def __post_init__(self):
        for name in ("inner_tol", "outer_tol", "max_inner_time", "mono_tol", "escape_tol", "d_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass
class InnerResult:
    U: GridFunction
    t: float
    steps: int
    max_time_increase: float
    escape: float


def _frozen_solver(p: SystemParams, env: Envelope, cfg: FixedPointConfig, u_env: GridFunction):
    c = speed_of_kappa(p.a, env.kappa)
    # The tail is pinned at xR: the discrete decay root at c_kappa differs from
    # kappa by O(dx^2), so an exponential ghost node lets the front creep forever.
    xr = u_env.xr
    scfg = replace(cfg.solver, coupling="frozen", left_bc="no-flux", right_bc="fixed",
                   right_value=float(env.upper(xr)), blowup_cap=max(cfg.solver.blowup_cap, 2 * env.M))
    return FrameSolver(p, c, scfg, u_env, TailModel(None, 0.0, env.kappa))


def inner_solve(u_env: GridFunction, env: Envelope, cfg: FixedPointConfig, p: SystemParams,
                c: float | None = None, monitor=None) -> InnerResult:
    """lim_t U(t; u_env) from the upper envelope, clamped into the invariant class.

    `monitor(t, U)` is called every `check_every` time units.
    """
    if c is not None and not math.isclose(c, speed_of_kappa(p.a, env.kappa), rel_tol=1e-12):
        raise ValueError("frame speed must equal c_kappa of the envelope")
    x = u_env.x
    lo_edge, hi_edge = env.class_lower(x), env.upper(x)
    bad = (u_env.values < lo_edge - cfg.escape_tol) | (u_env.values > hi_edge + cfg.escape_tol)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise WaveError(f"u_env is outside the invariant class at x = {x[i]:.6g}")
    solver = _frozen_solver(p, env, cfg, u_env)
    s = solver.initial_state(u_env.with_values(hi_edge))
    dt = solver.cfg.dt
    every = max(1, int(round(cfg.check_every / dt)))
    last = s.u.values
    max_inc = -math.inf
    k = 0
    nmax = int(math.ceil(cfg.max_inner_time / dt))
    while True:
        prev = s.u.values
        s, _ = solver.step(s)
        k += 1
        rate = float(np.max(np.abs(s.u.values - prev))) / dt
        if k % every == 0 or rate < cfg.inner_tol:
            inc = float(np.max(s.u.values - last))
            max_inc = max(max_inc, inc)
            if inc > cfg.mono_tol:
                raise WaveError(f"inner evolution increased by {inc:.3g} at t = {s.t:.4g}; "
                                "the discretisation is not monotone")
            last = s.u.values
            if monitor is not None:
                monitor(s.t, s.u)
        if rate < cfg.inner_tol:
            break
        if k >= nmax:
            raise WaveError(f"inner evolution not converged by t = {s.t:.4g} (rate {rate:.3g})")
    U = s.u.values
    escape = float(max(np.max(lo_edge - U), np.max(U - hi_edge), 0.0))
    if escape > cfg.escape_tol:
        raise WaveError(f"inner limit left the invariant class by {escape:.3g}")
    if escape > 0:
        log.debug("clamping inner limit back into the class (violation %.3g)", escape)
    return InnerResult(s.u.with_values(np.clip(U, lo_edge, hi_edge)), s.t, k, max_inc, escape)


@dataclass
class WaveProfile:
    U: GridFunction
    V: GridFunction
    psi_x: GridFunction
    c: float
    kappa: float
    envelope: Envelope
    diagnostics: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def construct_wave(p: SystemParams, c: float, cfg: FixedPointConfig | None = None,
                   start: str = "upper", D: float | None = None, progress=None) -> WaveProfile:
    """Outer iteration u_{k+1} = inner_solve(u_k) from the upper (or lower) envelope.

    `progress(k, diff, inner)` is called after each outer iteration.
    """
    cfg = cfg or FixedPointConfig()
    _require_h2(p)
    cs = c_star(p)
    if not c > cs:
        raise ValueError(f"speed {c} must exceed c*(tau) = {cs}")
    kappa = kappa_of_speed(p.a, c)
    eta = cfg.eta if cfg.eta is not None else default_eta(p.a, kappa)
    if D is None:
        D = cfg.d_factor * find_admissible_D(p, kappa, eta)
    env = envelope_build(p, kappa, eta, D)
    x = cfg.solver.x
    grid = GridFunction(cfg.solver.xl, cfg.solver.dx, np.zeros_like(x))
    if start == "upper":
        u = grid.with_values(env.upper(x))
    elif start == "lower":
        u = grid.with_values(np.maximum(env.lower(x), 0.0))
    else:
        raise ValueError("start must be 'upper' or 'lower'")
    history = []
    for k in range(1, cfg.max_outer_iters + 1):
        inner = inner_solve(u, env, cfg, p)
        diff = float(np.max(np.abs(inner.U.values - u.values)))
        history.append({"iter": k, "diff": diff, "inner_time": inner.t, "inner_steps": inner.steps,
                        "max_time_increase": inner.max_time_increase, "escape": inner.escape})
        if progress is not None:
            progress(k, diff, inner)
        u = inner.U
        if diff < cfg.outer_tol:
            break
    else:
        raise WaveError(f"outer iteration not converged in {cfg.max_outer_iters} iterations "
                        f"(last change {diff:.3g})")
    tails = TailModel(None, 0.0, kappa)
    f = psi_field(u, tails, p, c)
    w = WaveProfile(U=u, V=f.psi, psi_x=f.psi_x, c=c, kappa=kappa, envelope=env, history=history)
    w.diagnostics = verify_wave(w, p, cfg)
    return w


def approach_minimal_speed(p: SystemParams, cfg: FixedPointConfig | None = None, n: int = 4,
                           gap: float = 0.5, ratio: float = 0.5, progress=None) -> list[WaveProfile]:
    """Waves at c_k = c* + gap ratio^k (k < n), each shifted so U = a/(2b) at x = 0.

    No claim is made about the limit itself; the sequence is returned for inspection.
    """
    if n < 1 or not gap > 0 or not 0 < ratio < 1:
        raise ValueError("need n >= 1, gap > 0 and 0 < ratio < 1")
    cs = c_star(p)
    out = []
    for k in range(n):
        c = cs + gap * ratio ** k
        w = construct_wave(p, c, cfg)
        xf = front_position(w.U, p.u_plateau / 2)
        if xf is None:
            raise WaveError(f"profile at c = {c:.6g} never crosses a/(2b)")
        x = w.U.x - xf
        w.diagnostics["shift"] = xf
        w.U = GridFunction(float(x[0]), w.U.dx, w.U.values)
        w.V = w.U.with_values(w.V.values)
        w.psi_x = w.U.with_values(w.psi_x.values)
        out.append(w)
        if progress is not None:
            progress(k, c, w)
    return out


# -- verification ---------------------------------------------------------

def wave_residuals(w: WaveProfile, p: SystemParams, cfg: FixedPointConfig | None = None,
                   tails: TailModel | None = None):
    """Pointwise residuals of the stationary system.

    residual_u uses the solver's discrete operator with Psi rebuilt from U
    (plateau on the left, e^{-kappa x} on the right unless `tails` is given);
    residual_v uses centred differences of V.  Both are zero at the end nodes.
    """
    cfg = cfg or FixedPointConfig()
    scfg = replace(cfg.solver, n=w.U.n, xl=w.U.x0, xr=w.U.xr, coupling="self",
                   left_bc="no-flux", right_bc="exp", right_rate=w.kappa)
    solver = FrameSolver(p, w.c, scfg)
    f = psi_field(w.U, tails or scfg.tails(), p, w.c)
    ru = solver.apply_operator(w.U.values, f)
    V, h = f.psi.values, w.U.dx
    rv = np.zeros_like(V)
    rv[1:-1] = ((V[2:] - 2 * V[1:-1] + V[:-2]) / h ** 2 + p.tau * w.c * (V[2:] - V[:-2]) / (2 * h)
                - p.lam * V[1:-1] + p.mu * w.U.values[1:-1])
    ru[0] = ru[-1] = 0.0
    return ru, rv


def verify_wave(w: WaveProfile, p: SystemParams, cfg: FixedPointConfig | None = None,
                tails: TailModel | None = None) -> dict:
    ru, rv = wave_residuals(w, p, cfg, tails)
    x, U = w.U.x, w.U.values
    rep = {"residual_u": float(np.max(np.abs(ru))), "residual_v": float(np.max(np.abs(rv)))}

    xl, xr = x[0], x[-1]
    right = (x >= xr - (xr - xl) / 4) & (U > 0)
    if np.count_nonzero(right) >= 2:
        rep["decay_fit"] = float(np.polyfit(x[right], -np.log(U[right]), 1)[0])
    else:
        rep["decay_fit"] = math.nan
    k = w.kappa
    if xr >= 20 / k:
        r1 = float(np.interp(10 / k, x, U)) * math.exp(10.0)
        r2 = float(np.interp(20 / k, x, U)) * math.exp(20.0)
        rep["tail_ratio_10"], rep["tail_ratio_20"] = r1, r2
        rep["tail_ratio_change"] = abs(r2 / r1 - 1.0)
    probe = min(xl + 5.0, xr)
    rep["left_plateau_error"] = abs(float(np.interp(probe, x, U)) - p.u_plateau)
    env = w.envelope
    rep["envelope_violation"] = float(max(np.max(env.class_lower(x) - U), np.max(U - env.upper(x)), 0.0))
    rep["outer_iters"] = len(w.history)
    return rep


# -- minimal-speed probe --------------------------------------------------

@dataclass
class ProbeReport:
    c: float
    drift: float
    stderr: float
    advancing: bool
    final_front: float | None
    window: tuple[float, float]


def front_datum(p: SystemParams, x: np.ndarray, kappa: float | None = None, width: float = 0.5):
    """a/b on the left, dropping at x = 0 either steeply or like e^{-kappa x}."""
    if kappa is None:
        return p.u_plateau / (1.0 + np.exp(np.clip(x / width, -700, 700)))
    return p.u_plateau * np.minimum(1.0, np.exp(-kappa * x))


def minimal_speed_probe(p: SystemParams, c: float, cfg: SolverConfig, T: float = 40.0,
                        kappa: float | None = None, sample_every: float = 0.5) -> ProbeReport:
    """Drift of the a/(2b) level in the frame moving at c, over [T/2, T].

    A positive drift means the front outruns the frame (no stationary profile).
    Recorded, not asserted.
    """
    if c < 0:
        raise ValueError("probe speed must be >= 0")
    if kappa is not None:
        cfg = replace(cfg, right_bc="exp", right_rate=kappa)
    solver = FrameSolver(p, c, replace(cfg, coupling="self"))
    u0 = GridFunction(cfg.xl, cfg.dx, front_datum(p, cfg.x, kappa))
    tr = solver.run(u0, T, sample_every=sample_every)
    window = (T / 2, T)
    drift, err = spreading_speed(tr, window)
    return ProbeReport(c=c, drift=drift, stderr=err, advancing=drift > 0,
                       final_front=tr.front[-1], window=window)
