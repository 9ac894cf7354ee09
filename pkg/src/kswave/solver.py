"""Moving-frame solver for

    u_t = u_xx + (c - chi Psi_x) u_x + (a - chi Psi_xx - b u) u,   Psi = Psi(.; w, c, tau)

with w = u (self-consistent coupling, Psi rebuilt every step) or w = u_env
fixed (frozen coupling).  c = 0 gives the lab frame.

Space: second-order centred diffusion and advection; a node falls back to
first-order upwind advection only when its cell Peclet number |v| dx / 2
exceeds 1, so the implicit operator is always an M-matrix.  Time: IMEX Euler
(diffusion + advection implicit, reaction explicit) or fully explicit Euler.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import linregress

from .constants import SystemParams
from .kernel import GridFunction, PsiField, TailModel, psi_field

log = logging.getLogger(__name__)

SCHEMES = ("imex", "explicit")
LEFT_BCS = ("no-flux", "fixed")
RIGHT_BCS = ("fixed", "exp", "no-flux")


class ConfigError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    def __init__(self, t: float, u: GridFunction, cap: float):
        super().__init__(f"max u = {float(np.max(u.values)):.6g} exceeded cap {cap:.6g} at t = {t:.6g}")
        self.t = t
        self.u = u


@dataclass(frozen=True)
class SolverConfig:
    xl: float = -50.0
    xr: float = 50.0
    n: int = 1024
    dt: float = 0.01
    scheme: str = "imex"
    left_bc: str = "no-flux"
    left_value: float | None = None  # fixed left value; None means a/b
    right_bc: str = "fixed"
    right_value: float = 0.0  # fixed right value
    right_rate: float = 0.0  # decay rate for the exponential right boundary
    coupling: str = "self"  # "self" or "frozen"
    blowup_cap: float = 1e6
    max_clip_fraction: float = 1e-6

    def __post_init__(self):
        if not self.xl < self.xr:
            raise ConfigError(f"need xl < xr, got [{self.xl}, {self.xr}]")
        if self.n < 64:
            raise ConfigError(f"need n >= 64 nodes, got {self.n}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.left_bc not in LEFT_BCS:
            raise ConfigError(f"left_bc must be one of {LEFT_BCS}, got {self.left_bc!r}")
        if self.right_bc not in RIGHT_BCS:
            raise ConfigError(f"right_bc must be one of {RIGHT_BCS}, got {self.right_bc!r}")
        if self.right_bc == "exp" and not self.right_rate > 0:
            raise ConfigError("exponential right boundary needs right_rate > 0")
        if self.coupling not in ("self", "frozen"):
            raise ConfigError(f"coupling must be 'self' or 'frozen', got {self.coupling!r}")
        if not (math.isfinite(self.right_value) and self.right_value >= 0):
            raise ConfigError("right_value must be finite and >= 0")
        if not self.blowup_cap > 0:
            raise ConfigError("blowup_cap must be > 0")

    @property
    def dx(self) -> float:
        return (self.xr - self.xl) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.xl, self.xr, self.n)

    def tails(self) -> TailModel:
        """Kernel tails consistent with the boundary conditions."""
        if self.right_bc == "fixed":
            if self.right_value == 0.0:
                return TailModel(None, 0.0, None)
            return TailModel(None, 0.0, self.right_rate)
        if self.right_bc == "exp":
            return TailModel(None, 0.0, self.right_rate)
        return TailModel.constant()


@dataclass(frozen=True)
class State:
    t: float
    u: GridFunction
    psi_field: PsiField


@dataclass
class Trace:
    t: list = field(default_factory=list)
    umax: list = field(default_factory=list)
    umin: list = field(default_factory=list)
    front: list = field(default_factory=list)
    dist_u: list = field(default_factory=list)
    dist_v: list = field(default_factory=list)
    clipped: list = field(default_factory=list)
    final: State | None = None

    def rows(self):
        for i in range(len(self.t)):
            yield {"t": self.t[i], "dist_u": self.dist_u[i], "dist_v": self.dist_v[i],
                   "umax": self.umax[i], "umin": self.umin[i]}


def front_position(u: GridFunction, level: float) -> float | None:
    """Rightmost crossing of `level`, linearly interpolated; None if u never crosses."""
    s = u.values - level
    cross = np.flatnonzero((s[:-1] * s[1:] <= 0) & ((s[:-1] != 0) | (s[1:] != 0)))
    if cross.size == 0:
        return None
    i = int(cross[-1])
    if s[i] == s[i + 1]:
        return float(u.x0 + u.dx * i)
    return float(u.x0 + u.dx * (i + s[i] / (s[i] - s[i + 1])))


def spreading_speed(trace: Trace, window: tuple[float, float]) -> tuple[float, float]:
    """Least-squares slope of front position vs time on `window`; (slope, stderr)."""
    t = np.asarray(trace.t, dtype=float)
    xf = np.array([np.nan if f is None else f for f in trace.front], dtype=float)
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if np.count_nonzero(sel) < 8:
        raise ValueError(f"only {np.count_nonzero(sel)} samples in window {window}; need >= 8")
    if np.any(np.isnan(xf[sel])):
        raise ValueError("front position undefined inside the window")
    fit = linregress(t[sel], xf[sel])
    return float(fit.slope), float(fit.stderr)


class FrameSolver:
    """Time stepper bound to one parameter set, frame speed and grid."""

    def __init__(self, p: SystemParams, c: float, cfg: SolverConfig,
                 u_env: GridFunction | None = None, env_tails: TailModel | None = None):
        self.p, self.c, self.cfg = p, c, cfg
        self.h = cfg.dx
        self.x = cfg.x
        self.tails = cfg.tails()
        self.left_value = p.u_plateau if cfg.left_value is None else cfg.left_value
        self.frozen: PsiField | None = None
        if cfg.coupling == "frozen":
            if u_env is None:
                raise ConfigError("frozen coupling needs u_env")
            self._check_grid(u_env)
            self.frozen = psi_field(u_env, env_tails or self.tails, p, c)
        self._g = math.exp(-cfg.right_rate * self.h) if cfg.right_bc == "exp" else None

    def _check_grid(self, g: GridFunction):
        if g.n != self.cfg.n or not math.isclose(g.x0, self.cfg.xl, abs_tol=1e-9) \
                or not math.isclose(g.dx, self.h, rel_tol=1e-9):
            raise ConfigError("grid function does not match the solver grid")

    def field_for(self, u: GridFunction) -> PsiField:
        if self.frozen is not None:
            return self.frozen
        return psi_field(u, self.tails, self.p, self.c)

    def initial_state(self, u0: GridFunction, t0: float = 0.0) -> State:
        self._check_grid(u0)
        u0 = self._apply_dirichlet(u0)
        return State(t0, u0, self.field_for(u0))

    def _apply_dirichlet(self, u: GridFunction) -> GridFunction:
        v = u.values
        fix_l = self.cfg.left_bc == "fixed" and v[0] != self.left_value
        fix_r = self.cfg.right_bc == "fixed" and v[-1] != self.cfg.right_value
        if not (fix_l or fix_r):
            return u
        v = v.copy()
        if self.cfg.left_bc == "fixed":
            v[0] = self.left_value
        if self.cfg.right_bc == "fixed":
            v[-1] = self.cfg.right_value
        return u.with_values(v)

    # -- spatial operator -------------------------------------------------

    def velocity(self, f: PsiField) -> np.ndarray:
        return self.c - self.p.chi * f.psi_x.values

    def reaction(self, u: np.ndarray, f: PsiField) -> np.ndarray:
        return self.p.a - self.p.chi * f.psi_xx.values - self.p.b * u

    def bands(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(lower, diag, upper) of the diffusion-advection operator.

        lower[i], upper[i] multiply u[i-1], u[i+1].  Rows of Dirichlet nodes
        are zero.
        """
        h = self.h
        ih2 = 1.0 / (h * h)
        lo = np.full(v.size, ih2)
        up = np.full(v.size, ih2)
        dg = np.full(v.size, -2.0 * ih2)
        central = np.abs(v) * h <= 2.0
        half = v / (2.0 * h)
        lo = np.where(central, lo - half, lo + np.where(v < 0, -v / h, 0.0))
        up = np.where(central, up + half, up + np.where(v > 0, v / h, 0.0))
        dg = np.where(central, dg, dg - np.abs(v) / h)

        cfg = self.cfg
        if cfg.left_bc == "no-flux":
            lo[0], up[0], dg[0] = 0.0, 2.0 * ih2, -2.0 * ih2
        else:
            lo[0] = up[0] = dg[0] = 0.0
        if cfg.right_bc == "no-flux":
            lo[-1], up[-1], dg[-1] = 2.0 * ih2, 0.0, -2.0 * ih2
        elif cfg.right_bc == "exp":
            # ghost node u[n] = g u[n-1]
            g = self._g
            w = v[-1]
            if abs(w) * h <= 2.0:
                lo[-1] = ih2 - w / (2 * h)
                dg[-1] = (g - 2.0) * ih2 + w * g / (2 * h)
            elif w > 0:
                lo[-1] = ih2
                dg[-1] = (g - 2.0) * ih2 + w * (g - 1.0) / h
            else:
                lo[-1] = ih2 - w / h
                dg[-1] = (g - 2.0) * ih2 + w / h
            up[-1] = 0.0
        else:
            lo[-1] = up[-1] = dg[-1] = 0.0
        return lo, dg, up

    def apply_operator(self, u: np.ndarray, f: PsiField) -> np.ndarray:
        """Full spatial right-hand side L u + r u (zero at Dirichlet nodes)."""
        lo, dg, up = self.bands(self.velocity(f))
        out = dg * u
        out[1:] += lo[1:] * u[:-1]
        out[:-1] += up[:-1] * u[1:]
        r = self.reaction(u, f) * u
        if self.cfg.left_bc == "fixed":
            r[0] = 0.0
        if self.cfg.right_bc == "fixed":
            r[-1] = 0.0
        return out + r

    # -- time stepping ----------------------------------------------------

    def stable_dt(self, f: PsiField) -> float:
        vmax = float(np.max(np.abs(self.velocity(f))))
        lim = 0.4 * self.h / vmax if vmax > 0 else math.inf
        if self.cfg.scheme == "explicit":
            lim = min(lim, 0.4 * self.h * self.h / 2.0)
        return lim

    def step(self, s: State) -> tuple[State, float]:
        """One time step; returns the new state and the clipped mass."""
        cfg = self.cfg
        dt = cfg.dt
        f = s.psi_field
        lim = self.stable_dt(f)
        if dt > lim:
            raise ConfigError(f"dt = {dt:.4g} violates the stability gate dt <= {lim:.4g} at t = {s.t:.6g}; reduce dt")
        u = s.u.values
        if cfg.scheme == "explicit":
            new = u + dt * self.apply_operator(u, f)
        else:
            v = self.velocity(f)
            rhs = u + dt * self.reaction(u, f) * u
            lo, dg, up = self.bands(v)
            ab = np.empty((3, u.size))
            ab[0, 0] = 0.0
            ab[0, 1:] = -dt * up[:-1]
            ab[1] = 1.0 - dt * dg
            ab[2, :-1] = -dt * lo[1:]
            ab[2, -1] = 0.0
            if cfg.left_bc == "fixed":
                rhs[0] = self.left_value
            if cfg.right_bc == "fixed":
                rhs[-1] = cfg.right_value
            new = solve_banded((1, 1), ab, rhs, check_finite=False)
        if cfg.left_bc == "fixed":
            new[0] = self.left_value
        if cfg.right_bc == "fixed":
            new[-1] = cfg.right_value
        if not np.all(np.isfinite(new)):
            raise SolverError(f"non-finite values at t = {s.t + dt:.6g}")
        clipped = 0.0
        negative = new < 0
        if np.any(negative):
            clipped = float(-np.sum(new[negative])) * self.h
            total = float(np.sum(np.abs(new))) * self.h
            new = np.where(negative, 0.0, new)
            if clipped > cfg.max_clip_fraction * max(total, 1e-300):
                raise SolverError(f"clipped mass {clipped:.3g} exceeds {cfg.max_clip_fraction:g} "
                                  f"of total mass {total:.3g} at t = {s.t + dt:.6g}")
        g = s.u.with_values(new)
        if float(np.max(new)) > cfg.blowup_cap:
            raise BlowUpError(s.t + dt, g, cfg.blowup_cap)
        return State(s.t + dt, g, self.field_for(g)), clipped

    def run(self, u0: GridFunction, T: float, sample_every: float = 1.0,
            level: float | None = None, probe: tuple[float, float] | None = None,
            callback=None) -> Trace:
        """Advance to time T, sampling every `sample_every` time units.

        `level` defaults to a/(2b); `probe` restricts the infimum to a window.
        `callback(state)` is invoked at each sample.
        """
        p = self.p
        level = p.u_plateau / 2 if level is None else level
        nsteps = int(round(T / self.cfg.dt))
        every = max(1, int(round(sample_every / self.cfg.dt)))
        mask = np.ones(self.cfg.n, bool) if probe is None else \
            (self.x >= probe[0]) & (self.x <= probe[1])
        tr = Trace()
        s = self.initial_state(u0)
        clipped = 0.0

        def sample(st: State):
            u = st.u.values
            tr.t.append(st.t)
            tr.umax.append(float(np.max(u)))
            tr.umin.append(float(np.min(u[mask])))
            tr.front.append(front_position(st.u, level))
            tr.dist_u.append(float(np.max(np.abs(u - p.u_plateau))))
            tr.dist_v.append(float(np.max(np.abs(st.psi_field.psi.values - p.v_plateau))))
            tr.clipped.append(clipped)
            if callback is not None:
                callback(st)

        sample(s)
        t0 = s.t
        for k in range(1, nsteps + 1):
            s, cm = self.step(s)
            s = replace(s, t=t0 + k * self.cfg.dt)  # no accumulated round-off in sample times
            clipped += cm
            if k % every == 0 or k == nsteps:
                sample(s)
        if clipped > 0:
            log.info("total clipped mass %.3g over %d steps", clipped, nsteps)
        tr.final = s
        return tr


def rhs(state: State, p: SystemParams, c: float, cfg: SolverConfig) -> GridFunction:
    """Spatial right-hand side at `state`, using its cached Psi field."""
    solver = FrameSolver(p, c, replace(cfg, coupling="self"))
    vals = solver.apply_operator(state.u.values, state.psi_field)
    if not np.all(np.isfinite(vals)):
        raise SolverError("non-finite right-hand side")
    return state.u.with_values(vals)


def step(state: State, cfg: SolverConfig, p: SystemParams, c: float,
         u_env: GridFunction | None = None) -> State:
    return FrameSolver(p, c, cfg, u_env).step(state)[0]


def run(u0: GridFunction, T: float, cfg: SolverConfig, p: SystemParams, c: float,
        u_env: GridFunction | None = None, **kw) -> Trace:
    return FrameSolver(p, c, cfg, u_env).run(u0, T, **kw)
