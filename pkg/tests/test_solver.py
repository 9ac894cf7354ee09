import math

import numpy as np
import pytest
from scipy.sparse import diags
from scipy.sparse.linalg import spsolve

from kswave.constants import SystemParams
from kswave.kernel import GridFunction, psi_field
from kswave.solver import (BlowUpError, ConfigError, FrameSolver, SolverConfig, SolverError, Trace,
                           front_position, rhs, run, spreading_speed, step)

H3 = SystemParams(chi=0.3, mu=1.0, lam=1.0, a=1.0, b=1.0, tau=1.0)
H1_ONLY = SystemParams(chi=0.6, mu=1.0, lam=1.0, a=1.0, b=1.0, tau=1.0)
KPP = SystemParams(chi=0.0, mu=1.0, lam=1.0, a=1.0, b=1.0, tau=1.0)


def bump(x, width=5.0, height=1.0):
    return height * np.clip(1 - (x / width) ** 2, 0, None)


# -- independent scalar Fisher-KPP oracles: u_t = u_xx + c u_x + (a - b u) u --------

def kpp_matrix(n, h, c):
    """Centred D2 + c D1; node 0 mirrored (no flux), node n-1 held at zero."""
    lo = np.full(n - 1, 1 / h ** 2 - c / (2 * h))
    up = np.full(n - 1, 1 / h ** 2 + c / (2 * h))
    dg = np.full(n, -2 / h ** 2)
    up[0] = 2 / h ** 2
    lo[-1] = 0.0
    dg[-1] = 0.0
    return diags([lo, dg, up], [-1, 0, 1], format="csc")


def kpp_explicit(u0, h, dt, T, a, b, c=0.0):
    A = kpp_matrix(u0.size, h, c)
    u = u0.copy()
    u[-1] = 0.0
    for _ in range(int(round(T / dt))):
        u = u + dt * (A @ u + (a - b * u) * u)
        u[-1] = 0.0
    return u


def kpp_imex(u0, h, dt, T, a, b, c=0.0):
    A = kpp_matrix(u0.size, h, c)
    I = diags([np.ones(u0.size)], [0], format="csc")
    u = u0.copy()
    u[-1] = 0.0
    for _ in range(int(round(T / dt))):
        r = u + dt * (a - b * u) * u
        r[-1] = 0.0
        u = spsolve(I - dt * A, r)
    return u


# -- configuration ------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(xl=1, xr=0), dict(n=10), dict(dt=0), dict(scheme="rk4"),
                                dict(left_bc="open"), dict(right_bc="open"),
                                dict(right_bc="exp", right_rate=0.0), dict(coupling="lagged"),
                                dict(blowup_cap=0), dict(right_value=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SolverConfig(**kw)


def test_frozen_needs_envelope():
    with pytest.raises(ConfigError):
        FrameSolver(H3, 1.0, SolverConfig(coupling="frozen"))


def test_grid_mismatch():
    s = FrameSolver(H3, 1.0, SolverConfig(n=101))
    with pytest.raises(ConfigError):
        s.initial_state(GridFunction.sample(np.ones_like, -50, 50, 103))


def test_stability_gate():
    cfg = SolverConfig(xl=-10, xr=10, n=201, dt=0.1)
    s = FrameSolver(H3, 5.0, cfg)
    st = s.initial_state(GridFunction.sample(bump, -10, 10, 201))
    with pytest.raises(ConfigError, match="stability gate"):
        s.step(st)
    ex = FrameSolver(H3, 0.0, SolverConfig(xl=-10, xr=10, n=201, dt=0.005, scheme="explicit"))
    with pytest.raises(ConfigError):
        ex.step(ex.initial_state(GridFunction.sample(bump, -10, 10, 201)))


# -- right-hand side ----------------------------------------------------------

@pytest.mark.parametrize("c", [0.0, 1.0, 2.5])
def test_rhs_vanishes_at_positive_state(c):
    cfg = SolverConfig(xl=-20, xr=20, n=401, right_bc="no-flux")
    s = FrameSolver(H3, c, cfg)
    st = s.initial_state(GridFunction.sample(lambda x: np.full_like(x, H3.u_plateau), -20, 20, 401))
    assert np.max(np.abs(rhs(st, H3, c, cfg).values)) <= 1e-10


def test_rhs_vanishes_at_zero():
    cfg = SolverConfig(xl=-20, xr=20, n=401)
    st = FrameSolver(H3, 1.0, cfg).initial_state(GridFunction.sample(np.zeros_like, -20, 20, 401))
    assert not np.any(rhs(st, H3, 1.0, cfg).values)


@pytest.mark.parametrize("c", [0.0, 1.5])
def test_rhs_decoupled_matches_fisher_kpp(c):
    n, xl, xr = 401, -20.0, 20.0
    cfg = SolverConfig(xl=xl, xr=xr, n=n)
    x = cfg.x
    u = KPP.u_plateau + 1e-3 * np.exp(-x ** 2)
    u[-1] = 0.0
    st = FrameSolver(KPP, c, cfg).initial_state(GridFunction.on(x, u))
    got = rhs(st, KPP, c, cfg).values
    want = kpp_matrix(n, cfg.dx, c) @ u + (KPP.a - KPP.b * u) * u
    want[-1] = 0.0
    assert np.max(np.abs(got - want)) <= 1e-12


# -- stepping -----------------------------------------------------------------

def test_positive_state_is_fixed():
    cfg = SolverConfig(xl=-20, xr=20, n=401, right_bc="no-flux", dt=0.01)
    s = FrameSolver(H3, 1.0, cfg)
    st = s.initial_state(GridFunction.sample(lambda x: np.full_like(x, 1.0), -20, 20, 401))
    for _ in range(100):
        new = step(st, cfg, H3, 1.0)
        assert np.max(np.abs(new.u.values - st.u.values)) <= 1e-10 * cfg.dt
        st = new
    assert np.max(np.abs(st.psi_field.psi.values - H3.v_plateau)) <= 1e-10


def test_zero_state_is_fixed():
    cfg = SolverConfig(xl=-20, xr=20, n=401, dt=0.01)
    tr = run(GridFunction.sample(np.zeros_like, -20, 20, 401), 1.0, cfg, H3, 1.0)
    assert tr.final.u.values.max() == 0.0


@pytest.mark.parametrize("c", [0.0, 1.5])
def test_decoupled_imex_matches_oracle(c):
    cfg = SolverConfig(xl=-30, xr=30, n=601, dt=0.005)
    u0 = GridFunction.sample(bump, -30, 30, 601)
    got = run(u0, 1.0, cfg, KPP, c).final.u.values
    want = kpp_imex(u0.values, cfg.dx, cfg.dt, 1.0, KPP.a, KPP.b, c)
    assert np.max(np.abs(got - want)) <= 1e-6


def test_decoupled_explicit_matches_oracle():
    cfg = SolverConfig(xl=-30, xr=30, n=601, dt=0.002, scheme="explicit")
    u0 = GridFunction.sample(bump, -30, 30, 601)
    got = run(u0, 1.0, cfg, KPP, 0.0).final.u.values
    want = kpp_explicit(u0.values, cfg.dx, cfg.dt, 1.0, KPP.a, KPP.b)
    assert np.max(np.abs(got - want)) <= 1e-6


def test_homogeneous_state_follows_logistic_map():
    # constant data: Psi is constant, so each step is explicit Euler for u' = u (a - b u)
    cfg = SolverConfig(xl=-20, xr=20, n=201, right_bc="no-flux", dt=0.01)
    u0 = 2 * H3.u_plateau
    tr = run(GridFunction.sample(lambda x: np.full_like(x, u0), -20, 20, 201), 5.0, cfg, H3, 1.0,
             sample_every=0.01)
    u = u0
    euler = [u]
    for _ in range(len(tr.t) - 1):
        u = u + cfg.dt * u * (H3.a - H3.b * u)
        euler.append(u)
    assert np.allclose(tr.umax, euler, rtol=1e-12)
    assert np.all(np.diff(tr.dist_u) < 0)
    t = np.array(tr.t)
    exact = H3.a / (H3.b + (H3.a / u0 - H3.b) * np.exp(-H3.a * t))
    assert np.max(np.abs(np.array(tr.umax) - exact)) < 5e-3


def test_bound_over_thousand_steps():
    kappa = 0.5
    cfg = SolverConfig(xl=-30, xr=50, n=801, dt=0.01, right_bc="exp", right_rate=kappa)
    u0 = GridFunction.sample(lambda x: np.minimum(1.0, np.exp(-kappa * x)), -30, 50, 801)
    cap = max(1.0, H1_ONLY.ceiling) + 1e-8
    tr = run(u0, 10.0, cfg, H1_ONLY, 1.0, sample_every=0.01)
    assert len(tr.t) == 1001
    assert max(tr.umax) <= cap


def test_bound_random_data():
    rng = np.random.default_rng(11)
    cfg = SolverConfig(xl=-30, xr=30, n=601, dt=0.01, right_bc="no-flux")
    x = cfg.x
    M = H1_ONLY.ceiling
    for _ in range(10):
        k = rng.integers(1, 5)
        v = sum(rng.uniform(0.1, 1) * np.exp(-((x - rng.uniform(-20, 20)) / rng.uniform(1, 6)) ** 2)
                for _ in range(k))
        v *= rng.uniform(0.1, 2 * M) / v.max()
        tr = run(GridFunction.on(x, v), 20.0, cfg, H1_ONLY, rng.uniform(0, 2), sample_every=0.1)
        assert max(tr.umax) <= max(v.max(), M) + 1e-8


def test_blowup_error_carries_state():
    cfg = SolverConfig(xl=-10, xr=10, n=201, dt=0.01, blowup_cap=0.9, right_bc="no-flux")
    u0 = GridFunction.sample(lambda x: np.full_like(x, 0.5), -10, 10, 201)
    with pytest.raises(BlowUpError) as e:
        run(u0, 5.0, cfg, H1_ONLY, 0.0)
    assert e.value.t > 0 and e.value.u.values.max() > 0.9


def test_clipping_abort():
    cfg = SolverConfig(xl=-10, xr=10, n=201, dt=0.01, right_bc="no-flux")
    u0 = GridFunction.sample(lambda x: np.full_like(x, 300.0), -10, 10, 201)
    with pytest.raises(SolverError, match="clipped mass"):
        run(u0, 0.1, cfg, KPP, 0.0)


def test_comparison_frozen():
    n, xl, xr = 601, -30.0, 30.0
    x = np.linspace(xl, xr, n)
    env = GridFunction.on(x, 0.8 * bump(x, 10.0))
    cfg = SolverConfig(xl=xl, xr=xr, n=n, dt=0.01, coupling="frozen")
    rng = np.random.default_rng(3)
    lo = GridFunction.on(x, bump(x, 6.0, 0.7))
    hi = GridFunction.on(x, lo.values + rng.uniform(0, 0.3, n) * (np.abs(x) < 20))
    s = FrameSolver(H3, 1.0, cfg, env)
    a, b = s.initial_state(lo), s.initial_state(hi)
    for k in range(500):
        a, _ = s.step(a)
        b, _ = s.step(b)
        if k % 100 == 99:
            assert np.all(a.u.values <= b.u.values + 1e-8)


def test_second_order_refinement():
    sols = []
    for n, dt in [(201, 0.004), (401, 0.001), (801, 0.00025)]:
        cfg = SolverConfig(xl=-20, xr=20, n=n, dt=dt, right_bc="no-flux")
        u0 = GridFunction.sample(lambda x: 0.5 + 0.4 * np.exp(-x ** 2 / 4), -20, 20, n)
        sols.append(run(u0, 1.0, cfg, H3, 1.0, sample_every=1.0).final.u.values)
    e1 = np.max(np.abs(sols[0] - sols[1][::2]))
    e2 = np.max(np.abs(sols[1] - sols[2][::2]))
    assert e1 / e2 == pytest.approx(4.0, rel=0.2)


def test_run_samples_and_determinism():
    cfg = SolverConfig(xl=-30, xr=30, n=301, dt=0.01)
    u0 = GridFunction.sample(bump, -30, 30, 301)
    t1 = run(u0, 2.0, cfg, H3, 0.5, sample_every=0.25)
    t2 = run(u0, 2.0, cfg, H3, 0.5, sample_every=0.25)
    assert np.all(np.diff(t1.t) > 0)
    assert t1.t[-1] == 2.0
    assert np.array_equal(t1.final.u.values, t2.final.u.values)
    assert list(t1.rows())[0].keys() == {"t", "dist_u", "dist_v", "umax", "umin"}


def test_constant_trace_is_flat():
    cfg = SolverConfig(xl=-20, xr=20, n=201, right_bc="no-flux")
    tr = run(GridFunction.sample(lambda x: np.ones_like(x), -20, 20, 201), 2.0, cfg, H3, 1.0)
    assert max(tr.dist_u) <= 1e-10 and max(tr.dist_v) <= 1e-10


def test_probe_window_infimum_recovers():
    cfg = SolverConfig(xl=-50, xr=50, n=1001, dt=0.01, right_bc="no-flux")
    u0 = GridFunction.sample(lambda x: 0.2 + 0.1 * np.cos(x / 3), -50, 50, 1001)
    tr = FrameSolver(H3, 1.0, cfg).run(u0, 20.0, probe=(-10.0, 10.0))
    assert tr.umin[-1] > tr.umin[0]
    assert abs(tr.umin[-1] - H3.u_plateau) < 1e-3


def test_psi_recomputed_each_step():
    cfg = SolverConfig(xl=-30, xr=30, n=301, dt=0.01)
    s = FrameSolver(H3, 1.0, cfg)
    st, _ = s.step(s.initial_state(GridFunction.sample(bump, -30, 30, 301)))
    again = psi_field(st.u, cfg.tails(), H3, 1.0)
    assert np.array_equal(st.psi_field.psi.values, again.psi.values)


# -- front tracking -----------------------------------------------------------

def test_front_position_exponential():
    u = GridFunction.sample(lambda x: np.exp(-x), -10, 10, 2001)
    assert abs(front_position(u, math.exp(-2)) - 2.0) <= u.dx


def test_front_position_absent():
    u = GridFunction.sample(lambda x: np.full_like(x, 1.0), -10, 10, 101)
    assert front_position(u, 0.5) is None


def test_front_position_rightmost():
    u = GridFunction.sample(lambda x: bump(x, 5.0), -10, 10, 2001)
    assert front_position(u, 0.75) == pytest.approx(2.5, abs=1e-2)


@pytest.mark.parametrize("s", [0.37, 1.0, 3.21])
def test_front_position_translation(s):
    f = lambda x: 1 / (1 + np.exp(x))
    u = GridFunction.sample(f, -20, 20, 4001)
    v = GridFunction.sample(lambda x: f(x - s), -20, 20, 4001)
    assert abs(front_position(v, 0.5) - front_position(u, 0.5) - s) <= u.dx


def test_spreading_speed_synthetic():
    rng = np.random.default_rng(0)
    tr = Trace()
    tr.t = list(np.linspace(0, 40, 81))
    tr.front = list(2 * np.array(tr.t) + rng.normal(0, 1e-3, 81))
    slope, err = spreading_speed(tr, (20, 40))
    assert slope == pytest.approx(2.0, abs=1e-2)
    assert err < 1e-3


def test_spreading_speed_errors():
    tr = Trace()
    tr.t = [0.0, 1.0, 2.0]
    tr.front = [0.0, 1.0, 2.0]
    with pytest.raises(ValueError, match="need >= 8"):
        spreading_speed(tr, (0, 2))
    tr.t = list(range(10))
    tr.front = [None] + list(range(9))
    with pytest.raises(ValueError, match="undefined"):
        spreading_speed(tr, (0, 9))


def test_lab_frame_kpp_speed():
    cfg = SolverConfig(xl=-100, xr=100, n=2001, dt=0.02)
    u0 = GridFunction.sample(bump, -100, 100, 2001)
    tr = run(u0, 40.0, cfg, KPP, 0.0, sample_every=0.5)
    slope, _ = spreading_speed(tr, (20, 40))
    assert 1.9 <= slope <= 2.0
