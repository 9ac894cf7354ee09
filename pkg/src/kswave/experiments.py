"""Experiment drivers behind the command line.

Each `cmd_*` takes a resolved config, an output directory and an EventLog,
writes its CSV and returns the result payload.  Hypothesis and configuration
refusals raise Refusal; numerical failures propagate as runtime errors.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import product

import numpy as np

from .config import MAX_SWEEP_CELLS
from .constants import (SystemParams, b_star, c_star, check_hypotheses, decay_rates,
                        kappa_of_speed, kappa_star)
from .kernel import GridFunction, TailModel, psi_field
from .records import write_csv
from .solver import FrameSolver, SolverConfig, SolverError, spreading_speed
from .wave import (FixedPointConfig, HypothesisError, WaveError, construct_wave, minimal_speed_probe,
                   wave_residuals)


class Refusal(ValueError):
    """Hypothesis or configuration refusal (exit status 2)."""


def params_from(cfg: dict) -> SystemParams:
    try:
        return SystemParams(chi=cfg["model.chi"], mu=cfg["model.mu"], lam=cfg["model.lambda"],
                            a=cfg["model.a"], b=cfg["model.b"], tau=cfg["model.tau"])
    except ValueError as e:
        raise Refusal(str(e)) from None


def solver_from(cfg: dict, **over) -> SolverConfig:
    kw = dict(xl=cfg["solver.xl"], xr=cfg["solver.xr"], n=cfg["solver.n"], dt=cfg["solver.dt"],
              scheme=cfg["solver.scheme"], left_bc=cfg["solver.left_bc"],
              blowup_cap=cfg["solver.blowup_cap"])
    kw.update(over)
    try:
        return SolverConfig(**kw)
    except ValueError as e:
        raise Refusal(str(e)) from None


def _csv_path(out: str, name: str) -> str:
    return os.path.join(out, name)


# -- constants --------------------------------------------------------------

CONSTANTS_HEADER = ["chi", "mu", "lambda", "a", "b", "tau", "c", "lambda1", "lambda2", "B",
                    "b_star", "kappa_star", "c_star", "H1", "H2", "H3", "H4"]


def constants_row(p: SystemParams, c: float) -> dict:
    r = decay_rates(p, c)
    bs = b_star(p)
    h = check_hypotheses(p, bs)
    row = {"chi": p.chi, "mu": p.mu, "lambda": p.lam, "a": p.a, "b": p.b, "tau": p.tau, "c": c,
           "lambda1": r.lambda1, "lambda2": r.lambda2, "B": r.B, "b_star": bs,
           "kappa_star": kappa_star(p), "c_star": c_star(p)}
    row.update(h.as_dict())
    return row


def cmd_constants(cfg: dict, out: str, log) -> dict:
    p = params_from(cfg)
    c = cfg["constants.c"]
    if not c > 0:
        raise Refusal(f"constants.c must be > 0, got {c}")
    row = constants_row(p, c)
    write_csv(_csv_path(out, "constants.csv"), CONSTANTS_HEADER, [row])
    return row


# -- kernel self-test -------------------------------------------------------

KERNEL_HEADER = ["check", "value", "tolerance", "status"]


def _smooth_density(rng: np.random.Generator, k: int = 4):
    centres = rng.uniform(-8, 8, k)
    widths = rng.uniform(1.0, 3.0, k)
    heights = rng.uniform(0.2, 1.0, k)

    def f(x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(heights * np.exp(-((x - centres) / widths) ** 2), axis=-1)
    return f


def elliptic_defect(u: GridFunction, tails: TailModel, p: SystemParams, c: float) -> float:
    """Interior sup of the elliptic residual with Psi_xx from centred differences."""
    f = psi_field(u, tails, p, c)
    v, h = f.psi.values, u.dx
    d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2
    return float(np.max(np.abs(d2 - f.psi_xx.values[1:-1])))


def refinement_ratios(p: SystemParams, c: float, f, xl: float, xr: float, ns) -> list[float]:
    errs = []
    for n in ns:
        u = GridFunction.sample(f, xl, xr, n)
        errs.append(elliptic_defect(u, TailModel(0.0, 0.0, None), p, c))
    return [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]


def kernel_checks(p: SystemParams, c: float, xl: float, xr: float, n: int,
                  rng: np.random.Generator) -> list[dict]:
    rows = []

    def add(name, value, tol, ok):
        rows.append({"check": name, "value": value, "tolerance": tol, "status": "ok" if ok else "failed"})

    r = decay_rates(p, c)
    M = 1.7
    u = GridFunction.sample(lambda x: np.full_like(x, M), xl, xr, n)
    f = psi_field(u, TailModel.constant(), p, c)
    err = float(np.max(np.abs(f.psi.values / (p.mu * M / p.lam) - 1)))
    add("constant_psi_rel_error", err, 1e-12, err <= 1e-12)
    gx = float(np.max(np.abs(f.psi_x.values)))
    add("constant_psi_x_abs", gx, 1e-12, gx <= 1e-12)

    kappa = min(0.5, 0.5 * r.lambda1)
    u = GridFunction.sample(lambda x: np.exp(-kappa * x), xl, xr, n)
    tails = TailModel(math.exp(-kappa * xl), kappa, kappa)
    f = psi_field(u, tails, p, c)
    x = u.x
    exact = p.mu * r.B * np.exp(-kappa * x) * (1 / (r.lambda1 - kappa) + 1 / (r.lambda2 + kappa))
    inner = slice(1, -1)
    err = float(np.max(np.abs(f.psi.values[inner] / exact[inner] - 1)))
    add("exponential_psi_rel_error", err, 1e-8, err <= 1e-8)
    err = float(np.max(np.abs(f.psi_x.values[inner] / (-kappa * exact[inner]) - 1)))
    add("exponential_psi_x_rel_error", err, 1e-8, err <= 1e-8)

    ratios = refinement_ratios(p, c, _smooth_density(rng), -20.0, 20.0, (401, 801, 1601))
    worst = max(abs(q / 4 - 1) for q in ratios)
    add("elliptic_refinement_ratio", ratios[-1], 0.15, worst <= 0.15)

    excess = -math.inf
    for _ in range(20):
        v = np.abs(rng.normal(size=n)) * (rng.uniform(size=n) < 0.7)
        u = GridFunction.sample(lambda x: v, xl, xr, n)
        f = psi_field(u, TailModel(0.0, 0.0, None), p, c)
        excess = max(excess, float(np.max(np.abs(f.psi_x.values) - r.lambda1 * f.psi.values)))
    add("gradient_bound_excess", excess, 1e-10, excess <= 1e-10)
    return rows


def cmd_kernel_test(cfg: dict, out: str, log) -> dict:
    p = params_from(cfg)
    c = cfg["constants.c"]
    if not c > 0:
        raise Refusal(f"constants.c must be > 0, got {c}")
    rng = np.random.default_rng(cfg["run.seed"])
    rows = kernel_checks(p, c, cfg["solver.xl"], cfg["solver.xr"], cfg["solver.n"], rng)
    write_csv(_csv_path(out, "kernel_test.csv"), KERNEL_HEADER, rows)
    failed = [r["check"] for r in rows if r["status"] != "ok"]
    if failed:
        raise SolverError(f"kernel checks failed: {', '.join(failed)}")
    return {"checks": rows}


# -- wave -------------------------------------------------------------------

WAVE_HEADER = ["x", "U", "V", "Psi_x", "residual_u", "residual_v"]


def fixed_point_from(cfg: dict) -> FixedPointConfig:
    try:
        return FixedPointConfig(solver=solver_from(cfg), inner_tol=cfg["wave.inner_tol"],
                                outer_tol=cfg["wave.outer_tol"], max_inner_time=cfg["wave.max_inner_time"],
                                max_outer_iters=cfg["wave.max_outer_iters"], eta=cfg["wave.eta"],
                                d_factor=cfg["wave.d_factor"])
    except ValueError as e:
        raise Refusal(str(e)) from None


def cmd_wave(cfg: dict, out: str, log) -> dict:
    p = params_from(cfg)
    c = cfg["wave.c"]
    h = check_hypotheses(p)
    if not h.H2:
        raise Refusal(f"H2 fails: b ≤ b*τχμ (b = {p.b!r}, b*τχμ = {b_star(p) * p.chi * p.mu!r})")
    cs = c_star(p)
    if not c > cs:
        raise Refusal(f"wave.c = {c!r} must exceed c*(tau) = {cs!r}")
    fp = fixed_point_from(cfg)

    def progress(k, diff, inner):
        log.emit("step-summary", outer_iter=k, change=diff, inner_time=inner.t,
                 inner_steps=inner.steps, max_time_increase=inner.max_time_increase)

    try:
        w = construct_wave(p, c, fp, start=cfg["wave.start"], progress=progress)
    except HypothesisError as e:
        raise Refusal(str(e)) from None
    ru, rv = wave_residuals(w, p, fp)
    write_csv(_csv_path(out, "wave.csv"), WAVE_HEADER,
              zip(w.U.x, w.U.values, w.V.values, w.psi_x.values, ru, rv))
    env = w.envelope
    return {"c": c, "kappa": w.kappa, "eta": env.eta, "D": env.D, "M": env.M,
            "diagnostics": w.diagnostics}


# -- spreading speed --------------------------------------------------------

SPEED_HEADER = ["chi", "a", "c", "speed", "stderr", "t1", "t2", "final_front", "status"]


def compact_bump(p: SystemParams, x: np.ndarray, width: float) -> np.ndarray:
    return p.u_plateau * np.clip(1.0 - (x / width) ** 2, 0.0, None)


def measure_speed(p: SystemParams, scfg: SolverConfig, c: float, T: float, window: tuple[float, float],
                  sample_every: float = 0.5, width: float = 5.0) -> dict:
    """Front speed of the a/(2b) level from a compact bump, in the frame moving at c."""
    solver = FrameSolver(p, c, replace(scfg, coupling="self", right_bc="fixed", right_value=0.0))
    u0 = GridFunction(scfg.xl, scfg.dx, compact_bump(p, scfg.x, width))
    tr = solver.run(u0, T, sample_every=sample_every)
    fronts = [f for t, f in zip(tr.t, tr.front) if window[0] <= t <= window[1]]
    margin = 5.0
    if any(f is None for f in fronts) or max(fronts) > scfg.xr - margin:
        raise SolverError(f"front lost (absent or within {margin} of xR = {scfg.xr}) inside "
                          f"window {window}; enlarge the domain")
    slope, err = spreading_speed(tr, window)
    return {"speed": slope, "stderr": err, "final_front": tr.front[-1]}


def cmd_speed(cfg: dict, out: str, log) -> dict:
    p = params_from(cfg)
    window = (cfg["speed.window_start"], cfg["speed.window_end"])
    if not 0 <= window[0] < window[1] <= cfg["speed.T"]:
        raise Refusal(f"speed window {window} must lie inside [0, speed.T]")
    res = measure_speed(p, solver_from(cfg), cfg["speed.c"], cfg["speed.T"], window,
                        cfg["speed.sample_every"], cfg["speed.bump_width"])
    row = {"chi": p.chi, "a": p.a, "c": cfg["speed.c"], "t1": window[0], "t2": window[1],
           "status": "ok", **res}
    write_csv(_csv_path(out, "speed.csv"), SPEED_HEADER, [row])
    return row


# -- stability --------------------------------------------------------------

STABILITY_HEADER = ["t", "dist_u", "dist_v", "umax", "umin"]


def cmd_stability(cfg: dict, out: str, log) -> dict:
    p = params_from(cfg)
    if not check_hypotheses(p).H3:
        raise Refusal(f"H3 fails: b ≤ 2χμ (b = {p.b!r}, 2χμ = {2 * p.chi * p.mu!r})")
    scfg = solver_from(cfg, right_bc="no-flux", coupling="self")
    x = scfg.x
    u0 = cfg["stability.u0_mean"] + cfg["stability.u0_amp"] * np.sin(2 * np.pi * x / cfg["stability.u0_period"])
    if not np.min(u0) > 0:
        raise Refusal("stability needs inf u0 > 0")
    solver = FrameSolver(p, cfg["stability.c"], scfg)
    every = max(1, int(round(cfg["stability.sample_every"] / scfg.dt)))
    period = max(1, int(round(5.0 / (every * scfg.dt))))
    count = [0]

    def on_sample(s):
        if count[0] % period == 0:
            log.emit("step-summary", t=s.t, umax=float(np.max(s.u.values)), umin=float(np.min(s.u.values)))
        count[0] += 1

    tr = solver.run(GridFunction(scfg.xl, scfg.dx, u0), cfg["stability.T"],
                    sample_every=cfg["stability.sample_every"], callback=on_sample)
    write_csv(_csv_path(out, "stability.csv"), STABILITY_HEADER, tr.rows())
    return {"final_t": tr.t[-1], "final_dist_u": tr.dist_u[-1], "final_dist_v": tr.dist_v[-1],
            "final_distance": tr.dist_u[-1] + tr.dist_v[-1]}


# -- sweeps -----------------------------------------------------------------

SWEEP_TAU_CHI_HEADER = ["tau", "chi", "b_star", "kappa_star", "c_star", "H1", "H2", "H3", "H4",
                        "speed", "speed_stderr", "status"]
SWEEP_C_HEADER = ["c", "kappa", "drift", "drift_stderr", "advancing", "status"]


def _failed(e: Exception) -> str:
    msg = str(e).splitlines()[0] if str(e) else type(e).__name__
    return f"failed:{msg}"


def _tau_chi_cell(job) -> dict:
    p, tau, chi, speed_args = job
    row = {"tau": tau, "chi": chi}
    try:
        q = replace(p, tau=tau, chi=chi)
        bs = b_star(q)
        row.update(b_star=bs, kappa_star=kappa_star(q), c_star=c_star(q))
        row.update(check_hypotheses(q, bs).as_dict())
        if speed_args is not None:
            res = measure_speed(q, *speed_args)
            row.update(speed=res["speed"], speed_stderr=res["stderr"])
        row["status"] = "ok"
    except Exception as e:  # recorded in-row; the sweep continues
        row["status"] = _failed(e)
    return row


def _c_cell(job) -> dict:
    p, c, scfg, T = job
    row = {"c": c}
    try:
        kappa = kappa_of_speed(p.a, c) if c > 2 * math.sqrt(p.a) else None
        row["kappa"] = kappa
        r = minimal_speed_probe(p, c, scfg, T=T, kappa=kappa)
        row.update(drift=r.drift, drift_stderr=r.stderr, advancing=r.advancing, status="ok")
    except Exception as e:
        row["status"] = _failed(e)
    return row


def _run_cells(fn, jobs, threads: int):
    if threads == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        # map preserves submission order, so rows come back in grid order
        return list(ex.map(fn, jobs))


def cmd_sweep(cfg: dict, out: str, log) -> dict:
    p = params_from(cfg)
    threads = cfg["run.threads"]
    scfg = solver_from(cfg)
    if cfg["sweep.mode"] == "tau-chi":
        taus = cfg["sweep.tau"] or (p.tau,)
        chis = cfg["sweep.chi"] or (p.chi,)
        if len(taus) * len(chis) > MAX_SWEEP_CELLS:
            raise Refusal(f"sweep has {len(taus) * len(chis)} cells; limit is {MAX_SWEEP_CELLS}")
        speed_args = None
        if cfg["sweep.measure_speed"]:
            speed_args = (scfg, 0.0, cfg["speed.T"], (cfg["speed.window_start"], cfg["speed.window_end"]),
                          cfg["speed.sample_every"], cfg["speed.bump_width"])
        jobs = [(p, tau, chi, speed_args) for tau, chi in product(taus, chis)]
        rows = _run_cells(_tau_chi_cell, jobs, threads)
        header = SWEEP_TAU_CHI_HEADER
    else:
        cs = cfg["sweep.c"]
        if not cs:
            raise Refusal("sweep.mode = c needs sweep.c values")
        if len(cs) > MAX_SWEEP_CELLS:
            raise Refusal(f"sweep has {len(cs)} cells; limit is {MAX_SWEEP_CELLS}")
        jobs = [(p, c, scfg, cfg["sweep.probe_T"]) for c in cs]
        rows = _run_cells(_c_cell, jobs, threads)
        header = SWEEP_C_HEADER
    for i, row in enumerate(rows):
        log.emit("step-summary", cell=i, status=row["status"])
    write_csv(_csv_path(out, "sweep.csv"), header, rows)
    failed = sum(1 for r in rows if r["status"] != "ok")
    return {"cells": len(rows), "failed": failed}


COMMANDS = {
    "constants": cmd_constants,
    "kernel-test": cmd_kernel_test,
    "wave": cmd_wave,
    "speed": cmd_speed,
    "stability": cmd_stability,
    "sweep": cmd_sweep,
}

RUNTIME_ERRORS = (SolverError, WaveError, ArithmeticError, RuntimeError)
