"""Plain-text run configuration: one `section.key = value` per line, `#` comments.

Unknown keys and malformed values are rejected with their line number.  Keys
left unset take the defaults below; solver keys marked "auto" take a default
that depends on the experiment (see EXPERIMENT_SOLVER).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

AUTO = "auto"


class ConfigParseError(ValueError):
    pass


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s: str) -> int:
    return int(s, 10)


def _bool(s: str) -> bool:
    t = s.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _choice(*options):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _optional(parse):
    def wrapped(s: str):
        return None if s == AUTO else parse(s)
    wrapped.optional = True
    return wrapped


def float_list(s: str) -> tuple[float, ...]:
    """Comma list `0,0.1,0.2` or inclusive range `start:stop:count`."""
    s = s.strip()
    if not s:
        return ()
    if ":" in s:
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError("range must be start:stop:count")
        lo, hi, n = _float(parts[0]), _float(parts[1]), _int(parts[2])
        if n < 1:
            raise ValueError("range count must be >= 1")
        if n == 1:
            return (lo,)
        return tuple(lo + (hi - lo) * i / (n - 1) for i in range(n))
    return tuple(_float(t) for t in s.split(","))


def _format_list(v) -> str:
    return ",".join(repr(float(t)) for t in v)


@dataclass(frozen=True)
class Key:
    parse: object
    default: object
    doc: str


KEYS: dict[str, Key] = {
    "model.chi": Key(_float, 0.3, "chemotactic sensitivity"),
    "model.mu": Key(_float, 1.0, "chemical production rate"),
    "model.lambda": Key(_float, 1.0, "chemical degradation rate"),
    "model.a": Key(_float, 1.0, "intrinsic growth rate"),
    "model.b": Key(_float, 1.0, "logistic damping"),
    "model.tau": Key(_float, 1.0, "chemical time constant"),
    "constants.c": Key(_float, 2.5, "frame speed for the kernel rates"),
    "solver.xl": Key(_optional(_float), None, "left end of the domain"),
    "solver.xr": Key(_optional(_float), None, "right end of the domain"),
    "solver.n": Key(_optional(_int), None, "number of grid nodes"),
    "solver.dt": Key(_optional(_float), None, "time step"),
    "solver.scheme": Key(_choice("imex", "explicit"), "imex", "time integrator"),
    "solver.left_bc": Key(_choice("no-flux", "fixed"), "no-flux", "left boundary"),
    "solver.blowup_cap": Key(_float, 1e6, "abort when max u exceeds this"),
    "wave.c": Key(_float, 2.5, "wave speed"),
    "wave.eta": Key(_optional(_float), None, "envelope gap; auto = centred default"),
    "wave.d_factor": Key(_float, 10.0, "D = d_factor * smallest admissible D"),
    "wave.inner_tol": Key(_float, 1e-8, "inner stopping rate"),
    "wave.outer_tol": Key(_float, 1e-6, "outer stopping tolerance"),
    "wave.max_inner_time": Key(_float, 2000.0, "inner time limit"),
    "wave.max_outer_iters": Key(_int, 60, "outer iteration limit"),
    "wave.start": Key(_choice("upper", "lower"), "upper", "outer initial envelope"),
    "speed.c": Key(_float, 0.0, "frame speed of the measurement (0 = lab frame)"),
    "speed.T": Key(_float, 40.0, "horizon"),
    "speed.window_start": Key(_float, 20.0, "regression window start"),
    "speed.window_end": Key(_float, 40.0, "regression window end"),
    "speed.sample_every": Key(_float, 0.5, "sampling cadence"),
    "speed.bump_width": Key(_float, 5.0, "half-width of the compact initial bump"),
    "stability.c": Key(_float, 1.0, "frame speed"),
    "stability.T": Key(_float, 30.0, "horizon"),
    "stability.u0_mean": Key(_float, 0.5, "initial datum mean"),
    "stability.u0_amp": Key(_float, 0.3, "initial datum sine amplitude"),
    "stability.u0_period": Key(_float, 20.0, "initial datum sine period"),
    "stability.sample_every": Key(_float, 0.5, "sampling cadence"),
    "sweep.mode": Key(_choice("tau-chi", "c"), "tau-chi", "grid type"),
    "sweep.tau": Key(float_list, (), "tau values; empty = model.tau"),
    "sweep.chi": Key(float_list, (), "chi values; empty = model.chi"),
    "sweep.c": Key(float_list, (), "frame speeds for mode c"),
    "sweep.measure_speed": Key(_bool, False, "also measure the lab-frame speed per cell"),
    "sweep.probe_T": Key(_float, 40.0, "horizon of the drift probe in mode c"),
    "run.seed": Key(_int, 0, "random seed"),
    "run.threads": Key(_int, 1, "worker count for sweeps"),
}

# experiment-specific values for the "auto" solver keys: (xl, xr, n, dt)
EXPERIMENT_SOLVER = {
    "constants": (-40.0, 80.0, 4096, 0.004),
    "kernel-test": (-1.0, 1.0, 4096, 0.01),
    "wave": (-40.0, 80.0, 4096, 0.004),
    "speed": (-100.0, 100.0, 2001, 0.02),
    "stability": (-50.0, 50.0, 2048, 0.01),
    "sweep": (-100.0, 100.0, 2001, 0.02),
}

MAX_SWEEP_CELLS = 10_000


def parse_text(text: str, source: str = "<config>") -> dict:
    """Raw assignments from config text; values parsed, defaults not applied."""
    out: dict = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in KEYS:
            raise ConfigParseError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigParseError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        try:
            out[key] = KEYS[key].parse(value)
        except ValueError as e:
            raise ConfigParseError(f"{source}:{lineno}: bad value {value!r} for {key}: {e}") from None
        seen[key] = lineno
    return out


def load(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), path)


def resolve(raw: dict, experiment: str) -> dict:
    """Full key -> value map with defaults and experiment-specific solver values."""
    if experiment not in EXPERIMENT_SOLVER:
        raise ConfigParseError(f"unknown experiment {experiment!r}")
    cfg = {k: raw.get(k, spec.default) for k, spec in KEYS.items()}
    for key, value in zip(("solver.xl", "solver.xr", "solver.n", "solver.dt"), EXPERIMENT_SOLVER[experiment]):
        if cfg[key] is None:
            cfg[key] = value
    if cfg["run.threads"] < 1:
        raise ConfigParseError("run.threads must be >= 1")
    return cfg


def format_value(v) -> str:
    if v is None:
        return AUTO
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return _format_list(v)
    return str(v)


def dump(cfg: dict) -> str:
    """Config text that parses back to `cfg`."""
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.items())


def jsonable(cfg: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}
