"""kswave-lab: constants, kernel self-test, wave construction, speed, stability, sweeps.

Exit status: 0 ok, 1 runtime failure, 2 hypothesis or configuration refusal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import config as config_mod
from .experiments import COMMANDS, RUNTIME_ERRORS, Refusal
from .records import EventLog, ensure_dir

EXIT_OK, EXIT_RUNTIME, EXIT_REFUSED = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kswave-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
    ap.add_argument("--threads", type=int, help="sweep workers (overrides run.threads)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _u64(v: int) -> int:
    if not 0 <= v < 2 ** 64:
        raise config_mod.ConfigParseError(f"--seed must be an unsigned 64-bit integer, got {v}")
    return v


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = config_mod.load(args.config)
        if args.seed is not None:
            raw["run.seed"] = _u64(args.seed)
        if args.threads is not None:
            raw["run.threads"] = args.threads
        cfg = config_mod.resolve(raw, args.command)
    except (config_mod.ConfigParseError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_REFUSED

    out = ensure_dir(args.out)
    stem = args.command.replace("-", "_")
    with open(os.path.join(out, f"{stem}.resolved.cfg"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(config_mod.dump(cfg))
    with EventLog(os.path.join(out, f"{stem}.ndjson")) as log:
        log.emit("start", command=args.command, config=config_mod.jsonable(cfg))
        try:
            result = COMMANDS[args.command](cfg, out, log)
        except (Refusal, ValueError) as e:  # includes stability-gate and parameter-range errors
            log.emit("error", kind="refusal", message=str(e))
            print(f"refused: {e}", file=sys.stderr)
            return EXIT_REFUSED
        except RUNTIME_ERRORS as e:
            log.emit("error", kind="runtime", message=str(e))
            print(f"failed: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        log.emit("result", command=args.command, status="ok", result=result)
    print(json.dumps({"command": args.command, "status": "ok", "out": out}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
