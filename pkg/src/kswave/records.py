"""CSV tables and the NDJSON event log."""

from __future__ import annotations

import csv
import json
import math
import os
import time

import numpy as np


def fmt(v) -> str:
    """Shortest round-trip decimal for floats, lower-case booleans, empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str, header: list[str], rows) -> int:
    """RFC-4180 CSV with LF line endings; rows are sequences or dicts keyed by header."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(k) for k in header]
            w.writerow([fmt(v) for v in row])
            n += 1
    return n


def columns_csv(path: str, header: list[str], cols) -> int:
    return write_csv(path, header, zip(*cols))


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


class EventLog:
    """One JSON object per line: start, step-summary, result, error."""

    KINDS = ("start", "step-summary", "result", "error")

    def __init__(self, path: str):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="\n")

    def emit(self, kind: str, /, **payload):
        if kind not in self.KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        obj = {"event": kind, "wall": round(time.time(), 3)}
        obj.update(_clean(payload))
        self._fh.write(json.dumps(obj, sort_keys=False, allow_nan=False) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
