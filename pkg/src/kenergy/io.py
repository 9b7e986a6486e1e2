"""JSON reports and CSV series with deterministic formatting."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from kenergy.convex_core import GridConvexFn, PwaConvexFn
from kenergy.errors import ConfigError


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_record"):
        return _plain(obj.to_record())
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_plain(report), indent=2, sort_keys=True) + "\n"


def write_json(path, report: dict) -> None:
    Path(path).write_text(dumps(report))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    return format(float(x), ".17g")


def csv_text(columns, rows, convention: str) -> str:
    """CSV with a header row; the last column records the convention on every row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(columns) + ["convention"])
    for row in rows:
        w.writerow([_fmt(x) for x in row] + [convention])
    return buf.getvalue()


def write_csv(path, columns, rows, convention: str) -> None:
    Path(path).write_text(csv_text(columns, rows, convention))


def read_function(path):
    """Load a :class:`GridConvexFn` or :class:`PwaConvexFn` from its JSON record."""
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    kind = rec.get("kind")
    if kind == "pwa" or (kind is None and ("breakpoints" in rec or "affine_forms" in rec)):
        return PwaConvexFn.from_record(rec)
    if kind in (None, "grid"):
        try:
            return GridConvexFn.from_record(rec)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path} is not a function record: {exc}") from exc
    raise ConfigError(f"unknown function kind {kind!r} in {path}")
