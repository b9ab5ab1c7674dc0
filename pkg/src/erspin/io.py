"""File formats: atomic writes, echo-trace CSV + JSON sidecar, tabular CSV, plot specs.

Every number is written with 12 significant digits and every column name
carries its SI unit suffix.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from erspin.echodecay import EchoTrace
from erspin.errors import ConfigError, DomainError

FMT = ".12g"


def fmt(v: float) -> str:
    return format(float(v), FMT)


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(doc) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, doc) -> Path:
    return atomic_write_text(path, dumps_json(doc))


def read_json(path: str | Path):
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc


def table_csv(columns: dict[str, np.ndarray]) -> str:
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in zip(*cols):
        buf.write(",".join(fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_table_csv(path: str | Path, columns: dict[str, np.ndarray]) -> Path:
    return atomic_write_text(path, table_csv(columns))


def read_table_csv(path: str | Path, required: tuple[str, ...] = ()) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise ConfigError(f"{path}: missing columns {missing}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def sidecar_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def read_trace(csv_path: str | Path) -> EchoTrace:
    """Load ``t12_s,t23_s,amplitude[,sigma]`` plus the ``{temperature_K, field_T, sequence}`` sidecar."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(str(csv_path))
    side = sidecar_path(csv_path)
    if not side.exists():
        raise FileNotFoundError(str(side))
    cols = read_table_csv(csv_path, ("t12_s", "t23_s", "amplitude"))
    meta = read_json(side)
    try:
        T = float(meta["temperature_K"])
        B = float(meta["field_T"])
        seq = str(meta["sequence"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{side}: sidecar needs temperature_K, field_T and sequence ({exc})") from exc
    extra = {}
    if meta.get("T1e_s") is not None:
        extra["T1e_s"] = float(meta["T1e_s"])
    try:
        return EchoTrace(seq, cols["t12_s"], cols["t23_s"], cols["amplitude"], T, B,
                         sigma=cols.get("sigma"), meta=extra)
    except DomainError as exc:
        raise ConfigError(f"{csv_path}: {exc}") from exc


def write_trace(csv_path: str | Path, trace: EchoTrace) -> tuple[Path, Path]:
    cols = {"t12_s": trace.t12, "t23_s": trace.t23, "amplitude": trace.amplitude}
    if trace.sigma is not None:
        cols["sigma"] = trace.sigma
    side = {"temperature_K": trace.temperature, "field_T": trace.field, "sequence": trace.sequence}
    if "T1e_s" in trace.meta:
        side["T1e_s"] = trace.meta["T1e_s"]
    return write_table_csv(csv_path, cols), write_json(sidecar_path(csv_path), side)


def plot_spec(title: str, data_file: str, x: dict, y: dict, series: list[dict]) -> dict:
    """Declarative description of a figure built from a CSV data file.

    ``x``/``y`` give ``{"column", "label", "scale"}``; each series names the
    columns it draws and an optional ``group_by`` column.
    """
    return {"title": title, "data": data_file, "x": x, "y": y, "series": series}
