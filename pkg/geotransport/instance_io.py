"""Plain-text instance and map formats.

Instance: first line ``d n``, then n lines of d coordinates followed by the supply.
Map: one ``src dst amount`` line per row, 0-based indices.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from geotransport.core import TransportInstance, TransportationMap, validate_instance
from geotransport.errors import InstanceValidationError

logger = logging.getLogger("geotransport.io")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def parse_instance(text: str, tolerance: float | None = None) -> TransportInstance:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InstanceValidationError("Instance file is empty")
    header = lines[0]
    if len(header) != 2:
        raise InstanceValidationError(f"Header must be 'd n', got {' '.join(header)!r}")
    try:
        d, n = int(header[0]), int(header[1])
    except ValueError as exc:
        raise InstanceValidationError(f"Header must hold two integers: {exc}") from exc
    rows = lines[1:]
    if len(rows) != n:
        raise InstanceValidationError(f"Header announces {n} points, found {len(rows)} rows")
    try:
        table = np.array([[float(tok) for tok in row] for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise InstanceValidationError(f"Non-numeric token in instance: {exc}") from exc
    if n and (table.ndim != 2 or table.shape[1] != d + 1):
        raise InstanceValidationError(f"Every row must hold {d} coordinates and a supply")
    if n == 0:
        table = np.zeros((0, d + 1))
    return validate_instance(table[:, :d], table[:, d], tolerance)


def read_instance(path: str | Path, tolerance: float | None = None) -> TransportInstance:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InstanceValidationError(f"Cannot read instance file {path}: {exc}") from exc
    instance = parse_instance(text, tolerance)
    logger.info("Loaded instance %s (n=%d, d=%d)", path, instance.n, instance.d)
    return instance


def format_instance(instance: TransportInstance) -> str:
    out = [f"{instance.d} {instance.n}"]
    for row, mu in zip(instance.points.tolist(), instance.supplies.tolist()):
        out.append(" ".join(_fmt(x) for x in row) + " " + _fmt(mu))
    return "\n".join(out) + "\n"


def write_instance(path: str | Path, instance: TransportInstance) -> None:
    Path(path).write_text(format_instance(instance), encoding="utf-8")


def format_map(tmap: TransportationMap) -> str:
    return "".join(f"{s} {t} {_fmt(a)}\n" for s, t, a in tmap)


def write_map(path: str | Path, tmap: TransportationMap) -> None:
    Path(path).write_text(format_map(tmap), encoding="utf-8")


def parse_map(text: str) -> TransportationMap:
    entries = []
    for ln in text.splitlines():
        parts = ln.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise InstanceValidationError(f"Map rows must be 'src dst amount', got {ln!r}")
        try:
            entries.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise InstanceValidationError(f"Bad map row {ln!r}: {exc}") from exc
    return TransportationMap.from_entries(entries)


def read_map(path: str | Path) -> TransportationMap:
    return parse_map(Path(path).read_text(encoding="utf-8"))
