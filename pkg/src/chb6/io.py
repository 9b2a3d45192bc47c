"""Raw field snapshots and CSV output.

A snapshot is a pair ``<stem>.json`` (header) + ``<stem>.bin`` (flat
little-endian float64 payload in row-major axis order).
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from chb6.spectral import GridSpec


def write_field(stem: str | Path, grid: GridSpec, values: np.ndarray, **meta) -> Path:
    stem = Path(stem)
    values = np.ascontiguousarray(values, dtype="<f8")
    lead = values.shape[: values.ndim - grid.dim]
    if values.shape[values.ndim - grid.dim :] != grid.shape:
        raise ValueError("array does not live on the grid")
    header = {
        "dim": grid.dim,
        "sizes": list(grid.sizes),
        "lengths": list(grid.lengths),
        "dtype": "f64le",
        "components": int(np.prod(lead)) if lead else 1,
        "shape": list(values.shape),
        "payload": stem.name + ".bin",
        **meta,
    }
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".bin").write_bytes(values.tobytes(order="C"))
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return stem.with_suffix(".json")


def read_field(path: str | Path) -> tuple[GridSpec, np.ndarray]:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    header = json.loads(path.read_text())
    if header.get("dtype") != "f64le":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    grid = GridSpec(tuple(header["sizes"]), tuple(header["lengths"]))
    payload = path.parent / header.get("payload", path.stem + ".bin")
    data = np.frombuffer(payload.read_bytes(), dtype="<f8")
    shape = tuple(header.get("shape", grid.shape))
    if data.size != int(np.prod(shape)):
        raise ValueError(f"payload has {data.size} values, header expects {int(np.prod(shape))}")
    return grid, data.reshape(shape).astype(np.float64)


def fmt(x) -> str:
    """Shortest round-trip text for floats, empty for NaN and None."""
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return ""
        return repr(float(x))
    return str(x)


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(x) for x in row])
    return path
