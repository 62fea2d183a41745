"""CSV and JSON persistence with reproducible number rendering."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    # 17 significant digits round-trips every double
    return format(float(x), ".17g")


def write_csv(path, header: list[str], columns: list) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c).ravel() for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("all CSV columns must have the same length")
    def render(c):
        if np.issubdtype(c.dtype, np.integer) or c.dtype == bool:
            return lambda v: str(int(v))
        if c.dtype.kind in "USO":
            return str
        return fmt

    renderers = [render(c) for c in cols]
    with path.open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in range(n):
            fh.write(",".join(f(c[r]) for c, f in zip(cols, renderers)) + "\n")
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, k] for k, name in enumerate(header)}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
