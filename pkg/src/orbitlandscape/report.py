"""Delimited and JSON outputs.

Every CSV starts with a ``#META`` line holding the resolved configuration as
JSON, followed by a header row.  Floats are written with 17 significant digits
so files round-trip exactly and byte comparisons detect any numeric drift.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _plain(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("#META " + json.dumps(_plain(meta), sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    return path


def read_csv(path: Path) -> tuple[dict, list[str], np.ndarray]:
    """Meta header, column names and numeric body of a file written by :func:`write_csv`."""
    with open(path) as fh:
        meta = json.loads(fh.readline()[len("#META ") :])
        cols = fh.readline().strip().split(",")
        body = [[float(x) for x in line.split(",")] for line in fh if line.strip()]
    return meta, cols, np.array(body).reshape(len(body), len(cols))


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n")
    return path


def write_gnuplot(
    path: Path, csv_name: str, x: int, ys: Sequence[int], title: str, logscale_y: bool = False, style: str = "lines"
) -> Path:
    """Plot script reading columns of a CSV written by :func:`write_csv` (1-based column numbers)."""
    lines = [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        f"set title '{title}'",
        "set terminal pngcairo size 900,600",
        f"set output '{Path(csv_name).stem}.gnuplot.png'",
    ]
    if logscale_y:
        lines.append("set logscale y")
    plots = ", ".join(f"'{csv_name}' using {x}:{y} with {style}" for y in ys)
    lines.append(f"plot {plots}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
