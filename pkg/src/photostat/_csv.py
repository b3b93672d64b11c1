"""Plain CSV with a one-line header, used by every export."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_columns(path, names, columns) -> None:
    columns = [np.asarray(c) for c in columns]
    n = len(columns[0]) if columns else 0
    if any(len(c) != n for c in columns):
        raise ValueError("columns differ in length")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*columns):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_matrix(path, matrix, row_labels, col_labels, corner="t1_ps\\t2_ps") -> None:
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        fh.write(",".join([corner] + [_fmt(c) for c in col_labels]) + "\n")
        for lab, row in zip(row_labels, matrix):
            fh.write(",".join([_fmt(lab)] + [_fmt(v) for v in row]) + "\n")


def read_columns(path) -> dict[str, np.ndarray]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty CSV")
        rows = [r for r in reader if r]
    out = {}
    for j, name in enumerate(header):
        out[name.strip()] = np.array([float(r[j]) for r in rows], dtype=float)
    return out
