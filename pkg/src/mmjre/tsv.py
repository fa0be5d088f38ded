"""Labelled matrix dumps as tab-separated text."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _clean(label) -> str:
    return str(label).replace("\t", " ").replace("\n", " ")


def write_matrix(path, matrix, row_labels, col_labels) -> None:
    matrix = np.asarray(matrix)
    if matrix.shape != (len(row_labels), len(col_labels)):
        raise ValueError(f"matrix shape {matrix.shape} does not match labels "
                         f"({len(row_labels)}, {len(col_labels)})")
    lines = ["\t".join([""] + [_clean(c) for c in col_labels])]
    for label, row in zip(row_labels, matrix):
        lines.append("\t".join([_clean(label)] + [_fmt(v) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix(path, dtype=float):
    """Inverse of :func:`write_matrix`; returns ``(matrix, row_labels, col_labels)``."""
    lines = Path(path).read_text(encoding="utf-8").rstrip("\n").split("\n")
    cols = lines[0].split("\t")[1:]
    rows, values = [], []
    for line in lines[1:]:
        parts = line.split("\t")
        rows.append(parts[0])
        values.append([dtype(v) if dtype is not str else v for v in parts[1:]])
    return np.array(values, dtype=object if dtype is str else dtype), rows, cols
