"""Plain-text vector collections.

Header line ``length count``, then ``count`` lines holding one vector each as
17-significant-digit decimals. An optional leading scalar per line (used for
eigenvalues) precedes the vector entries.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_vectors(path, rows, leading=None) -> None:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[None, :]
    count, length = rows.shape
    lines = [f"{length} {count}"]
    for i in range(count):
        vals = rows[i] if leading is None else np.concatenate([[leading[i]], rows[i]])
        lines.append(" ".join(f"{x:.17g}" for x in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_vectors(path, leading: bool = False):
    lines = Path(path).read_text().splitlines()
    length, count = (int(t) for t in lines[0].split())
    width = length + int(leading)
    data = np.array(
        [[float(t) for t in ln.split()] for ln in lines[1 : 1 + count]], dtype=float
    ).reshape(count, width)
    if leading:
        return data[:, 0].copy(), data[:, 1:].copy()
    return data
