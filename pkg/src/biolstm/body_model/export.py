"""Wavefront OBJ export."""

from pathlib import Path

import numpy as np


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray | None = None) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in np.asarray(vertices)]
    if faces is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj_vertices(path: str | Path) -> np.ndarray:
    rows = [
        [float(t) for t in line.split()[1:4]]
        for line in Path(path).read_text().splitlines()
        if line.startswith("v ")
    ]
    return np.asarray(rows)
