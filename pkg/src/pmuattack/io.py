"""CSV helpers for complex matrices.

A logical column ``j`` is stored as two physical columns ``re_j`` and
``im_j`` so that real and complex data share one format.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def write_complex_csv(path, A) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    header = []
    for j in range(A.shape[1]):
        header += [f"re_{j}", f"im_{j}"]
    interleaved = np.empty((A.shape[0], 2 * A.shape[1]))
    interleaved[:, 0::2] = A.real
    interleaved[:, 1::2] = A.imag
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in interleaved:
            writer.writerow([repr(float(v)) for v in row])


def read_complex_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    if len(header) % 2:
        raise ValueError(f"{path}: expected re/im column pairs")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return data[:, 0::2] + 1j * data[:, 1::2]


def read_matrix(path) -> np.ndarray:
    """Complex CSV, dropped to real when every imaginary part is zero."""
    A = read_complex_csv(path)
    return A.real.copy() if not np.any(A.imag) else A


def write_mask_csv(path, mask) -> None:
    mask = np.asarray(mask, dtype=int)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"c_{j}" for j in range(mask.shape[1])])
        writer.writerows(mask.tolist())


def read_mask_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([[int(v) for v in row] for row in reader], dtype=bool)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def json_safe(obj):
    """Recursively replace non-finite floats with ``None`` and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(json_safe(v) for v in obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if hasattr(obj, "value") and hasattr(obj, "name"):  # Enum
        return obj.value
    return obj
