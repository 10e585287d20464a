"""Artifact writers: full-precision CSV and 8-bit PGM heatmaps.

CSV files are the lossless ground truth; PGM renderings use symmetric
min/max scaling around zero with the scale recorded in a JSON sidecar so
sign information survives quantization.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def fmt(value: float) -> str:
    return "%.17g" % float(value)


def write_csv_rows(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_csv_matrix(path: str | Path, array: np.ndarray) -> Path:
    path = Path(path)
    array = np.atleast_2d(np.asarray(array, dtype=np.float64))
    lines = [",".join(fmt(v) for v in row) for row in array]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv_matrix(path: str | Path) -> np.ndarray:
    rows = [
        [float(v) for v in line.split(",")]
        for line in Path(path).read_text().strip().splitlines()
    ]
    return np.array(rows)


def write_pgm(path: str | Path, values: np.ndarray) -> Path:
    """Binary PGM with symmetric scaling; zero maps to mid-gray.

    The sidecar ``<path>.json`` records vmin/vmax so the original signs
    and magnitudes can be recovered approximately from the image.
    """
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    scale = float(np.max(np.abs(values), initial=0.0))
    if scale == 0.0:
        scale = 1.0
    scaled = (values + scale) / (2.0 * scale) * 255.0
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n"
    path.write_bytes(header.encode("ascii") + pixels.tobytes())
    sidecar = {"vmin": -scale, "vmax": scale, "zero_level": 127.5}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def write_heatmap(stem: str | Path, values: np.ndarray) -> None:
    """Lossless CSV plus PGM rendering under a common stem."""
    stem = Path(stem)
    write_csv_matrix(stem.with_suffix(".csv"), values)
    write_pgm(stem.with_suffix(".pgm"), values)


def array_checksum(values: np.ndarray) -> str:
    return hashlib.sha256(
        np.ascontiguousarray(values, dtype=np.float64).tobytes()
    ).hexdigest()
