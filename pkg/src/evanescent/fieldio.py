"""FIELD2D files and CSV helpers.

A FIELD2D file is one ASCII header line::

    FIELD2D n_x n_y x_min y_min h_x h_y dtype

followed by raw little-endian float64 values in storage order (x-major,
y fastest).  Complex data are interleaved re/im pairs.  Floats in the header
use ``repr`` so the grid round-trips exactly.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .grid import ComplexField2D, Grid2D, ScalarField2D

_DTYPES = {"real64": np.dtype("<f8"), "complex128": np.dtype("<c16")}


def write_field(path, field, dtype: str | None = None) -> None:
    grid = field.grid
    if dtype is None:
        dtype = "complex128" if np.iscomplexobj(field.values) else "real64"
    if dtype not in _DTYPES:
        raise ValueError(f"unknown FIELD2D dtype {dtype!r}")
    if dtype == "real64" and np.iscomplexobj(field.values):
        if np.any(field.values.imag != 0):
            raise ValueError("complex field with nonzero imaginary part cannot be stored as real64")
    header = "FIELD2D {} {} {!r} {!r} {!r} {!r} {}\n".format(
        grid.n_x_pts, grid.n_y_pts, float(grid.x_min), float(grid.y_min),
        float(grid.h_x), float(grid.h_y), dtype)
    data = np.ascontiguousarray(np.real(field.values) if dtype == "real64" else field.values,
                                dtype=_DTYPES[dtype])
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())
    os.replace(tmp, path)


def read_header(fh) -> tuple[Grid2D, str]:
    line = fh.readline().decode("ascii").split()
    if len(line) != 8 or line[0] != "FIELD2D":
        raise ValueError("not a FIELD2D file")
    n_x, n_y = int(line[1]), int(line[2])
    x_min, y_min, h_x, h_y = (float(v) for v in line[3:7])
    if line[7] not in _DTYPES:
        raise ValueError(f"unknown FIELD2D dtype {line[7]!r}")
    return Grid2D.from_counts(n_x, n_y, x_min, y_min, h_x, h_y), line[7]


def read_field(path):
    """Load a FIELD2D file as ScalarField2D or ComplexField2D."""
    with open(path, "rb") as fh:
        grid, dtype = read_header(fh)
        data = np.frombuffer(fh.read(), dtype=_DTYPES[dtype])
    if data.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {data.size}")
    cls = ComplexField2D if dtype == "complex128" else ScalarField2D
    return cls(grid, data.reshape(grid.shape).astype(cls._dtype))


def map_field(path) -> np.memmap:
    """Read-only memmap of a FIELD2D file's values, shape (n_x, n_y)."""
    with open(path, "rb") as fh:
        grid, dtype = read_header(fh)
        offset = fh.tell()
    return np.memmap(path, dtype=_DTYPES[dtype], mode="r", offset=offset, shape=grid.shape)


class FieldStack:
    """Sequence of FIELD2D files on one grid, opened lazily as memmaps."""

    def __init__(self, paths):
        self.paths = [Path(p) for p in paths]
        self.grid = None
        for p in self.paths:
            with open(p, "rb") as fh:
                grid, _ = read_header(fh)
            if self.grid is None:
                self.grid = grid
            elif grid != self.grid:
                raise ValueError(f"{p}: grid differs from {self.paths[0]}")
        self._maps: dict[int, np.memmap] = {}

    def __len__(self):
        return len(self.paths)

    @property
    def shape(self):
        return (len(self),) + (self.grid.shape if self.grid is not None else (0, 0))

    def __getitem__(self, n: int) -> np.ndarray:
        n = range(len(self))[n]
        if n not in self._maps:
            self._maps[n] = map_field(self.paths[n])
        return self._maps[n]


def fmt(v) -> str:
    """12 significant digits, '.' decimal; blanks for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            return ""
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path, columns: list[str], rows) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])
    os.replace(tmp, path)


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
