"""Binary rasterization of local segment sets into birds-eye-view grids.

The grid covers the world square [-extent, +extent]^2; world y grows upward
and maps to row 0 at the top.  Lines are drawn with integer stepping
(8-connected, no antialiasing); endpoint cells are always set, so a raster of
a superset of segments is always a superset of cells.  Cells are stored
row-major, top row first.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Segment


@dataclass(frozen=True)
class GridSpec:
    width_px: int = 128
    height_px: int = 128
    extent: float = 10.0

    def __post_init__(self) -> None:
        if self.width_px < 1 or self.height_px < 1 or self.extent <= 0:
            raise ValueError("invalid grid spec")

    @property
    def cell_side(self) -> float:
        return 2.0 * self.extent / self.width_px

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of a world point, clamped to the grid."""
        span = 2.0 * self.extent
        col = int(np.floor((x + self.extent) / span * self.width_px))
        row = int(np.floor((self.extent - y) / span * self.height_px))
        return (
            min(max(row, 0), self.height_px - 1),
            min(max(col, 0), self.width_px - 1),
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        span = 2.0 * self.extent
        x = -self.extent + (col + 0.5) * span / self.width_px
        y = self.extent - (row + 0.5) * span / self.height_px
        return x, y


@dataclass
class BinaryGrid:
    spec: GridSpec
    cells: np.ndarray  # (height_px, width_px) bool, 1 = occupied

    def __post_init__(self) -> None:
        if self.cells.shape != (self.spec.height_px, self.spec.width_px):
            raise ValueError("cell array does not match spec")
        self.cells = self.cells.astype(bool)

    @classmethod
    def empty(cls, spec: GridSpec) -> "BinaryGrid":
        return cls(spec, np.zeros((spec.height_px, spec.width_px), dtype=bool))


def _line_cells(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    """Integer line stepping between two cells, both endpoints included."""
    cells = []
    dr, dc = abs(r1 - r0), -abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr + dc
    while True:
        cells.append((r0, c0))
        if r0 == r1 and c0 == c1:
            return cells
        e2 = 2 * err
        if e2 >= dc:
            err += dc
            r0 += sr
        if e2 <= dr:
            err += dr
            c0 += sc


def rasterize(segs: Sequence[Segment], spec: GridSpec, n_raster: int | None = None) -> BinaryGrid:
    """Draw the first min(n_raster, len(segs)) segments into a fresh grid."""
    grid = BinaryGrid.empty(spec)
    count = len(segs) if n_raster is None else min(n_raster, len(segs))
    for s in segs[:count]:
        r0, c0 = spec.cell_of(s.a.x, s.a.y)
        r1, c1 = spec.cell_of(s.b.x, s.b.y)
        for r, c in _line_cells(r0, c0, r1, c1):
            grid.cells[r, c] = True
    return grid


def to_pbm(grid: BinaryGrid) -> str:
    """P1 portable bitmap, one text row per grid row, top row first."""
    lines = [f"P1", f"{grid.spec.width_px} {grid.spec.height_px}"]
    for row in grid.cells:
        lines.append(" ".join("1" if v else "0" for v in row))
    return "\n".join(lines) + "\n"


def write_pbm(grid: BinaryGrid, path: str | Path) -> None:
    Path(path).write_text(to_pbm(grid), encoding="ascii")


def from_pbm(text: str, extent: float) -> BinaryGrid:
    fields = text.split()
    if fields[0] != "P1":
        raise ValueError("not a P1 bitmap")
    w, h = int(fields[1]), int(fields[2])
    bits = np.asarray([int(v) for v in fields[3 : 3 + w * h]], dtype=bool)
    return BinaryGrid(GridSpec(w, h, extent), bits.reshape(h, w))
