"""Shortest-path distance prediction under partial observability.

Occupancy grids are 256x256 cells over 40x40 m centered on the viewpoint
(cell side 0.15625 m).  Search is 8-connected with Euclidean edge costs and
no corner cutting; obstacles are inflated by a Chebyshev-ball dilation before
searching.  A model-based distance estimate is the per-cell lower median over
K sampled completions of the observation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sparse_dijkstra

from .dataset import DatasetRecord, Quantizer, decode, encode
from .geometry import Point, Segment
from .infer import Decoder, SamplerConfig, sample_sequence
from .raster import BinaryGrid, GridSpec, rasterize
from .seeds import substream

#: 256x256 cells spanning the square [-20 m, +20 m]^2.
OCCUPANCY_SPEC = GridSpec(256, 256, 20.0)

HISTOGRAM_BIN_CELLS = 8  # histogram bin width in cell sides


class OriginBlockedError(ValueError):
    """The search origin falls on an occupied cell."""


@dataclass
class DistanceGrid:
    spec: GridSpec
    meters: np.ndarray  # (h, w) float64, +inf for unreachable cells

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.meters, fmt="%.6f", delimiter=",")

    def to_pgm(self) -> str:
        """P2 graymap: darker is nearer; unreachable cells render white."""
        finite = self.meters[np.isfinite(self.meters)]
        top = finite.max() if finite.size else 1.0
        scale = 254.0 / top if top > 0 else 0.0
        img = np.where(
            np.isfinite(self.meters), np.round(self.meters * scale), 255
        ).astype(int)
        lines = ["P2", f"{self.spec.width_px} {self.spec.height_px}", "255"]
        for row in img:
            lines.append(" ".join(str(v) for v in row))
        return "\n".join(lines) + "\n"


@dataclass
class ErrorStats:
    mean_error: float | None
    mean_abs_error: float | None
    histogram: dict[int, int]  # floor(eps / bin_width) -> count
    bin_width: float
    trivial_cells: int
    evaluated_cells: int
    unreachable_cells: int  # finite in the true grid but not under this hypothesis

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["histogram"] = {str(k): v for k, v in sorted(self.histogram.items())}
        return out


@dataclass(frozen=True)
class DistmapParams:
    k_completions: int = 8
    inflate_cells: int = 4
    observe_segments: int = 25

    def __post_init__(self) -> None:
        if self.k_completions < 1 or self.inflate_cells < 0 or self.observe_segments < 1:
            raise ValueError("invalid distance-map parameters")


def inflate(g: BinaryGrid, cells: int) -> BinaryGrid:
    """Dilate obstacles: occupied iff any input obstacle within Chebyshev <= cells."""
    if cells < 0:
        raise ValueError("inflation radius must be >= 0")
    occ = g.cells.copy()
    for _ in range(cells):
        grown = occ.copy()
        grown[1:, :] |= occ[:-1, :]
        grown[:-1, :] |= occ[1:, :]
        grown[:, 1:] |= occ[:, :-1]
        grown[:, :-1] |= occ[:, 1:]
        grown[1:, 1:] |= occ[:-1, :-1]
        grown[1:, :-1] |= occ[:-1, 1:]
        grown[:-1, 1:] |= occ[1:, :-1]
        grown[:-1, :-1] |= occ[1:, 1:]
        occ = grown
    return BinaryGrid(g.spec, occ)


def _motion_graph(free: np.ndarray, side: float) -> csr_matrix:
    """Sparse 8-connected motion graph over free cells.

    Diagonal steps are admitted only when both adjacent axis cells are free,
    so paths cannot cut corners through diagonal gaps.
    """
    h, w = free.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, costs = [], [], []

    def link(a: np.ndarray, b: np.ndarray, ok: np.ndarray, cost: float) -> None:
        rows.append(a[ok])
        cols.append(b[ok])
        costs.append(np.full(int(ok.sum()), cost))

    link(idx[:, :-1], idx[:, 1:], free[:, :-1] & free[:, 1:], side)
    link(idx[:-1, :], idx[1:, :], free[:-1, :] & free[1:, :], side)
    diag = side * math.sqrt(2.0)
    ok = free[:-1, :-1] & free[1:, 1:] & free[:-1, 1:] & free[1:, :-1]
    link(idx[:-1, :-1], idx[1:, 1:], ok, diag)
    ok = free[:-1, 1:] & free[1:, :-1] & free[:-1, :-1] & free[1:, 1:]
    link(idx[:-1, 1:], idx[1:, :-1], ok, diag)
    data = np.concatenate(costs) if costs else np.zeros(0)
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
    return csr_matrix((data, (r, c)), shape=(h * w, h * w))


def shortest_dist(g: BinaryGrid, origin: Point) -> DistanceGrid:
    """Single-source shortest-path distances in meters from a world point."""
    row, col = g.spec.cell_of(origin.x, origin.y)
    if g.cells[row, col]:
        raise OriginBlockedError(f"origin cell ({row}, {col}) is occupied")
    free = ~g.cells
    graph = _motion_graph(free, g.spec.cell_side)
    h, w = g.cells.shape
    dist = _sparse_dijkstra(graph, directed=False, indices=row * w + col)
    meters = dist.reshape(h, w)
    meters[g.cells] = np.inf
    return DistanceGrid(g.spec, meters)


def _error_state_grid(spec: GridSpec, origin: Point) -> DistanceGrid:
    """All-unreachable grid with distance 0 at the origin cell."""
    meters = np.full((spec.height_px, spec.width_px), np.inf)
    row, col = spec.cell_of(origin.x, origin.y)
    meters[row, col] = 0.0
    return DistanceGrid(spec, meters)


def distance_from_segments(
    segs: Sequence[Segment],
    spec: GridSpec = OCCUPANCY_SPEC,
    inflate_cells: int = 4,
    origin: Point = Point(0.0, 0.0),
    blocked_origin_error_state: bool = False,
) -> DistanceGrid:
    """Rasterize, inflate, and search from the origin."""
    grid = inflate(rasterize(list(segs), spec), inflate_cells)
    try:
        return shortest_dist(grid, origin)
    except OriginBlockedError:
        if blocked_origin_error_state:
            return _error_state_grid(spec, origin)
        raise


def predict_distance(
    decoder: Decoder,
    observation: Sequence[Segment],
    k_completions: int = 8,
    scfg: SamplerConfig = SamplerConfig(),
    q: Quantizer = Quantizer(),
    spec: GridSpec = OCCUPANCY_SPEC,
    inflate_cells: int = 4,
) -> DistanceGrid:
    """Per-cell lower median over K sampled completions of the observation.

    Completions whose inflated obstacles swallow the origin contribute the
    all-unreachable error-state grid; +inf participates in the median as the
    largest value.
    """
    prefix = encode(list(observation), q)
    image = None
    if decoder.cfg.context != "none":
        ispec = GridSpec(decoder.cfg.image_size, decoder.cfg.image_size,
                         decoder.cfg.raster_extent)
        image = rasterize(list(observation), ispec).cells.astype(np.float64)
    stacks = []
    for i in range(k_completions):
        rng = substream(scfg.rng_seed, "completion", i)
        tokens = sample_sequence(decoder, prefix, image=image, scfg=scfg, rng=rng)
        segs = decode(tokens, q)
        grid = distance_from_segments(
            segs, spec, inflate_cells, blocked_origin_error_state=True
        )
        stacks.append(grid.meters)
    meters = np.sort(np.stack(stacks), axis=0)[(k_completions - 1) // 2]
    return DistanceGrid(spec, meters)


def hypothesis_errors(
    d: DistanceGrid, d_p: DistanceGrid, d_0: DistanceGrid, d_hat: DistanceGrid
) -> np.ndarray:
    """Per-cell eps = d - d_hat over the cells error_stats evaluates for d.

    Trivial cells (d_p = d_0 = d_hat) and cells unreachable in the true grid
    are excluded, as are cells unreachable under the hypothesis alone.
    """
    trivial = (d_p.meters == d_0.meters) & (d_0.meters == d_hat.meters)
    usable = ~trivial & np.isfinite(d_hat.meters) & np.isfinite(d.meters)
    return d.meters[usable] - d_hat.meters[usable]


def error_stats(
    d_p: DistanceGrid, d_0: DistanceGrid, d_hat: DistanceGrid
) -> dict[str, ErrorStats]:
    """Distance-error statistics for the prediction and the null hypothesis.

    Keys: "predicted" (d_p) and "observed_only" (d_0); eps = d - d_hat per
    non-trivial cell reachable in the true grid.
    """
    if not (d_p.spec == d_0.spec == d_hat.spec):
        raise ValueError("distance grids use different specs")
    bin_width = HISTOGRAM_BIN_CELLS * d_hat.spec.cell_side
    trivial = (d_p.meters == d_0.meters) & (d_0.meters == d_hat.meters)
    evaluated = ~trivial & np.isfinite(d_hat.meters)
    out = {}
    for name, d in (("predicted", d_p), ("observed_only", d_0)):
        usable = evaluated & np.isfinite(d.meters)
        eps = d.meters[usable] - d_hat.meters[usable]
        hist: dict[int, int] = {}
        for b in np.floor(eps / bin_width).astype(int):
            hist[int(b)] = hist.get(int(b), 0) + 1
        out[name] = ErrorStats(
            mean_error=float(eps.mean()) if eps.size else None,
            mean_abs_error=float(np.abs(eps).mean()) if eps.size else None,
            histogram=hist,
            bin_width=bin_width,
            trivial_cells=int(trivial.sum()),
            evaluated_cells=int(eps.size),
            unreachable_cells=int((evaluated & ~np.isfinite(d.meters)).sum()),
        )
    return out


def scene_grids(
    decoder: Decoder,
    record: DatasetRecord,
    q: Quantizer,
    params: DistmapParams = DistmapParams(),
    scfg: SamplerConfig = SamplerConfig(),
    spec: GridSpec = OCCUPANCY_SPEC,
) -> tuple[DistanceGrid, DistanceGrid, DistanceGrid]:
    """(d_p, d_0, d_hat) for one test record.

    The observation is the record's first `observe_segments` local segments;
    the true grid uses every local segment the record knows about.
    """
    observation = list(record.local_segments[: params.observe_segments])
    d_p = predict_distance(
        decoder, observation, params.k_completions, scfg, q, spec, params.inflate_cells
    )
    d_0 = distance_from_segments(
        observation, spec, params.inflate_cells, blocked_origin_error_state=True
    )
    d_hat = distance_from_segments(
        list(record.local_segments), spec, params.inflate_cells,
        blocked_origin_error_state=True,
    )
    return d_p, d_0, d_hat


def aggregate_stats(parts: Sequence[ErrorStats]) -> ErrorStats:
    """Pool per-scene statistics: cell-weighted means, summed histograms."""
    if not parts:
        raise ValueError("nothing to aggregate")
    cells = sum(p.evaluated_cells for p in parts)
    hist: dict[int, int] = {}
    for p in parts:
        for b, n in p.histogram.items():
            hist[b] = hist.get(b, 0) + n
    mean = None
    mean_abs = None
    if cells:
        mean = sum(p.mean_error * p.evaluated_cells for p in parts if p.evaluated_cells) / cells
        mean_abs = (
            sum(p.mean_abs_error * p.evaluated_cells for p in parts if p.evaluated_cells) / cells
        )
    return ErrorStats(
        mean_error=mean,
        mean_abs_error=mean_abs,
        histogram=hist,
        bin_width=parts[0].bin_width,
        trivial_cells=sum(p.trivial_cells for p in parts),
        evaluated_cells=cells,
        unreachable_cells=sum(p.unreachable_cells for p in parts),
    )


def stats_to_json(stats: dict[str, ErrorStats]) -> str:
    return json.dumps({k: v.to_dict() for k, v in stats.items()}, sort_keys=True)
