"""Planar line-segment geometry and the canonical normal form for wall sets.

Coordinates are metric, x grows rightward, y grows upward.  The normal form
makes visually identical drawings map to identical segment sets: endpoints
ordered left-to-right (bottom-to-top for verticals), collinear overlapping
runs merged into maximal segments, crossings split so no segment is crossed
in its interior, and long segments subdivided into equal pieces below a
length bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

EdgeKind = Literal["wall", "window", "portal"]

# Parallel-direction cutoff for the intersection solve, relative to |r||s|.
_ANGLE_EPS = 1e-12
# Chain-closure tolerance for space boundaries, meters.
_CHAIN_TOL = 1e-6


class GeometryError(ValueError):
    """Degenerate or inconsistent geometric input."""


class Point(NamedTuple):
    x: float
    y: float


class Segment(NamedTuple):
    a: Point
    b: Point

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)

    def translated(self, dx: float, dy: float) -> "Segment":
        return Segment(Point(self.a.x + dx, self.a.y + dy), Point(self.b.x + dx, self.b.y + dy))


@dataclass(frozen=True)
class Space:
    """One room: a closed polygon of typed boundary segments."""

    boundary: tuple[tuple[EdgeKind, Segment], ...]

    def __post_init__(self) -> None:
        if len(self.boundary) < 3:
            raise GeometryError("space boundary needs at least 3 segments")
        for kind, _ in self.boundary:
            if kind not in ("wall", "window", "portal"):
                raise GeometryError(f"unknown boundary segment type {kind!r}")
        self.polygon()  # validates closure

    def polygon(self) -> list[Point]:
        """Ordered vertex loop of the boundary; raises if the chain is open."""
        segs = [seg for _, seg in self.boundary]
        first, second = segs[0], segs[1]
        # Pick the direction of the first segment so its far end meets segment 2.
        if _near(first.b, second.a) or _near(first.b, second.b):
            verts = [first.a, first.b]
        elif _near(first.a, second.a) or _near(first.a, second.b):
            verts = [first.b, first.a]
        else:
            raise GeometryError("boundary segments 0 and 1 do not connect")
        for seg in segs[1:]:
            tail = verts[-1]
            if _near(seg.a, tail):
                verts.append(seg.b)
            elif _near(seg.b, tail):
                verts.append(seg.a)
            else:
                raise GeometryError("boundary chain is broken")
        if not _near(verts[-1], verts[0]):
            raise GeometryError("boundary chain does not close")
        return verts[:-1]

    def contains(self, p: Point) -> bool:
        poly = np.asarray(self.polygon(), dtype=np.float64)
        return bool(_points_in_polygon(poly, np.asarray([p], dtype=np.float64))[0])


def _near(p: Point, q: Point, tol: float = _CHAIN_TOL) -> bool:
    return abs(p.x - q.x) <= tol and abs(p.y - q.y) <= tol


def _points_in_polygon(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd ray cast; poly (m,2), pts (n,2) -> bool (n,)."""
    x, y = pts[:, 0:1], pts[:, 1:2]
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    crosses = (py > y) != (qy > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = px + (y - py) * (qx - px) / (qy - py)
    hits = crosses & (x < xint)
    return hits.sum(axis=1) % 2 == 1


@dataclass(frozen=True)
class FloorPlan:
    building_id: str
    floor_id: str
    spaces: tuple[Space, ...]

    def __post_init__(self) -> None:
        if not self.spaces:
            raise GeometryError("floor plan has no spaces")
        (x0, y0), (x1, y1) = self.bounding_box()
        if not (x1 > x0 and y1 > y0):
            raise GeometryError("floor plan bounding box has zero area")

    def bounding_box(self) -> tuple[Point, Point]:
        xs: list[float] = []
        ys: list[float] = []
        for space in self.spaces:
            for _, seg in space.boundary:
                xs += [seg.a.x, seg.b.x]
                ys += [seg.a.y, seg.b.y]
        return Point(min(xs), min(ys)), Point(max(xs), max(ys))

    def boundary_segments(self) -> list[Segment]:
        """All typed boundary segments, portals included (for clearance tests)."""
        return [seg for space in self.spaces for _, seg in space.boundary]


@dataclass(frozen=True)
class CanonParams:
    collinear_tol: float = 1e-6
    max_seg_len: float = 2.5
    global_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.collinear_tol <= 0 or self.max_seg_len <= 0 or self.global_scale <= 0:
            raise GeometryError("canonicalization parameters must be positive")


@dataclass(frozen=True)
class CanonTransform:
    """Affine map taking plan coordinates into the canonical local frame."""

    scale: float
    offset_x: float
    offset_y: float

    def apply(self, p: Point) -> Point:
        return Point(p.x * self.scale - self.offset_x, p.y * self.scale - self.offset_y)


# ---------------------------------------------------------------------------
# array helpers: segments as (n, 4) float rows [ax, ay, bx, by]


def _seg_array(segs: Sequence[Segment]) -> np.ndarray:
    if not segs:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray([(s.a.x, s.a.y, s.b.x, s.b.y) for s in segs], dtype=np.float64)


def _seg_list(arr: np.ndarray) -> list[Segment]:
    return [Segment(Point(r[0], r[1]), Point(r[2], r[3])) for r in arr]


def _orient_rows(arr: np.ndarray) -> np.ndarray:
    swap = (arr[:, 2] < arr[:, 0]) | ((arr[:, 2] == arr[:, 0]) & (arr[:, 3] < arr[:, 1]))
    out = arr.copy()
    out[swap] = arr[swap][:, [2, 3, 0, 1]]
    return out


def _sort_rows(arr: np.ndarray) -> np.ndarray:
    order = np.lexsort((arr[:, 3], arr[:, 2], arr[:, 1], arr[:, 0]))
    return arr[order]


def _cross(ux, uy, vx, vy):
    return ux * vy - uy * vx


# ---------------------------------------------------------------------------
# operations


def orient_segment(s: Segment) -> Segment:
    """Order endpoints left-to-right, bottom-to-top for verticals."""
    if s.a == s.b:
        raise GeometryError(f"degenerate segment at {s.a}")
    if (s.b.x, s.b.y) < (s.a.x, s.a.y):
        return Segment(s.b, s.a)
    return s


def segment_distance(p: Point, s: Segment) -> float:
    """Euclidean distance from p to the nearest point of the closed segment."""
    return float(segment_distances(p, _seg_array([s]))[0])


def segment_distances(p: Point, arr: np.ndarray) -> np.ndarray:
    """Vectorized point-to-segment distance over (n, 4) rows."""
    ax, ay, bx, by = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    dx, dy = bx - ax, by - ay
    len2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((p.x - ax) * dx + (p.y - ay) * dy) / len2
    t = np.clip(np.where(len2 > 0, t, 0.0), 0.0, 1.0)
    nx, ny = ax + t * dx, ay + t * dy
    return np.hypot(p.x - nx, p.y - ny)


def flatten_plan(plan: FloorPlan) -> list[Segment]:
    """Wall and window segments of all spaces; portals are dropped.

    Shared walls appear once per adjacent space; deduplication happens in
    the collinear merge.
    """
    out: list[Segment] = []
    for space in plan.spaces:
        for kind, seg in space.boundary:
            if kind == "portal":
                continue
            out.append(seg)
    return out


def merge_collinear(segs: Sequence[Segment], tol: float) -> list[Segment]:
    """Fuse collinear segments whose closed projection intervals overlap.

    Two segments are collinear when both endpoints of one lie within ``tol``
    of the other's carrier line (tested both ways).  Segments sharing only an
    endpoint do merge: the result is one maximal unbroken segment spanning
    the furthest endpoints.
    """
    arr = _orient_rows(_seg_array(list(segs)))
    if len(arr) == 0:
        return []
    arr = _sort_rows(arr)
    kept: list[np.ndarray] = []
    for row in arr:
        cur = row
        while kept:
            block = np.asarray(kept)
            hit = _merge_candidate(cur, block, tol)
            if hit is None:
                break
            cur = _span(cur, kept.pop(hit))
        kept.append(cur)
    out = _sort_rows(_orient_rows(np.asarray(kept)))
    return _seg_list(out)


def _merge_candidate(cur: np.ndarray, block: np.ndarray, tol: float) -> int | None:
    """Index of the first segment in block collinear-with-overlap with cur."""
    dx, dy = cur[2] - cur[0], cur[3] - cur[1]
    length = math.hypot(dx, dy)
    c1 = np.abs(_cross(dx, dy, block[:, 0] - cur[0], block[:, 1] - cur[1]))
    c2 = np.abs(_cross(dx, dy, block[:, 2] - cur[0], block[:, 3] - cur[1]))
    col_cur = (c1 < tol * length) & (c2 < tol * length)

    bdx, bdy = block[:, 2] - block[:, 0], block[:, 3] - block[:, 1]
    blen = np.hypot(bdx, bdy)
    r1 = np.abs(_cross(bdx, bdy, cur[0] - block[:, 0], cur[1] - block[:, 1]))
    r2 = np.abs(_cross(bdx, bdy, cur[2] - block[:, 0], cur[3] - block[:, 1]))
    col_blk = (r1 < tol * blen) & (r2 < tol * blen)

    ux, uy = dx / length, dy / length
    s0 = (block[:, 0] - cur[0]) * ux + (block[:, 1] - cur[1]) * uy
    s1 = (block[:, 2] - cur[0]) * ux + (block[:, 3] - cur[1]) * uy
    lo, hi = np.minimum(s0, s1), np.maximum(s0, s1)
    overlap = (lo <= length + tol) & (hi >= -tol)

    idx = np.nonzero((col_cur | col_blk) & overlap)[0]
    return int(idx[0]) if idx.size else None


def _span(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Maximal segment over the furthest actual endpoints of a and b."""
    pts = np.asarray([a[:2], a[2:], b[:2], b[2:]])
    dx, dy = a[2] - a[0], a[3] - a[1]
    proj = pts[:, 0] * dx + pts[:, 1] * dy
    lo, hi = pts[np.argmin(proj)], pts[np.argmax(proj)]
    return _orient_rows(np.asarray([[lo[0], lo[1], hi[0], hi[1]]]))[0]


def split_at_intersections(segs: Sequence[Segment], tol: float) -> list[Segment]:
    """Break segments at every pairwise intersection point.

    All intersections are collected in one pass, then split positions are
    sorted along each segment and deduplicated within ``tol``, so the output
    does not depend on input order.
    """
    arr = _seg_array(list(segs))
    n = len(arr)
    if n == 0:
        return []
    P = arr[:, :2]
    R = arr[:, 2:] - arr[:, :2]
    lengths = np.hypot(R[:, 0], R[:, 1])
    cuts: list[list[float]] = [[] for _ in range(n)]
    for i in range(n - 1):
        w = P[i + 1 :] - P[i]
        rj = R[i + 1 :]
        denom = _cross(R[i, 0], R[i, 1], rj[:, 0], rj[:, 1])
        parallel = np.abs(denom) <= _ANGLE_EPS * lengths[i] * lengths[i + 1 :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _cross(w[:, 0], w[:, 1], rj[:, 0], rj[:, 1]) / denom
            u = _cross(w[:, 0], w[:, 1], R[i, 0], R[i, 1]) / denom
        eps_i = tol / lengths[i]
        eps_j = tol / lengths[i + 1 :]
        on_both = (
            ~parallel
            & (t >= -eps_i)
            & (t <= 1 + eps_i)
            & (u >= -eps_j)
            & (u <= 1 + eps_j)
        )
        interior_i = on_both & (t > eps_i) & (t < 1 - eps_i)
        interior_j = on_both & (u > eps_j) & (u < 1 - eps_j)
        cuts[i].extend(t[interior_i].tolist())
        for off in np.nonzero(interior_j)[0]:
            cuts[i + 1 + int(off)].append(float(u[off]))
    out_rows: list[np.ndarray] = []
    for i in range(n):
        if not cuts[i]:
            out_rows.append(arr[i])
            continue
        ts = sorted(cuts[i])
        eps = tol / lengths[i]
        params = [0.0]
        for t in ts:
            if t - params[-1] > eps:
                params.append(t)
        if 1.0 - params[-1] <= eps:
            params[-1] = 1.0
        else:
            params.append(1.0)
        pts = P[i] + np.asarray(params)[:, None] * R[i]
        # pin the true endpoints so splitting never drifts them
        pts[0] = P[i]
        pts[-1] = arr[i, 2:]
        for k in range(len(pts) - 1):
            out_rows.append(np.concatenate([pts[k], pts[k + 1]]))
    out = _sort_rows(_orient_rows(np.asarray(out_rows)))
    return _seg_list(out)


def subdivide(segs: Sequence[Segment], max_len: float) -> list[Segment]:
    """Split each segment into ceil(len/max_len) equal pieces."""
    if max_len <= 0:
        raise GeometryError("max_len must be positive")
    out: list[Segment] = []
    for s in segs:
        length = s.length
        pieces = max(1, math.ceil(length / max_len - 1e-12))
        if pieces == 1:
            out.append(s)
            continue
        xs = np.linspace(s.a.x, s.b.x, pieces + 1)
        ys = np.linspace(s.a.y, s.b.y, pieces + 1)
        for k in range(pieces):
            out.append(Segment(Point(xs[k], ys[k]), Point(xs[k + 1], ys[k + 1])))
    return out


def _endpoint_centroid(arr: np.ndarray) -> np.ndarray:
    pts = np.concatenate([arr[:, :2], arr[:, 2:]], axis=0)
    return pts.mean(axis=0)


def canonicalize(plan: FloorPlan, params: CanonParams) -> list[Segment]:
    segs, _ = canonicalize_with_transform(plan, params)
    return segs


def canonicalize_segments(
    segs: Sequence[Segment], params: CanonParams
) -> tuple[list[Segment], CanonTransform]:
    """Normal-form pipeline over a bare segment set.

    center on the endpoint centroid -> scale -> orient -> merge collinear ->
    split at intersections -> subdivide -> re-center -> orient -> sort.
    The final re-centering (on the processed endpoint set) makes the result
    a fixed point of re-canonicalization at the default scale of 1: merging,
    splitting, and subdividing are translation-equivariant and are no-ops on
    their own output.
    """
    tol = params.collinear_tol
    arr = _seg_array(list(segs))
    if len(arr) == 0:
        raise GeometryError("no segments to canonicalize")
    lengths = np.hypot(arr[:, 2] - arr[:, 0], arr[:, 3] - arr[:, 1])
    arr = arr[lengths > tol]
    if len(arr) == 0:
        raise GeometryError("all segments are degenerate")
    c1 = _endpoint_centroid(arr)
    arr = (arr - np.tile(c1, 2)) * params.global_scale
    out = _seg_list(_orient_rows(arr))
    out = merge_collinear(out, tol)
    out = split_at_intersections(out, tol)
    out = subdivide(out, params.max_seg_len)
    arr = _seg_array(out)
    c2 = _endpoint_centroid(arr)
    arr = _sort_rows(_orient_rows(arr - np.tile(c2, 2)))
    offset = c1 * params.global_scale + c2
    transform = CanonTransform(params.global_scale, float(offset[0]), float(offset[1]))
    return _seg_list(arr), transform


def canonicalize_with_transform(
    plan: FloorPlan, params: CanonParams
) -> tuple[list[Segment], CanonTransform]:
    """Canonical segment set of a plan plus the plan-to-local affine map."""
    flat = flatten_plan(plan)
    if not flat:
        raise GeometryError("plan has no wall or window segments")
    return canonicalize_segments(flat, params)


# ---------------------------------------------------------------------------
# ingestion format


def plan_from_json(obj: dict) -> FloorPlan:
    """Parse the neutral ingestion schema; coordinates are meters.

    {"building": str, "floor": str, "spaces": [{"boundary":
        [{"type": "wall"|"window"|"portal", "x0":, "y0":, "x1":, "y1":}, ...]}, ...]}
    """
    spaces = []
    for si, space_obj in enumerate(obj["spaces"]):
        boundary = []
        for edge in space_obj["boundary"]:
            seg = Segment(
                Point(float(edge["x0"]), float(edge["y0"])),
                Point(float(edge["x1"]), float(edge["y1"])),
            )
            boundary.append((edge["type"], seg))
        try:
            spaces.append(Space(tuple(boundary)))
        except GeometryError as exc:
            raise GeometryError(f"space {si}: {exc}") from exc
    return FloorPlan(
        building_id=str(obj["building"]),
        floor_id=str(obj["floor"]),
        spaces=tuple(spaces),
    )


def plan_to_json(plan: FloorPlan) -> dict:
    return {
        "building": plan.building_id,
        "floor": plan.floor_id,
        "spaces": [
            {
                "boundary": [
                    {"type": kind, "x0": seg.a.x, "y0": seg.a.y, "x1": seg.b.x, "y1": seg.b.y}
                    for kind, seg in space.boundary
                ]
            }
            for space in plan.spaces
        ],
    }


# ---------------------------------------------------------------------------
# test support


def segment_sets_equal(a: Sequence[Segment], b: Sequence[Segment], tol: float) -> bool:
    """Compare as segment sets with per-coordinate tolerance.

    Rows are oriented, sorted, and greedily matched within a tolerance window
    so that float noise around sort-key ties cannot flip the verdict.
    """
    ra = _sort_rows(_orient_rows(_seg_array(list(a))))
    rb = _sort_rows(_orient_rows(_seg_array(list(b))))
    if ra.shape != rb.shape:
        return False
    used = np.zeros(len(rb), dtype=bool)
    starts = rb[:, 0]
    for row in ra:
        lo = int(np.searchsorted(starts, row[0] - tol, side="left"))
        hi = int(np.searchsorted(starts, row[0] + tol, side="right"))
        for j in range(lo, hi):
            if not used[j] and np.all(np.abs(rb[j] - row) <= tol):
                used[j] = True
                break
        else:
            return False
    return True
