"""Viewpoint sampling, quantization, token coding, augmentation, and splits.

A drawing is a flat token sequence over {stop, move, line, q_1..q_NQ}: each
segment is one (move, qx, qy) triplet followed by one (line, qx, qy) triplet,
and the sequence ends with a single stop, so k segments encode to 6k + 1
tokens.  Token ids: stop=0, move=1, line=2, q_i = 2 + i.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    CanonParams,
    EdgeKind,
    FloorPlan,
    GeometryError,
    Point,
    Segment,
    Space,
    canonicalize_with_transform,
    orient_segment,
    segment_distances,
    _points_in_polygon,
    _seg_array,
)
from .seeds import substream

STOP, MOVE, LINE = 0, 1, 2
_Q_BASE = 2  # q_i = _Q_BASE + i

TokenSequence = list[int]


class TokenError(ValueError):
    """Structurally invalid token sequence; carries the offending index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"token {index}: {message}")
        self.index = index


class SplitError(ValueError):
    """Train/test split cannot be made without building leakage."""


class ViewpointError(ValueError):
    """Plan yields no valid viewpoint candidates."""


@dataclass(frozen=True)
class Vocab:
    n_q: int = 256

    @property
    def size(self) -> int:
        return self.n_q + 3

    def q_token(self, i: int) -> int:
        if not 1 <= i <= self.n_q:
            raise ValueError(f"coordinate bin {i} out of range 1..{self.n_q}")
        return _Q_BASE + i

    def bin_of(self, token: int) -> int:
        if not self.is_coord(token):
            raise ValueError(f"token {token} is not a coordinate token")
        return token - _Q_BASE

    def is_coord(self, token: int) -> bool:
        return _Q_BASE < token <= _Q_BASE + self.n_q


@dataclass(frozen=True)
class Quantizer:
    """Affine map between local metric coordinates and bins 1..n_q.

    The default [-10, +10] m box covers every endpoint a view can produce:
    kept segments are at most 7.5 m away and at most 2.5 m long.
    """

    lo: float = -10.0
    hi: float = 10.0
    n_q: int = 256

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError("quantizer range is empty")

    @property
    def vocab(self) -> Vocab:
        return Vocab(self.n_q)

    def quantize(self, x: float) -> int:
        i = 1 + math.floor((x - self.lo) / (self.hi - self.lo) * self.n_q)
        return min(max(i, 1), self.n_q)

    def dequantize(self, i: int) -> float:
        if not 1 <= i <= self.n_q:
            raise ValueError(f"bin index {i} out of range 1..{self.n_q}")
        return self.lo + (i - 0.5) * (self.hi - self.lo) / self.n_q


@dataclass(frozen=True)
class ViewParams:
    n_segs: int = 100
    d_near: float = 0.40
    d_far: float = 7.5

    def __post_init__(self) -> None:
        if not (0 <= self.d_near < self.d_far) or self.n_segs < 1:
            raise ValueError("invalid view parameters")


@dataclass(frozen=True)
class SampleParams:
    n_p: int = 1000
    clearance: float = 0.40
    d_pmin: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_p < 1 or self.clearance < 0 or self.d_pmin <= 0:
            raise ValueError("invalid sampling parameters")


@dataclass(frozen=True)
class DatasetRecord:
    building_id: str
    plan_id: str
    viewpoint: Point
    tokens: tuple[int, ...]
    local_segments: tuple[Segment, ...]


# ---------------------------------------------------------------------------
# token coding


def encode(segs: Sequence[Segment], q: Quantizer) -> TokenSequence:
    """Token sequence for local-frame segments; one trailing stop.

    Segments whose endpoints fall into the same (x, y) bin pair are dropped:
    they would decode to zero-length segments.
    """
    vocab = q.vocab
    out: TokenSequence = []
    for s in segs:
        ax, ay = q.quantize(s.a.x), q.quantize(s.a.y)
        bx, by = q.quantize(s.b.x), q.quantize(s.b.y)
        if ax == bx and ay == by:
            continue
        out += [MOVE, vocab.q_token(ax), vocab.q_token(ay), LINE, vocab.q_token(bx), vocab.q_token(by)]
    out.append(STOP)
    return out


def decode(tokens: Sequence[int], q: Quantizer) -> list[Segment]:
    """Segments with bin-center endpoints; a trailing incomplete group is ignored."""
    vocab = q.vocab
    segs: list[Segment] = []
    i = 0
    n = len(tokens)
    while i < n:
        if tokens[i] == STOP:
            if i != n - 1:
                raise TokenError(i + 1, "tokens after stop")
            return segs
        if i + 6 > n:
            break  # incomplete trailing group
        group = tokens[i : i + 6]
        coords = []
        for off in range(6):  # validate in order: the first violation wins
            if off == 0:
                if group[0] != MOVE:
                    raise TokenError(i, f"expected move, got id {group[0]}")
            elif off == 3:
                if group[3] != LINE:
                    raise TokenError(i + 3, f"expected line, got id {group[3]}")
            elif not vocab.is_coord(group[off]):
                raise TokenError(i + off, f"expected coordinate token, got id {group[off]}")
            else:
                coords.append(q.dequantize(vocab.bin_of(group[off])))
        segs.append(Segment(Point(coords[0], coords[1]), Point(coords[2], coords[3])))
        i += 6
    return segs


def sequence_segment_count(tokens: Sequence[int]) -> int:
    """k for a structurally valid 6k + 1 sequence."""
    if not tokens or tokens[-1] != STOP or (len(tokens) - 1) % 6:
        raise TokenError(len(tokens) - 1, "sequence is not 6k + 1 with trailing stop")
    return (len(tokens) - 1) // 6


def ablate_opcodes(tokens: Sequence[int]) -> TokenSequence:
    """Drop move/line tokens, keeping coordinates and the stop."""
    return [t for t in tokens if t not in (MOVE, LINE)]


def restore_opcodes(tokens: Sequence[int]) -> TokenSequence:
    """Reinsert move/line opcodes into an ablated stream by coordinate parity."""
    out: TokenSequence = []
    coord_idx = 0
    for t in tokens:
        if t == STOP:
            out.append(STOP)
            continue
        if coord_idx % 4 == 0:
            out.append(MOVE)
        elif coord_idx % 4 == 2:
            out.append(LINE)
        out.append(t)
        coord_idx += 1
    return out


# ---------------------------------------------------------------------------
# views and augmentation


def extract_view(segs: Sequence[Segment], vp: Point, params: ViewParams) -> list[Segment]:
    """Nearest segments around vp, distance-sorted and re-centered on vp."""
    arr = _seg_array(list(segs))
    if len(arr) == 0:
        return []
    d = segment_distances(vp, arr)
    keep = (d >= params.d_near) & (d <= params.d_far)
    arr, d = arr[keep], d[keep]
    order = np.lexsort((arr[:, 3], arr[:, 2], arr[:, 1], arr[:, 0], d))
    arr = arr[order][: params.n_segs]
    arr = arr - np.asarray([vp.x, vp.y, vp.x, vp.y])
    return [Segment(Point(r[0], r[1]), Point(r[2], r[3])) for r in arr]


def signed_permutations() -> list[np.ndarray]:
    """The eight 2x2 signed permutation matrices.

    Index bits: 0 mirrors x, 1 mirrors y, 2 swaps the axes; mirrors apply
    before the swap.  Index 0 is the identity.
    """
    mats = []
    for idx in range(8):
        m = np.diag([(-1.0) ** (idx & 1), (-1.0) ** ((idx >> 1) & 1)])
        if idx & 4:
            m = np.asarray([[0.0, 1.0], [1.0, 0.0]]) @ m
        mats.append(m)
    return mats


_PERMS = signed_permutations()


def augment(segs: Sequence[Segment], perm_index: int) -> list[Segment]:
    """Apply one of the eight origin-fixing isometries, then re-orient."""
    if not 0 <= perm_index < 8:
        raise ValueError(f"perm_index {perm_index} out of range 0..7")
    m = _PERMS[perm_index]
    out = []
    for s in segs:
        a = m @ np.asarray([s.a.x, s.a.y])
        b = m @ np.asarray([s.b.x, s.b.y])
        out.append(orient_segment(Segment(Point(a[0], a[1]), Point(b[0], b[1]))))
    return out


def sample_viewpoints(plan: FloorPlan, params: SampleParams) -> list[Point]:
    """Rejection-sample valid in-plan points, then greedy max-min selection.

    Selection stops once the best remaining candidate's distance to the
    selected set falls below d_pmin.
    """
    rng = substream(params.rng_seed, "viewpoints", plan.building_id, plan.floor_id)
    (x0, y0), (x1, y1) = plan.bounding_box()
    boundary = _seg_array(plan.boundary_segments())
    polys = [np.asarray(space.polygon(), dtype=np.float64) for space in plan.spaces]
    valid: list[Point] = []
    attempts = 0
    max_attempts = params.n_p * 10
    while len(valid) < params.n_p and attempts < max_attempts:
        n = min(params.n_p, max_attempts - attempts)
        attempts += n
        pts = rng.uniform([x0, y0], [x1, y1], size=(n, 2))
        inside = np.zeros(n, dtype=bool)
        for poly in polys:
            inside |= _points_in_polygon(poly, pts)
        for p in pts[inside]:
            point = Point(float(p[0]), float(p[1]))
            if segment_distances(point, boundary).min() >= params.clearance:
                valid.append(point)
                if len(valid) >= params.n_p:
                    break
    if not valid:
        raise ViewpointError(
            f"no valid viewpoint in plan {plan.building_id}/{plan.floor_id} "
            f"after {attempts} draws"
        )
    pts = np.asarray(valid)
    selected = [0]
    dmin = np.hypot(pts[:, 0] - pts[0, 0], pts[:, 1] - pts[0, 1])
    dmin[0] = -np.inf
    while len(selected) < len(valid):
        best = int(np.argmax(dmin))
        if dmin[best] < params.d_pmin:
            break
        selected.append(best)
        d = np.hypot(pts[:, 0] - pts[best, 0], pts[:, 1] - pts[best, 1])
        dmin = np.minimum(dmin, d)
        dmin[best] = -np.inf
    return [Point(float(pts[i, 0]), float(pts[i, 1])) for i in selected]


# ---------------------------------------------------------------------------
# dataset building


def build_records(
    plan: FloorPlan,
    canon: CanonParams,
    view: ViewParams,
    sample: SampleParams,
    q: Quantizer,
) -> list[DatasetRecord]:
    segs, transform = canonicalize_with_transform(plan, canon)
    records = []
    for vp in sample_viewpoints(plan, sample):
        local_vp = transform.apply(vp)
        local = extract_view(segs, local_vp, view)
        records.append(
            DatasetRecord(
                building_id=plan.building_id,
                plan_id=plan.floor_id,
                viewpoint=local_vp,
                tokens=tuple(encode(local, q)),
                local_segments=tuple(local),
            )
        )
    return records


def split_by_building(
    records: Sequence[DatasetRecord], test_fraction: float
) -> tuple[list[DatasetRecord], list[DatasetRecord], list[str]]:
    """Assign whole buildings to test until the share stops improving.

    Buildings are visited by descending record count (ties by id), which is a
    deterministic greedy approximation of the closest achievable test share.
    Returns (train, test, test_building_ids).
    """
    counts: dict[str, int] = {}
    for r in records:
        counts[r.building_id] = counts.get(r.building_id, 0) + 1
    if test_fraction > 0 and len(counts) < 2:
        raise SplitError("need at least 2 buildings to split without leakage")
    total = len(records)
    test_ids: set[str] = set()
    share = 0.0
    for bid in sorted(counts, key=lambda b: (-counts[b], b)):
        cand = share + counts[bid] / total
        if abs(cand - test_fraction) < abs(share - test_fraction):
            test_ids.add(bid)
            share = cand
    train = [r for r in records if r.building_id not in test_ids]
    test = [r for r in records if r.building_id in test_ids]
    return train, test, sorted(test_ids)


def build_dataset(
    plans: Sequence[FloorPlan],
    canon: CanonParams,
    view: ViewParams,
    sample: SampleParams,
    q: Quantizer,
    test_fraction: float = 0.1,
) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    records: list[DatasetRecord] = []
    for plan in plans:
        records.extend(build_records(plan, canon, view, sample, q))
    train, test, _ = split_by_building(records, test_fraction)
    return train, test


# ---------------------------------------------------------------------------
# JSON-lines persistence


def record_to_json(r: DatasetRecord) -> str:
    return json.dumps(
        {
            "building": r.building_id,
            "plan": r.plan_id,
            "vp": [r.viewpoint.x, r.viewpoint.y],
            "tokens": list(r.tokens),
        },
        sort_keys=True,
    )


def write_records(path: str | Path, records: Iterable[DatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(record_to_json(r) + "\n")


def read_records(path: str | Path, q: Quantizer) -> list[DatasetRecord]:
    """Load records; local segments are reconstructed from the tokens.

    Decoding is exact for on-file data because stored coordinates are
    already bin-valued.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            tokens = [int(t) for t in obj["tokens"]]
            out.append(
                DatasetRecord(
                    building_id=obj["building"],
                    plan_id=obj["plan"],
                    viewpoint=Point(float(obj["vp"][0]), float(obj["vp"][1])),
                    tokens=tuple(tokens),
                    local_segments=tuple(decode(tokens, q)),
                )
            )
    return out


# ---------------------------------------------------------------------------
# synthetic plans


def synth_plan(
    rng_seed: int,
    rooms_x: int,
    rooms_y: int,
    room_size: float = 4.0,
    door_width: float = 1.0,
    building_id: str | None = None,
    floor_id: str = "f0",
) -> FloorPlan:
    """Deterministic grid of square rooms with doorway portals between neighbors.

    Door positions along shared walls are drawn from the seed; some exterior
    walls become windows.  Stands in for real large-scale plans at desk scale.
    """
    if rooms_x < 1 or rooms_y < 1:
        raise ValueError("room counts must be >= 1")
    if not 0 < door_width < room_size:
        raise ValueError("door_width must be in (0, room_size)")
    rng = substream(rng_seed, "synth-plan")
    s = room_size

    def door_span(lo: float, hi: float) -> tuple[float, float]:
        c = rng.uniform(lo + door_width / 2, hi - door_width / 2)
        return c - door_width / 2, c + door_width / 2

    # shared-edge doors, keyed so both adjacent rooms agree
    vdoors = {
        (i, j): door_span(j * s, (j + 1) * s)
        for i in range(1, rooms_x)
        for j in range(rooms_y)
    }
    hdoors = {
        (i, j): door_span(i * s, (i + 1) * s)
        for i in range(rooms_x)
        for j in range(1, rooms_y)
    }
    exterior_window = {}  # (side, i, j) -> bool

    def ext_kind(side: str, i: int, j: int) -> EdgeKind:
        key = (side, i, j)
        if key not in exterior_window:
            exterior_window[key] = bool(rng.random() < 0.25)
        return "window" if exterior_window[key] else "wall"

    def edge_pieces(p0: Point, p1: Point, door: tuple[float, float] | None, axis: int, kind: EdgeKind):
        """Pieces of one boundary edge walked from p0 to p1, door as portal."""
        if door is None:
            return [(kind, Segment(p0, p1))]
        d0, d1 = door
        lo, hi = (p0, p1) if p0[axis] < p1[axis] else (p1, p0)

        def at(v: float) -> Point:
            return Point(v, lo.y) if axis == 0 else Point(lo.x, v)

        pieces = []
        if d0 > lo[axis]:
            pieces.append((kind, Segment(at(lo[axis]), at(d0))))
        pieces.append(("portal", Segment(at(d0), at(d1))))
        if hi[axis] > d1:
            pieces.append((kind, Segment(at(d1), at(hi[axis]))))
        if p0[axis] > p1[axis]:
            pieces = [(k, Segment(seg.b, seg.a)) for k, seg in reversed(pieces)]
        return pieces

    spaces = []
    for i in range(rooms_x):
        for j in range(rooms_y):
            x0, y0, x1, y1 = i * s, j * s, (i + 1) * s, (j + 1) * s
            boundary = []
            # bottom, right, top, left: counterclockwise loop
            boundary += edge_pieces(
                Point(x0, y0), Point(x1, y0),
                hdoors.get((i, j)), 0,
                "wall" if j > 0 else ext_kind("s", i, j),
            )
            boundary += edge_pieces(
                Point(x1, y0), Point(x1, y1),
                vdoors.get((i + 1, j)), 1,
                "wall" if i + 1 < rooms_x else ext_kind("e", i, j),
            )
            boundary += edge_pieces(
                Point(x1, y1), Point(x0, y1),
                hdoors.get((i, j + 1)), 0,
                "wall" if j + 1 < rooms_y else ext_kind("n", i, j),
            )
            boundary += edge_pieces(
                Point(x0, y1), Point(x0, y0),
                vdoors.get((i, j)), 1,
                "wall" if i > 0 else ext_kind("w", i, j),
            )
            spaces.append(Space(tuple(boundary)))
    bid = building_id if building_id is not None else f"synth{rng_seed}"
    return FloorPlan(building_id=bid, floor_id=floor_id, spaces=tuple(spaces))
