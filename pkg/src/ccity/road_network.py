"""Grid road network: lane splines, intersections, and route resolution.

Geometry conventions: map coordinates are meters with y pointing north and
x pointing east, all within ``[0, width] x [0, height]``.  Traffic keeps
right, one lane per direction, each lane offset ``lane_offset`` meters from
the road center line.  Lane splines are broken at every intersection box;
quarter-circle connectors carry turns through the box and short straight
connectors carry through traffic.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .signals import EW_AXIS, NS_AXIS

# Travel directions for lane splines; "turn" marks curved connectors.
WE = "WE"  # west -> east (heading +x)
EW = "EW"  # east -> west (heading -x)
SN = "SN"  # south -> north (heading +y)
NS = "NS"  # north -> south (heading -y)
TURN = "turn"

LANE = "lane"
CONNECTOR = "connector"

TURN_ACTIONS = ("left", "right", "straight")
MERGE_ACTIONS = ("mergeL", "mergeR")
ACTION_VOCAB = ("left", "right", "straight", "mergeL", "mergeR")

# Roads extend this far past the outermost intersections to the map edge,
# leaving room to spawn a 30 m leader/follower pair on an entry segment.
BOUNDARY_MARGIN = 50.0
# Stop lines sit this far upstream of the intersection box edge.
STOPLINE_SETBACK = 2.0
# Lane-change connectors advance this far along the adjacent lane.
MERGE_LENGTH = 10.0
# Interior sample count for quarter-circle turn arcs (>= 8 required).
ARC_POINTS = 17

_HEADINGS = {WE: (1.0, 0.0), EW: (-1.0, 0.0), SN: (0.0, 1.0), NS: (0.0, -1.0)}
_LEFT_OF = {WE: SN, SN: EW, EW: NS, NS: WE}
_RIGHT_OF = {WE: NS, NS: EW, EW: SN, SN: WE}


class InvalidGridParams(ValueError):
    """Grid parameters that cannot produce a well-formed network."""


class RouteUnresolvable(ValueError):
    """An action list cannot be consumed from the given spawn spline."""


class OutOfRange(ValueError):
    """Arc-length query outside [0, total_length]."""


def axis_of(direction: str) -> str:
    return EW_AXIS if direction in (WE, EW) else NS_AXIS


@dataclass(eq=False)
class Spline:
    """Polyline lane or connector with a precomputed arc-length table."""

    id: str
    points: np.ndarray  # (N, 2)
    direction: str
    kind: str
    cum_arclength: np.ndarray = field(init=False)
    successors: dict[str, str] = field(default_factory=dict)
    continuation: str | None = None
    adjacent_left: str | None = None
    adjacent_right: str | None = None
    downstream_intersection: str | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError(f"spline {self.id}: need at least two 2-d points")
        self.points = pts
        seg = np.hypot(*(pts[1:] - pts[:-1]).T)
        if np.any(seg <= 0.0):
            raise ValueError(f"spline {self.id}: zero-length polyline step")
        self.cum_arclength = np.concatenate(([0.0], np.cumsum(seg)))

    @property
    def length(self) -> float:
        return float(self.cum_arclength[-1])

    def point_at(self, s: float) -> tuple[float, float]:
        if s < -1e-9 or s > self.length + 1e-9:
            raise OutOfRange(f"s={s} outside [0, {self.length}] on {self.id}")
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum_arclength, s, side="right")) - 1
        i = min(max(i, 0), len(self.points) - 2)
        span = self.cum_arclength[i + 1] - self.cum_arclength[i]
        frac = (s - self.cum_arclength[i]) / span
        p = self.points[i] + frac * (self.points[i + 1] - self.points[i])
        return float(p[0]), float(p[1])


@dataclass(eq=False)
class Intersection:
    id: str
    center: tuple[float, float]
    half_size: float
    approaches: dict[str, str] = field(default_factory=dict)  # direction -> incoming lane id
    connectors: dict[tuple[str, str], str] = field(default_factory=dict)


@dataclass(eq=False)
class RoadNetwork:
    splines: dict[str, Spline]
    intersections: dict[str, Intersection]
    extent: tuple[float, float]
    entry_splines: tuple[str, ...]  # lanes that start at the map boundary

    def lane_splines(self) -> list[Spline]:
        return [sp for sp in self.splines.values() if sp.kind == LANE]


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float  # radians, CCW from +x


@dataclass(frozen=True)
class Stopline:
    s: float  # route arc length of the stop line
    segment: int  # index into Route.segments
    intersection_id: str
    axis: str


@dataclass(eq=False)
class Route:
    """Concatenated geometry of a resolved route, starting at the spawn pose."""

    segments: tuple[str, ...]
    consumed_actions: tuple[str, ...]
    points: np.ndarray  # (N, 2)
    cum_s: np.ndarray  # (N,)
    seg_bounds: np.ndarray  # (n_segments + 1,) route-s at piece boundaries
    seg_local_start: tuple[float, ...]  # spline-local s at each piece start
    stoplines: tuple[Stopline, ...]
    stopline_positions: tuple[float, ...] = field(init=False)
    spline_entries: dict[str, tuple[float, ...]] = field(init=False)
    _headings: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.stopline_positions = tuple(line.s for line in self.stoplines)
        entries: dict[str, list[float]] = {}
        for k, sid in enumerate(self.segments):
            entries.setdefault(sid, []).append(float(self.seg_bounds[k]) - self.seg_local_start[k])
        self.spline_entries = {sid: tuple(v) for sid, v in entries.items()}
        deltas = self.points[1:] - self.points[:-1]
        self._headings = np.arctan2(deltas[:, 1], deltas[:, 0])

    @property
    def total_length(self) -> float:
        return float(self.cum_s[-1])

    def segment_index(self, s: float) -> int:
        k = int(np.searchsorted(self.seg_bounds, s, side="right")) - 1
        return min(max(k, 0), len(self.segments) - 1)

    def locate(self, s: float) -> tuple[int, str, float]:
        """Map route-s to (segment index, spline id, spline-local s)."""
        k = self.segment_index(s)
        local = s - float(self.seg_bounds[k]) + self.seg_local_start[k]
        return k, self.segments[k], local


def pose_at(route: Route, s: float) -> Pose:
    """Interpolated pose at arc length ``s`` along the route."""
    if s < 0.0 or s > route.total_length + 1e-9:
        raise OutOfRange(f"s={s} outside [0, {route.total_length}]")
    s = min(s, route.total_length)
    i = int(np.searchsorted(route.cum_s, s, side="right")) - 1
    i = min(max(i, 0), len(route.points) - 2)
    span = route.cum_s[i + 1] - route.cum_s[i]
    frac = (s - route.cum_s[i]) / span
    p = route.points[i] + frac * (route.points[i + 1] - route.points[i])
    return Pose(float(p[0]), float(p[1]), float(route._headings[i]))


def build_grid(rows: int, cols: int, block_size: float, lane_offset: float) -> RoadNetwork:
    """Build a rows x cols grid of two-way roads with signal-ready intersections.

    ``rows`` east-west roads and ``cols`` north-south roads cross at
    ``rows * cols`` four-way intersections spaced ``block_size`` apart.
    """
    if not (isinstance(rows, int) and isinstance(cols, int)) or rows < 2 or cols < 2:
        raise InvalidGridParams("rows and cols must be integers >= 2")
    if not (block_size > 2.0 * lane_offset > 0.0):
        raise InvalidGridParams("need block_size > 2 * lane_offset > 0")
    half = 2.0 * lane_offset  # intersection box half-size
    if block_size <= 2.0 * half:
        raise InvalidGridParams("intersection boxes overlap: need block_size > 4 * lane_offset")

    xs = [BOUNDARY_MARGIN + j * block_size for j in range(cols)]
    ys = [BOUNDARY_MARGIN + i * block_size for i in range(rows)]
    width = 2.0 * BOUNDARY_MARGIN + (cols - 1) * block_size
    height = 2.0 * BOUNDARY_MARGIN + (rows - 1) * block_size

    splines: dict[str, Spline] = {}
    intersections: dict[str, Intersection] = {}
    for i in range(rows):
        for j in range(cols):
            iid = f"int_{i}_{j}"
            intersections[iid] = Intersection(id=iid, center=(xs[j], ys[i]), half_size=half)

    # incoming[iid][direction] / outgoing[iid][direction] -> lane spline id
    incoming: dict[str, dict[str, str]] = {iid: {} for iid in intersections}
    outgoing: dict[str, dict[str, str]] = {iid: {} for iid in intersections}
    entry_ids: list[str] = []

    def add_lane(sid: str, p0, p1, direction: str, upstream: str | None, downstream: str | None) -> None:
        sp = Spline(id=sid, points=np.array([p0, p1], dtype=float), direction=direction, kind=LANE)
        sp.downstream_intersection = downstream
        splines[sid] = sp
        if downstream is not None:
            incoming[downstream][direction] = sid
        if upstream is not None:
            outgoing[upstream][direction] = sid
        else:
            entry_ids.append(sid)

    def lane_cuts(centers: list[float], lo: float, hi: float) -> list[tuple[float, float, int | None, int | None]]:
        """Split [lo, hi] at each intersection box; yield (a, b, up_idx, down_idx)."""
        cuts = []
        prev, prev_idx = lo, None
        for idx, c in enumerate(centers):
            cuts.append((prev, c - half, prev_idx, idx))
            prev, prev_idx = c + half, idx
        cuts.append((prev, hi, prev_idx, None))
        return cuts

    for i in range(rows):
        y_east = ys[i] - lane_offset  # eastbound keeps right of center
        y_west = ys[i] + lane_offset
        for k, (a, b, up, down) in enumerate(lane_cuts(xs, 0.0, width)):
            up_id = None if up is None else f"int_{i}_{up}"
            down_id = None if down is None else f"int_{i}_{down}"
            add_lane(f"h{i}e{k}", (a, y_east), (b, y_east), WE, up_id, down_id)
        for k, (a, b, up, down) in enumerate(lane_cuts(xs, 0.0, width)):
            # Westbound travels -x: swap endpoints and intersection roles.
            m = cols - k  # travel-order index from the east boundary
            up_id = None if down is None else f"int_{i}_{down}"
            down_id = None if up is None else f"int_{i}_{up}"
            add_lane(f"h{i}w{m}", (b, y_west), (a, y_west), EW, up_id, down_id)
    for j in range(cols):
        x_north = xs[j] + lane_offset
        x_south = xs[j] - lane_offset
        for k, (a, b, up, down) in enumerate(lane_cuts(ys, 0.0, height)):
            up_id = None if up is None else f"int_{up}_{j}"
            down_id = None if down is None else f"int_{down}_{j}"
            add_lane(f"v{j}n{k}", (x_north, a), (x_north, b), SN, up_id, down_id)
        for k, (a, b, up, down) in enumerate(lane_cuts(ys, 0.0, height)):
            m = rows - k
            up_id = None if down is None else f"int_{down}_{j}"
            down_id = None if up is None else f"int_{up}_{j}"
            add_lane(f"v{j}s{m}", (x_south, b), (x_south, a), NS, up_id, down_id)

    # Sort westbound/southbound ids into travel order for readability only.
    for inter in intersections.values():
        inter.approaches = dict(sorted(incoming[inter.id].items()))

    _DIR_LETTER = {WE: "e", EW: "w", SN: "n", NS: "s"}
    for iid, inter in intersections.items():
        for direction, in_id in incoming[iid].items():
            in_sp = splines[in_id]
            p_in = in_sp.points[-1]
            for action in TURN_ACTIONS:
                if action == "straight":
                    out_dir = direction
                elif action == "left":
                    out_dir = _LEFT_OF[direction]
                else:
                    out_dir = _RIGHT_OF[direction]
                out_id = outgoing[iid].get(out_dir)
                if out_id is None:
                    continue
                out_sp = splines[out_id]
                q_out = out_sp.points[0]
                cid = f"x{iid.removeprefix('int_')}_{_DIR_LETTER[direction]}{action[0]}"
                if action == "straight":
                    pts = np.array([p_in, q_out])
                    conn_dir = direction
                else:
                    pts = _quarter_arc(p_in, q_out, _HEADINGS[direction], action)
                    conn_dir = TURN
                conn = Spline(id=cid, points=pts, direction=conn_dir, kind=CONNECTOR)
                conn.continuation = out_id
                splines[cid] = conn
                inter.connectors[(in_id, action)] = cid
                splines[in_id].successors[action] = cid

    return RoadNetwork(
        splines=splines,
        intersections=intersections,
        extent=(width, height),
        entry_splines=tuple(sorted(entry_ids)),
    )


def _quarter_arc(p_in, q_out, heading, action: str) -> np.ndarray:
    """Quarter-circle from p_in (tangent ``heading``) to q_out, endpoints exact."""
    hx, hy = heading
    if action == "left":
        nx, ny = -hy, hx  # center sits 90 deg left of travel
        sweep = math.pi / 2.0
    else:
        nx, ny = hy, -hx
        sweep = -math.pi / 2.0
    # Radius follows from tangency: center is on the normal through p_in and
    # on the line through q_out parallel to the incoming heading.
    r = abs((q_out[0] - p_in[0]) * nx + (q_out[1] - p_in[1]) * ny)
    cx, cy = p_in[0] + r * nx, p_in[1] + r * ny
    theta0 = math.atan2(p_in[1] - cy, p_in[0] - cx)
    thetas = theta0 + sweep * np.linspace(0.0, 1.0, ARC_POINTS)
    pts = np.column_stack((cx + r * np.cos(thetas), cy + r * np.sin(thetas)))
    pts[0] = p_in
    pts[-1] = q_out
    return pts


def default_grid() -> RoadNetwork:
    """The 4x4, 100 m block, 3 m lane-offset grid used by dataset generation."""
    global _DEFAULT_GRID
    if _DEFAULT_GRID is None:
        _DEFAULT_GRID = build_grid(4, 4, 100.0, 3.0)
    return _DEFAULT_GRID


_DEFAULT_GRID: RoadNetwork | None = None


def _slice_polyline(sp: Spline, s0: float, s1: float) -> np.ndarray:
    """Points of ``sp`` between arc lengths s0 < s1, endpoints interpolated."""
    pts = [sp.point_at(s0)]
    lo = int(np.searchsorted(sp.cum_arclength, s0, side="right"))
    hi = int(np.searchsorted(sp.cum_arclength, s1, side="left"))
    for i in range(lo, hi):
        pts.append((float(sp.points[i][0]), float(sp.points[i][1])))
    pts.append(sp.point_at(s1))
    out = [pts[0]]
    for p in pts[1:]:
        if math.hypot(p[0] - out[-1][0], p[1] - out[-1][1]) > 1e-12:
            out.append(p)
    return np.array(out)


def _project_onto(sp: Spline, point) -> float:
    """Arc length on ``sp`` nearest to ``point``."""
    p = np.asarray(point, dtype=float)
    a = sp.points[:-1]
    b = sp.points[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d2 = np.einsum("ij,ij->i", proj - p, proj - p)
    i = int(np.argmin(d2))
    seg_len = sp.cum_arclength[i + 1] - sp.cum_arclength[i]
    return float(sp.cum_arclength[i] + t[i] * seg_len)


def resolve_route(
    network: RoadNetwork,
    spawn_spline: str,
    actions,
    spawn_offset: float = 0.0,
) -> Route:
    """Walk the network from a spawn point, consuming the action list.

    Turn actions are consumed one per intersection (missing actions default
    to straight); merge actions are consumed at lane entry via the adjacent
    lane.  Raises :class:`RouteUnresolvable` when an action cannot be
    consumed or the route exits the map with actions left over.
    """
    for a in actions:
        if a not in ACTION_VOCAB:
            raise RouteUnresolvable(f"unknown action {a!r}")
    sp = network.splines.get(spawn_spline)
    if sp is None:
        raise RouteUnresolvable(f"unknown spawn spline {spawn_spline!r}")
    if sp.kind != LANE:
        raise RouteUnresolvable(f"cannot spawn on connector {spawn_spline!r}")
    if not 0.0 <= spawn_offset < sp.length:
        raise RouteUnresolvable(f"spawn offset {spawn_offset} outside {spawn_spline!r}")

    pending = deque(actions)
    consumed: list[str] = []
    # Pieces: (spline id, points, local start s, downstream intersection or None)
    pieces: list[tuple[str, np.ndarray, float, str | None]] = []
    current, entry_local = sp, float(spawn_offset)
    merge_count = 0

    for _ in range(10_000):
        while pending and pending[0] in MERGE_ACTIONS:
            action = pending.popleft()
            adj_id = current.adjacent_left if action == "mergeL" else current.adjacent_right
            if adj_id is None:
                raise RouteUnresolvable(f"{action} on {current.id!r}: no adjacent lane")
            adj = network.splines[adj_id]
            p0 = current.point_at(entry_local)
            s_target = _project_onto(adj, p0) + MERGE_LENGTH
            if s_target >= adj.length:
                raise RouteUnresolvable(f"{action} on {current.id!r}: no room on {adj_id!r}")
            p1 = adj.point_at(s_target)
            merge_count += 1
            vid = f"merge{merge_count}_{current.id}_{adj_id}"
            pieces.append((vid, np.array([p0, p1]), 0.0, None))
            consumed.append(action)
            current, entry_local = adj, s_target

        pieces.append(
            (current.id, _slice_polyline(current, entry_local, current.length), entry_local,
             current.downstream_intersection)
        )
        if current.downstream_intersection is None:
            if pending:
                raise RouteUnresolvable(
                    f"route exits the map with actions left over: {list(pending)}"
                )
            break
        inter = network.intersections[current.downstream_intersection]
        if pending:
            action = pending.popleft()
            consumed.append(action)
        else:
            action = "straight"
        cid = inter.connectors.get((current.id, action))
        if cid is None:
            raise RouteUnresolvable(f"no {action!r} connector from {current.id!r} at {inter.id}")
        conn = network.splines[cid]
        pieces.append((cid, conn.points.copy(), 0.0, None))
        current, entry_local = network.splines[conn.continuation], 0.0
    else:
        raise RouteUnresolvable("route walk did not terminate")

    return _assemble_route(network, pieces, tuple(consumed))


def _assemble_route(
    network: RoadNetwork,
    pieces: list[tuple[str, np.ndarray, float, str | None]],
    consumed: tuple[str, ...],
) -> Route:
    seg_ids: list[str] = []
    local_starts: list[float] = []
    bounds = [0.0]
    all_pts: list[np.ndarray] = []
    stoplines: list[Stopline] = []
    s_offset = 0.0
    for sid, pts, local_start, downstream in pieces:
        seg = np.hypot(*(pts[1:] - pts[:-1]).T)
        length = float(np.sum(seg))
        seg_ids.append(sid)
        local_starts.append(local_start)
        if all_pts:
            all_pts.append(pts[1:])  # junction point shared with previous piece
        else:
            all_pts.append(pts)
        if downstream is not None:
            line_s = s_offset + length - STOPLINE_SETBACK
            if line_s > s_offset:  # spawned inside the sliver: no line behind us
                sp = network.splines[sid]
                stoplines.append(
                    Stopline(
                        s=line_s,
                        segment=len(seg_ids) - 1,
                        intersection_id=downstream,
                        axis=axis_of(sp.direction),
                    )
                )
        s_offset += length
        bounds.append(s_offset)
    points = np.concatenate(all_pts, axis=0)
    steps = np.hypot(*(points[1:] - points[:-1]).T)
    cum = np.concatenate(([0.0], np.cumsum(steps)))
    return Route(
        segments=tuple(seg_ids),
        consumed_actions=consumed,
        points=points,
        cum_s=cum,
        seg_bounds=np.array(bounds),
        seg_local_start=tuple(local_starts),
        stoplines=tuple(stoplines),
    )


def network_to_json(network: RoadNetwork) -> dict:
    """JSON-ready description of the network (see docs/network-format.md)."""
    splines = []
    for sid in sorted(network.splines):
        sp = network.splines[sid]
        splines.append(
            {
                "id": sp.id,
                "kind": sp.kind,
                "direction": sp.direction,
                "length": round(sp.length, 6),
                "points": [[round(float(x), 6), round(float(y), 6)] for x, y in sp.points],
                "successors": dict(sorted(sp.successors.items())),
                "continuation": sp.continuation,
                "downstream_intersection": sp.downstream_intersection,
            }
        )
    inters = []
    for iid in sorted(network.intersections):
        inter = network.intersections[iid]
        inters.append(
            {
                "id": inter.id,
                "center": [round(inter.center[0], 6), round(inter.center[1], 6)],
                "half_size": inter.half_size,
                "approaches": dict(sorted(inter.approaches.items())),
                "connectors": {f"{in_id}|{action}": cid
                               for (in_id, action), cid in sorted(inter.connectors.items())},
            }
        )
    return {
        "format": "network/1",
        "extent": [network.extent[0], network.extent[1]],
        "splines": splines,
        "intersections": inters,
        "entry_splines": list(network.entry_splines),
    }
