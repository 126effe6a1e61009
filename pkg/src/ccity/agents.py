"""Vehicle longitudinal dynamics along resolved routes.

Agency-mode vehicles follow a priority rule: brake for a stopping target
(signal or gap), otherwise accelerate up to their target speed, otherwise
coast.  Toy-mode vehicles advance a fixed distance per logged frame and
ignore everything.  All state transitions are pure so the engine can fix
the evaluation order and stay deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .road_network import Route
from .signals import RED, YELLOW

A_MAX = 2.0  # m/s^2
B_MAX = 4.0  # m/s^2, dry-road braking
VEHICLE_LENGTH = 4.0  # m
V_CAP_FACTOR = 1.5  # hard speed cap relative to target_speed
GAP_LOOKAHEAD = 50.0  # m along own path
COLLISION_HALT = 5.0  # s both vehicles stand still after a collision
TOY_UNITS_PER_FRAME = 2.0  # map units advanced per logged frame in toy mode


@dataclass(frozen=True)
class VehicleState:
    id: str
    route: Route
    s: float = 0.0
    v: float = 0.0
    a: float = 0.0
    finished: bool = False
    collided: bool = False
    halt_until: float = 0.0


@dataclass(frozen=True)
class DrivingContext:
    """Per-tick snapshot of what one vehicle can react to."""

    gap_ahead: float | None = None  # bumper-to-bumper, may be negative on overlap
    leader_speed: float | None = None
    signal: tuple[float, str] | None = None  # (distance to stop line, color)
    wetness: float = 0.0


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    id_a: str
    id_b: str


def effective_braking(wetness: float) -> float:
    """Wet roads halve braking at wetness 1: b_eff = B_MAX * (1 - 0.5 * wetness)."""
    return B_MAX * (1.0 - 0.5 * wetness)


def braking_distance(v: float, stop_gap: float, wetness: float = 0.0) -> float:
    """Distance needed to stop from speed ``v`` plus the standing gap."""
    return v * v / (2.0 * effective_braking(wetness)) + stop_gap


def step_agency(state: VehicleState, ctx: DrivingContext, spec, dt: float) -> VehicleState:
    """One tick of the agency-mode longitudinal model.

    ``spec`` carries target_speed, stop_gap, and run_red_lights.
    """
    if state.finished:
        return state
    b_eff = effective_braking(ctx.wetness)
    kinematic = state.v * state.v / (2.0 * b_eff)
    bd = kinematic + spec.stop_gap

    braking = False
    if ctx.signal is not None and not spec.run_red_lights:
        dist, color = ctx.signal
        if color == RED:
            braking = dist <= bd
        elif color == YELLOW:
            # Stop only if the line is still reachable with a full stop;
            # too close to stop means proceed through.
            braking = kinematic <= dist <= bd
    if ctx.gap_ahead is not None and ctx.gap_ahead < bd:
        braking = True

    if braking:
        a = -b_eff
    elif state.v < spec.target_speed:
        a = A_MAX
    else:
        a = 0.0

    v_cap = V_CAP_FACTOR * spec.target_speed
    v = min(max(state.v + a * dt, 0.0), v_cap)
    s = min(state.s + v * dt, state.route.total_length)
    return replace(state, s=s, v=v, a=a, finished=s >= state.route.total_length)


def step_toy(state: VehicleState, dt: float, frame_period: float) -> VehicleState:
    """Toy-mode tick: constant 2 map units per logged frame, no interactions."""
    if state.finished:
        return state
    v = TOY_UNITS_PER_FRAME / frame_period
    s = min(state.s + v * dt, state.route.total_length)
    return replace(state, s=s, v=v, a=0.0, finished=s >= state.route.total_length)


def _locations(states: dict[str, VehicleState]) -> dict[str, tuple[str, float]]:
    """Current (spline id, spline-local s) of every active vehicle."""
    out = {}
    for vid, st in states.items():
        if st.finished:
            continue
        _, sid, local = st.route.locate(st.s)
        out[vid] = (sid, local)
    return out


def _along_path_delta(state: VehicleState, other_loc: tuple[str, float]) -> float | None:
    """Signed arc distance from ``state`` to another vehicle along its own route.

    Positive means the other vehicle sits ahead on a spline this route still
    traverses; None means their paths do not overlap near here.
    """
    sid, local = other_loc
    entries = state.route.spline_entries.get(sid)
    if entries is None:
        return None
    best = None
    for entry in entries:
        delta = entry + local - state.s
        if best is None or abs(delta) < abs(best):
            best = delta
    return best


def compute_gaps(states: dict[str, VehicleState]) -> dict[str, tuple[float, float] | None]:
    """Bumper gap and speed of the nearest vehicle ahead on each path.

    Only vehicles within ``GAP_LOOKAHEAD`` meters of center-to-center arc
    distance count; the returned gap subtracts ``VEHICLE_LENGTH``.
    """
    locations = _locations(states)
    gaps: dict[str, tuple[float, float] | None] = {}
    for vid, st in states.items():
        if st.finished:
            gaps[vid] = None
            continue
        best: tuple[float, float] | None = None
        for other_id, loc in locations.items():
            if other_id == vid:
                continue
            delta = _along_path_delta(st, loc)
            if delta is None or delta <= 0.0 or delta > GAP_LOOKAHEAD:
                continue
            if best is None or delta < best[0]:
                best = (delta, states[other_id].v)
        gaps[vid] = None if best is None else (best[0] - VEHICLE_LENGTH, best[1])
    return gaps


def detect_collisions(
    states: dict[str, VehicleState],
    t: float,
    prev_overlaps: frozenset[tuple[str, str]],
    vehicle_length: float = VEHICLE_LENGTH,
) -> tuple[list[CollisionEvent], frozenset[tuple[str, str]]]:
    """Along-path interval overlaps between active vehicles.

    Emits one event per pair at overlap onset; returns the new overlap set so
    the caller can carry it to the next tick.
    """
    locations = _locations(states)
    order = sorted(locations)
    overlaps: set[tuple[str, str]] = set()
    events: list[CollisionEvent] = []
    for i, vid_a in enumerate(order):
        for vid_b in order[i + 1:]:
            delta = _along_path_delta(states[vid_a], locations[vid_b])
            if delta is None:
                delta = _along_path_delta(states[vid_b], locations[vid_a])
            if delta is None or abs(delta) >= vehicle_length:
                continue
            pair = (vid_a, vid_b)
            overlaps.add(pair)
            if pair not in prev_overlaps:
                events.append(CollisionEvent(t=t, id_a=vid_a, id_b=vid_b))
    return events, frozenset(overlaps)
