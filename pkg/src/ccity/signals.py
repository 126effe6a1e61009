"""Fixed-time traffic-light schedules and time-indexed state queries.

All intersections share one cyclic phase table.  Per-intersection phase
shifts are supported through the ``intersection_offset`` argument of
:func:`light_state_at`; the schedule's own ``offset`` shifts every
intersection at once.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass

GREEN = "green"
YELLOW = "yellow"
RED = "red"
COLORS = (GREEN, YELLOW, RED)

# Axis keys used to pick which color a lane heading reads.
EW_AXIS = "ew"
NS_AXIS = "ns"


@dataclass(frozen=True)
class Phase:
    ew_color: str
    ns_color: str
    duration: float


@dataclass(frozen=True)
class SignalSchedule:
    """Cyclic phase table applied to every intersection of a network."""

    id: str
    phases: tuple[Phase, ...]
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        for k, phase in enumerate(self.phases):
            if phase.ew_color not in COLORS or phase.ns_color not in COLORS:
                raise ValueError(f"phase {k}: unknown color")
            if not phase.duration > 0.0:
                raise ValueError(f"phase {k}: duration must be positive")
            # A green approach requires the crossing axis to be fully red.
            if phase.ew_color == GREEN and phase.ns_color != RED:
                raise ValueError(f"phase {k}: EW green conflicts with NS {phase.ns_color}")
            if phase.ns_color == GREEN and phase.ew_color != RED:
                raise ValueError(f"phase {k}: NS green conflicts with EW {phase.ew_color}")

    @property
    def cycle_period(self) -> float:
        return sum(p.duration for p in self.phases)


@dataclass(frozen=True)
class LightState:
    ew_color: str
    ns_color: str
    time_since_change: float

    def color_for_axis(self, axis: str) -> str:
        return self.ew_color if axis == EW_AXIS else self.ns_color


def default_schedule() -> SignalSchedule:
    """EW green 15 s, EW yellow 4 s, NS green 10 s, NS yellow 4 s (33 s cycle)."""
    return SignalSchedule(
        id="default",
        phases=(
            Phase(GREEN, RED, 15.0),
            Phase(YELLOW, RED, 4.0),
            Phase(RED, GREEN, 10.0),
            Phase(RED, YELLOW, 4.0),
        ),
    )


def light_state_at(schedule: SignalSchedule, intersection_offset: float, t: float) -> LightState:
    """State of one intersection's lights at simulation time ``t`` seconds.

    The phase containing ``(t + offsets) mod cycle_period`` wins; a phase
    boundary belongs to the phase that starts there.
    """
    if t < 0.0:
        raise ValueError("t must be non-negative")
    u = (t + schedule.offset + intersection_offset) % schedule.cycle_period
    for phase in schedule.phases:
        if u < phase.duration:
            return LightState(phase.ew_color, phase.ns_color, u)
        u -= phase.duration
    # Unreachable for u in [0, cycle): guard against float residue.
    last = schedule.phases[-1]
    return LightState(last.ew_color, last.ns_color, 0.0)


def stopline_query(schedule, route, s: float, t: float):
    """Nearest downstream signalized stop line on the vehicle's current segment.

    Returns ``(distance_to_stopline, color_for_heading)`` or ``None`` when the
    current segment has no stop line ahead of ``s`` (turn connectors, the
    sliver between a stop line and the intersection box, or past the last
    intersection).
    """
    if not route.stoplines:
        return None
    seg = route.segment_index(s)
    k = bisect_left(route.stopline_positions, s)
    if k >= len(route.stoplines):
        return None
    line = route.stoplines[k]
    if line.segment != seg:
        return None
    state = light_state_at(schedule, 0.0, t)
    return (line.s - s, state.color_for_axis(line.axis))
