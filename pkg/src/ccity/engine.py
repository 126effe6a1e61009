"""Deterministic simulation engine and the JSON-Lines frame log format.

Physics ticks at ``tick_dt``; poses are logged once per ``frame_period``.
Determinism comes from a fixed evaluation order (sorted vehicle ids),
context snapshots taken before any vehicle moves, and rounding every
logged value to six decimals at log-construction time so the in-memory log
equals its serialized form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from . import agents, road_network, scenario
from .graphs import CausalGraph
from .signals import LightState, light_state_at, stopline_query

LOG_FORMAT = "simlog/1"


class ValidationFailed(ValueError):
    """Scenario does not fit the network it is being run against."""

    def __init__(self, issues):
        super().__init__("; ".join(i.message for i in issues))
        self.issues = list(issues)


class CorruptLog(ValueError):
    """Log file failed its digest or structure checks."""


@dataclass(frozen=True)
class LoggedPose:
    x: float
    y: float
    z: float
    yaw: float
    pitch: float
    roll: float
    v: float
    finished: bool

    def to_row(self) -> list:
        return [self.x, self.y, self.z, self.yaw, self.pitch, self.roll, self.v,
                1 if self.finished else 0]

    @classmethod
    def from_row(cls, row) -> LoggedPose:
        return cls(*(float(v) for v in row[:7]), finished=bool(row[7]))


@dataclass(frozen=True)
class FrameLog:
    frame_index: int
    t: float
    vehicles: dict[str, LoggedPose]
    lights: dict[str, LightState]


@dataclass(frozen=True)
class SimLog:
    scenario_id: str
    config_digest: str
    mode: str
    extent: tuple[float, float]
    frame_period: float
    frames: tuple[FrameLog, ...]
    collisions: tuple[agents.CollisionEvent, ...]
    ground_truth: CausalGraph


def config_digest(config: scenario.ScenarioConfig) -> str:
    text = scenario.serialize_scenario(config)
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def _r6(x: float) -> float:
    return round(float(x), 6)


def run(config: scenario.ScenarioConfig, network: road_network.RoadNetwork) -> SimLog:
    """Simulate one scenario to completion and return its frame log."""
    issues = scenario.validate_against_network(config, network)
    if issues:
        raise ValidationFailed(issues)

    order = sorted(v.id for v in config.vehicles)
    specs = {v.id: v for v in config.vehicles}
    routes = {
        v.id: road_network.resolve_route(network, v.spawn_spline, v.actions, v.spawn_offset)
        for v in config.vehicles
    }
    toy = config.mode == "toy"
    v0 = agents.TOY_UNITS_PER_FRAME / config.frame_period if toy else 0.0
    states: dict[str, agents.VehicleState] = {
        vid: agents.VehicleState(id=vid, route=routes[vid], v=v0) for vid in order
    }
    schedule = config.signal_schedule
    wetness = config.confounders.road_wetness
    dt = config.tick_dt
    ticks_per_frame = config.ticks_per_frame

    def light_snapshot(t: float) -> dict[str, LightState]:
        if schedule is None:
            return {}
        state = light_state_at(schedule, 0.0, t)
        rounded = LightState(state.ew_color, state.ns_color, _r6(state.time_since_change))
        return {iid: rounded for iid in sorted(network.intersections)}

    def log_frame(index: int, t: float) -> FrameLog:
        vehicles = {}
        for vid in order:
            st = states[vid]
            pose = road_network.pose_at(st.route, st.s)
            vehicles[vid] = LoggedPose(
                x=_r6(pose.x), y=_r6(pose.y), z=0.0,
                yaw=_r6(pose.heading), pitch=0.0, roll=0.0,
                v=_r6(st.v), finished=st.finished,
            )
        return FrameLog(frame_index=index, t=_r6(t), vehicles=vehicles,
                        lights=light_snapshot(t))

    frames = [log_frame(0, 0.0)]
    collisions: list[agents.CollisionEvent] = []
    overlaps: frozenset[tuple[str, str]] = frozenset()
    total_ticks = (config.duration_frames - 1) * ticks_per_frame

    for tick in range(1, total_ticks + 1):
        t_prev = (tick - 1) * dt
        t_now = tick * dt
        if toy:
            states = {
                vid: agents.step_toy(states[vid], dt, config.frame_period) for vid in order
            }
        else:
            gaps = agents.compute_gaps(states)
            new_states = {}
            for vid in order:
                st = states[vid]
                if st.finished:
                    new_states[vid] = st
                    continue
                if t_prev < st.halt_until:
                    new_states[vid] = agents.VehicleState(
                        id=st.id, route=st.route, s=st.s, v=0.0, a=0.0,
                        finished=st.finished, collided=st.collided, halt_until=st.halt_until,
                    )
                    continue
                signal = None
                if schedule is not None:
                    signal = stopline_query(schedule, st.route, st.s, t_prev)
                gap = gaps[vid]
                ctx = agents.DrivingContext(
                    gap_ahead=None if gap is None else gap[0],
                    leader_speed=None if gap is None else gap[1],
                    signal=signal,
                    wetness=wetness,
                )
                new_states[vid] = agents.step_agency(st, ctx, specs[vid], dt)
            states = new_states
            events, overlaps = agents.detect_collisions(states, t_now, overlaps)
            if events:
                halted = {}
                for ev in events:
                    collisions.append(agents.CollisionEvent(t=_r6(ev.t), id_a=ev.id_a, id_b=ev.id_b))
                    for vid in (ev.id_a, ev.id_b):
                        st = states[vid]
                        halted[vid] = agents.VehicleState(
                            id=st.id, route=st.route, s=st.s, v=0.0, a=0.0,
                            finished=st.finished, collided=True,
                            halt_until=t_now + agents.COLLISION_HALT,
                        )
                states = {**states, **halted}
        if tick % ticks_per_frame == 0:
            frames.append(log_frame(tick // ticks_per_frame, t_now))

    return SimLog(
        scenario_id=config.scenario_id,
        config_digest=config_digest(config),
        mode=config.mode,
        extent=(network.extent[0], network.extent[1]),
        frame_period=config.frame_period,
        frames=tuple(frames),
        collisions=tuple(collisions),
        ground_truth=CausalGraph.from_lists(order, config.causal_edges),
    )


# ---------------------------------------------------------------------------
# log serialization


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def log_to_lines(log: SimLog) -> list[str]:
    header = {
        "format": LOG_FORMAT,
        "scenario_id": log.scenario_id,
        "config_digest": log.config_digest,
        "mode": log.mode,
        "extent": [log.extent[0], log.extent[1]],
        "frame_period": log.frame_period,
        "duration_frames": len(log.frames),
        "ground_truth": log.ground_truth.to_json(),
    }
    lines = [_dumps(header)]
    for frame in log.frames:
        lines.append(
            _dumps(
                {
                    "frame": frame.frame_index,
                    "t": frame.t,
                    "vehicles": {vid: pose.to_row() for vid, pose in frame.vehicles.items()},
                    "lights": {
                        iid: [ls.ew_color, ls.ns_color, ls.time_since_change]
                        for iid, ls in frame.lights.items()
                    },
                }
            )
        )
    body_digest = hashlib.sha256("\n".join(lines).encode("ascii")).hexdigest()
    trailer = {
        "collisions": [[ev.t, ev.id_a, ev.id_b] for ev in log.collisions],
        "frames": len(log.frames),
        "digest": body_digest,
    }
    lines.append(_dumps(trailer))
    return lines


def write_log(log: SimLog, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(log_to_lines(log)) + "\n")


def read_log(path) -> SimLog:
    """Parse and verify a log file; raises :class:`CorruptLog` on any damage."""
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.read().splitlines()
    if len(raw_lines) < 3:
        raise CorruptLog("log needs a header, at least one frame, and a trailer")
    try:
        header = json.loads(raw_lines[0])
        trailer = json.loads(raw_lines[-1])
        frame_objs = [json.loads(line) for line in raw_lines[1:-1]]
    except ValueError as exc:
        raise CorruptLog(f"bad json: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != LOG_FORMAT:
        raise CorruptLog("unrecognized header")
    if not isinstance(trailer, dict) or "digest" not in trailer:
        raise CorruptLog("missing trailer")
    body_digest = hashlib.sha256("\n".join(raw_lines[:-1]).encode("utf-8")).hexdigest()
    if body_digest != trailer["digest"]:
        raise CorruptLog("digest mismatch")
    if trailer.get("frames") != len(frame_objs) or header.get("duration_frames") != len(frame_objs):
        raise CorruptLog("frame count mismatch")

    frames = []
    for k, obj in enumerate(frame_objs):
        try:
            if obj["frame"] != k:
                raise CorruptLog(f"frame index jump at line {k + 2}")
            vehicles = {vid: LoggedPose.from_row(row) for vid, row in obj["vehicles"].items()}
            lights = {
                iid: LightState(row[0], row[1], float(row[2]))
                for iid, row in obj["lights"].items()
            }
            frames.append(FrameLog(frame_index=k, t=float(obj["t"]),
                                   vehicles=vehicles, lights=lights))
        except (KeyError, TypeError, IndexError) as exc:
            raise CorruptLog(f"malformed frame at line {k + 2}: {exc}") from exc
    try:
        ground_truth = CausalGraph.from_json(header["ground_truth"])
        collisions = tuple(
            agents.CollisionEvent(t=float(row[0]), id_a=row[1], id_b=row[2])
            for row in trailer.get("collisions", [])
        )
        return SimLog(
            scenario_id=header["scenario_id"],
            config_digest=header["config_digest"],
            mode=header["mode"],
            extent=(float(header["extent"][0]), float(header["extent"][1])),
            frame_period=float(header["frame_period"]),
            frames=tuple(frames),
            collisions=collisions,
            ground_truth=ground_truth,
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        if isinstance(exc, CorruptLog):
            raise
        raise CorruptLog(f"malformed header or trailer: {exc}") from exc


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
