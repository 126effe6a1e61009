"""Scenario configuration: strict JSON parsing and canonical serialization.

The schema is closed: unknown keys are rejected at every level so that a
config cannot silently carry meaningless fields.  ``serialize_scenario``
emits a canonical form (sorted keys, compact separators, every field
explicit) so equal configs serialize to identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

from . import road_network
from .signals import COLORS, Phase, SignalSchedule

MODES = ("toy", "agency")
WEATHERS = ("clear", "rain", "fog", "snow")
MAX_ACTIONS = 5
MAX_SEED = 2**64 - 1


class ScenarioError(ValueError):
    """Base class for structured scenario-parsing failures."""


class MalformedJson(ScenarioError):
    """Input is not a JSON document we accept."""


class SchemaViolation(ScenarioError):
    """JSON is well formed but a field is missing, unknown, or mistyped."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvariantViolation(ScenarioError):
    """Typed fields are fine but a cross-field constraint is broken."""


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    spawn_spline: str
    spawn_offset: float = 0.0
    actions: tuple[str, ...] = ()
    target_speed: float = 10.0
    stop_gap: float = 2.0
    run_red_lights: bool = False


@dataclass(frozen=True)
class ConfounderSettings:
    road_wetness: float = 0.0
    time_of_day: float = 12.0
    weather: str = "clear"


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    mode: str
    vehicles: tuple[VehicleSpec, ...]
    schema_version: int = 1
    seed: int = 0
    duration_frames: int = 150
    frame_period: float = 1.0
    tick_dt: float = 0.1
    causal_edges: tuple[tuple[str, str], ...] = ()
    signal_schedule: SignalSchedule | None = None
    confounders: ConfounderSettings = field(default_factory=ConfounderSettings)

    @property
    def ticks_per_frame(self) -> int:
        return int(round(self.frame_period / self.tick_dt))


# ---------------------------------------------------------------------------
# parsing


def _reject_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise _DuplicateKey(key)
        seen.add(key)
    return dict(pairs)


class _DuplicateKey(Exception):
    pass


def _require_obj(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaViolation(path, f"expected object, got {type(value).__name__}")
    return value


def _take(obj: dict, known: dict, path: str) -> dict:
    """Check required/unknown keys; return field values with defaults filled."""
    out = {}
    for key in obj:
        if key not in known:
            raise SchemaViolation(f"{path}.{key}" if path else key, "unknown key")
    for key, default in known.items():
        if key in obj:
            out[key] = obj[key]
        elif default is _REQUIRED:
            raise SchemaViolation(f"{path}.{key}" if path else key, "missing required key")
        else:
            out[key] = default
    return out


_REQUIRED = object()


def _str(value, path: str, nonempty: bool = True) -> str:
    if not isinstance(value, str):
        raise SchemaViolation(path, f"expected string, got {type(value).__name__}")
    if nonempty and not value:
        raise SchemaViolation(path, "must be non-empty")
    return value


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaViolation(path, f"expected integer, got {type(value).__name__}")
    return value


def _float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(path, f"expected number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise SchemaViolation(path, "must be finite")
    return value


def _bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise SchemaViolation(path, f"expected boolean, got {type(value).__name__}")
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaViolation(path, f"expected array, got {type(value).__name__}")
    return value


def _enum(value, options, path: str) -> str:
    value = _str(value, path)
    if value not in options:
        raise SchemaViolation(path, f"must be one of {list(options)}")
    return value


def _parse_vehicle(obj, path: str) -> VehicleSpec:
    obj = _require_obj(obj, path)
    fields = _take(
        obj,
        {
            "id": _REQUIRED,
            "spawn_spline": _REQUIRED,
            "spawn_offset": 0.0,
            "actions": [],
            "target_speed": 10.0,
            "stop_gap": 2.0,
            "run_red_lights": False,
        },
        path,
    )
    actions = _list(fields["actions"], f"{path}.actions")
    parsed_actions = tuple(
        _enum(a, road_network.ACTION_VOCAB, f"{path}.actions[{k}]") for k, a in enumerate(actions)
    )
    return VehicleSpec(
        id=_str(fields["id"], f"{path}.id"),
        spawn_spline=_str(fields["spawn_spline"], f"{path}.spawn_spline"),
        spawn_offset=_float(fields["spawn_offset"], f"{path}.spawn_offset"),
        actions=parsed_actions,
        target_speed=_float(fields["target_speed"], f"{path}.target_speed"),
        stop_gap=_float(fields["stop_gap"], f"{path}.stop_gap"),
        run_red_lights=_bool(fields["run_red_lights"], f"{path}.run_red_lights"),
    )


def _parse_schedule(obj, path: str) -> SignalSchedule:
    obj = _require_obj(obj, path)
    fields = _take(obj, {"id": _REQUIRED, "phases": _REQUIRED, "offset": 0.0}, path)
    phases = []
    for k, ph in enumerate(_list(fields["phases"], f"{path}.phases")):
        ph = _require_obj(ph, f"{path}.phases[{k}]")
        pf = _take(ph, {"ew": _REQUIRED, "ns": _REQUIRED, "duration": _REQUIRED}, f"{path}.phases[{k}]")
        phases.append(
            Phase(
                ew_color=_enum(pf["ew"], COLORS, f"{path}.phases[{k}].ew"),
                ns_color=_enum(pf["ns"], COLORS, f"{path}.phases[{k}].ns"),
                duration=_float(pf["duration"], f"{path}.phases[{k}].duration"),
            )
        )
    try:
        return SignalSchedule(
            id=_str(fields["id"], f"{path}.id"),
            phases=tuple(phases),
            offset=_float(fields["offset"], f"{path}.offset"),
        )
    except ValueError as exc:
        raise InvariantViolation(f"{path}: {exc}") from exc


def parse_scenario(text: str | bytes) -> ScenarioConfig:
    """Parse and fully validate a scenario document.

    Raises :class:`MalformedJson`, :class:`SchemaViolation`, or
    :class:`InvariantViolation`; never anything unstructured, whatever the
    input bytes are.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not utf-8: {exc}") from exc
    if not isinstance(text, str):
        raise MalformedJson(f"expected str or bytes, got {type(text).__name__}")
    try:
        raw = json.loads(
            text,
            object_pairs_hook=_reject_duplicates,
            parse_constant=_reject_constant,
        )
    except _DuplicateKey as exc:
        raise SchemaViolation(str(exc.args[0]), "duplicate key") from exc
    except RecursionError as exc:
        raise MalformedJson("nesting too deep") from exc
    except ValueError as exc:
        raise MalformedJson(str(exc)) from exc

    root = _require_obj(raw, "$")
    fields = _take(
        root,
        {
            "schema_version": 1,
            "scenario_id": _REQUIRED,
            "mode": _REQUIRED,
            "seed": 0,
            "duration_frames": 150,
            "frame_period": 1.0,
            "tick_dt": 0.1,
            "vehicles": _REQUIRED,
            "causal_edges": [],
            "signal_schedule": None,
            "confounders": None,
        },
        "",
    )
    schema_version = _int(fields["schema_version"], "schema_version")
    if schema_version != 1:
        raise SchemaViolation("schema_version", f"unsupported version {schema_version}")
    vehicles = tuple(
        _parse_vehicle(v, f"vehicles[{k}]")
        for k, v in enumerate(_list(fields["vehicles"], "vehicles"))
    )
    edges = []
    for k, e in enumerate(_list(fields["causal_edges"], "causal_edges")):
        e = _list(e, f"causal_edges[{k}]")
        if len(e) != 2:
            raise SchemaViolation(f"causal_edges[{k}]", "expected [leader, follower]")
        edges.append((_str(e[0], f"causal_edges[{k}][0]"), _str(e[1], f"causal_edges[{k}][1]")))
    schedule = None
    if fields["signal_schedule"] is not None:
        schedule = _parse_schedule(fields["signal_schedule"], "signal_schedule")
    confounders = ConfounderSettings()
    if fields["confounders"] is not None:
        cf = _take(
            _require_obj(fields["confounders"], "confounders"),
            {"road_wetness": 0.0, "time_of_day": 12.0, "weather": "clear"},
            "confounders",
        )
        confounders = ConfounderSettings(
            road_wetness=_float(cf["road_wetness"], "confounders.road_wetness"),
            time_of_day=_float(cf["time_of_day"], "confounders.time_of_day"),
            weather=_enum(cf["weather"], WEATHERS, "confounders.weather"),
        )

    config = ScenarioConfig(
        scenario_id=_str(fields["scenario_id"], "scenario_id"),
        mode=_enum(fields["mode"], MODES, "mode"),
        vehicles=vehicles,
        schema_version=schema_version,
        seed=_int(fields["seed"], "seed"),
        duration_frames=_int(fields["duration_frames"], "duration_frames"),
        frame_period=_float(fields["frame_period"], "frame_period"),
        tick_dt=_float(fields["tick_dt"], "tick_dt"),
        causal_edges=tuple(edges),
        signal_schedule=schedule,
        confounders=confounders,
    )
    validate_config(config)
    return config


def _reject_constant(name: str):
    raise MalformedJson(f"constant {name} not allowed")


def validate_config(config: ScenarioConfig) -> None:
    """Cross-field invariants; raises :class:`InvariantViolation`."""
    if not 0 <= config.seed <= MAX_SEED:
        raise InvariantViolation("seed must fit in 64 bits")
    if config.duration_frames < 1:
        raise InvariantViolation("duration_frames must be >= 1")
    if not config.tick_dt > 0.0:
        raise InvariantViolation("tick_dt must be positive")
    if not config.frame_period > 0.0:
        raise InvariantViolation("frame_period must be positive")
    ratio = config.frame_period / config.tick_dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise InvariantViolation("frame_period must be an integer multiple of tick_dt")

    seen: set[str] = set()
    for v in config.vehicles:
        if v.id in seen:
            raise InvariantViolation(f"duplicate vehicle id {v.id!r}")
        seen.add(v.id)
        if len(v.actions) > MAX_ACTIONS:
            raise InvariantViolation(f"vehicle {v.id!r}: more than {MAX_ACTIONS} actions")
        if v.spawn_offset < 0.0:
            raise InvariantViolation(f"vehicle {v.id!r}: spawn_offset must be >= 0")
        if not v.target_speed > 0.0:
            raise InvariantViolation(f"vehicle {v.id!r}: target_speed must be positive")
        if not v.stop_gap > 0.0:
            raise InvariantViolation(f"vehicle {v.id!r}: stop_gap must be positive")

    followers: set[str] = set()
    for leader, follower in config.causal_edges:
        if leader == follower:
            raise InvariantViolation(f"self edge on {leader!r}")
        if leader not in seen or follower not in seen:
            raise InvariantViolation(f"edge ({leader!r} -> {follower!r}) references unknown vehicle")
        if follower in followers:
            raise InvariantViolation(f"{follower!r} appears as follower in more than one edge")
        followers.add(follower)

    if config.mode == "toy":
        if config.signal_schedule is not None:
            raise InvariantViolation("toy mode must not carry a signal schedule")
        if config.confounders != ConfounderSettings():
            raise InvariantViolation("toy mode requires confounders disabled")
    cf = config.confounders
    if not 0.0 <= cf.road_wetness <= 1.0:
        raise InvariantViolation("road_wetness must be within [0, 1]")
    if not 0.0 <= cf.time_of_day < 24.0:
        raise InvariantViolation("time_of_day must be within [0, 24)")
    if cf.weather == "rain" and not cf.road_wetness > 0.0:
        raise InvariantViolation("rain requires road_wetness > 0")


# ---------------------------------------------------------------------------
# serialization


def _config_payload(config: ScenarioConfig) -> dict:
    schedule = None
    if config.signal_schedule is not None:
        schedule = {
            "id": config.signal_schedule.id,
            "offset": float(config.signal_schedule.offset),
            "phases": [
                {"ew": p.ew_color, "ns": p.ns_color, "duration": float(p.duration)}
                for p in config.signal_schedule.phases
            ],
        }
    return {
        "schema_version": config.schema_version,
        "scenario_id": config.scenario_id,
        "mode": config.mode,
        "seed": config.seed,
        "duration_frames": config.duration_frames,
        "frame_period": float(config.frame_period),
        "tick_dt": float(config.tick_dt),
        "vehicles": [
            {
                "id": v.id,
                "spawn_spline": v.spawn_spline,
                "spawn_offset": float(v.spawn_offset),
                "actions": list(v.actions),
                "target_speed": float(v.target_speed),
                "stop_gap": float(v.stop_gap),
                "run_red_lights": v.run_red_lights,
            }
            for v in config.vehicles
        ],
        "causal_edges": [[a, b] for a, b in config.causal_edges],
        "signal_schedule": schedule,
        "confounders": {
            "road_wetness": float(config.confounders.road_wetness),
            "time_of_day": float(config.confounders.time_of_day),
            "weather": config.confounders.weather,
        },
    }


def serialize_scenario(config: ScenarioConfig) -> str:
    """Canonical JSON: sorted keys, compact separators, all fields explicit."""
    return json.dumps(_config_payload(config), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)


def with_scenario_id(config: ScenarioConfig, scenario_id: str) -> ScenarioConfig:
    return replace(config, scenario_id=scenario_id)


# ---------------------------------------------------------------------------
# network validation


class IssueKind(str, Enum):
    UNKNOWN_SPLINE = "unknown_spline"
    OFFSET_OUT_OF_RANGE = "offset_out_of_range"
    ROUTE_UNRESOLVABLE = "route_unresolvable"


@dataclass(frozen=True)
class ValidationIssue:
    kind: IssueKind
    vehicle_id: str
    message: str


def validate_against_network(config: ScenarioConfig, network) -> list[ValidationIssue]:
    """Check every vehicle's spawn point and action list against a network."""
    issues: list[ValidationIssue] = []
    for v in config.vehicles:
        sp = network.splines.get(v.spawn_spline)
        if sp is None or sp.kind != road_network.LANE:
            issues.append(
                ValidationIssue(IssueKind.UNKNOWN_SPLINE, v.id,
                                f"spawn spline {v.spawn_spline!r} is not a lane of the network")
            )
            continue
        if not 0.0 <= v.spawn_offset < sp.length:
            issues.append(
                ValidationIssue(IssueKind.OFFSET_OUT_OF_RANGE, v.id,
                                f"spawn_offset {v.spawn_offset} outside [0, {sp.length})")
            )
            continue
        try:
            road_network.resolve_route(network, v.spawn_spline, v.actions, v.spawn_offset)
        except road_network.RouteUnresolvable as exc:
            issues.append(ValidationIssue(IssueKind.ROUTE_UNRESOLVABLE, v.id, str(exc)))
    return issues
