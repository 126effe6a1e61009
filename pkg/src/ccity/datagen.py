"""Dataset generation: scenario sampling, split layout, and manifests.

Each scenario draws from its own RNG stream keyed by (dataset seed, split,
index), so results do not depend on generation order or worker count.
Causally linked pairs share a spawn spline and action list with the
follower 30 map units behind; unlinked vehicles are rejection-sampled so
no two of them share both spawn spline and action list.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import engine, road_network
from .agents import VEHICLE_LENGTH
from .graphs import CausalGraph
from .scenario import (
    ConfounderSettings,
    ScenarioConfig,
    VehicleSpec,
    serialize_scenario,
    validate_config,
)
from .signals import SignalSchedule, default_schedule

SPLITS = ("train", "val", "test")
PRESETS = {
    "smoke": (40, 5, 5),
    "desk": (400, 50, 50),
    "full": (4000, 500, 500),
}
MAX_PLACEMENT_RETRIES = 100

PAIR_SPACING = 30.0  # follower spawns this far behind its leader
FOLLOWER_OFFSET_MAX = 8.0
SINGLE_OFFSET_MAX = 30.0
SPAWN_CLEARANCE = 8.0  # minimum spawn spacing between unrelated cars on one spline
SPEED_RANGE = (2.5, 5.5)  # agency target speeds, m/s
TOY_SPEED = 2.0


class SamplingExhausted(RuntimeError):
    """Could not place vehicles without conflicts within the retry budget."""


class UnknownVehicle(KeyError):
    """Counterfactual edit references a vehicle id not in the config."""


@dataclass(frozen=True)
class DatasetParams:
    n_cars: int = 8
    causal_fraction: float = 0.5
    mode: str = "agency"
    counts: tuple[int, int, int] = PRESETS["full"]
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_cars < 1:
            raise ValueError("n_cars must be >= 1")
        if not 0.0 <= self.causal_fraction <= 1.0:
            raise ValueError("causal_fraction must be within [0, 1]")
        if self.mode not in ("toy", "agency"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ValueError("counts must be three non-negative split sizes")

    @property
    def n_pairs(self) -> int:
        return math.floor(self.n_cars * self.causal_fraction / 2.0)


def stream_seed(seed: int, split: str, index: int) -> int:
    digest = hashlib.sha256(f"{seed}/{split}/{index}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class _Entity:
    """One spawn decision: a single car or a leader/follower pair."""

    spawn_spline: str
    actions: tuple[str, ...]
    offset: float  # rear-most spawn offset
    span: float  # arc length this entity occupies at spawn
    is_pair: bool


def _walk_actions(rng: random.Random, network, entry_id: str, n_actions: int) -> tuple[str, ...]:
    """Sample a turn list consumable from ``entry_id`` (one per intersection)."""
    actions: list[str] = []
    current = network.splines[entry_id]
    while len(actions) < n_actions and current.downstream_intersection is not None:
        action = rng.choice(road_network.TURN_ACTIONS)
        inter = network.intersections[current.downstream_intersection]
        connector = network.splines[inter.connectors[(current.id, action)]]
        current = network.splines[connector.continuation]
        actions.append(action)
    return tuple(actions)


def _place_entities(rng: random.Random, params: DatasetParams, network) -> list[_Entity]:
    entries = network.entry_splines
    n_pairs = params.n_pairs
    n_singles = params.n_cars - 2 * n_pairs
    entities: list[_Entity] = []
    for is_pair in [True] * n_pairs + [False] * n_singles:
        for _ in range(MAX_PLACEMENT_RETRIES):
            spline = rng.choice(entries)
            if params.mode == "toy":
                actions: tuple[str, ...] = ()
            else:
                actions = _walk_actions(rng, network, spline, rng.randint(0, 5))
            if is_pair:
                offset = round(rng.uniform(0.0, FOLLOWER_OFFSET_MAX), 1)
                span = PAIR_SPACING + VEHICLE_LENGTH
            else:
                offset = round(rng.uniform(0.0, SINGLE_OFFSET_MAX), 1)
                span = VEHICLE_LENGTH
            if any(
                e.spawn_spline == spline and e.actions == actions for e in entities
            ):
                continue
            same_spline = [e for e in entities if e.spawn_spline == spline]
            if any(
                offset < e.offset + e.span + SPAWN_CLEARANCE
                and e.offset < offset + span + SPAWN_CLEARANCE
                for e in same_spline
            ):
                continue
            entities.append(
                _Entity(spawn_spline=spline, actions=actions, offset=offset,
                        span=span, is_pair=is_pair)
            )
            break
        else:
            raise SamplingExhausted(
                f"could not place car {len(entities) + 1} of {params.n_cars} "
                f"after {MAX_PLACEMENT_RETRIES} retries"
            )
    return entities


def sample_scenario(
    rng: random.Random,
    params: DatasetParams,
    scenario_id: str,
    network: road_network.RoadNetwork | None = None,
) -> tuple[ScenarioConfig, CausalGraph]:
    """Draw one scenario config and its ground-truth graph."""
    network = network or road_network.default_grid()
    entities = _place_entities(rng, params, network)

    vehicles: list[VehicleSpec] = []
    edges: list[tuple[str, str]] = []
    car = 0

    def next_id() -> str:
        nonlocal car
        vid = f"car{car:02d}"
        car += 1
        return vid

    for entity in entities:
        if params.mode == "toy":
            speed = TOY_SPEED
        else:
            speed = round(rng.uniform(*SPEED_RANGE), 1)
        if entity.is_pair:
            leader_id, follower_id = next_id(), next_id()
            vehicles.append(
                VehicleSpec(id=leader_id, spawn_spline=entity.spawn_spline,
                            spawn_offset=round(entity.offset + PAIR_SPACING, 1),
                            actions=entity.actions, target_speed=speed)
            )
            vehicles.append(
                VehicleSpec(id=follower_id, spawn_spline=entity.spawn_spline,
                            spawn_offset=entity.offset, actions=entity.actions,
                            target_speed=speed)
            )
            edges.append((leader_id, follower_id))
        else:
            vehicles.append(
                VehicleSpec(id=next_id(), spawn_spline=entity.spawn_spline,
                            spawn_offset=entity.offset, actions=entity.actions,
                            target_speed=speed)
            )

    schedule: SignalSchedule | None = None
    confounders = ConfounderSettings()
    if params.mode == "agency":
        base = default_schedule()
        offset = round(rng.uniform(0.0, base.cycle_period), 1)
        schedule = SignalSchedule(id=base.id, phases=base.phases, offset=offset)

    config = ScenarioConfig(
        scenario_id=scenario_id,
        mode=params.mode,
        vehicles=tuple(vehicles),
        seed=rng.getrandbits(32),
        causal_edges=tuple(edges),
        signal_schedule=schedule,
        confounders=confounders,
    )
    validate_config(config)
    graph = CausalGraph.from_lists([v.id for v in vehicles], edges)
    return config, graph


# ---------------------------------------------------------------------------
# dataset generation


def scenario_name(params: DatasetParams, split: str, index: int) -> str:
    frac = int(round(params.causal_fraction * 100))
    return f"{params.mode}-{params.n_cars}c{frac}-{split}-{index:05d}"


def _generate_one(args) -> dict:
    params, out_dir, split, index = args
    rng = random.Random(stream_seed(params.seed, split, index))
    sid = scenario_name(params, split, index)
    config, graph = sample_scenario(rng, params, sid)
    network = road_network.default_grid()
    log = engine.run(config, network)

    split_dir = Path(out_dir) / split
    scenario_path = split_dir / f"{sid}.scenario.json"
    log_path = split_dir / f"{sid}.simlog.jsonl"
    scenario_path.write_text(serialize_scenario(config) + "\n", encoding="ascii")
    engine.write_log(log, log_path)
    return {
        "scenario_id": sid,
        "scenario_file": f"{split}/{scenario_path.name}",
        "log_file": f"{split}/{log_path.name}",
        "config_digest": log.config_digest,
        "log_digest": engine.file_digest(log_path),
        "n_edges": len(graph.edges),
    }


def generate_dataset(params: DatasetParams, out_dir, workers: int = 1) -> dict:
    """Generate all splits plus a manifest; returns the manifest dict.

    Output is byte-identical for a given ``params`` regardless of
    ``workers``: every scenario is derived from its own seed stream and the
    manifest is assembled in index order.
    """
    out = Path(out_dir)
    for split in SPLITS:
        (out / split).mkdir(parents=True, exist_ok=True)
    jobs = [
        (params, str(out), split, index)
        for split, count in zip(SPLITS, params.counts)
        for index in range(count)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, jobs, chunksize=8))
    else:
        results = [_generate_one(job) for job in jobs]

    splits: dict[str, list[dict]] = {split: [] for split in SPLITS}
    for job, entry in zip(jobs, results):
        splits[job[2]].append(entry)

    network = road_network.default_grid()
    manifest = {
        "format": "dataset/1",
        "params": {
            "n_cars": params.n_cars,
            "causal_fraction": params.causal_fraction,
            "mode": params.mode,
            "counts": list(params.counts),
            "seed": params.seed,
        },
        "grid": {"rows": 4, "cols": 4, "block_size": 100.0, "lane_offset": 3.0},
        "extent": [network.extent[0], network.extent[1]],
        "splits": splits,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=True) + "\n",
        encoding="ascii",
    )
    return manifest


def read_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# counterfactual edits


@dataclass(frozen=True)
class ToggleRunRedLights:
    vehicle_id: str


@dataclass(frozen=True)
class ChangeAction:
    vehicle_id: str
    index: int
    action: str


@dataclass(frozen=True)
class ShiftSignalOffset:
    delta: float


CounterfactualEdit = ToggleRunRedLights | ChangeAction | ShiftSignalOffset


def counterfactual_variant(config: ScenarioConfig, edit: CounterfactualEdit) -> ScenarioConfig:
    """A copy of ``config`` with one targeted edit and a ``-cf`` id suffix."""

    def find_vehicle(vehicle_id: str) -> int:
        for k, v in enumerate(config.vehicles):
            if v.id == vehicle_id:
                return k
        raise UnknownVehicle(vehicle_id)

    if isinstance(edit, ToggleRunRedLights):
        k = find_vehicle(edit.vehicle_id)
        vehicles = list(config.vehicles)
        vehicles[k] = replace(vehicles[k], run_red_lights=not vehicles[k].run_red_lights)
        out = replace(config, vehicles=tuple(vehicles))
    elif isinstance(edit, ChangeAction):
        k = find_vehicle(edit.vehicle_id)
        vehicle = config.vehicles[k]
        if not 0 <= edit.index < len(vehicle.actions):
            raise ValueError(f"action index {edit.index} out of range for {vehicle.id!r}")
        if edit.action not in road_network.ACTION_VOCAB:
            raise ValueError(f"unknown action {edit.action!r}")
        actions = list(vehicle.actions)
        actions[edit.index] = edit.action
        vehicles = list(config.vehicles)
        vehicles[k] = replace(vehicle, actions=tuple(actions))
        out = replace(config, vehicles=tuple(vehicles))
    elif isinstance(edit, ShiftSignalOffset):
        if config.signal_schedule is None:
            raise ValueError("scenario has no signal schedule to shift")
        schedule = SignalSchedule(
            id=config.signal_schedule.id,
            phases=config.signal_schedule.phases,
            offset=config.signal_schedule.offset + edit.delta,
        )
        out = replace(config, signal_schedule=schedule)
    else:
        raise TypeError(f"unknown edit type {type(edit).__name__}")

    out = replace(out, scenario_id=config.scenario_id + "-cf")
    validate_config(out)
    return out
