"""Command-line entry point: generate, simulate, discover, predict, evaluate.

Exit codes: 0 success, 1 usage error, 2 validation error (bad scenario or
dataset content), 3 I/O error.  Diagnostics go to stderr; machine-readable
output goes to files (or stdout for network-dump without --out).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, datagen, engine, road_network, scenario
from .graphs import CausalGraph

log = logging.getLogger("ccity")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

PREDICTIONS_FORMAT = "predictions/1"
DISCOVERY_FORMAT = "discovery/1"


def _dump_json(payload: dict, out_path: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    if out_path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(out_path).write_text(text + "\n", encoding="ascii")


def _parse_counts(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated counts")
    try:
        counts = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad counts {text!r}") from None
    return counts  # type: ignore[return-value]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccity",
        description="Deterministic traffic scenarios with known causal structure.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="log progress to stderr (-vv for debug)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset of scenarios and logs")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--preset", choices=sorted(datagen.PRESETS),
                     help="split sizes by name (overridden by --counts)")
    gen.add_argument("--counts", type=_parse_counts, metavar="TRAIN,VAL,TEST",
                     help="explicit split sizes")
    gen.add_argument("--cars", type=int, default=8, help="vehicles per scenario")
    gen.add_argument("--causal-frac", type=float, default=0.5,
                     help="fraction of vehicles in leader-follower pairs")
    gen.add_argument("--mode", choices=("toy", "agency"), default="agency")
    gen.add_argument("--seed", type=int, default=0, help="dataset seed")
    gen.add_argument("--workers", type=int, default=1,
                     help="parallel scenario workers (output is identical for any value)")
    gen.set_defaults(func=_cmd_gen)

    sim = sub.add_parser("sim", help="simulate one scenario config")
    sim.add_argument("scenario", help="scenario JSON path")
    sim.add_argument("--out", required=True, help="output log path (.simlog.jsonl)")
    sim.set_defaults(func=_cmd_sim)

    disc = sub.add_parser("discover", help="recover leader-follower edges from logs")
    disc.add_argument("--dataset", required=True, help="dataset directory")
    disc.add_argument("--split", choices=datagen.SPLITS, default="test")
    disc.add_argument("--max-lag", type=int, default=analysis.MAX_LAG)
    group = disc.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float,
                       help=f"edge score threshold (default {analysis.DEFAULT_EDGE_THRESHOLD})")
    group.add_argument("--calibrate", action="store_true",
                       help="pick the threshold by F1 grid search on the train split")
    disc.add_argument("--out", required=True, help="metrics JSON path")
    disc.set_defaults(func=_cmd_discover)

    pred = sub.add_parser("predict", help="forecast trajectories past the history window")
    pred.add_argument("--dataset", required=True, help="dataset directory")
    pred.add_argument("--split", choices=datagen.SPLITS, default="test")
    pred.add_argument("--method", choices=("cv", "graph"), default="cv")
    pred.add_argument("--history", type=int, default=analysis.HISTORY_LEN,
                      help="frames of context the forecaster may use")
    pred.add_argument("--horizon", type=int, default=analysis.HORIZON,
                      help="frames to predict")
    pred.add_argument("--max-lag", type=int, default=analysis.MAX_LAG)
    group = pred.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=float, help="edge threshold for --method graph")
    group.add_argument("--calibrate", action="store_true",
                       help="calibrate the edge threshold on the train split")
    pred.add_argument("--out", required=True, help="predictions JSON path")
    pred.set_defaults(func=_cmd_predict)

    ev = sub.add_parser("eval", help="score a predictions file against ground truth")
    ev.add_argument("--pred", required=True, help="predictions JSON from `ccity predict`")
    ev.add_argument("--truth", required=True, help="dataset directory with ground truth")
    ev.add_argument("--out", required=True, help="report CSV path")
    ev.set_defaults(func=_cmd_eval)

    dump = sub.add_parser("network-dump", help="write the road network as JSON")
    dump.add_argument("--rows", type=int, default=4)
    dump.add_argument("--cols", type=int, default=4)
    dump.add_argument("--block-size", type=float, default=100.0)
    dump.add_argument("--lane-offset", type=float, default=3.0)
    dump.add_argument("--out", help="output path (stdout when omitted)")
    dump.set_defaults(func=_cmd_network_dump)

    return parser


def _cmd_gen(args: argparse.Namespace) -> int:
    if args.counts is not None:
        counts = args.counts
    elif args.preset is not None:
        counts = datagen.PRESETS[args.preset]
    else:
        counts = datagen.PRESETS["smoke"]
    if args.workers < 1:
        raise scenario.InvariantViolation("--workers must be >= 1")
    params = datagen.DatasetParams(
        n_cars=args.cars,
        causal_fraction=args.causal_frac,
        mode=args.mode,
        counts=counts,
        seed=args.seed,
    )
    log.info("generating %s scenarios into %s", sum(counts), args.out)
    manifest = datagen.generate_dataset(params, args.out, workers=args.workers)
    log.info("wrote manifest with splits %s",
             {k: len(v) for k, v in manifest["splits"].items()})
    return EXIT_OK


def _cmd_sim(args: argparse.Namespace) -> int:
    config = scenario.parse_scenario(Path(args.scenario).read_bytes())
    network = road_network.default_grid()
    sim_log = engine.run(config, network)
    engine.write_log(sim_log, args.out)
    log.info("simulated %s: %d frames, %d collisions",
             config.scenario_id, len(sim_log.frames), len(sim_log.collisions))
    return EXIT_OK


def _resolve_threshold(args: argparse.Namespace, dataset: str) -> float:
    if args.threshold is not None:
        return args.threshold
    if args.calibrate:
        train = analysis.load_split(dataset, "train")
        windows = [(t.history(), g) for t, g in train]
        threshold = analysis.threshold_calibrate(windows, max_lag=args.max_lag)
        log.info("calibrated threshold: %.6g", threshold)
        return threshold
    return analysis.DEFAULT_EDGE_THRESHOLD


def _cmd_discover(args: argparse.Namespace) -> int:
    threshold = _resolve_threshold(args, args.dataset)
    data = analysis.load_split(args.dataset, args.split)
    rows = []
    f1s = []
    tp = fp = fn = 0
    for trajs, truth in data:
        pred = analysis.discover_edges(
            trajs.history(), max_lag=args.max_lag, threshold=threshold
        )
        precision, recall, f1 = analysis.f1_edges(pred, truth)
        f1s.append(f1)
        tp += len(pred.edges & truth.edges)
        fp += len(pred.edges - truth.edges)
        fn += len(truth.edges - pred.edges)
        rows.append({
            "scenario_id": trajs.scenario_id,
            "graph": pred.to_json(),
            "precision": precision,
            "recall": recall,
            "f1": f1,
        })
    pooled_p = tp / (tp + fp) if tp + fp else 0.0
    pooled_r = tp / (tp + fn) if tp + fn else 0.0
    pooled_f1 = 2 * pooled_p * pooled_r / (pooled_p + pooled_r) if pooled_p + pooled_r else 0.0
    n = len(f1s)
    stderr = float(np.std(f1s, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    payload = {
        "format": DISCOVERY_FORMAT,
        "dataset": str(args.dataset),
        "split": args.split,
        "max_lag": args.max_lag,
        "threshold": threshold,
        "scenarios": rows,
        "mean_f1": float(np.mean(f1s)) if f1s else 0.0,
        "stderr_f1": stderr,
        "pooled": {"precision": pooled_p, "recall": pooled_r, "f1": pooled_f1},
    }
    _dump_json(payload, args.out)
    log.info("%s split mean F1 %.4f over %d scenarios", args.split, payload["mean_f1"], n)
    return EXIT_OK


def _cmd_predict(args: argparse.Namespace) -> int:
    if args.history < 2:
        raise scenario.InvariantViolation("--history must be >= 2")
    if args.horizon < 1:
        raise scenario.InvariantViolation("--horizon must be >= 1")
    data = analysis.load_split(args.dataset, args.split, args.history, args.horizon)
    threshold = _resolve_threshold(args, args.dataset) if args.method == "graph" else None
    rows = []
    for trajs, _ in data:
        entry: dict = {"scenario_id": trajs.scenario_id, "ids": list(trajs.ids)}
        if args.method == "cv":
            pred = analysis.predict_cv(trajs)
        else:
            graph = analysis.discover_edges(
                trajs.history(), max_lag=args.max_lag, threshold=threshold
            )
            pred = analysis.predict_graph_conditioned(trajs, graph, max_lag=args.max_lag)
            entry["graph"] = graph.to_json()
        entry["pred"] = [[[round(float(x), 6), round(float(y), 6)] for x, y in car]
                         for car in pred]
        rows.append(entry)
    payload = {
        "format": PREDICTIONS_FORMAT,
        "dataset": str(args.dataset),
        "split": args.split,
        "method": args.method,
        "history_len": args.history,
        "horizon": args.horizon,
        "scenarios": rows,
    }
    if threshold is not None:
        payload["threshold"] = threshold
    _dump_json(payload, args.out)
    log.info("predicted %d scenarios with method=%s", len(rows), args.method)
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    try:
        payload = json.loads(Path(args.pred).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise scenario.MalformedJson(f"bad predictions file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != PREDICTIONS_FORMAT:
        raise scenario.SchemaViolation("format", f"expected a {PREDICTIONS_FORMAT} file")
    split = payload["split"]
    history_len = int(payload["history_len"])
    horizon = int(payload["horizon"])
    truth_data = {
        trajs.scenario_id: (trajs, graph)
        for trajs, graph in analysis.load_split(args.truth, split, history_len, horizon)
    }

    preds, truths = [], []
    tp = fp = fn = 0
    have_graphs = False
    extent = None
    for entry in payload["scenarios"]:
        sid = entry["scenario_id"]
        if sid not in truth_data:
            raise scenario.SchemaViolation("scenarios", f"unknown scenario_id {sid!r}")
        trajs, truth_graph = truth_data[sid]
        extent = trajs.extent
        if list(trajs.ids) != list(entry["ids"]):
            raise analysis.NodeSetMismatch(f"{sid}: prediction ids do not match log ids")
        pred = np.asarray(entry["pred"], dtype=float)
        preds.append(pred)
        truths.append(trajs.future_positions())
        if "graph" in entry:
            have_graphs = True
            pred_graph = CausalGraph.from_json(entry["graph"])
            tp += len(pred_graph.edges & truth_graph.edges)
            fp += len(pred_graph.edges - truth_graph.edges)
            fn += len(truth_graph.edges - pred_graph.edges)
    if not preds:
        raise scenario.SchemaViolation("scenarios", "predictions file has no scenarios")
    mse, stderr = analysis.mse_per_horizon(preds, truths, extent)

    with open(args.out, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "horizon", "mse", "stderr", "precision", "recall", "f1"])
        for step in range(horizon):
            writer.writerow(["horizon", step + 1, f"{mse[step]:.12g}",
                             f"{stderr[step]:.12g}", "", "", ""])
        if have_graphs:
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            writer.writerow(["edges", "", "", "", f"{precision:.12g}",
                             f"{recall:.12g}", f"{f1:.12g}"])
        else:
            writer.writerow(["edges", "", "", "", "", "", ""])
    log.info("wrote report for %d scenarios to %s", len(preds), args.out)
    return EXIT_OK


def _cmd_network_dump(args: argparse.Namespace) -> int:
    network = road_network.build_grid(
        rows=args.rows,
        cols=args.cols,
        block_size=args.block_size,
        lane_offset=args.lane_offset,
    )
    _dump_json(road_network.network_to_json(network), args.out)
    return EXIT_OK


_VALIDATION_ERRORS = (
    scenario.ScenarioError,
    engine.ValidationFailed,
    engine.CorruptLog,
    road_network.InvalidGridParams,
    road_network.RouteUnresolvable,
    datagen.SamplingExhausted,
    datagen.UnknownVehicle,
    analysis.NodeSetMismatch,
    analysis.ShapeMismatch,
    analysis.MissingLag,
    ValueError,
    KeyError,
)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"ccity: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except _VALIDATION_ERRORS as exc:
        print(f"ccity: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
