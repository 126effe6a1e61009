from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ccity import analysis, engine
from ccity.analysis import (
    ConstantVelocityPredictor,
    GraphConditionedPredictor,
    LagEdgeDetector,
    MissingLag,
    NodeSetMismatch,
    ShapeMismatch,
    TrajectorySet,
    discover_edges,
    f1_edges,
    lag_similarity,
    load_split,
    mse_per_horizon,
    pair_scores,
    predict_cv,
    predict_graph_conditioned,
    threshold_calibrate,
    trajectories_from_log,
)
from ccity.graphs import CausalGraph


def make_set(tracks: dict[str, np.ndarray], history_len: int = 100,
             horizon: int = 20, en_route: dict[str, np.ndarray] | None = None,
             extent: tuple[float, float] = (400.0, 400.0)) -> TrajectorySet:
    ids = tuple(sorted(tracks))
    positions = np.stack([np.asarray(tracks[i], dtype=float) for i in ids])
    if en_route is None:
        mask = np.ones(positions.shape[:2], dtype=bool)
    else:
        mask = np.stack([np.asarray(en_route[i], dtype=bool) for i in ids])
    return TrajectorySet(ids=ids, positions=positions, en_route=mask,
                         extent=extent, history_len=history_len, horizon=horizon)


def straight(n: int, speed: float = 2.0, start: float = 0.0, y: float = 0.0) -> np.ndarray:
    xs = start + speed * np.arange(n)
    return np.stack([xs, np.full(n, y)], axis=1)


# ---------------------------------------------------------------------------
# lag similarity


def test_lag_of_shifted_pair_is_fifteen() -> None:
    leader = straight(120, start=30.0)
    follower = straight(120, start=0.0)
    ls = lag_similarity(leader, follower)
    assert ls.best_lag == 15
    assert ls.score < 1e-6
    assert not ls.degenerate


def test_lag_matches_brute_force_argmin() -> None:
    rng = np.random.default_rng(4)
    traj_i = np.cumsum(rng.normal(size=(120, 2)), axis=0)
    traj_j = np.cumsum(rng.normal(size=(120, 2)), axis=0)
    ls = lag_similarity(traj_i, traj_j, max_lag=40)
    t = 120
    brute = {}
    for lag in range(1, 41):
        diffs = traj_i[: t - lag] - traj_j[lag:]
        brute[lag] = float(np.hypot(diffs[:, 0], diffs[:, 1]).mean())
    best = min(brute, key=lambda k: (brute[k], k))
    assert ls.best_lag == best
    assert ls.score == pytest.approx(brute[best])


def test_identical_trajectories_give_lag_one() -> None:
    track = straight(120)
    ls = lag_similarity(track, track.copy())
    assert ls.best_lag == 1
    assert ls.score == pytest.approx(2.0)  # per-frame displacement


def test_equal_scores_tie_to_smaller_lag() -> None:
    a = straight(120, y=0.0)
    b = straight(120, y=5.0)  # parallel, zero relative motion
    ls = lag_similarity(a, b, max_lag=10)
    assert ls.best_lag == 1
    assert ls.score == pytest.approx(math.hypot(2.0, 5.0))


def test_perpendicular_tracks_bounded_by_min_separation() -> None:
    a = np.stack([np.arange(120.0), np.full(120, 10.0)], axis=1)
    b = np.stack([np.full(120, 50.0), np.arange(120.0)], axis=1)
    ls = lag_similarity(a, b, max_lag=40)
    floors = []
    for lag in range(1, 41):
        d = a[: 120 - lag] - b[lag:]
        floors.append(np.hypot(d[:, 0], d[:, 1]).min())
    assert ls.score >= min(floors)


def test_stationary_track_flagged_degenerate() -> None:
    frozen = np.zeros((120, 2))
    moving = straight(120)
    assert lag_similarity(frozen, moving).degenerate
    assert lag_similarity(moving, frozen).degenerate
    assert lag_similarity(frozen, frozen.copy()).degenerate


def test_en_route_mask_excludes_frozen_tail() -> None:
    leader = straight(120, start=30.0)
    follower = straight(120, start=0.0)
    # Freeze the leader halfway; masked scoring still finds the true lag.
    leader_frozen = leader.copy()
    leader_frozen[60:] = leader_frozen[60]
    mask = np.ones(120, dtype=bool)
    mask[60:] = False
    masked = lag_similarity(leader_frozen, follower, en_route_i=mask)
    assert masked.best_lag == 15
    assert masked.score < 1e-6
    unmasked = lag_similarity(leader_frozen, follower)
    assert unmasked.score > masked.score


def test_lag_input_validation() -> None:
    with pytest.raises(ShapeMismatch):
        lag_similarity(straight(120), straight(119))
    with pytest.raises(ValueError, match="max_lag"):
        lag_similarity(straight(120), straight(120), max_lag=0)
    with pytest.raises(ValueError, match="frames"):
        lag_similarity(straight(40), straight(40), max_lag=40)


def test_pair_scores_covers_all_ordered_pairs() -> None:
    trajs = make_set({"a": straight(120), "b": straight(120, y=3),
                      "c": straight(120, y=6)})
    scores = pair_scores(trajs)
    assert set(scores) == {(i, j) for i in "abc" for j in "abc" if i != j}


# ---------------------------------------------------------------------------
# edge discovery


def test_zero_threshold_gives_empty_graph() -> None:
    trajs = make_set({"a": straight(120, start=30.0), "b": straight(120)})
    graph = discover_edges(trajs, threshold=0.0)
    assert graph.edges == frozenset()
    assert graph.nodes == ("a", "b")


def test_shifted_pair_recovered() -> None:
    trajs = make_set({"a": straight(120, start=30.0), "b": straight(120)})
    graph = discover_edges(trajs, threshold=5.0)
    assert graph.edges == {("a", "b")}


def test_reverse_edge_pruned_by_score() -> None:
    # A large threshold admits both directions; only the better one stays.
    trajs = make_set({"a": straight(120, start=30.0), "b": straight(120)})
    graph = discover_edges(trajs, threshold=1e6)
    assert graph.edges == {("a", "b")}


def test_symmetric_tie_keeps_lexicographic_smaller_leader() -> None:
    trajs = make_set({"a": straight(120, y=0), "b": straight(120, y=5)})
    graph = discover_edges(trajs, threshold=1e6)
    assert graph.edges == {("a", "b")}


def test_follower_keeps_only_minimum_score_leader() -> None:
    tracks = {
        "a": straight(120, start=30.0),  # true leader, exact shift
        "b": straight(120, start=0.0),
        "c": straight(120, start=31.0, y=0.5),  # close but imperfect
    }
    graph = discover_edges(make_set(tracks), threshold=1e6)
    leaders = {f: l for l, f in graph.edges}
    assert leaders["b"] == "a"


def test_discovered_graph_in_degree_at_most_one() -> None:
    rng = np.random.default_rng(0)
    tracks = {f"v{k}": np.cumsum(rng.normal(size=(120, 2)), axis=0) for k in range(6)}
    graph = discover_edges(make_set(tracks), threshold=1e6)
    followers = [f for _, f in graph.edges]
    assert len(followers) == len(set(followers))


# ---------------------------------------------------------------------------
# calibration


def test_toy_calibration_reaches_perfect_f1(toy_dataset) -> None:
    out, _ = toy_dataset
    train = [(t.history(), g) for t, g in load_split(out, "train")]
    threshold = threshold_calibrate(train)
    for trajs, truth in load_split(out, "test"):
        pred = discover_edges(trajs.history(), threshold=threshold)
        assert f1_edges(pred, truth) == (1.0, 1.0, 1.0)


def test_no_edge_split_falls_back_to_half_min_score() -> None:
    tracks = {"a": straight(120, y=0), "b": straight(120, y=7)}
    trajs = make_set(tracks)
    truth = CausalGraph.from_lists(["a", "b"], [])
    threshold = threshold_calibrate([(trajs, truth)])
    scores = [ls.score for ls in pair_scores(trajs).values()]
    assert threshold == pytest.approx(min(scores) / 2.0)


def test_calibrated_beats_default_on_train(agency_dataset) -> None:
    out, _ = agency_dataset
    train = [(t.history(), g) for t, g in load_split(out, "train")]
    threshold = threshold_calibrate(train)

    def pooled_f1(thr: float) -> float:
        tp = fp = fn = 0
        for trajs, truth in train:
            pred = discover_edges(trajs, threshold=thr)
            tp += len(pred.edges & truth.edges)
            fp += len(pred.edges - truth.edges)
            fn += len(truth.edges - pred.edges)
        return 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0

    assert pooled_f1(threshold) >= pooled_f1(analysis.DEFAULT_EDGE_THRESHOLD) - 1e-12


# ---------------------------------------------------------------------------
# prediction


def test_cv_stationary_car_stays_put() -> None:
    trajs = make_set({"a": np.tile([[7.0, 9.0]], (120, 1))})
    pred = predict_cv(trajs)
    assert pred.shape == (1, 20, 2)
    assert np.allclose(pred, [7.0, 9.0])


def test_cv_uniform_motion_is_exact() -> None:
    trajs = make_set({"a": straight(120, speed=2.0)})
    pred = predict_cv(trajs)
    truth = trajs.future_positions()
    assert np.allclose(pred, truth)


def test_cv_needs_two_history_frames() -> None:
    trajs = make_set({"a": straight(30)}, history_len=1, horizon=5)
    with pytest.raises(ShapeMismatch):
        predict_cv(trajs)


def test_graph_conditioned_empty_graph_equals_cv() -> None:
    tracks = {"a": straight(120, start=30.0), "b": straight(120)}
    trajs = make_set(tracks)
    graph = CausalGraph.from_lists(["a", "b"], [])
    assert np.array_equal(predict_graph_conditioned(trajs, graph), predict_cv(trajs))


def _turning_pair(turn_frame: int = 95) -> dict[str, np.ndarray]:
    # Leader turns from +x to +y at a known frame; follower trails 15 frames.
    leader = np.zeros((120, 2))
    for t in range(1, 120):
        if t <= turn_frame:
            leader[t] = leader[t - 1] + (2.0, 0.0)
        else:
            leader[t] = leader[t - 1] + (0.0, 2.0)
    follower = np.zeros((120, 2))
    follower[:15] = leader[0] - (30.0, 0.0) + 2.0 * np.arange(15)[:, None] * [1, 0]
    follower[15:] = leader[:105]
    return {"lead": leader, "fol": follower}


def test_graph_conditioning_beats_cv_on_turning_follower() -> None:
    trajs = make_set(_turning_pair())
    graph = CausalGraph.from_lists(["lead", "fol"], [("lead", "fol")])
    truth = trajs.future_positions()
    cv = predict_cv(trajs)
    cond = predict_graph_conditioned(trajs, graph)
    fol = trajs.index_of("fol")
    cv_err = np.abs(cv[fol] - truth[fol]).max()
    cond_err = np.abs(cond[fol] - truth[fol]).max()
    assert cond_err < 1e-9
    assert cv_err > 1.0  # constant velocity misses the turn entirely


def test_graph_conditioning_resolves_chains() -> None:
    a = straight(120, start=60.0)
    b = straight(120, start=30.0)
    c = straight(120, start=0.0)
    trajs = make_set({"a": a, "b": b, "c": c})
    graph = CausalGraph.from_lists(["a", "b", "c"], [("a", "b"), ("b", "c")])
    pred = predict_graph_conditioned(trajs, graph)
    assert np.allclose(pred, trajs.future_positions())


def test_frozen_leader_falls_back_to_cv() -> None:
    tracks = {"a": straight(120, start=30.0), "b": straight(120)}
    mask = {"a": np.ones(120, dtype=bool), "b": np.ones(120, dtype=bool)}
    mask["a"][90:] = False  # leader finished before the history window ends
    trajs = make_set(tracks, en_route=mask)
    graph = CausalGraph.from_lists(["a", "b"], [("a", "b")])
    pred = predict_graph_conditioned(trajs, graph)
    fol = trajs.index_of("b")
    assert np.array_equal(pred[fol], predict_cv(trajs)[fol])


def test_graph_with_unknown_node_raises() -> None:
    trajs = make_set({"a": straight(120)})
    graph = CausalGraph.from_lists(["a", "ghost"], [("ghost", "a")])
    with pytest.raises(MissingLag):
        predict_graph_conditioned(trajs, graph)


# ---------------------------------------------------------------------------
# metrics


def test_mse_zero_when_prediction_equals_truth() -> None:
    truth = np.ones((3, 20, 2))
    mse, stderr = mse_per_horizon([truth.copy()], [truth], (400.0, 400.0))
    assert np.allclose(mse, 0.0)
    assert np.allclose(stderr, 0.0)


def test_mse_constant_offset_is_square_of_normalized_shift() -> None:
    truth = np.zeros((4, 20, 2))
    pred = truth.copy()
    pred[:, :, 0] += 0.1 * 400.0
    mse, _ = mse_per_horizon([pred], [truth], (400.0, 400.0))
    assert np.allclose(mse, 0.01)


def test_mse_matches_brute_force_on_dyadic_case() -> None:
    # Dyadic coordinates make the arithmetic exact in both computations.
    extent = (4.0, 8.0)
    pred_a = np.array([[[1.0, 2.0], [2.0, 4.0]], [[0.5, 1.0], [1.5, 2.0]]])
    truth_a = np.array([[[1.5, 2.5], [2.0, 3.0]], [[0.5, 0.0], [1.0, 2.0]]])
    pred_b = np.array([[[0.0, 0.0], [4.0, 8.0]], [[2.0, 2.0], [2.0, 2.0]]])
    truth_b = np.array([[[1.0, 2.0], [3.0, 4.0]], [[2.0, 4.0], [0.0, 2.0]]])
    mse, stderr = mse_per_horizon([pred_a, pred_b], [truth_a, truth_b], extent)

    per_scenario = []
    for pred, truth in ((pred_a, truth_a), (pred_b, truth_b)):
        rows = []
        for step in range(2):
            total = 0.0
            for car in range(2):
                dx = (pred[car, step, 0] - truth[car, step, 0]) / extent[0]
                dy = (pred[car, step, 1] - truth[car, step, 1]) / extent[1]
                total += dx * dx + dy * dy
            rows.append(total / 2)
        per_scenario.append(rows)
    expected = [(a + b) / 2 for a, b in zip(*per_scenario)]
    assert list(mse) == expected
    spread = [
        math.sqrt(((a - m) ** 2 + (b - m) ** 2) / 1) / math.sqrt(2)
        for a, b, m in zip(per_scenario[0], per_scenario[1], expected)
    ]
    assert list(stderr) == pytest.approx(spread)


def test_mse_shape_validation() -> None:
    good = np.zeros((2, 5, 2))
    with pytest.raises(ShapeMismatch):
        mse_per_horizon([good], [np.zeros((2, 6, 2))], (1.0, 1.0))
    with pytest.raises(ShapeMismatch):
        mse_per_horizon([], [], (1.0, 1.0))
    with pytest.raises(ShapeMismatch):
        mse_per_horizon([good, np.zeros((2, 4, 2))], [good, np.zeros((2, 4, 2))], (1.0, 1.0))


def test_f1_worked_example() -> None:
    pred = CausalGraph.from_lists(["1", "2", "3", "4"], [("1", "2")])
    truth = CausalGraph.from_lists(["1", "2", "3", "4"], [("1", "2"), ("3", "4")])
    precision, recall, f1 = f1_edges(pred, truth)
    assert precision == 1.0
    assert recall == 0.5
    assert f1 == pytest.approx(2 / 3)


def test_f1_perfect_and_reversed() -> None:
    truth = CausalGraph.from_lists(["a", "b"], [("a", "b")])
    assert f1_edges(truth, truth) == (1.0, 1.0, 1.0)
    reverse = CausalGraph.from_lists(["a", "b"], [("b", "a")])
    assert f1_edges(reverse, truth) == (0.0, 0.0, 0.0)


def test_f1_empty_conventions() -> None:
    empty = CausalGraph.from_lists(["a", "b"], [])
    assert f1_edges(empty, empty) == (0.0, 0.0, 0.0)


def test_f1_node_set_mismatch() -> None:
    a = CausalGraph.from_lists(["a", "b"], [])
    b = CausalGraph.from_lists(["a", "c"], [])
    with pytest.raises(NodeSetMismatch):
        f1_edges(a, b)


def test_f1_matches_brute_force_exhaustively() -> None:
    # All directed graphs (in-degree <= 1, no self loops) on three nodes.
    nodes = ("x", "y", "z")
    arcs = [(a, b) for a in nodes for b in nodes if a != b]

    def graphs():
        for r in range(4):
            for combo in itertools.combinations(arcs, r):
                followers = [b for _, b in combo]
                if len(followers) == len(set(followers)):
                    yield CausalGraph.from_lists(nodes, combo)

    all_graphs = list(graphs())
    assert len(all_graphs) > 20
    for pred in all_graphs[::3]:
        for truth in all_graphs[::4]:
            precision, recall, f1 = f1_edges(pred, truth)
            tp = len(pred.edges & truth.edges)
            expected_p = tp / len(pred.edges) if pred.edges else 0.0
            expected_r = tp / len(truth.edges) if truth.edges else 0.0
            expected_f = (
                2 * expected_p * expected_r / (expected_p + expected_r)
                if expected_p + expected_r
                else 0.0
            )
            assert precision == pytest.approx(expected_p)
            assert recall == pytest.approx(expected_r)
            assert f1 == pytest.approx(expected_f)


# ---------------------------------------------------------------------------
# trajectory plumbing


def test_trajectories_from_log_structure(toy_dataset) -> None:
    out, manifest = toy_dataset
    entry = manifest["splits"]["test"][0]
    log = engine.read_log(out / entry["log_file"])
    trajs = trajectories_from_log(log)
    assert trajs.ids == tuple(sorted(log.frames[0].vehicles))
    assert trajs.positions.shape == (len(trajs.ids), len(log.frames), 2)
    assert trajs.scenario_id == log.scenario_id
    k = trajs.index_of(trajs.ids[0])
    pose = log.frames[0].vehicles[trajs.ids[0]]
    assert tuple(trajs.positions[k, 0]) == (pose.x, pose.y)
    with pytest.raises(MissingLag):
        trajs.index_of("ghost")


def test_history_view_and_future_positions() -> None:
    trajs = make_set({"a": straight(120)})
    hist = trajs.history()
    assert hist.positions.shape == (1, 100, 2)
    future = trajs.future_positions()
    assert future.shape == (1, 20, 2)
    assert np.array_equal(future[0, 0], trajs.positions[0, 100])
    short = make_set({"a": straight(110)})
    with pytest.raises(ShapeMismatch):
        short.future_positions()


def test_trajectory_set_shape_validation() -> None:
    with pytest.raises(ShapeMismatch):
        TrajectorySet(ids=("a",), positions=np.zeros((2, 10, 2)),
                      en_route=np.ones((2, 10), dtype=bool), extent=(1.0, 1.0))


def test_load_split_sorted_and_complete(toy_dataset) -> None:
    out, manifest = toy_dataset
    data = load_split(out, "test")
    assert len(data) == len(manifest["splits"]["test"])
    ids = [t.scenario_id for t, _ in data]
    assert ids == sorted(ids)
    with pytest.raises(ValueError, match="unknown split"):
        load_split(out, "holdout")


# ---------------------------------------------------------------------------
# estimator wrappers


def test_detector_requires_fit_before_predict(toy_dataset) -> None:
    out, _ = toy_dataset
    X = [t for t, _ in load_split(out, "test")]
    with pytest.raises(NotFittedError):
        LagEdgeDetector().predict(X)


def test_detector_fit_predict_score_on_toy(toy_dataset) -> None:
    out, _ = toy_dataset
    train = load_split(out, "train")
    test = load_split(out, "test")
    det = LagEdgeDetector().fit([t for t, _ in train], [g for _, g in train])
    assert det.score([t for t, _ in test], [g for _, g in test]) == 1.0
    for pred, (_, truth) in zip(det.predict([t for t, _ in test]), test):
        assert pred == truth


def test_detector_explicit_threshold_needs_no_labels(toy_dataset) -> None:
    out, _ = toy_dataset
    X = [t for t, _ in load_split(out, "test")]
    det = LagEdgeDetector(threshold=20.0).fit(X)
    assert det.threshold_ == 20.0
    assert len(det.predict(X)) == len(X)
    with pytest.raises(ValueError, match="ground-truth"):
        LagEdgeDetector().fit(X)


def test_estimators_are_cloneable() -> None:
    det = LagEdgeDetector(max_lag=20, threshold=3.0, history_len=80)
    twin = clone(det)
    assert twin.get_params() == det.get_params()
    predictor = GraphConditionedPredictor(detector=det, horizon=10)
    assert clone(predictor).get_params()["horizon"] == 10


def test_cv_predictor_wrapper(toy_dataset) -> None:
    out, _ = toy_dataset
    test = load_split(out, "test")
    model = ConstantVelocityPredictor().fit()
    preds = model.predict([t for t, _ in test])
    for pred, (trajs, _) in zip(preds, test):
        assert pred.shape == (len(trajs.ids), 20, 2)
        assert np.allclose(pred, trajs.future_positions(), atol=1e-5)


def test_graph_predictor_uses_discovered_graphs(toy_dataset) -> None:
    out, _ = toy_dataset
    train = load_split(out, "train")
    test = load_split(out, "test")
    model = GraphConditionedPredictor().fit([t for t, _ in train], [g for _, g in train])
    preds = model.predict([t for t, _ in test])
    for pred, (trajs, _) in zip(preds, test):
        assert np.allclose(pred, trajs.future_positions(), atol=1e-5)


def test_graph_predictor_accepts_explicit_graphs(toy_dataset) -> None:
    out, _ = toy_dataset
    test = load_split(out, "test")
    model = GraphConditionedPredictor()
    preds = model.predict([t for t, _ in test], graphs=[g for _, g in test])
    assert len(preds) == len(test)
    with pytest.raises(NotFittedError):
        model.predict([t for t, _ in test])
