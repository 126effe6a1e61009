"""Graph discovery, trajectory forecasting, and scoring against ground truth.

The discovery baseline scores ordered vehicle pairs by how well one track
matches the other shifted back in time, thresholds the scores into candidate
edges, and prunes to a well-formed graph.  Forecasting baselines are
constant-velocity extrapolation and leader-shift conditioning on a graph.
Estimator wrappers expose the fit/predict/score surface so the baselines
compose with scikit-learn tooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.exceptions import NotFittedError

from .datagen import SPLITS, read_manifest
from .engine import SimLog, read_log
from .graphs import CausalGraph

MAX_LAG = 40
DEFAULT_EDGE_THRESHOLD = 5.0  # map units; calibration normally replaces this
HISTORY_LEN = 100
HORIZON = 20
CALIBRATION_QUANTILES = 201
# Lag scores at or above this count as "no usable overlap".
_INF = math.inf


class MissingLag(KeyError):
    """Graph references a vehicle the trajectory set does not contain."""


class ShapeMismatch(ValueError):
    """Prediction/truth arrays disagree in layout."""


class NodeSetMismatch(ValueError):
    """Two graphs being compared cover different vehicles."""


@dataclass(frozen=True)
class LagScore:
    pair: tuple[str, str]
    best_lag: int
    score: float
    degenerate: bool = False


@dataclass(frozen=True)
class TrajectorySet:
    """Per-vehicle logged positions with en-route masks for one scenario."""

    ids: tuple[str, ...]
    positions: np.ndarray  # (n_vehicles, n_frames, 2)
    en_route: np.ndarray  # (n_vehicles, n_frames) bool
    extent: tuple[float, float]
    history_len: int = HISTORY_LEN
    horizon: int = HORIZON
    scenario_id: str = ""

    def __post_init__(self) -> None:
        n, t = self.positions.shape[:2]
        if len(self.ids) != n or self.en_route.shape != (n, t):
            raise ShapeMismatch("ids, positions, and en_route disagree")

    @property
    def n_frames(self) -> int:
        return self.positions.shape[1]

    def index_of(self, vehicle_id: str) -> int:
        try:
            return self.ids.index(vehicle_id)
        except ValueError:
            raise MissingLag(vehicle_id) from None

    def history(self) -> TrajectorySet:
        """First ``history_len`` frames (what a forecaster may look at)."""
        return replace(
            self,
            positions=self.positions[:, : self.history_len],
            en_route=self.en_route[:, : self.history_len],
        )

    def future_positions(self) -> np.ndarray:
        """Ground-truth positions for the forecast window, (n, horizon, 2)."""
        lo = self.history_len
        hi = lo + self.horizon
        if hi > self.n_frames:
            raise ShapeMismatch(
                f"need {hi} frames for history+horizon, log has {self.n_frames}"
            )
        return self.positions[:, lo:hi]


def trajectories_from_log(
    log: SimLog, history_len: int = HISTORY_LEN, horizon: int = HORIZON
) -> TrajectorySet:
    ids = tuple(sorted(log.frames[0].vehicles))
    n, t = len(ids), len(log.frames)
    positions = np.empty((n, t, 2))
    en_route = np.empty((n, t), dtype=bool)
    for j, frame in enumerate(log.frames):
        for i, vid in enumerate(ids):
            pose = frame.vehicles[vid]
            positions[i, j] = (pose.x, pose.y)
            en_route[i, j] = not pose.finished
    return TrajectorySet(
        ids=ids,
        positions=positions,
        en_route=en_route,
        extent=log.extent,
        history_len=history_len,
        horizon=horizon,
        scenario_id=log.scenario_id,
    )


def load_split(
    dataset_dir, split: str, history_len: int = HISTORY_LEN, horizon: int = HORIZON
) -> list[tuple[TrajectorySet, CausalGraph]]:
    """All (trajectories, ground truth) of one split, ordered by scenario id."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    manifest = read_manifest(dataset_dir)
    out = []
    for entry in sorted(manifest["splits"][split], key=lambda e: e["scenario_id"]):
        log = read_log(Path(dataset_dir) / entry["log_file"])
        out.append((trajectories_from_log(log, history_len, horizon), log.ground_truth))
    return out


# ---------------------------------------------------------------------------
# lag scoring and edge discovery


def lag_similarity(
    traj_i: np.ndarray,
    traj_j: np.ndarray,
    max_lag: int = MAX_LAG,
    en_route_i: np.ndarray | None = None,
    en_route_j: np.ndarray | None = None,
    pair: tuple[str, str] = ("i", "j"),
) -> LagScore:
    """Best time shift making track j look like a delayed copy of track i.

    For each lag tau in [1, max_lag], scores the mean distance between
    ``traj_i(t)`` and ``traj_j(t + tau)`` over frames where both vehicles are
    en route; returns the minimizing lag (ties break low).
    """
    traj_i = np.asarray(traj_i, dtype=float)
    traj_j = np.asarray(traj_j, dtype=float)
    t = traj_i.shape[0]
    if traj_j.shape != traj_i.shape or traj_i.ndim != 2:
        raise ShapeMismatch("trajectories must share shape (frames, 2)")
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if t <= max_lag + 2:
        raise ValueError(f"need more than {max_lag + 2} frames, got {t}")
    if en_route_i is None:
        en_route_i = np.ones(t, dtype=bool)
    if en_route_j is None:
        en_route_j = np.ones(t, dtype=bool)

    moved_i = float(np.abs(np.diff(traj_i[en_route_i], axis=0)).sum()) if en_route_i.any() else 0.0
    moved_j = float(np.abs(np.diff(traj_j[en_route_j], axis=0)).sum()) if en_route_j.any() else 0.0
    degenerate = moved_i <= 1e-9 or moved_j <= 1e-9

    best_lag, best_score = 1, _INF
    for lag in range(1, max_lag + 1):
        mask = en_route_i[: t - lag] & en_route_j[lag:]
        if not mask.any():
            continue
        diff = traj_i[: t - lag][mask] - traj_j[lag:][mask]
        score = float(np.hypot(diff[:, 0], diff[:, 1]).mean())
        if score < best_score:
            best_lag, best_score = lag, score
    if not math.isfinite(best_score):
        degenerate = True
    return LagScore(pair=pair, best_lag=best_lag, score=best_score, degenerate=degenerate)


def pair_scores(trajs: TrajectorySet, max_lag: int = MAX_LAG) -> dict[tuple[str, str], LagScore]:
    """Lag scores for every ordered pair (potential leader, potential follower)."""
    scores: dict[tuple[str, str], LagScore] = {}
    for i, id_i in enumerate(trajs.ids):
        for j, id_j in enumerate(trajs.ids):
            if i == j:
                continue
            scores[(id_i, id_j)] = lag_similarity(
                trajs.positions[i],
                trajs.positions[j],
                max_lag,
                trajs.en_route[i],
                trajs.en_route[j],
                pair=(id_i, id_j),
            )
    return scores


def _prune_to_graph(
    ids: tuple[str, ...], scores: dict[tuple[str, str], LagScore], threshold: float
) -> CausalGraph:
    """Candidate edges below threshold, pruned to a well-formed graph."""
    best: dict[str, LagScore] = {}
    for (leader, follower), ls in scores.items():
        if not ls.score < threshold:
            continue
        cur = best.get(follower)
        if cur is None or (ls.score, leader) < (cur.score, cur.pair[0]):
            best[follower] = ls
    kept: dict[str, LagScore] = dict(best)
    for follower in list(kept):
        ls = kept.get(follower)
        if ls is None:
            continue
        leader = ls.pair[0]
        other = kept.get(leader)
        if other is not None and other.pair[0] == follower:
            # Two-cycle: keep the better-scoring direction, low id on ties.
            a, b = ls, other
            if (a.score, a.pair[0]) <= (b.score, b.pair[0]):
                kept.pop(leader, None)
            else:
                kept.pop(follower, None)
    edges = [(ls.pair[0], follower) for follower, ls in kept.items()]
    return CausalGraph.from_lists(ids, edges)


def discover_edges(
    trajs: TrajectorySet,
    max_lag: int = MAX_LAG,
    threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> CausalGraph:
    """Threshold lag scores into a leader-follower graph for one scenario."""
    return _prune_to_graph(trajs.ids, pair_scores(trajs, max_lag), threshold)


def threshold_calibrate(
    train: list[tuple[TrajectorySet, CausalGraph]],
    max_lag: int = MAX_LAG,
    quantiles: int = CALIBRATION_QUANTILES,
) -> float:
    """Grid-search a score threshold maximizing pooled F1 on a training split.

    Candidates are quantiles of the pooled score distribution (plus the
    package default); when several candidates tie at the best F1, the
    midpoint of the widest contiguous band of them is returned.  A split with
    no true edges falls back to half the minimum observed score.
    """
    scored = [(pair_scores(trajs, max_lag), truth) for trajs, truth in train]
    pooled = np.array(
        [ls.score for scores, _ in scored for ls in scores.values() if math.isfinite(ls.score)]
    )
    if pooled.size == 0:
        return DEFAULT_EDGE_THRESHOLD
    if all(not truth.edges for _, truth in scored):
        return float(pooled.min()) / 2.0

    qs = np.quantile(pooled, np.linspace(0.0, 1.0, quantiles))
    candidates = sorted(set(float(q) for q in qs) | {DEFAULT_EDGE_THRESHOLD, float(pooled.max()) * 1.001})

    def pooled_f1(threshold: float) -> float:
        tp = fp = fn = 0
        for (scores, truth), (trajs, _) in zip(scored, train):
            pred = _prune_to_graph(trajs.ids, scores, threshold)
            tp += len(pred.edges & truth.edges)
            fp += len(pred.edges - truth.edges)
            fn += len(truth.edges - pred.edges)
        if tp == 0:
            return 0.0
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        return 2.0 * precision * recall / (precision + recall)

    f1s = [pooled_f1(c) for c in candidates]
    best = max(f1s)
    runs: list[tuple[int, int]] = []
    start = None
    for k, f1 in enumerate(f1s):
        if f1 == best and start is None:
            start = k
        elif f1 != best and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, len(f1s) - 1))
    lo, hi = max(runs, key=lambda r: candidates[r[1]] - candidates[r[0]])
    return (candidates[lo] + candidates[hi]) / 2.0


# ---------------------------------------------------------------------------
# forecasting


def predict_cv(trajs: TrajectorySet) -> np.ndarray:
    """Constant-velocity rollout from the last two history frames, (n, horizon, 2)."""
    hist = trajs.positions[:, : trajs.history_len]
    if hist.shape[1] < 2:
        raise ShapeMismatch("need at least two history frames")
    velocity = hist[:, -1] - hist[:, -2]
    steps = np.arange(1, trajs.horizon + 1)
    return hist[:, -1][:, None, :] + velocity[:, None, :] * steps[None, :, None]


def predict_graph_conditioned(
    trajs: TrajectorySet, graph: CausalGraph, max_lag: int = MAX_LAG
) -> np.ndarray:
    """Forecast followers as their leader's track shifted by the pair's best lag.

    Followers read the leader's observed history where the shifted index
    lands inside it and the leader's own forecast beyond; vehicles without a
    usable leader (frozen before the forecast, degenerate lag, dependency
    cycle) fall back to constant velocity.
    """
    for node in graph.nodes:
        trajs.index_of(node)
    preds = predict_cv(trajs)
    h = trajs.history_len
    followers = {follower: leader for leader, follower in graph.edges}

    resolved: set[str] = {vid for vid in trajs.ids if vid not in followers}
    pending = dict(followers)
    while pending:
        progressed = False
        for follower, leader in list(pending.items()):
            if leader not in resolved:
                continue
            del pending[follower]
            progressed = True
            i = trajs.index_of(leader)
            j = trajs.index_of(follower)
            if not trajs.en_route[i, h - 1]:
                resolved.add(follower)  # leader frozen: keep CV fallback
                continue
            ls = lag_similarity(
                trajs.positions[i, :h],
                trajs.positions[j, :h],
                max_lag,
                trajs.en_route[i, :h],
                trajs.en_route[j, :h],
                pair=(leader, follower),
            )
            if ls.degenerate or not math.isfinite(ls.score):
                resolved.add(follower)
                continue
            track = np.concatenate([trajs.positions[i, :h], preds[i]], axis=0)
            src = np.arange(h, h + trajs.horizon) - ls.best_lag
            preds[j] = track[src]
            resolved.add(follower)
        if not progressed:
            break  # dependency cycle: the rest keep their CV fallback
    return preds


# ---------------------------------------------------------------------------
# metrics


def mse_per_horizon(
    preds: list[np.ndarray], truths: list[np.ndarray], extent: tuple[float, float]
) -> tuple[np.ndarray, np.ndarray]:
    """Mean squared normalized error per horizon step, with per-scenario stderr.

    Coordinates are normalized by the map extent; the squared x and y errors
    are summed per car, averaged over cars within a scenario, then averaged
    over scenarios.  The standard error is across scenario means (0 for a
    single scenario).
    """
    if len(preds) != len(truths) or not preds:
        raise ShapeMismatch("need matching, non-empty prediction/truth lists")
    width, height = float(extent[0]), float(extent[1])
    horizon = None
    rows = []
    for pred, truth in zip(preds, truths):
        pred = np.asarray(pred, dtype=float)
        truth = np.asarray(truth, dtype=float)
        if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[2] != 2:
            raise ShapeMismatch(f"bad scenario shapes {pred.shape} vs {truth.shape}")
        if horizon is None:
            horizon = pred.shape[1]
        elif pred.shape[1] != horizon:
            raise ShapeMismatch("scenarios disagree on horizon length")
        err_x = (pred[:, :, 0] - truth[:, :, 0]) / width
        err_y = (pred[:, :, 1] - truth[:, :, 1]) / height
        rows.append((err_x**2 + err_y**2).mean(axis=0))
    per_scenario = np.stack(rows)  # (n_scenarios, horizon)
    mse = per_scenario.mean(axis=0)
    if per_scenario.shape[0] > 1:
        stderr = per_scenario.std(axis=0, ddof=1) / math.sqrt(per_scenario.shape[0])
    else:
        stderr = np.zeros(horizon)
    return mse, stderr


def f1_edges(pred: CausalGraph, truth: CausalGraph) -> tuple[float, float, float]:
    """Directed-edge precision, recall, and F1; empty denominators score 0."""
    if set(pred.nodes) != set(truth.nodes):
        raise NodeSetMismatch(f"{sorted(pred.nodes)} vs {sorted(truth.nodes)}")
    tp = len(pred.edges & truth.edges)
    fp = len(pred.edges - truth.edges)
    fn = len(truth.edges - pred.edges)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# estimator wrappers


class LagEdgeDetector(BaseEstimator):
    """Leader-follower graph recovery via thresholded lag similarity.

    Parameters follow scikit-learn conventions: construction only stores
    them, ``fit`` calibrates the threshold (unless one is given), and
    ``predict`` returns one :class:`CausalGraph` per trajectory set.
    """

    def __init__(
        self,
        max_lag: int = MAX_LAG,
        threshold: float | None = None,
        history_len: int = HISTORY_LEN,
    ):
        self.max_lag = max_lag
        self.threshold = threshold
        self.history_len = history_len

    def _windows(self, X: list[TrajectorySet]) -> list[TrajectorySet]:
        return [replace(t, history_len=self.history_len).history() for t in X]

    def fit(self, X: list[TrajectorySet], y: list[CausalGraph] | None = None):
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
        else:
            if y is None:
                raise ValueError("calibration needs ground-truth graphs (y)")
            self.threshold_ = threshold_calibrate(
                list(zip(self._windows(X), y)), max_lag=self.max_lag
            )
        return self

    def predict(self, X: list[TrajectorySet]) -> list[CausalGraph]:
        if not hasattr(self, "threshold_"):
            raise NotFittedError("LagEdgeDetector is not fitted yet")
        return [
            discover_edges(w, max_lag=self.max_lag, threshold=self.threshold_)
            for w in self._windows(X)
        ]

    def score(self, X: list[TrajectorySet], y: list[CausalGraph]) -> float:
        """Mean per-scenario F1 against ground truth."""
        preds = self.predict(X)
        return float(np.mean([f1_edges(p, t)[2] for p, t in zip(preds, y)]))


class ConstantVelocityPredictor(BaseEstimator):
    """Linear extrapolation of each vehicle from its last two history frames."""

    def __init__(self, history_len: int = HISTORY_LEN, horizon: int = HORIZON):
        self.history_len = history_len
        self.horizon = horizon

    def fit(self, X: list[TrajectorySet] | None = None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X: list[TrajectorySet]) -> list[np.ndarray]:
        return [
            predict_cv(replace(t, history_len=self.history_len, horizon=self.horizon))
            for t in X
        ]


class GraphConditionedPredictor(BaseEstimator):
    """Forecasts followers along their leader's track, others by constant velocity.

    With ``detector`` set (or left None to use a default
    :class:`LagEdgeDetector`), ``fit`` calibrates the detector and
    ``predict`` conditions on the graphs it discovers; explicit graphs can be
    passed to ``predict`` to condition on ground truth instead.
    """

    def __init__(
        self,
        detector: LagEdgeDetector | None = None,
        max_lag: int = MAX_LAG,
        history_len: int = HISTORY_LEN,
        horizon: int = HORIZON,
    ):
        self.detector = detector
        self.max_lag = max_lag
        self.history_len = history_len
        self.horizon = horizon

    def fit(self, X: list[TrajectorySet], y: list[CausalGraph] | None = None):
        base = self.detector if self.detector is not None else LagEdgeDetector(
            max_lag=self.max_lag, history_len=self.history_len
        )
        self.detector_ = clone(base).fit(X, y)
        return self

    def predict(
        self, X: list[TrajectorySet], graphs: list[CausalGraph] | None = None
    ) -> list[np.ndarray]:
        if graphs is None:
            if not hasattr(self, "detector_"):
                raise NotFittedError("fit first or pass explicit graphs")
            graphs = self.detector_.predict(X)
        out = []
        for trajs, graph in zip(X, graphs):
            windowed = replace(trajs, history_len=self.history_len, horizon=self.horizon)
            out.append(predict_graph_conditioned(windowed, graph, max_lag=self.max_lag))
        return out
