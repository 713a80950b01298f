"""Trajectory maps, their alignment, and superimposition into a floor map.

A trajectory map is one walk: optimised footstep nodes plus the spectrograms
and ELFs of every echo recorded along it. Echo ``k`` of a step with ``E``
echoes is placed ``k / E`` of the way from the step's start node to its end
node. Superimposition quantises echo positions of all aligned maps to a grid,
retrains the extractor so that echoes sharing a grid cell ("spot") look
alike regardless of orientation, and keeps one averaged ELF per spot.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_poses, check_spectrograms, l2_normalize
from .exceptions import ArgumentError, ShapeError
from .elf.model import TrainConfig, encode, train
from .elf.pairing import pair_by_location, pair_consecutive
from .loop_closure import CurationConfig, LoopClosureDetector
from .motion import Pose2, compose, dead_reckon, inverse
from .pose_graph import LOOP_SIGMA_M, PoseGraph, optimize

logger = logging.getLogger(__name__)


def _pose_array(p):
    return p.as_array() if isinstance(p, Pose2) else np.asarray(p, dtype=np.float64).reshape(3)


def echo_positions(nodes, echo_steps):
    """Interpolated position of every echo along its step."""
    nodes = check_poses(nodes)
    echo_steps = np.asarray(echo_steps, dtype=np.int64)
    if len(echo_steps) and (echo_steps.min() < 0 or echo_steps.max() >= len(nodes) - 1):
        raise ArgumentError("echo step index outside the node range")
    first = np.searchsorted(echo_steps, echo_steps, side="left")
    count = np.searchsorted(echo_steps, echo_steps, side="right") - first
    frac = (np.arange(len(echo_steps)) - first) / count
    a = nodes[echo_steps, :2]
    b = nodes[echo_steps + 1, :2]
    return a + frac[:, None] * (b - a)


def step_positions(nodes, echo_steps):
    """Mean echo position of each step, ``(n_steps, 2)``."""
    pos = echo_positions(nodes, echo_steps)
    steps = np.asarray(echo_steps)
    out = np.zeros((len(nodes) - 1, 2))
    np.add.at(out, steps, pos)
    counts = np.bincount(steps, minlength=len(nodes) - 1)
    return out / np.maximum(counts, 1)[:, None]


@dataclass
class TrajectoryMap:
    nodes: np.ndarray               # (n_steps + 1, 3)
    spectrograms: np.ndarray        # (n_echo, 12, 48)
    echo_steps: np.ndarray          # (n_echo,), non-decreasing
    elfs: np.ndarray                # (n_echo, d)
    extractor_version: str
    initial_pose: np.ndarray
    closures: list = field(default_factory=list)
    status: str = "ok"
    trace_ids: np.ndarray = None    # rows of the source dataset

    def __post_init__(self):
        self.nodes = check_poses(self.nodes, "nodes")
        self.echo_steps = np.asarray(self.echo_steps, dtype=np.int64)
        self.elfs = np.asarray(self.elfs, dtype=np.float64)
        self.initial_pose = _pose_array(self.initial_pose)
        n = len(self.echo_steps)
        if len(self.spectrograms) != n or len(self.elfs) != n:
            raise ShapeError("spectrograms, ELFs and echo steps must be index-aligned")
        if n and (np.any(np.diff(self.echo_steps) < 0) or self.echo_steps.max() >= len(self.nodes) - 1):
            raise ShapeError("echo steps must be sorted and refer to existing steps")
        if self.trace_ids is not None:
            self.trace_ids = np.asarray(self.trace_ids, dtype=np.int64)

    @property
    def n_steps(self):
        return len(self.nodes) - 1

    @property
    def per_step_elfs(self):
        bounds = np.searchsorted(self.echo_steps, np.arange(self.n_steps + 1))
        return [self.elfs[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    @property
    def echo_positions(self):
        return echo_positions(self.nodes, self.echo_steps)

    @property
    def step_positions(self):
        return step_positions(self.nodes, self.echo_steps)


@dataclass
class MapConfig:
    finetune_steps: int = 1500
    batch_pairs: int = 32
    learning_rate: float = 1e-3
    temperature: float = 0.5
    loop_sigma_m: float = LOOP_SIGMA_M
    curation: CurationConfig = field(default_factory=CurationConfig)
    seed: int = 0
    solver: dict = field(default_factory=dict)   # keyword options for pose_graph.optimize


def build_trajectory_map(spectrograms, echo_steps, odometry, params, cfg=None, initial_pose=None,
                         trace_ids=None):
    """Dead reckon, fine-tune, detect loop closures and optimise one walk.

    ``odometry`` holds one edge per step. Returns ``(map, fine_tuned_params,
    solve_report)``; the report is ``None`` when no closure survived curation
    and the map falls back to dead reckoning.
    """
    cfg = cfg or MapConfig()
    X = check_spectrograms(spectrograms, dtype=np.float32)
    echo_steps = np.asarray(echo_steps, dtype=np.int64)
    if len(X) != len(echo_steps):
        raise ShapeError("one step index per spectrogram is required")
    start = np.zeros(3) if initial_pose is None else _pose_array(initial_pose)
    dr = dead_reckon(odometry, start)
    n_steps = len(dr) - 1
    if np.any(np.bincount(echo_steps, minlength=n_steps)[:n_steps] == 0) or echo_steps.max() >= n_steps:
        raise ArgumentError("every step needs at least one echo and echoes must map to odometry steps")

    if cfg.finetune_steps > 0:
        stream = pair_consecutive(X, cfg.batch_pairs, seed=cfg.seed)
        tcfg = TrainConfig(cfg.finetune_steps, cfg.learning_rate, cfg.temperature, cfg.batch_pairs)
        params, _ = train(params, stream, tcfg)
    elfs = encode(params, X)

    partial = TrajectoryMap(dr, X, echo_steps, elfs, params.version, start, trace_ids=trace_ids)
    cur = cfg.curation
    detector = LoopClosureDetector(
        cur.ess_threshold, cur.slice_width, cur.min_separation, cur.dbscan_eps, cur.dbscan_min_pts,
        cur.ransac_iters, cur.ransac_inlier_tol, cur.ransac_min_inliers, cur.seed)
    pairs = detector.predict(partial.per_step_elfs)
    if not pairs:
        warnings.warn("no loop closures survived curation; map uses dead reckoning only", RuntimeWarning,
                      stacklevel=2)
        return replace(partial, status="no_closures"), params, None
    graph = PoseGraph.from_closures(dr, odometry, pairs, cfg.loop_sigma_m)
    nodes, report = optimize(graph, **cfg.solver)
    logger.info("map: %d closures, cost %.3g -> %.3g", len(pairs), report.initial_cost, report.final_cost)
    return replace(partial, nodes=nodes, closures=pairs), params, report


def align_map(m, reference_frame):
    """Rigidly move ``m`` so that its initial pose lands on ``reference_frame``."""
    ref = _pose_array(reference_frame)
    T = compose(ref, inverse(m.initial_pose))
    return replace(m, nodes=compose(T, m.nodes), initial_pose=ref)


@dataclass
class FloorMap:
    positions: np.ndarray           # (n_spots, 2) grid-cell positions
    elfs: np.ndarray                # (n_spots, d) unit-norm floor-level ELFs
    support: np.ndarray             # traces contributing to each spot
    extractor_version: str
    spacing_m: float = 0.25
    tracks: list = field(default_factory=list)   # per source map: (step positions, step spot ids)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.elfs = np.asarray(self.elfs, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=np.int64)
        if not (len(self.positions) == len(self.elfs) == len(self.support)):
            raise ShapeError("spot positions, ELFs and support must be index-aligned")

    def __len__(self):
        return len(self.positions)


@dataclass
class SuperimposeConfig:
    spacing_m: float = 0.25
    steps: int = 1500
    batch_pairs: int = 32
    learning_rate: float = 1e-3
    temperature: float = 0.5
    seed: int = 0


def quantize(points, spacing_m):
    return np.round(np.asarray(points, dtype=np.float64) / spacing_m).astype(np.int64)


def build_floor_map(params, spectrograms, spot_keys, spacing_m, tracks=()):
    """Floor map whose spot ELF is the normalised mean ELF of its traces."""
    keys, spot_of = np.unique(np.asarray(spot_keys).reshape(len(spectrograms), -1), axis=0, return_inverse=True)
    spot_of = spot_of.reshape(-1)
    Z = encode(params, spectrograms)
    sums = np.zeros((len(keys), Z.shape[1]))
    np.add.at(sums, spot_of, Z)
    support = np.bincount(spot_of, minlength=len(keys))
    return FloorMap(keys * spacing_m, l2_normalize(sums), support, params.version, spacing_m, list(tracks)), spot_of


def superimpose(maps, base_params, cfg=None):
    """Merge aligned trajectory maps into one floor map with a retrained extractor.

    Returns ``(floor_map, retrained_params)``.
    """
    cfg = cfg or SuperimposeConfig()
    maps = list(maps)
    if not maps:
        raise ArgumentError("superimposition needs at least one map")
    X = np.concatenate([m.spectrograms for m in maps]).astype(np.float32)
    keys = np.concatenate([quantize(m.echo_positions, cfg.spacing_m) for m in maps])
    _, spot_ids = np.unique(keys, axis=0, return_inverse=True)
    spot_ids = spot_ids.reshape(-1)
    params = base_params
    if cfg.steps > 0:
        stream = pair_by_location(X, spot_ids, cfg.batch_pairs, seed=cfg.seed)
        tcfg = TrainConfig(cfg.steps, cfg.learning_rate, cfg.temperature, cfg.batch_pairs)
        params, _ = train(base_params, stream, tcfg)
    floor, _ = build_floor_map(params, X, keys, cfg.spacing_m)
    tree = cKDTree(floor.positions)
    for m in maps:
        sp = m.step_positions
        floor.tracks.append((sp, tree.query(sp)[1].astype(np.int64)))
    return floor, params


def node_errors(nodes, truth):
    nodes, truth = check_poses(nodes), check_poses(truth)
    if len(nodes) != len(truth):
        raise ShapeError("node and ground-truth counts differ")
    return np.linalg.norm(nodes[:, :2] - truth[:, :2], axis=1)
