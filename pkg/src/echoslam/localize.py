"""One-shot and trajectory localization against trajectory or floor maps."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_features, check_points, l2_normalize
from .exceptions import ArgumentError, ShapeError
from .mapping import FloorMap, TrajectoryMap
from .motion import dead_reckon

LOW_CONFIDENCE_ESS = 0.4


@dataclass
class Query:
    """ELFs of consecutive chirps; trajectory queries group them by step and carry odometry."""

    elf_sequence: np.ndarray
    odometry: list = None
    echo_steps: np.ndarray = None

    def __post_init__(self):
        self.elf_sequence = check_features(self.elf_sequence, "elf_sequence")
        if self.echo_steps is not None:
            self.echo_steps = np.asarray(self.echo_steps, dtype=np.int64)
            if len(self.echo_steps) != len(self.elf_sequence):
                raise ShapeError("echo_steps must label every ELF of the query")

    def per_step(self):
        if self.echo_steps is None:
            raise ArgumentError("query has no step labels")
        steps = np.unique(self.echo_steps)
        return [self.elf_sequence[self.echo_steps == s] for s in steps]


@dataclass
class Localization:
    position: np.ndarray
    index: int
    score: float
    low_confidence: bool
    mode: str = "one_shot"


def _entries(m):
    """Map entries as ``(positions, list of unit ELF arrays)``."""
    if isinstance(m, FloorMap):
        return m.positions, [e[None] for e in l2_normalize(m.elfs)]
    if isinstance(m, TrajectoryMap):
        return m.step_positions, [l2_normalize(e) for e in m.per_step_elfs]
    raise ArgumentError(f"cannot localize against {type(m).__name__}")


def _entry_ess(q, entries):
    """ESS of the query ELF set against every entry."""
    Q = l2_normalize(check_features(q))
    return np.array([float((Q @ E.T).mean()) if len(E) else -np.inf for E in entries])


def one_shot_localize(q, m):
    """Position of the map entry with the highest ESS; ties go to the lowest index."""
    positions, entries = _entries(m)
    if len(entries) == 0:
        raise ArgumentError("map is empty")
    elfs = q.elf_sequence if isinstance(q, Query) else q
    scores = _entry_ess(elfs, entries)
    k = int(np.argmax(scores))
    return Localization(positions[k].copy(), k, float(scores[k]), bool(scores[k] < LOW_CONFIDENCE_ESS))


def procrustes_2d(A, B):
    """Rotation ``R`` and translation ``t`` minimising ``sum |R a + t - b|^2``; returns ``(R, t, rmsd)``."""
    A, B = check_points(A), check_points(B)
    if A.shape != B.shape:
        raise ShapeError("point sets differ in size")
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    # the optimal angle for 2D rotation has a closed form
    theta = np.arctan2(H[0, 1] - H[1, 0], H[0, 0] + H[1, 1])
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, -s], [s, c]])
    t = cb - R @ ca
    rmsd = float(np.sqrt(np.mean(np.sum((A @ R.T + t - B) ** 2, axis=1))))
    return R, t, rmsd


def _windows(m):
    """Yield ``(positions, entry ELF lists)`` tracks over which query windows slide."""
    if isinstance(m, TrajectoryMap):
        positions, entries = _entries(m)
        yield positions, entries
    else:
        elfs = l2_normalize(m.elfs)
        for pos, spots in m.tracks:
            yield np.asarray(pos), [elfs[s][None] for s in spots]


def trajectory_localize(q, m, curve_tol=0.5):
    """Windowed rigid curve matching followed by ESS ranking.

    The query odometry is dead reckoned into a polyline of step positions,
    aligned to every same-length window of the map's tracks, and windows with
    RMSD under ``curve_tol`` compete on mean per-step ESS. The estimate is the
    last step of the winner. Without any admissible window the query falls
    back to one-shot matching on all its ELFs.
    """
    if not isinstance(q, Query) or not q.odometry:
        raise ArgumentError("trajectory localization needs query odometry")
    if len(q.odometry) < 2:
        raise ArgumentError("trajectory localization needs at least two odometry edges")
    steps = q.per_step()
    nodes = dead_reckon(q.odometry)
    if len(nodes) - 1 != len(steps):
        raise ShapeError(f"{len(q.odometry)} odometry edges for {len(steps)} query steps")
    shape = _query_step_positions(nodes, [len(s) for s in steps])
    L = len(steps)
    best = None
    for positions, entries in _windows(m):
        per_step = np.array([_entry_ess(s, entries) for s in steps])     # (L, n_entries)
        for start in range(len(positions) - L + 1):
            window = positions[start:start + L]
            _, _, rmsd = procrustes_2d(shape, window)
            if rmsd >= curve_tol:
                continue
            score = float(np.mean(per_step[np.arange(L), start + np.arange(L)]))
            if best is None or score > best[0]:
                best = (score, window[-1], start + L - 1)
    if best is None:
        res = one_shot_localize(q, m)
        res.mode = "fallback"
        return res
    score, pos, idx = best
    return Localization(np.array(pos, dtype=np.float64), int(idx), score, bool(score < LOW_CONFIDENCE_ESS),
                        "trajectory")


def _query_step_positions(nodes, counts):
    """Mean echo position per step, matching how map step positions are formed."""
    out = np.empty((len(counts), 2))
    for s, E in enumerate(counts):
        frac = np.mean(np.arange(E) / E)
        out[s] = nodes[s, :2] + frac * (nodes[s + 1, :2] - nodes[s, :2])
    return out


@dataclass
class ErrorStats:
    median: float
    mean: float
    q3: float
    errors: np.ndarray

    def as_dict(self):
        return {"median": self.median, "mean": self.mean, "q3": self.q3, "n": int(len(self.errors))}


def error_stats(estimates, truth):
    """Euclidean error summary; quantiles use linear interpolation between order statistics."""
    est, tru = check_points(estimates, "estimates"), check_points(truth, "truth")
    if len(est) != len(tru):
        raise ShapeError(f"{len(est)} estimates for {len(tru)} ground-truth positions")
    if len(est) == 0:
        raise ArgumentError("no estimates")
    err = np.linalg.norm(est - tru, axis=1)
    return ErrorStats(float(np.median(err)), float(np.mean(err)),
                      float(np.percentile(err, 75, method="linear")), err)


class Localizer(BaseEstimator):
    """Map lookup behind ``fit(map)`` / ``predict(queries)``.

    ``mode`` is ``"one_shot"`` or ``"trajectory"``. ``predict`` returns an
    ``(n, 2)`` array of positions; the full results are kept in
    ``results_``.
    """

    def __init__(self, mode="one_shot", curve_tol=0.5):
        self.mode = mode
        self.curve_tol = curve_tol

    def fit(self, m, y=None):
        if self.mode not in ("one_shot", "trajectory"):
            raise ArgumentError(f"unknown localization mode {self.mode!r}")
        _entries(m)
        self.map_ = m
        return self

    def predict(self, queries):
        if self.mode == "one_shot":
            self.results_ = [one_shot_localize(q, self.map_) for q in queries]
        else:
            self.results_ = [trajectory_localize(q, self.map_, self.curve_tol) for q in queries]
        return np.array([r.position for r in self.results_]).reshape(-1, 2)

    def score(self, queries, truth):
        """Negative median error, so that larger is better."""
        return -error_stats(self.predict(queries), truth).median
