"""Echo sequence similarity and loop-closure curation.

Steps of a walk are compared through the mean cosine similarity of their ELF
sets (the ESS). Thresholding the step-by-step ESS matrix leaves trend lines
where the walker revisits a place, plus scattered false positives. Curation
keeps only cells that sit on dense, straight, mirrored trend lines.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import DBSCAN

from ._validation import l2_normalize
from .exceptions import ArgumentError, ShapeError


@dataclass(frozen=True)
class CurationConfig:
    ess_threshold: float = 0.4
    slice_width: int = 16
    min_separation: int = 20
    dbscan_eps: float = 3.0
    dbscan_min_pts: int = 4
    ransac_iters: int = 200
    ransac_inlier_tol: float = 0.5
    ransac_min_inliers: int = 6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.ess_threshold < 1.0:
            raise ArgumentError("ess_threshold must lie in (0, 1)")
        for name in ("slice_width", "dbscan_min_pts", "ransac_iters", "ransac_min_inliers"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be positive")
        if self.min_separation < 0 or self.dbscan_eps <= 0 or self.ransac_inlier_tol <= 0:
            raise ArgumentError("separation, eps and tolerance must be positive")


def _as_set(feats):
    F = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    if F.size == 0 or len(F) == 0:
        raise ArgumentError("a step needs at least one ELF")
    return l2_normalize(F)


def ess(feats_a, feats_b):
    """Mean pairwise cosine similarity between two ELF sets."""
    A, B = _as_set(feats_a), _as_set(feats_b)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"ELF dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    return float(np.clip((A @ B.T).mean(), -1.0, 1.0))


def build_ess_matrix(per_step_elfs):
    """``(S, S)`` matrix of ESS values between every pair of steps.

    All ELFs are stacked once; block sums of the Gram matrix give every ESS
    in one pass, and the upper triangle is mirrored so the result is exactly
    symmetric.
    """
    sets = [_as_set(f) for f in per_step_elfs]
    if not sets:
        raise ArgumentError("no steps given")
    counts = np.array([len(s) for s in sets])
    F = np.concatenate(sets)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    G = F @ F.T
    sums = np.add.reduceat(np.add.reduceat(G, starts, axis=0), starts, axis=1)
    M = sums / np.outer(counts, counts)
    M = np.triu(M) + np.triu(M, 1).T
    return np.clip(M, -1.0, 1.0)


def binarize(m, cfg=None):
    cfg = cfg or CurationConfig()
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"ESS matrix must be square, got {m.shape}")
    i, j = np.indices(m.shape)
    return (m >= cfg.ess_threshold) & (np.abs(i - j) >= cfg.min_separation)


def _ransac(P, iters, tol, rng):
    n = len(P)
    best = None
    best_count = 0
    for _ in range(iters):
        a, b = rng.choice(n, size=2, replace=False)
        d = P[b] - P[a]
        length = np.hypot(d[0], d[1])
        if length == 0:
            continue
        normal = np.array([-d[1], d[0]]) / length
        mask = np.abs((P - P[a]) @ normal) <= tol
        count = int(mask.sum())
        if count > best_count:
            best, best_count = mask, count
    if best is None:
        return None, None, None
    # refine on the consensus set
    Q = P[best]
    c = Q.mean(axis=0)
    normal = np.linalg.svd(Q - c)[2][-1]
    refined = np.abs((P - c) @ normal) <= tol
    if refined.sum() >= best_count:
        best = refined
    return best, c, normal


def fit_line_ransac(points, iters=200, tol=0.5, min_inliers=6, rng=None):
    """Robust total-least-squares line through 2D points.

    Returns a boolean inlier mask, or ``None`` when no line gathers
    ``min_inliers`` points within perpendicular distance ``tol``.
    """
    P = np.asarray(points, dtype=np.float64)
    if len(P) < max(2, min_inliers):
        return None
    mask, _, _ = _ransac(P, iters, tol, np.random.default_rng(rng))
    if mask is None or mask.sum() < min_inliers:
        return None
    return mask


def _line_capacity(c, normal, lo, hi, n):
    """Matrix cells a line can visit in columns ``[lo, hi)`` of an ``n x n`` matrix.

    Counted along the dominant axis of the line, so a trend line that runs
    off the edge of the matrix inside a slice is not asked for more cells
    than it can have there.
    """
    d = np.array([normal[1], -normal[0]])
    if abs(d[1]) >= abs(d[0]):
        cols = np.arange(lo, hi)
        rows = c[0] + (cols - c[1]) * d[0] / d[1]
        return int(np.sum((rows > -0.5) & (rows < n - 0.5)))
    rows = np.arange(n)
    cols = c[1] + (rows - c[0]) * d[1] / d[0]
    return int(np.sum((cols > lo - 0.5) & (cols < hi - 0.5)))


def curate(binary, cfg=None):
    """Loop-closure pairs ``(i, j)``, ``i < j``, that lie on mirrored trend lines.

    A cluster's line needs ``ransac_min_inliers`` inliers, or every cell it
    can reach inside the slice when it leaves the matrix there, but never
    fewer than ``dbscan_min_pts``.
    """
    cfg = cfg or CurationConfig()
    B = np.asarray(binary, dtype=bool)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ShapeError(f"binary matrix must be square, got {B.shape}")
    n = len(B)
    rng = np.random.default_rng(cfg.seed)
    keep = np.zeros_like(B)
    for start in range(0, n, cfg.slice_width):
        stop = min(start + cfg.slice_width, n)
        rows, cols = np.nonzero(B[:, start:stop])
        if len(rows) < cfg.dbscan_min_pts:
            continue
        cells = np.column_stack([rows, cols + start])
        labels = DBSCAN(eps=cfg.dbscan_eps, min_samples=cfg.dbscan_min_pts).fit_predict(cells)
        for lab in np.unique(labels[labels >= 0]):
            members = cells[labels == lab]
            if len(members) < 2:
                continue
            mask, c, normal = _ransac(members.astype(np.float64), cfg.ransac_iters, cfg.ransac_inlier_tol, rng)
            if mask is None:
                continue
            need = cfg.ransac_min_inliers
            if mask.sum() < need:
                need = max(min(need, _line_capacity(c, normal, start, stop, n)), cfg.dbscan_min_pts)
            if mask.sum() >= need:
                keep[members[mask, 0], members[mask, 1]] = True
    keep &= keep.T
    i, j = np.nonzero(np.triu(keep, 1))
    ok = (j - i) >= cfg.min_separation
    return [(int(a), int(b)) for a, b in zip(i[ok], j[ok])]


def pairs_from_elfs(per_step_elfs, cfg=None):
    cfg = cfg or CurationConfig()
    M = build_ess_matrix(per_step_elfs)
    return curate(binarize(M, cfg), cfg), M


class LoopClosureDetector(BaseEstimator):
    """ESS matrix, thresholding and curation bundled behind ``fit``/``predict``.

    ``fit`` takes the per-step ELF sets of one walk and stores ``ess_``,
    ``binary_`` and the curated ``pairs_``.
    """

    def __init__(self, ess_threshold=0.4, slice_width=16, min_separation=20, dbscan_eps=3.0,
                 dbscan_min_pts=4, ransac_iters=200, ransac_inlier_tol=0.5, ransac_min_inliers=6,
                 random_state=0):
        self.ess_threshold = ess_threshold
        self.slice_width = slice_width
        self.min_separation = min_separation
        self.dbscan_eps = dbscan_eps
        self.dbscan_min_pts = dbscan_min_pts
        self.ransac_iters = ransac_iters
        self.ransac_inlier_tol = ransac_inlier_tol
        self.ransac_min_inliers = ransac_min_inliers
        self.random_state = random_state

    @property
    def config(self):
        p = self.get_params()
        p["seed"] = p.pop("random_state")
        return CurationConfig(**p)

    def fit(self, per_step_elfs, y=None):
        cfg = self.config
        self.ess_ = build_ess_matrix(per_step_elfs)
        self.binary_ = binarize(self.ess_, cfg)
        self.pairs_ = curate(self.binary_, cfg)
        return self

    def predict(self, per_step_elfs):
        return self.fit(per_step_elfs).pairs_
