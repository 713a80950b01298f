"""Positive-pair samplers for the three contrastive regimes.

Each sampler draws ``M`` positive pairs per batch; the other ``2M - 2`` rows
of a batch act as negatives for every anchor.

* consecutive: adjacent echoes of one recording sequence (trajectory level),
* distance: traces recorded closer than a threshold (synthetic pre-training),
* location: traces sharing a spot id, any orientation (floor level).
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..exceptions import SamplingError


@dataclass
class PairBatch:
    spectrograms: np.ndarray    # (2M, H, W); rows 2t and 2t+1 are positives
    indices: np.ndarray = None  # rows of the source array, when known

    def __post_init__(self):
        if len(self.spectrograms) % 2:
            raise SamplingError("a pair batch needs an even number of rows")

    @property
    def M(self):
        return len(self.spectrograms) // 2


class ConsecutivePairs:
    """Adjacent echoes ``(t, t+1)``; ``groups`` marks separate sequences that must not be bridged."""

    def __init__(self, n, groups=None):
        if n < 2:
            raise SamplingError("sequence needs at least two echoes")
        first = np.arange(n - 1)
        if groups is not None:
            groups = np.asarray(groups)
            first = first[groups[:-1] == groups[1:]]
        if len(first) == 0:
            raise SamplingError("no adjacent echo pairs")
        self.pairs = np.stack([first, first + 1], axis=1)

    def sample(self, M, rng):
        k = rng.choice(len(self.pairs), size=M, replace=len(self.pairs) < M)
        return self.pairs[k].reshape(-1)


class DistancePairs:
    """Pairs of distinct traces strictly closer than ``threshold_m``.

    ``groups`` separates traces recorded in different rooms, whose
    coordinates are unrelated; pairs never cross groups.
    """

    def __init__(self, positions, threshold_m=0.20, groups=None):
        positions = np.asarray(positions, dtype=np.float64)
        groups = np.zeros(len(positions), np.int64) if groups is None else np.asarray(groups)
        found = []
        for g in np.unique(groups):
            members = np.flatnonzero(groups == g)
            pairs = cKDTree(positions[members]).query_pairs(threshold_m, output_type="ndarray")
            if len(pairs):
                pairs = members[pairs]
                d = np.linalg.norm(positions[pairs[:, 0]] - positions[pairs[:, 1]], axis=1)
                found.append(pairs[d < threshold_m])
        pairs = np.concatenate(found) if found else np.zeros((0, 2), np.int64)
        if len(pairs) == 0:
            raise SamplingError(f"no trace pairs closer than {threshold_m} m")
        self.pairs = pairs

    def sample(self, M, rng):
        k = rng.choice(len(self.pairs), size=M, replace=len(self.pairs) < M)
        p = self.pairs[k]
        flip = rng.random(M) < 0.5
        p[flip] = p[flip, ::-1]
        return p.reshape(-1)


class LocationPairs:
    """Two distinct traces from each of ``M`` distinct spots."""

    def __init__(self, spot_ids):
        spot_ids = np.asarray(spot_ids)
        order = np.argsort(spot_ids, kind="stable")
        ids, starts, counts = np.unique(spot_ids[order], return_index=True, return_counts=True)
        keep = counts >= 2
        if not np.any(keep):
            raise SamplingError("no spot has two or more traces")
        self.members = [order[s:s + c] for s, c in zip(starts[keep], counts[keep])]
        self.spot_ids = ids[keep]

    def sample(self, M, rng):
        spots = rng.choice(len(self.members), size=M, replace=len(self.members) < M)
        out = np.empty((M, 2), dtype=np.int64)
        for t, s in enumerate(spots):
            out[t] = rng.choice(self.members[s], size=2, replace=False)
        return out.reshape(-1)


def _stream(X, sampler, M, seed):
    rng = np.random.default_rng(seed)
    while True:
        idx = sampler.sample(M, rng)
        yield PairBatch(X[idx], idx)


def pair_consecutive(X, M=256, seed=0, groups=None):
    """Infinite stream of batches of adjacent-echo positives from the sequence ``X``."""
    return _stream(X, ConsecutivePairs(len(X), groups), M, seed)


def pair_by_distance(X, positions, threshold_m=0.20, M=256, seed=0, groups=None):
    return _stream(X, DistancePairs(positions, threshold_m, groups), M, seed)


def pair_by_location(X, spot_ids, M=256, seed=0):
    return _stream(X, LocationPairs(spot_ids), M, seed)


def make_sampler(pairing, n, y=None, distance_threshold=0.20, groups=None):
    if pairing == "consecutive":
        return ConsecutivePairs(n, groups)
    if pairing == "distance":
        if y is None:
            raise SamplingError("distance pairing needs positions")
        return DistancePairs(y, distance_threshold, groups)
    if pairing == "location":
        if y is None:
            raise SamplingError("location pairing needs spot ids")
        return LocationPairs(y)
    raise ValueError(f"unknown pairing {pairing!r}")
