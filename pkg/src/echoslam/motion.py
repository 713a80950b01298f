"""SE(2) poses, footstep walks with drifting odometry, and dead reckoning."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, SequenceError


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    # values already in range are returned untouched so noiseless paths stay bit-exact
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def as_array(self):
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def __matmul__(self, other):
        return Pose2.from_array(compose(self.as_array(), other.as_array()))

    def inverse(self):
        return Pose2.from_array(inverse(self.as_array()))


def compose(a, b):
    """``a (+) b`` for pose arrays of shape (..., 3)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = a[..., 0] + c * b[..., 0] - s * b[..., 1]
    y = a[..., 1] + s * b[..., 0] + c * b[..., 1]
    return np.stack([x, y, wrap_angle(a[..., 2] + b[..., 2])], axis=-1)


def inverse(a):
    a = np.asarray(a, dtype=np.float64)
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = -(c * a[..., 0] + s * a[..., 1])
    y = -(-s * a[..., 0] + c * a[..., 1])
    return np.stack([x, y, wrap_angle(-a[..., 2])], axis=-1)


def relative(a, b):
    """``a^-1 (+) b``: pose of ``b`` in the frame of ``a``."""
    return compose(inverse(a), b)


def to_matrix(p):
    c, s = np.cos(p[2]), np.sin(p[2])
    return np.array([[c, -s, p[0]], [s, c, p[1]], [0.0, 0.0, 1.0]])


def from_matrix(m):
    return np.array([m[0, 2], m[1, 2], wrap_angle(np.arctan2(m[1, 0], m[0, 0]))])


@dataclass
class OdometryEdge:
    from_idx: int
    to_idx: int
    delta: np.ndarray
    information: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(3)
        self.information = np.asarray(self.information, dtype=np.float64).reshape(3, 3)


def odometry_information(stride_sigma_m, heading_sigma_rad, floor=1e-6):
    s = max(stride_sigma_m, floor)
    h = max(heading_sigma_rad, floor)
    return np.diag([1.0 / s**2, 1.0 / s**2, 1.0 / h**2])


def edges_from_deltas(deltas, information=None, start=0):
    info = np.eye(3) if information is None else information
    return [OdometryEdge(start + k, start + k + 1, d, info) for k, d in enumerate(np.asarray(deltas))]


def dead_reckon(edges, start=None):
    """Integrate odometry edges from ``start``; returns an ``(len(edges)+1, 3)`` array."""
    start = np.zeros(3) if start is None else (start.as_array() if isinstance(start, Pose2)
                                                 else np.asarray(start, dtype=np.float64))
    poses = np.empty((len(edges) + 1, 3))
    poses[0] = start
    poses[0, 2] = wrap_angle(start[2])
    for k, e in enumerate(edges):
        if k and e.from_idx != edges[k - 1].to_idx:
            raise SequenceError(f"edge {k} starts at {e.from_idx}, previous ended at {edges[k - 1].to_idx}")
        if e.to_idx != e.from_idx + 1:
            raise SequenceError(f"edge {k} is not consecutive ({e.from_idx} -> {e.to_idx})")
        poses[k + 1] = compose(poses[k], e.delta)
    return poses


@dataclass
class WalkConfig:
    waypoints: np.ndarray
    stride_m: float = 0.7
    stride_sigma_m: float = 0.02
    heading_sigma_rad: float = 0.0175
    heading_bias_rad: float = None      # None: drawn U(-bias_range, bias_range) per walk
    bias_range_rad: float = 0.005
    echoes_per_step: int = 6

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 2 or len(self.waypoints) < 2:
            raise ConfigurationError("walk needs at least two 2D waypoints")
        if self.stride_m <= 0:
            raise ConfigurationError("stride must be positive")
        if self.echoes_per_step < 1:
            raise ConfigurationError("echoes_per_step must be at least 1")

    @classmethod
    def noiseless(cls, waypoints, **kwargs):
        return cls(waypoints, stride_sigma_m=0.0, heading_sigma_rad=0.0, heading_bias_rad=0.0, **kwargs)


@dataclass
class Walk:
    ground_truth: np.ndarray        # (n_steps + 1, 3) footstep poses
    odometry: list                  # n_steps OdometryEdge
    echo_poses: np.ndarray          # (n_steps * echoes_per_step, 3)
    echo_steps: np.ndarray          # step index of every echo
    heading_bias_rad: float = 0.0

    @property
    def deltas(self):
        return np.array([e.delta for e in self.odometry]).reshape(-1, 3)


def rectangle_waypoints(x0, y0, x1, y1):
    """Closed counter-clockwise rectangle starting at (x0, y0)."""
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]], dtype=np.float64)


def _walk_path(waypoints, rounds):
    closed = np.allclose(waypoints[0], waypoints[-1])
    pts = [waypoints]
    for r in range(1, rounds):
        seq = waypoints if closed or r % 2 == 0 else waypoints[::-1]
        pts.append(seq[1:])
    return np.concatenate(pts)


def _sample_polyline(pts, spacing):
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 0
    pts = np.concatenate([pts[:1], pts[1:][keep]])
    seg, seg_len = seg[keep], seg_len[keep]
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    n = int(np.floor(total / spacing + 1e-9))
    s = spacing * np.arange(n + 1)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    xy = pts[idx] + frac[:, None] * seg[idx]
    heading = np.arctan2(seg[idx, 1], seg[idx, 0])
    return xy, heading


def simulate_walk(cfg, rounds=1, seed=0):
    """Footsteps along the waypoint polyline, odometry with drift, and echo poses.

    Closed polylines are repeated ``rounds`` times; open ones are walked back
    and forth. Odometry deltas are the true relative motions with stride
    noise added along the step direction, per-step heading noise and a
    constant heading bias.
    """
    if rounds < 1:
        raise ConfigurationError("rounds must be at least 1")
    path = _walk_path(cfg.waypoints, rounds)
    if np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)) < cfg.stride_m:
        raise ConfigurationError("waypoint polyline is shorter than one stride")
    xy, heading = _sample_polyline(path, cfg.stride_m)
    gt = np.column_stack([xy, heading])
    n_steps = len(gt) - 1

    rng = np.random.default_rng(seed)
    bias = (rng.uniform(-cfg.bias_range_rad, cfg.bias_range_rad)
            if cfg.heading_bias_rad is None else float(cfg.heading_bias_rad))
    true_deltas = relative(gt[:-1], gt[1:])
    stride_noise = cfg.stride_sigma_m * rng.standard_normal(n_steps)
    heading_noise = cfg.heading_sigma_rad * rng.standard_normal(n_steps)
    deltas = true_deltas.copy()
    step_len = np.linalg.norm(true_deltas[:, :2], axis=1)
    unit = true_deltas[:, :2] / np.where(step_len > 0, step_len, 1.0)[:, None]
    deltas[:, :2] = true_deltas[:, :2] + stride_noise[:, None] * unit
    deltas[:, 2] = wrap_angle(true_deltas[:, 2] + (heading_noise + bias))
    info = odometry_information(cfg.stride_sigma_m, cfg.heading_sigma_rad)
    edges = edges_from_deltas(deltas, info)

    E = cfg.echoes_per_step
    frac = np.arange(E) / E
    pos = gt[:-1, None, :2] + frac[None, :, None] * (gt[1:, None, :2] - gt[:-1, None, :2])
    d = gt[1:, :2] - gt[:-1, :2]
    walk_dir = np.arctan2(d[:, 1], d[:, 0])
    echo = np.concatenate([pos.reshape(-1, 2), np.repeat(walk_dir, E)[:, None]], axis=1)
    return Walk(gt, edges, echo, np.repeat(np.arange(n_steps), E), bias)


def path_length(waypoints):
    return float(np.sum(np.linalg.norm(np.diff(np.asarray(waypoints, float), axis=0), axis=1)))
