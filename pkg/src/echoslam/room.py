"""Plan-view image-source room acoustics.

Rooms are simple polygons. Image sources are generated by mirroring the
speaker across wall sequences; an image contributes to the impulse response
only if the unfolded path from the microphone back to the speaker hits every
wall of its sequence inside the segment and is not blocked by any other wall.
"""

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .exceptions import ConfigurationError, GeometryError

_EPS = 1e-9


@dataclass
class Room:
    vertices: np.ndarray
    reflection_coeff: object = 0.7
    max_order: int = 3
    speed_of_sound_mps: float = 343.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("room needs at least three 2D vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        if _signed_area(v) < 0:
            v = v[::-1].copy()
        if not _is_simple(v):
            raise GeometryError("room polygon is not simple")
        self.vertices = v
        coeff = np.broadcast_to(np.asarray(self.reflection_coeff, dtype=np.float64), (len(v),)).copy()
        if np.any(coeff <= 0) or np.any(coeff >= 1):
            raise ConfigurationError("reflection coefficients must lie in (0, 1)")
        self.reflection_coeff = coeff
        if self.max_order < 1:
            raise ConfigurationError("max_order must be at least 1")

    @classmethod
    def rectangle(cls, width, height, **kwargs):
        return cls(np.array([[0, 0], [width, 0], [width, height], [0, height]], float), **kwargs)

    @property
    def n_walls(self):
        return len(self.vertices)

    @property
    def walls(self):
        """``(n, 2, 2)`` array of wall segments, counter-clockwise."""
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)

    @property
    def inward_normals(self):
        d = np.roll(self.vertices, -1, axis=0) - self.vertices
        n = np.stack([-d[:, 1], d[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def contains(self, points, margin=0.0):
        """Strict point-in-polygon test; ``margin`` demands clearance from every wall."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        inside = _points_in_polygon(pts, self.vertices)
        if margin > 0:
            inside &= _distance_to_segments(pts, self.walls) > margin
        else:
            inside &= _distance_to_segments(pts, self.walls) > _EPS
        return inside


@dataclass
class Device:
    position: np.ndarray
    heading_rad: float = 0.0
    speaker_offset_m: float = 0.075
    mic_offset_m: float = 0.075
    directivity_alpha: float = 0.5
    snr_db: float = 30.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        if not 0.0 <= self.directivity_alpha <= 1.0:
            raise ConfigurationError("directivity_alpha must lie in [0, 1]")

    @property
    def forward(self):
        return np.array([np.cos(self.heading_rad), np.sin(self.heading_rad)])

    @property
    def speaker(self):
        return self.position + self.speaker_offset_m * self.forward

    @property
    def mic(self):
        return self.position - self.mic_offset_m * self.forward


@dataclass
class ImageSource:
    point: np.ndarray
    gain: float
    order: int
    walls: tuple = ()
    # reflection points from the source side to the receiver side, set when
    # a receiver was supplied
    path: list = field(default_factory=list)


@dataclass
class ImpulseResponse:
    delays: np.ndarray      # samples, fractional
    amplitudes: np.ndarray
    orders: np.ndarray

    def __len__(self):
        return len(self.delays)


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segments_intersect_proper(p, q, a, b):
    """Proper (interior) crossing test of segment pq against segments ab (vectorised over ab)."""
    r = q - p
    s = b - a
    den = _cross(r, s)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(a - p, s) / den
        u = _cross(a - p, r) / den
    return (np.abs(den) > 1e-15) & (t > _EPS) & (t < 1 - _EPS) & (u > _EPS) & (u < 1 - _EPS)


def _is_simple(v):
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = v[j], v[(j + 1) % n]
            if _segments_intersect_proper(a, b, c[None], d[None])[0]:
                return False
    return True


def _points_in_polygon(pts, v):
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cond = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xin = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return np.sum(cond & (x < xin), axis=1) % 2 == 1


def _distance_to_segments(pts, walls):
    a, b = walls[:, 0], walls[:, 1]
    ab = b - a
    ap = pts[:, None, :] - a[None]
    t = np.clip(np.sum(ap * ab, axis=-1) / np.sum(ab * ab, axis=-1), 0, 1)
    closest = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(pts[:, None, :] - closest, axis=-1), axis=1)


def _reflect(point, a, normal):
    return point - 2.0 * np.dot(point - a, normal) * normal


def _trace_path(room, image, receiver, src):
    """Backward-trace the receiver->image path; return reflection points or None if invisible."""
    walls = room.walls
    points = []
    start = receiver
    images = image.chain
    for k in range(len(image.walls) - 1, -1, -1):
        w = image.walls[k]
        a, b = walls[w]
        target = images[k + 1]
        r = target - start
        s = b - a
        den = _cross(r, s)
        if abs(den) < 1e-15:
            return None
        t = _cross(a - start, s) / den
        u = _cross(a - start, r) / den
        if not (_EPS < t < 1 - _EPS and _EPS < u < 1 - _EPS):
            return None
        hit = start + t * r
        mask = np.ones(room.n_walls, bool)
        mask[w] = False
        if points:
            mask[image.walls[k + 1]] = False
        if np.any(_segments_intersect_proper(start, hit, walls[mask, 0], walls[mask, 1])):
            return None
        points.append(hit)
        start = hit
    mask = np.ones(room.n_walls, bool)
    if image.walls:
        mask[image.walls[0]] = False
    if np.any(_segments_intersect_proper(start, src, walls[mask, 0], walls[mask, 1])):
        return None
    return points[::-1]


class _Image:
    __slots__ = ("point", "gain", "walls", "chain")

    def __init__(self, point, gain, walls, chain):
        self.point = point
        self.gain = gain
        self.walls = walls
        self.chain = chain


def compute_image_sources(room, src, order=None, receiver=None):
    """Mirror images of ``src`` up to ``order`` reflections.

    Returns a list of :class:`ImageSource` including the order-0 source itself.
    An image is generated only when its parent lies on the reflecting side of
    the wall. When ``receiver`` is given, images whose path to the receiver is
    occluded are dropped and each kept image records its reflection points.
    """
    order = room.max_order if order is None else order
    if order > room.max_order:
        raise ConfigurationError(f"order {order} exceeds room.max_order {room.max_order}")
    src = np.asarray(src, dtype=np.float64)
    if not room.contains(src)[0]:
        raise GeometryError(f"source {src.tolist()} is not strictly inside the room")
    if receiver is not None:
        receiver = np.asarray(receiver, dtype=np.float64)
        if not room.contains(receiver)[0]:
            raise GeometryError(f"receiver {receiver.tolist()} is not strictly inside the room")
    walls = room.walls
    normals = room.inward_normals
    coeff = room.reflection_coeff
    frontier = [_Image(src, 1.0, (), (src,))]
    generated = list(frontier)
    for _ in range(order):
        nxt = []
        for img in frontier:
            for w in range(room.n_walls):
                if img.walls and img.walls[-1] == w:
                    continue
                a = walls[w, 0]
                if np.dot(img.point - a, normals[w]) <= _EPS:
                    continue
                p = _reflect(img.point, a, normals[w])
                nxt.append(_Image(p, img.gain * coeff[w], img.walls + (w,), img.chain + (p,)))
        generated.extend(nxt)
        frontier = nxt
    out = []
    for img in generated:
        path = []
        if receiver is not None:
            path = _trace_path(room, img, receiver, src)
            if path is None:
                continue
        out.append(ImageSource(img.point, img.gain, len(img.walls), img.walls, path))
    return out


def directivity_gain(direction, heading, alpha):
    """Cardioid mix ``(1 - alpha) + alpha * cos(angle from heading)``."""
    d = np.asarray(direction, dtype=np.float64)
    n = np.linalg.norm(d)
    if n == 0:
        return 1.0
    cos = (d[0] * np.cos(heading) + d[1] * np.sin(heading)) / n
    return (1.0 - alpha) + alpha * cos


def render_impulse_response(room, dev, sample_rate_hz=44100):
    spk, mic = dev.speaker, dev.mic
    if not room.contains(np.stack([spk, mic])).all():
        raise GeometryError("device speaker or microphone lies outside the room")
    images = compute_image_sources(room, spk, room.max_order, receiver=mic)
    delays, amps, orders = [], [], []
    for img in images:
        dist = np.linalg.norm(img.point - mic)
        first = img.path[0] if img.path else mic
        last = img.path[-1] if img.path else spk
        g_spk = directivity_gain(first - spk, dev.heading_rad, dev.directivity_alpha)
        g_mic = directivity_gain(last - mic, dev.heading_rad, dev.directivity_alpha)
        delays.append(dist / room.speed_of_sound_mps * sample_rate_hz)
        amps.append(img.gain * g_spk * g_mic / max(dist, 0.1))
        orders.append(img.order)
    return ImpulseResponse(np.array(delays), np.array(amps), np.array(orders, dtype=int))


def render_window(ir, chirp, start, length):
    """Samples ``[start, start + length)`` of chirp * ir with linear fractional delays."""
    c = chirp.samples if isinstance(chirp, dsp.Recording) else np.asarray(chirp, dtype=np.float64)
    n_c = len(c)
    out = np.zeros(length)
    # a tap at delay d = k + f contributes (1 - f) c[m - k] + f c[m - k - 1]
    kernel = np.concatenate(([0.0], c, [0.0]))
    for d, a in zip(ir.delays, ir.amplitudes):
        k = int(np.floor(d))
        f = d - k
        lo = k - start
        shaped = a * ((1.0 - f) * kernel[1:] + f * kernel[:-1])
        # shaped[i] belongs to absolute sample k + i
        i0 = max(0, -lo)
        i1 = min(n_c + 1, length - lo)
        if i1 > i0:
            out[lo + i0:lo + i1] += shaped[i0:i1]
    return out


def simulate_echo(room, dev, chirp=None, seed=0, chirp_cfg=None):
    chirp_cfg = chirp_cfg or dsp.ChirpConfig()
    chirp = chirp if chirp is not None else dsp.generate_chirp(chirp_cfg)
    ir = render_impulse_response(room, dev, chirp_cfg.sample_rate_hz)
    trace = render_window(ir, chirp, chirp_cfg.skip_samples, dsp.TRACE_LEN)
    if np.isfinite(dev.snr_db):
        rng = np.random.default_rng(seed)
        power = np.mean(trace * trace)
        sigma = np.sqrt(power / 10.0 ** (dev.snr_db / 10.0)) if power > 0 else 0.0
        trace = trace + sigma * rng.standard_normal(trace.shape)
    return np.clip(trace, -1.0, 1.0)


def interior_grid(room, spacing_m, margin=0.0):
    """Lattice points anchored at the bounding-box corner that lie strictly inside the room."""
    if spacing_m <= 0:
        raise ConfigurationError("grid spacing must be positive")
    lo = room.vertices.min(axis=0)
    hi = room.vertices.max(axis=0)
    nx = int(np.floor((hi[0] - lo[0]) / spacing_m + 1e-9)) + 1
    ny = int(np.floor((hi[1] - lo[1]) / spacing_m + 1e-9)) + 1
    gx, gy = np.meshgrid(lo[0] + spacing_m * np.arange(nx), lo[1] + spacing_m * np.arange(ny), indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return pts[room.contains(pts, margin=margin)]


def _sub_seed(seed, *keys):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) for k in keys]])


def synth_grid_dataset(room, spacing_m, orientations, traces_per_pose, seed=0,
                       device_kwargs=None, chirp_cfg=None, jitter_deg=5.0):
    """Echo traces at every interior lattice point and nominal orientation.

    Each trace perturbs its heading uniformly by ``jitter_deg``. Randomness is
    derived per (spot, orientation, trace) so the result is order independent.
    """
    from .dataset import EchoDataset

    device_kwargs = dict(device_kwargs or {})
    chirp_cfg = chirp_cfg or dsp.ChirpConfig()
    chirp = dsp.generate_chirp(chirp_cfg)
    clearance = max(device_kwargs.get("speaker_offset_m", 0.075), device_kwargs.get("mic_offset_m", 0.075))
    spots = interior_grid(room, spacing_m, margin=clearance)
    if len(spots) == 0:
        raise ConfigurationError("grid has no interior points")
    orientations = list(orientations)
    if not orientations or traces_per_pose < 1:
        raise ConfigurationError("need at least one orientation and one trace per pose")
    traces, positions, headings, spot_ids, orient_ids = [], [], [], [], []
    for s, p in enumerate(spots):
        for o, heading in enumerate(orientations):
            for t in range(traces_per_pose):
                ss = _sub_seed(seed, s, o, t)
                rng = np.random.default_rng(ss)
                h = heading + np.deg2rad(rng.uniform(-jitter_deg, jitter_deg))
                dev = Device(p, h, **device_kwargs)
                noise_seed = int(rng.integers(2**63))
                traces.append(simulate_echo(room, dev, chirp, noise_seed, chirp_cfg))
                positions.append(p)
                headings.append(h)
                spot_ids.append(s)
                orient_ids.append(o)
    n = len(traces)
    echo_idx = np.arange(n) - np.repeat(np.arange(len(spots)) * len(orientations) * traces_per_pose,
                                        len(orientations) * traces_per_pose)
    return EchoDataset(
        traces=np.asarray(traces, dtype=np.float32),
        positions=np.asarray(positions),
        headings=np.asarray(headings),
        step_idx=np.asarray(spot_ids),
        echo_idx=echo_idx,
        spot_ids=np.asarray(spot_ids),
        orientation_ids=np.asarray(orient_ids),
    )


def synth_walk_dataset(room, walk, seed=0, device_kwargs=None, chirp_cfg=None, jitter_deg=5.0):
    """Echo traces along a simulated walk, one per echo pose.

    Headings get the same uniform per-trace perturbation as grid data. The
    header metadata carries ground-truth nodes, odometry deltas and the
    odometry information matrix.
    """
    from .dataset import EchoDataset

    device_kwargs = dict(device_kwargs or {})
    chirp_cfg = chirp_cfg or dsp.ChirpConfig()
    chirp = dsp.generate_chirp(chirp_cfg)
    traces, headings = [], []
    for k, pose in enumerate(walk.echo_poses):
        rng = np.random.default_rng(_sub_seed(seed, walk.echo_steps[k], k))
        h = pose[2] + np.deg2rad(rng.uniform(-jitter_deg, jitter_deg))
        dev = Device(pose[:2], h, **device_kwargs)
        traces.append(simulate_echo(room, dev, chirp, int(rng.integers(2**63)), chirp_cfg))
        headings.append(h)
    steps = np.asarray(walk.echo_steps)
    first = np.searchsorted(steps, steps, side="left")
    info = walk.odometry[0].information if walk.odometry else np.eye(3)
    meta = {
        "kind": "walk",
        "ground_truth": np.asarray(walk.ground_truth),
        "odometry": np.asarray(walk.deltas),
        "odometry_information": np.asarray(info),
        "heading_bias_rad": float(walk.heading_bias_rad),
    }
    return EchoDataset(np.asarray(traces, dtype=np.float32), walk.echo_poses[:, :2], np.asarray(headings),
                       steps, np.arange(len(steps)) - first, meta=meta)
