"""Echo datasets and their JSON-lines file format.

The first line is a header object (``"type": "header"``) carrying the format
version, the dataset kind and a config snapshot; walk datasets additionally
carry ground-truth footstep poses and odometry. Every following line is one
echo record with its trace stored as base64 little-endian float32.
"""

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EchoSlamError, ShapeError

FORMAT_VERSION = 1


def encode_f32(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(s):
    return np.frombuffer(base64.b64decode(s), dtype="<f4").astype(np.float32)


@dataclass
class EchoDataset:
    traces: np.ndarray
    positions: np.ndarray
    headings: np.ndarray
    step_idx: np.ndarray
    echo_idx: np.ndarray
    spot_ids: np.ndarray = None
    orientation_ids: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.traces = np.asarray(self.traces, dtype=np.float32)
        n = len(self.traces)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 2)
        self.headings = np.asarray(self.headings, dtype=np.float64).reshape(n)
        self.step_idx = np.asarray(self.step_idx, dtype=np.int64).reshape(n)
        self.echo_idx = np.asarray(self.echo_idx, dtype=np.int64).reshape(n)
        self.spot_ids = (np.full(n, -1, np.int64) if self.spot_ids is None
                         else np.asarray(self.spot_ids, dtype=np.int64).reshape(n))
        self.orientation_ids = (np.full(n, -1, np.int64) if self.orientation_ids is None
                                else np.asarray(self.orientation_ids, dtype=np.int64).reshape(n))
        order = np.lexsort((self.echo_idx, self.step_idx))
        if np.any(order != np.arange(n)):
            for name in ("traces", "positions", "headings", "step_idx", "echo_idx", "spot_ids", "orientation_ids"):
                setattr(self, name, getattr(self, name)[order])

    def __len__(self):
        return len(self.traces)

    def subset(self, mask):
        return EchoDataset(self.traces[mask], self.positions[mask], self.headings[mask], self.step_idx[mask],
                           self.echo_idx[mask], self.spot_ids[mask], self.orientation_ids[mask], dict(self.meta))

    def steps(self):
        """Group record indices by step; returns ``(step_ids, list of index arrays)``."""
        ids, starts = np.unique(self.step_idx, return_index=True)
        bounds = list(starts[1:]) + [len(self)]
        return ids, [np.arange(a, b) for a, b in zip(starts, bounds)]

    @staticmethod
    def concatenate(parts):
        parts = list(parts)
        offset = 0
        steps = []
        spots = []
        for p in parts:
            steps.append(p.step_idx + offset)
            sp = p.spot_ids.copy()
            sp[sp >= 0] += offset
            spots.append(sp)
            offset += int(max(p.step_idx.max(initial=-1), p.spot_ids.max(initial=-1))) + 1
        return EchoDataset(
            np.concatenate([p.traces for p in parts]), np.concatenate([p.positions for p in parts]),
            np.concatenate([p.headings for p in parts]), np.concatenate(steps),
            np.concatenate([p.echo_idx for p in parts]), np.concatenate(spots),
            np.concatenate([p.orientation_ids for p in parts]))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not serialisable: {type(obj)}")


def save_dataset(ds, path):
    header = {"type": "header", "version": FORMAT_VERSION, **ds.meta}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, default=_jsonable, sort_keys=True) + "\n")
        for k in range(len(ds)):
            rec = {
                "step_idx": int(ds.step_idx[k]),
                "echo_idx": int(ds.echo_idx[k]),
                "x": float(ds.positions[k, 0]),
                "y": float(ds.positions[k, 1]),
                "heading": float(ds.headings[k]),
                "spot_id": int(ds.spot_ids[k]),
                "orientation_id": int(ds.orientation_ids[k]),
                "trace": encode_f32(ds.traces[k]),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise EchoSlamError(f"{path}: malformed header: {exc}") from None
        if header.get("type") != "header":
            raise EchoSlamError(f"{path}: first line is not a dataset header")
        if header.get("version") != FORMAT_VERSION:
            raise EchoSlamError(f"{path}: unsupported dataset version {header.get('version')}")
        cols = {k: [] for k in ("step_idx", "echo_idx", "x", "y", "heading", "spot_id", "orientation_id")}
        traces = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                for k in cols:
                    cols[k].append(rec[k])
                traces.append(decode_f32(rec["trace"]))
            except (KeyError, json.JSONDecodeError, ValueError) as exc:
                raise EchoSlamError(f"{path}:{lineno}: bad record: {exc}") from None
    lengths = {len(t) for t in traces}
    if len(lengths) > 1:
        raise ShapeError(f"{path}: traces have mixed lengths {sorted(lengths)}")
    meta = {k: v for k, v in header.items() if k not in ("type", "version")}
    n = len(traces)
    return EchoDataset(
        traces=np.stack(traces) if n else np.zeros((0, 0), np.float32),
        positions=np.column_stack([cols["x"], cols["y"]]) if n else np.zeros((0, 2)),
        headings=np.asarray(cols["heading"]),
        step_idx=np.asarray(cols["step_idx"]),
        echo_idx=np.asarray(cols["echo_idx"]),
        spot_ids=np.asarray(cols["spot_id"]),
        orientation_ids=np.asarray(cols["orientation_id"]),
        meta=meta,
    )
