"""Map files (JSON lines) and the CSV reports written by the command line."""

import csv
import json

import numpy as np

from .dataset import decode_f32, encode_f32
from .exceptions import EchoSlamError
from .mapping import FloorMap, TrajectoryMap

MAP_VERSION = 1


def _read_jsonl(path, kind):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise EchoSlamError(f"{path}: empty file")
    try:
        records = [json.loads(ln) for ln in lines]
    except json.JSONDecodeError as exc:
        raise EchoSlamError(f"{path}: malformed record: {exc}") from None
    header = records[0]
    if header.get("type") != "header" or header.get("kind") != kind:
        raise EchoSlamError(f"{path}: not a {kind} file")
    if header.get("version") != MAP_VERSION:
        raise EchoSlamError(f"{path}: unsupported version {header.get('version')}")
    return header, records[1:]


def save_trajectory_map(m, path):
    header = {
        "type": "header", "kind": "trajectory_map", "version": MAP_VERSION,
        "extractor_version": m.extractor_version, "initial_pose": [float(v) for v in m.initial_pose],
        "closures": [[int(i), int(j)] for i, j in m.closures], "status": m.status,
        "n_steps": int(m.n_steps), "embed_dim": int(m.elfs.shape[1]),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for k, (x, y, th) in enumerate(m.nodes):
            fh.write(json.dumps({"type": "node", "idx": k, "x": float(x), "y": float(y), "heading": float(th)},
                                sort_keys=True) + "\n")
        for k in range(len(m.echo_steps)):
            rec = {"type": "echo", "step": int(m.echo_steps[k]), "elf": encode_f32(m.elfs[k]),
                   "spectrogram": encode_f32(m.spectrograms[k])}
            if m.trace_ids is not None:
                rec["trace_id"] = int(m.trace_ids[k])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_trajectory_map(path):
    header, records = _read_jsonl(path, "trajectory_map")
    nodes = [(r["x"], r["y"], r["heading"]) for r in records if r.get("type") == "node"]
    echoes = [r for r in records if r.get("type") == "echo"]
    if len(nodes) != header["n_steps"] + 1:
        raise EchoSlamError(f"{path}: expected {header['n_steps'] + 1} nodes, found {len(nodes)}")
    spec = np.array([decode_f32(r["spectrogram"]) for r in echoes]).reshape(-1, 12, 48)
    elfs = np.array([decode_f32(r["elf"]) for r in echoes]).reshape(len(echoes), -1)
    trace_ids = np.array([r["trace_id"] for r in echoes]) if echoes and "trace_id" in echoes[0] else None
    return TrajectoryMap(np.array(nodes), spec, np.array([r["step"] for r in echoes], dtype=np.int64), elfs,
                         header["extractor_version"], np.array(header["initial_pose"]),
                         [tuple(p) for p in header["closures"]], header["status"], trace_ids)


def save_floor_map(fm, path):
    header = {"type": "header", "kind": "floor_map", "version": MAP_VERSION,
              "extractor_version": fm.extractor_version, "spacing_m": fm.spacing_m,
              "n_spots": len(fm), "n_tracks": len(fm.tracks)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(len(fm)):
            fh.write(json.dumps({"type": "spot", "idx": k, "x": float(fm.positions[k, 0]),
                                 "y": float(fm.positions[k, 1]), "support": int(fm.support[k]),
                                 "elf": encode_f32(fm.elfs[k])}, sort_keys=True) + "\n")
        for k, (pos, spots) in enumerate(fm.tracks):
            fh.write(json.dumps({"type": "track", "idx": k, "positions": np.asarray(pos).round(9).tolist(),
                                 "spots": [int(s) for s in spots]}, sort_keys=True) + "\n")


def load_floor_map(path):
    header, records = _read_jsonl(path, "floor_map")
    spots = [r for r in records if r.get("type") == "spot"]
    if len(spots) != header["n_spots"]:
        raise EchoSlamError(f"{path}: expected {header['n_spots']} spots, found {len(spots)}")
    tracks = [(np.array(r["positions"], dtype=np.float64).reshape(-1, 2), np.array(r["spots"], dtype=np.int64))
              for r in records if r.get("type") == "track"]
    return FloorMap(np.array([[r["x"], r["y"]] for r in spots]).reshape(-1, 2),
                    np.array([decode_f32(r["elf"]) for r in spots]).reshape(len(spots), -1),
                    np.array([r["support"] for r in spots]), header["extractor_version"],
                    header["spacing_m"], tracks)


def load_any_map(path):
    with open(path, encoding="utf-8") as fh:
        try:
            kind = json.loads(fh.readline()).get("kind")
        except json.JSONDecodeError:
            kind = None
    if kind == "trajectory_map":
        return load_trajectory_map(path)
    if kind == "floor_map":
        return load_floor_map(path)
    raise EchoSlamError(f"{path}: not a map file")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return v


def read_csv(path):
    """Header and rows of a CSV file; numeric cells become floats."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    out = []
    for row in rows[1:]:
        conv = []
        for cell in row:
            try:
                conv.append(float(cell))
            except ValueError:
                conv.append(cell)
        out.append(conv)
    return rows[0], out


def write_matrix_csv(path, M):
    np.savetxt(path, np.asarray(M), delimiter=",", fmt="%.6f")


def read_matrix_csv(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    if not text:
        return np.zeros((0, 0))
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def write_trajectory_csv(path, truth, dead_reckoned, optimized):
    n = len(optimized)
    truth = np.full((n, 3), np.nan) if truth is None else np.asarray(truth)
    rows = [(k, *truth[k, :2], *dead_reckoned[k, :2], *optimized[k, :2]) for k in range(n)]
    write_csv(path, ["node", "true_x", "true_y", "dr_x", "dr_y", "opt_x", "opt_y"], rows)


def write_results_csv(path, estimates, truth, stats=None):
    rows = []
    for k, (e, t) in enumerate(zip(estimates, truth)):
        err = float(np.hypot(*(np.asarray(e) - np.asarray(t))))
        rows.append((k, e[0], e[1], t[0], t[1], err))
    if stats is not None:
        rows.append(("summary", "", "", "", "", ""))
        rows.append(("median", "", "", "", "", stats.median))
        rows.append(("mean", "", "", "", "", stats.mean))
        rows.append(("q3", "", "", "", "", stats.q3))
    write_csv(path, ["query_id", "est_x", "est_y", "true_x", "true_y", "error_m"], rows)
