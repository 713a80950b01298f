"""Command line front end: ``echoslam <verb> [options]``.

Verbs: synth, pretrain, finetune, map, superimpose, localize, eval, plot,
config. Failures print one line to stderr of the form
``echoslam: error code=<exit> kind=<ErrorClass> message="<text>"``.
Exit codes: 0 ok, 2 configuration, 3 data, 4 numeric or training.
"""

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import dsp, io, plot, room
from .dataset import load_dataset, save_dataset
from .elf import ModelParams, load_model, save_model
from .elf.model import TrainConfig, encode, train
from .elf.network import EncoderConfig
from .elf.pairing import pair_by_distance, pair_consecutive
from .exceptions import ConfigurationError, EchoSlamError
from .localize import Localizer, Query, error_stats
from .loop_closure import CurationConfig
from .mapping import MapConfig, SuperimposeConfig, align_map, build_trajectory_map, superimpose
from .motion import WalkConfig, dead_reckon, edges_from_deltas, path_length, rectangle_waypoints, simulate_walk

logger = logging.getLogger("echoslam")


# ---------------------------------------------------------------- builders

def make_room(cfg, vertices=None):
    r = cfg.room
    verts = vertices if vertices is not None else r.vertices
    kwargs = dict(reflection_coeff=r.reflection_coeff, max_order=r.max_order,
                  speed_of_sound_mps=r.speed_of_sound_mps)
    if verts:
        return room.Room(np.asarray(verts, dtype=np.float64), **kwargs)
    return room.Room.rectangle(r.width_m, r.height_m, **kwargs)


def device_kwargs(cfg):
    r = cfg.room
    return dict(speaker_offset_m=r.speaker_offset_m, mic_offset_m=r.mic_offset_m,
                directivity_alpha=r.directivity_alpha, snr_db=r.snr_db)


def chirp_config(cfg):
    c = cfg.chirp
    return dsp.ChirpConfig(c.sample_rate_hz, c.f0_hz, c.f1_hz, c.duration_s, c.sweep)


def encoder_config(cfg):
    m = cfg.model
    return EncoderConfig(tuple(m.conv_channels), m.embed_dim, m.head_layers, m.head_width,
                         input_scaling=m.input_scaling)


def walk_config(cfg, direction="ccw"):
    w = cfg.walk
    wp = rectangle_waypoints(w.x0, w.y0, w.x1, w.y1)
    if direction == "cw":
        wp = wp[::-1].copy()
    return WalkConfig(wp, stride_m=path_length(wp) / w.steps_per_round, stride_sigma_m=w.stride_sigma_m,
                      heading_sigma_rad=w.heading_sigma_rad, bias_range_rad=w.bias_range_rad,
                      echoes_per_step=w.echoes_per_step)


def curation_config(cfg, seed=0):
    c = cfg.curation
    return CurationConfig(c.ess_threshold, c.slice_width, c.min_separation, c.dbscan_eps, c.dbscan_min_pts,
                          c.ransac_iters, c.ransac_inlier_tol, c.ransac_min_inliers, seed)


def solver_options(cfg):
    s = cfg.solver
    return dict(max_iterations=s.max_iterations, rel_tol=s.rel_tol, grad_tol=s.grad_tol, lambda0=s.lambda0)


def grid_size(cfg):
    """Number of traces ``synth`` would write for the pre-training grids."""
    spacing, orients, per_pose = cfg.grid_settings()
    clearance = max(cfg.room.speaker_offset_m, cfg.room.mic_offset_m)
    n = 0
    for verts in cfg.room.grid_rooms:
        r = make_room(cfg, verts)
        n += len(room.interior_grid(r, spacing, clearance)) * len(orients) * per_pose
    return n


def spectrograms(ds, cfg):
    return dsp.compute_spectrogram(ds.traces, cfg.chirp.sample_rate_hz).astype(np.float32)


def walk_odometry(ds):
    if ds.meta.get("kind") != "walk" or "odometry" not in ds.meta:
        raise EchoSlamError("dataset carries no walk odometry")
    deltas = np.asarray(ds.meta["odometry"], dtype=np.float64).reshape(-1, 3)
    info = np.asarray(ds.meta.get("odometry_information", np.eye(3)), dtype=np.float64)
    return edges_from_deltas(deltas, info)


def _ground_truth(ds):
    gt = ds.meta.get("ground_truth")
    return None if gt is None else np.asarray(gt, dtype=np.float64).reshape(-1, 3)


def _train_config(steps, cfg):
    m = cfg.model
    return TrainConfig(steps, m.learning_rate, m.temperature, m.batch_pairs)


def _write_loss(path, losses):
    io.write_csv(path, ["step", "loss"], [(k, float(v)) for k, v in enumerate(losses)])


# ---------------------------------------------------------------- commands

def cmd_synth(args, cfg, out):
    chirp = chirp_config(cfg)
    written = []
    if args.kind in ("grid", "all"):
        if not cfg.room.grid_rooms:
            raise ConfigurationError("room.grid_rooms is empty")
        spacing, orients, per_pose = cfg.grid_settings()
        for k, verts in enumerate(cfg.room.grid_rooms):
            r = make_room(cfg, verts)
            ds = room.synth_grid_dataset(r, spacing, np.deg2rad(orients), per_pose, cfg.sub_seed(f"grid{k}"),
                                         device_kwargs(cfg), chirp, cfg.room.jitter_deg)
            ds.meta = {"kind": "grid", "room_index": k, "vertices": r.vertices, "spacing_m": spacing}
            path = out / f"grid_{k}.jsonl"
            save_dataset(ds, path)
            written.append(path)
    if args.kind in ("walk", "all"):
        r = make_room(cfg)
        for direction in cfg.walk.directions:
            w = simulate_walk(walk_config(cfg, direction), cfg.walk.rounds, cfg.sub_seed(f"walk_{direction}"))
            ds = room.synth_walk_dataset(r, w, cfg.sub_seed(f"walk_echo_{direction}"), device_kwargs(cfg), chirp,
                                         cfg.room.jitter_deg)
            ds.meta["direction"] = direction
            path = out / f"walk_{direction}.jsonl"
            save_dataset(ds, path)
            written.append(path)
    for p in written:
        print(p)
    return 0


def _initial_params(args, cfg, purpose):
    if getattr(args, "model", None):
        return load_model(args.model)
    return ModelParams.initialize(encoder_config(cfg), cfg.sub_seed(purpose))


def cmd_pretrain(args, cfg, out):
    parts = [load_dataset(p) for p in args.data]
    X = np.concatenate([spectrograms(d, cfg) for d in parts])
    pos = np.concatenate([d.positions for d in parts])
    groups = np.concatenate([np.full(len(d), k) for k, d in enumerate(parts)])
    params = _initial_params(args, cfg, "pretrain_init")
    stream = pair_by_distance(X, pos, cfg.model.distance_threshold_m, cfg.model.batch_pairs,
                              cfg.sub_seed("pretrain_batches"), groups)
    params, losses = train(params, stream, _train_config(cfg.model.pretrain_steps, cfg))
    save_model(params, out / "pretrain.elf")
    _write_loss(out / "pretrain_loss.csv", losses)
    print(out / "pretrain.elf")
    return 0


def cmd_finetune(args, cfg, out):
    ds = load_dataset(args.data)
    X = spectrograms(ds, cfg)
    params = _initial_params(args, cfg, "finetune_init")
    stream = pair_consecutive(X, cfg.model.batch_pairs, cfg.sub_seed("finetune_batches"))
    params, losses = train(params, stream, _train_config(cfg.model.finetune_steps, cfg))
    save_model(params, out / "finetune.elf")
    _write_loss(out / "finetune_loss.csv", losses)
    print(out / "finetune.elf")
    return 0


def cmd_map(args, cfg, out):
    ds = load_dataset(args.data)
    X = spectrograms(ds, cfg)
    edges = walk_odometry(ds)
    gt = _ground_truth(ds)
    start = gt[0] if gt is not None else np.zeros(3)
    params = _initial_params(args, cfg, "map_init")
    mcfg = MapConfig(cfg.model.finetune_steps, cfg.model.batch_pairs, cfg.model.learning_rate,
                     cfg.model.temperature, cfg.solver.loop_sigma_m, curation_config(cfg, cfg.sub_seed("curation")),
                     cfg.sub_seed("map_batches"), solver_options(cfg))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m, tuned, report = build_trajectory_map(X, ds.step_idx, edges, params, mcfg, start, np.arange(len(ds)))
    for w in caught:
        print(f"echoslam: warning {w.message}", file=sys.stderr)
    name = Path(args.data).stem
    io.save_trajectory_map(m, out / f"map_{name}.jsonl")
    save_model(tuned, out / f"map_{name}.elf")
    from .loop_closure import build_ess_matrix
    io.write_matrix_csv(out / f"ess_{name}.csv", build_ess_matrix(m.per_step_elfs))
    io.write_csv(out / f"closures_{name}.csv", ["i", "j"], m.closures)
    io.write_trajectory_csv(out / f"trajectory_{name}.csv", gt, dead_reckon(edges, start), m.nodes)
    summary = {"map": str(out / f"map_{name}.jsonl"), "closures": len(m.closures), "status": m.status}
    if report is not None:
        summary.update(iterations=report.iterations, final_cost=report.final_cost)
    if gt is not None:
        err = np.linalg.norm(m.nodes[:, :2] - gt[:, :2], axis=1)
        summary["median_node_error_m"] = float(np.median(err))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_superimpose(args, cfg, out):
    maps = []
    for path in args.maps:
        m = io.load_trajectory_map(path)
        # maps are built from their known start pose, so this pins them to the world frame
        maps.append(align_map(m, m.initial_pose))
    params = _initial_params(args, cfg, "superimpose_init")
    scfg = SuperimposeConfig(cfg.localization.spacing_m, cfg.model.superimpose_steps, cfg.model.batch_pairs,
                             cfg.model.learning_rate, cfg.model.temperature, cfg.sub_seed("superimpose_batches"))
    floor, params = superimpose(maps, params, scfg)
    io.save_floor_map(floor, out / "floor_map.jsonl")
    save_model(params, out / "floor.elf")
    print(json.dumps({"floor_map": str(out / "floor_map.jsonl"), "spots": len(floor)}, sort_keys=True))
    return 0


def build_queries(ds, elfs, cfg, mode):
    """Queries and their true positions from a dataset and its ELFs."""
    queries, truth = [], []
    if mode == "one_shot":
        if np.all(ds.spot_ids >= 0):
            keys = np.stack([ds.spot_ids, ds.orientation_ids], axis=1)
        else:
            keys = ds.step_idx[:, None]
        _, inv = np.unique(keys, axis=0, return_inverse=True)
        for g in range(inv.max() + 1):
            rows = np.flatnonzero(inv.reshape(-1) == g)[:cfg.localization.query_echoes]
            queries.append(Query(elfs[rows]))
            truth.append(ds.positions[rows].mean(axis=0))
        return queries, np.array(truth)
    edges = walk_odometry(ds)
    L = cfg.localization.query_steps
    ids, groups = ds.steps()
    for s0 in range(0, len(ids) - L + 1, L):
        rows = np.concatenate(groups[s0:s0 + L])
        q_edges = edges_from_deltas([e.delta for e in edges[s0:s0 + L]])
        queries.append(Query(elfs[rows], q_edges, ds.step_idx[rows]))
        truth.append(ds.positions[groups[s0 + L - 1]].mean(axis=0))
    return queries, np.array(truth).reshape(-1, 2)


def cmd_localize(args, cfg, out):
    m = io.load_any_map(args.map)
    params = load_model(args.model)
    ds = load_dataset(args.queries)
    elfs = encode(params, spectrograms(ds, cfg))
    mode = args.mode or cfg.localization.mode
    queries, truth = build_queries(ds, elfs, cfg, mode)
    if not queries:
        raise EchoSlamError("no queries could be formed from the dataset")
    est = Localizer(mode, cfg.localization.curve_tol_m).fit(m).predict(queries)
    stats = error_stats(est, truth)
    io.write_results_csv(out / "localize_results.csv", est, truth, stats)
    print(json.dumps(stats.as_dict(), sort_keys=True))
    return 0


def _numeric_rows(path):
    header, rows = io.read_csv(path)
    if header[:1] != ["query_id"]:
        raise EchoSlamError(f"{path}: not a localization results file")
    return [r for r in rows if isinstance(r[0], float)]


def cmd_eval(args, cfg, out):
    summary = []
    for path in args.results:
        rows = _numeric_rows(path)
        if not rows:
            raise EchoSlamError(f"{path}: no query rows")
        A = np.array([r[1:5] for r in rows], dtype=np.float64)
        s = error_stats(A[:, :2], A[:, 2:4])
        summary.append((path, len(rows), s.median, s.mean, s.q3))
        print(json.dumps({"file": str(path), **s.as_dict()}, sort_keys=True))
    io.write_csv(out / "eval_summary.csv", ["file", "n", "median_m", "mean_m", "q3_m"], summary)
    return 0


def cmd_plot(args, cfg, out):
    done = []
    if args.ess:
        (out / "ess.svg").write_text(plot.ess_heatmap(io.read_matrix_csv(args.ess)), encoding="utf-8")
        done.append(out / "ess.svg")
    if args.trajectory:
        _, rows = io.read_csv(args.trajectory)
        A = np.array(rows, dtype=np.float64).reshape(-1, 7)
        svg = plot.trajectory_overlay(A[:, 1:3], A[:, 3:5], A[:, 5:7])
        (out / "trajectory.svg").write_text(svg, encoding="utf-8")
        done.append(out / "trajectory.svg")
    if args.errors:
        rows = _numeric_rows(args.errors)
        (out / "error_cdf.svg").write_text(plot.error_cdf([r[5] for r in rows]), encoding="utf-8")
        done.append(out / "error_cdf.svg")
    if not done:
        raise ConfigurationError("plot needs at least one of --ess, --trajectory, --errors")
    for p in done:
        print(p)
    return 0


def cmd_config(args, cfg, out):
    """``--dump`` prints every key; otherwise only keys that differ from the defaults."""
    text = config_mod.dump_config(cfg)
    if not args.dump:
        defaults = set(config_mod.dump_config(config_mod.RunConfig()).splitlines())
        text = "".join(line + "\n" for line in text.splitlines() if line not in defaults)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="override seeds.root")
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("--threads", type=int, help="limit BLAS threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="echoslam", description="Echo-based indoor SLAM toolkit.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[common], help="simulate pre-training grids and walks")
    p.add_argument("--kind", choices=["grid", "walk", "all"], default="all")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", parents=[common], help="distance-paired pre-training on grid data")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--model", help="start from these parameters")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="consecutive-echo fine-tuning on a walk")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("map", parents=[common], help="build a trajectory map from a walk")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("superimpose", parents=[common], help="merge trajectory maps into a floor map")
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--model")
    p.set_defaults(func=cmd_superimpose)

    p = sub.add_parser("localize", parents=[common], help="localize dataset queries against a map")
    p.add_argument("--map", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--mode", choices=["one_shot", "trajectory"])
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", parents=[common], help="error statistics of localization results")
    p.add_argument("--results", nargs="+", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", parents=[common], help="render SVG figures from CSV outputs")
    p.add_argument("--ess")
    p.add_argument("--trajectory")
    p.add_argument("--errors")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("config", parents=[common], help="print the effective configuration")
    p.add_argument("--dump", action="store_true", help="print the full configuration")
    p.set_defaults(func=cmd_config)
    return parser


def _fail(exc):
    code = getattr(exc, "exit_code", 3)
    msg = json.dumps(str(exc))
    print(f"echoslam: error code={code} kind={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load_config(args.config)
        if args.seed is not None:
            cfg.seeds.root = args.seed
        if args.out is not None:
            cfg.paths.out = args.out
        out = Path(cfg.paths.out)
        if args.verb != "config":
            out.mkdir(parents=True, exist_ok=True)
        # non-finite values are caught by explicit checks, so numpy's own warnings are noise here
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if args.threads:
                from threadpoolctl import threadpool_limits
                with threadpool_limits(limits=args.threads):
                    return args.func(args, cfg, out)
            return args.func(args, cfg, out)
    except EchoSlamError as exc:
        return _fail(exc)
    except OSError as exc:
        exc.exit_code = 3
        return _fail(exc)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        exc.exit_code = 4
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
