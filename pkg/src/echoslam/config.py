"""Run configuration: flat ``section.key = value`` text files.

Values are JSON literals (numbers, strings, lists, ``true``/``false``);
a bare word is taken as a string. Unknown sections or keys are rejected.
All randomness derives from ``seeds.root`` through named sub-seeds.
"""

import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass

from .exceptions import ConfigurationError

L_ROOM = [[0.0, 0.0], [6.0, 0.0], [6.0, 3.0], [3.5, 3.0], [3.5, 7.0], [0.0, 7.0]]


@dataclass
class ChirpSection:
    sample_rate_hz: int = 44100
    f0_hz: float = 15000.0
    f1_hz: float = 20000.0
    duration_s: float = 0.010
    sweep: str = "logarithmic"


@dataclass
class RoomSection:
    width_m: float = 8.0
    height_m: float = 6.0
    vertices: list = field(default_factory=list)   # overrides width/height when non-empty
    reflection_coeff: float = 0.7
    max_order: int = 3
    speed_of_sound_mps: float = 343.0
    speaker_offset_m: float = 0.075
    mic_offset_m: float = 0.075
    directivity_alpha: float = 0.5
    snr_db: float = 30.0
    jitter_deg: float = 5.0
    grid_rooms: list = field(default_factory=lambda: [[[0.0, 0.0], [8.0, 0.0], [8.0, 6.0], [0.0, 6.0]], L_ROOM])
    grid_preset: str = "desk"                       # "desk", "large" or "custom"
    grid_spacing_m: float = 0.15
    grid_orientations_deg: list = field(default_factory=lambda: [0.0, 90.0])
    grid_traces_per_pose: int = 1


GRID_PRESETS = {
    "desk": {"grid_spacing_m": 0.15, "grid_orientations_deg": [0.0, 90.0], "grid_traces_per_pose": 1},
    "large": {"grid_spacing_m": 0.05, "grid_orientations_deg": [0.0, 90.0, 180.0, 270.0],
              "grid_traces_per_pose": 8},
}


@dataclass
class WalkSection:
    x0: float = 0.4
    y0: float = 0.4
    x1: float = 7.0
    y1: float = 5.0
    rounds: int = 3
    steps_per_round: int = 58
    stride_sigma_m: float = 0.02
    heading_sigma_rad: float = 0.0175
    bias_range_rad: float = 0.005
    echoes_per_step: int = 6
    directions: list = field(default_factory=lambda: ["ccw"])


@dataclass
class ModelSection:
    conv_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    embed_dim: int = 128
    head_layers: int = 3
    head_width: int = 128
    input_scaling: str = "zscore"
    temperature: float = 0.5
    learning_rate: float = 1e-3
    batch_pairs: int = 32
    distance_threshold_m: float = 0.20
    pretrain_steps: int = 2000
    finetune_steps: int = 1500
    superimpose_steps: int = 1500


@dataclass
class CurationSection:
    ess_threshold: float = 0.4
    slice_width: int = 16
    min_separation: int = 20
    dbscan_eps: float = 3.0
    dbscan_min_pts: int = 4
    ransac_iters: int = 200
    ransac_inlier_tol: float = 0.5
    ransac_min_inliers: int = 6


@dataclass
class SolverSection:
    max_iterations: int = 100
    rel_tol: float = 1e-9
    grad_tol: float = 1e-8
    lambda0: float = 1e-4
    loop_sigma_m: float = 0.25


@dataclass
class LocalizationSection:
    mode: str = "one_shot"
    curve_tol_m: float = 0.5
    query_echoes: int = 6
    query_steps: int = 8
    spacing_m: float = 0.25


@dataclass
class SeedsSection:
    root: int = 0


@dataclass
class PathsSection:
    out: str = "out"


@dataclass
class RunConfig:
    chirp: ChirpSection = field(default_factory=ChirpSection)
    room: RoomSection = field(default_factory=RoomSection)
    walk: WalkSection = field(default_factory=WalkSection)
    model: ModelSection = field(default_factory=ModelSection)
    curation: CurationSection = field(default_factory=CurationSection)
    solver: SolverSection = field(default_factory=SolverSection)
    localization: LocalizationSection = field(default_factory=LocalizationSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def sub_seed(self, purpose):
        return sub_seed(self.seeds.root, purpose)

    def grid_settings(self):
        """Effective grid spacing, orientations (degrees) and traces per pose."""
        r = self.room
        if r.grid_preset == "custom":
            return r.grid_spacing_m, list(r.grid_orientations_deg), r.grid_traces_per_pose
        if r.grid_preset not in GRID_PRESETS:
            raise ConfigurationError(f"unknown grid preset {r.grid_preset!r}")
        p = GRID_PRESETS[r.grid_preset]
        return p["grid_spacing_m"], list(p["grid_orientations_deg"]), p["grid_traces_per_pose"]


def sub_seed(root, purpose):
    """Named 32-bit seed: SHA-256 of the root seed and a purpose string."""
    digest = hashlib.sha256(f"{int(root)}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def _coerce(value, default, key):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigurationError(f"{key}: expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigurationError(f"{key}: expected a list, got {value!r}")
        return value
    return value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_value(cfg, key, value):
    section, _, name = key.partition(".")
    if not name or not hasattr(cfg, section) or not is_dataclass(getattr(cfg, section)):
        raise ConfigurationError(f"unknown config key {key!r}")
    sec = getattr(cfg, section)
    if name not in {f.name for f in fields(sec)}:
        raise ConfigurationError(f"unknown config key {key!r}")
    setattr(sec, name, _coerce(value, getattr(sec, name), key))


def parse_config(text, base=None):
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        set_value(cfg, key.strip(), _parse_value(value.strip()))
    validate(cfg)
    return cfg


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg):
    lines = []
    for sec in fields(cfg):
        obj = getattr(cfg, sec.name)
        for f in fields(obj):
            lines.append(f"{sec.name}.{f.name} = {json.dumps(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def validate(cfg):
    if cfg.walk.rounds < 1 or cfg.walk.steps_per_round < 2:
        raise ConfigurationError("walk needs at least one round of two steps")
    if not all(d in ("ccw", "cw") for d in cfg.walk.directions) or not cfg.walk.directions:
        raise ConfigurationError("walk.directions must list 'ccw' and/or 'cw'")
    if cfg.localization.mode not in ("one_shot", "trajectory"):
        raise ConfigurationError(f"unknown localization mode {cfg.localization.mode!r}")
    if cfg.model.batch_pairs < 1:
        raise ConfigurationError("model.batch_pairs must be positive")
    cfg.grid_settings()
    return cfg
