"""Model parameters, encoding, exact loss gradients, training and persistence."""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import EchoSlamError, NumericError, ShapeError, TrainingError
from . import network
from .loss import nt_xent_loss
from .network import Adam, EncoderConfig

logger = logging.getLogger(__name__)

MAGIC = b"ELF1"


@dataclass
class ModelParams:
    config: EncoderConfig
    tensors: dict
    history: list = field(default_factory=list)

    def __post_init__(self):
        manifest = network.param_manifest(self.config)
        for name, shape in manifest:
            if name not in self.tensors:
                raise ShapeError(f"missing tensor {name}")
            if tuple(self.tensors[name].shape) != tuple(shape):
                raise ShapeError(f"tensor {name} has shape {self.tensors[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise NumericError(f"tensor {name} has non-finite values")

    @classmethod
    def initialize(cls, config=None, seed=0, dtype=np.float32):
        config = config or EncoderConfig()
        return cls(config, network.init_params(config, seed, dtype))

    @property
    def version(self):
        h = hashlib.sha1()
        for name, _ in network.param_manifest(self.config):
            h.update(np.ascontiguousarray(self.tensors[name], dtype="<f4").tobytes())
        return h.hexdigest()[:12]

    def astype(self, dtype):
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}, list(self.history))

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, list(self.history))

    @property
    def n_parameters(self):
        return int(sum(v.size for v in self.tensors.values()))


def encode(params, spectrograms, batch_size=512):
    """ELFs of one ``(H, W)`` image or a batch ``(n, H, W)``; rows are unit norm."""
    X = np.asarray(spectrograms)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError(f"expected (n, H, W) spectrograms, got {X.shape}")
    out = [network.forward(params.tensors, X[i:i + batch_size], params.config)
           for i in range(0, len(X), batch_size)]
    Z = np.concatenate(out) if out else np.zeros((0, params.config.embed_dim))
    Z = Z.astype(np.float64)
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return Z[0] if single else Z


def loss_and_gradient(params, batches, tau=0.5):
    """Mean NT-Xent loss and its exact gradient over one batch or a list of shards.

    Shards are reduced in list order, so the result is deterministic.
    """
    if not isinstance(batches, (list, tuple)):
        batches = [batches]
    total = None
    loss = 0.0
    for batch in batches:
        Z, cache = network.forward(params.tensors, batch.spectrograms, params.config, keep_cache=True)
        lb, _, dZ = nt_xent_loss(Z, tau, return_grad=True)
        g = network.backward(params.tensors, cache, dZ.astype(Z.dtype, copy=False))
        loss += lb
        if total is None:
            total = g
        else:
            for k in total:
                total[k] = total[k] + g[k]
    n = len(batches)
    return loss / n, {k: v / n for k, v in total.items()}


def loss_gradient(params, batches, tau=0.5):
    return loss_and_gradient(params, batches, tau)[1]


def batch_loss(params, batch, tau=0.5):
    Z = network.forward(params.tensors, batch.spectrograms, params.config)
    return nt_xent_loss(Z, tau)[0]


@dataclass
class TrainConfig:
    steps: int = 1000
    learning_rate: float = 1e-3
    temperature: float = 0.5
    batch_pairs: int = 256


def train(params, stream, cfg=None, callback=None):
    """Adam on the NT-Xent loss for ``cfg.steps`` batches drawn from ``stream``.

    Returns ``(new_params, losses)``; ``params`` is not modified. The run is
    deterministic given the stream.
    """
    cfg = cfg or TrainConfig()
    out = params.copy()
    opt = Adam(learning_rate=cfg.learning_rate)
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        batch = next(stream)
        try:
            loss, grads = loss_and_gradient(out, batch, cfg.temperature)
        except NumericError as exc:
            raise TrainingError(f"step {step}: {exc}", step=step) from None
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}", step=step)
        losses[step] = loss
        opt.step(out.tensors, grads)
        if callback is not None:
            callback(step, loss)
        if step % 250 == 0:
            logger.debug("step %d loss %.4f", step, loss)
    if cfg.steps:
        out.history = list(out.history) + [{"steps": cfg.steps, "final_loss": float(losses[-1])}]
    return out, losses


def save_model(params, path):
    """Binary layout: ``ELF1``, u32 manifest length, UTF-8 JSON manifest, float32 LE tensors."""
    manifest = network.param_manifest(params.config)
    header = {
        "config": asdict(params.config),
        "tensors": [[name, list(shape)] for name, shape in manifest],
        "history": params.history,
        "version": params.version,
    }
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        for name, _ in manifest:
            fh.write(np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes())


def load_model(path, dtype=np.float32):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise EchoSlamError(f"{path}: not an ELF1 model file")
    (n,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EchoSlamError(f"{path}: corrupt manifest: {exc}") from None
    config = EncoderConfig(**header["config"])
    offset = 8 + n
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        chunk = blob[offset:offset + 4 * count]
        if len(chunk) != 4 * count:
            raise EchoSlamError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(dtype)
        offset += 4 * count
    if offset != len(blob):
        raise EchoSlamError(f"{path}: {len(blob) - offset} trailing bytes")
    return ModelParams(config, tensors, header.get("history", []))
