"""Convolutional encoder and projection head with hand-written backprop.

Layout is NHWC throughout. Each conv block is a 3x3 same-padded convolution,
a GELU (tanh form) and a 2x2 average pool; an axis shorter than two is not
pooled. The blocks feed a global average pool and a stack of fully
connected layers whose output is L2-normalised into the ELF.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import NumericError, ShapeError

_C = float(np.sqrt(2.0 / np.pi))


@dataclass(frozen=True)
class EncoderConfig:
    conv_channels: tuple = (16, 32, 64, 128)
    embed_dim: int = 128
    head_layers: int = 3
    head_width: int = 128
    input_shape: tuple = (12, 48)
    input_scaling: str = "zscore"   # "zscore", "max" or "none"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "input_shape", tuple(int(c) for c in self.input_shape))
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be at least 2")
        if self.input_scaling not in ("zscore", "max", "none"):
            raise ValueError(f"unknown input_scaling {self.input_scaling!r}")
        if self.head_layers < 1 or not self.conv_channels:
            raise ValueError("need at least one conv block and one head layer")


def param_manifest(cfg):
    """Ordered ``(name, shape)`` list for every tensor of the model."""
    out = []
    c_in = 1
    for k, c in enumerate(cfg.conv_channels):
        out.append((f"conv{k}.w", (3, 3, c_in, c)))
        out.append((f"conv{k}.b", (c,)))
        c_in = c
    d_in = c_in
    for k in range(cfg.head_layers):
        d_out = cfg.embed_dim if k == cfg.head_layers - 1 else cfg.head_width
        out.append((f"fc{k}.w", (d_in, d_out)))
        out.append((f"fc{k}.b", (d_out,)))
        d_in = d_out
    return out


def init_params(cfg, seed=0, dtype=np.float64):
    """He-style initialisation, biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_manifest(cfg):
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return params


def gelu(x):
    x2 = x * x
    x2 *= 0.044715
    x2 += 1.0
    x2 *= x
    x2 *= _C
    t = np.tanh(x2, out=x2)
    y = t + 1.0
    y *= x
    y *= 0.5
    return y, t


def gelu_grad(x, t):
    du = x * x
    du *= 3 * 0.044715
    du += 1.0
    du *= _C
    du *= x
    s = t * t
    np.subtract(1.0, s, out=s)
    du *= s
    du += t
    du += 1.0
    du *= 0.5
    return du


def _im2col(x):
    """``(B, H, W, C)`` -> ``(B*H*W, 9*C)`` patches of a zero-padded 3x3 neighbourhood."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((B, H, W, 3, 3, C), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, di, dj, :] = xp[:, di:di + H, dj:dj + W, :]
    return cols.reshape(B * H * W, 9 * C)


def _col2im(dcols, shape):
    B, H, W, C = shape
    d = dcols.reshape(B, H, W, 3, 3, C)
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dcols.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, di:di + H, dj:dj + W, :] += d[:, :, :, di, dj, :]
    return dxp[:, 1:-1, 1:-1, :]


def _pool(x):
    B, H, W, C = x.shape
    ph, pw = (2 if H >= 2 else 1), (2 if W >= 2 else 1)
    Ho, Wo = H // ph, W // pw
    y = x[:, :Ho * ph, :Wo * pw, :].reshape(B, Ho, ph, Wo, pw, C).mean(axis=(2, 4))
    return y, (ph, pw)


def _unpool(dy, shape, factors):
    B, H, W, C = shape
    ph, pw = factors
    Ho, Wo = dy.shape[1], dy.shape[2]
    dx = np.zeros(shape, dtype=dy.dtype)
    g = np.broadcast_to(dy[:, :, None, :, None, :] / (ph * pw), (B, Ho, ph, Wo, pw, C))
    dx[:, :Ho * ph, :Wo * pw, :] = g.reshape(B, Ho * ph, Wo * pw, C)
    return dx


def prepare_input(X, cfg):
    """Add the channel axis and rescale each image.

    ``zscore`` standardises every image to zero mean and unit variance, ``max``
    divides by the image maximum. Both make the encoder invariant to the
    overall echo level.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != cfg.input_shape:
        raise ShapeError(f"expected input images of shape {cfg.input_shape}, got {X.shape[1:]}")
    if cfg.input_scaling == "max":
        m = X.reshape(len(X), -1).max(axis=1)
        X = X / np.where(m > 0, m, 1.0)[:, None, None]
    elif cfg.input_scaling == "zscore":
        flat = X.reshape(len(X), -1)
        sd = flat.std(axis=1)
        X = (X - flat.mean(axis=1)[:, None, None]) / np.where(sd > 0, sd, 1.0)[:, None, None]
    return X[..., None]


def forward(params, X, cfg, keep_cache=False):
    """Embed a batch of images; returns unit-norm ``(B, embed_dim)`` and an optional cache."""
    dtype = params["conv0.w"].dtype
    h = prepare_input(X, cfg).astype(dtype, copy=False)
    cache = []
    for k in range(len(cfg.conv_channels)):
        W = params[f"conv{k}.w"]
        b = params[f"conv{k}.b"]
        B, H, Wd, C = h.shape
        cols = _im2col(h)
        pre = (cols @ W.reshape(-1, W.shape[-1]) + b).reshape(B, H, Wd, -1)
        act, t = gelu(pre)
        out, factors = _pool(act)
        if keep_cache:
            cache.append(("conv", k, cols, h.shape, pre, t, act.shape, factors))
        h = out
    spatial = h.shape[1:3]
    h = h.mean(axis=(1, 2))
    if keep_cache:
        cache.append(("gap", spatial))
    n_fc = cfg.head_layers
    for k in range(n_fc):
        W = params[f"fc{k}.w"]
        b = params[f"fc{k}.b"]
        inp = h
        pre = inp @ W + b
        if k < n_fc - 1:
            h, t = gelu(pre)
        else:
            h, t = pre, None
        if keep_cache:
            cache.append(("fc", k, inp, pre, t))
    norm = np.linalg.norm(h, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericError("non-finite activations at the projection output")
    norm = np.maximum(norm, np.finfo(dtype).tiny)
    z = h / norm
    if keep_cache:
        cache.append(("norm", z, norm))
        return z, cache
    return z


def backward(params, cache, dz):
    """Reverse pass: gradient of a scalar loss w.r.t. every parameter given ``dL/dz``."""
    grads = {}
    _, z, norm = cache[-1]
    dh = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norm
    for entry in reversed(cache[:-1]):
        kind = entry[0]
        if kind == "fc":
            _, k, inp, pre, t = entry
            if t is not None:
                dh = dh * gelu_grad(pre, t)
            grads[f"fc{k}.w"] = inp.T @ dh
            grads[f"fc{k}.b"] = dh.sum(axis=0)
            _check_finite(grads[f"fc{k}.w"], f"fc{k}")
            dh = dh @ params[f"fc{k}.w"].T
        elif kind == "gap":
            _, (H, W) = entry
            dh = np.broadcast_to(dh[:, None, None, :] / (H * W), (dh.shape[0], H, W, dh.shape[1]))
        else:
            _, k, cols, in_shape, pre, t, act_shape, factors = entry
            dact = _unpool(dh, act_shape, factors)
            dpre = (dact * gelu_grad(pre, t)).reshape(-1, pre.shape[-1])
            W = params[f"conv{k}.w"]
            grads[f"conv{k}.w"] = (cols.T @ dpre).reshape(W.shape)
            grads[f"conv{k}.b"] = dpre.sum(axis=0)
            _check_finite(grads[f"conv{k}.w"], f"conv{k}")
            if k > 0:
                dh = _col2im(dpre @ W.reshape(-1, W.shape[-1]).T, in_shape)
    return grads


def _check_finite(g, layer):
    if not np.isfinite(g.sum()):
        raise NumericError(f"non-finite gradient in layer {layer}")


@dataclass
class Adam:
    """Adaptive-moment optimiser over a dict of parameter arrays."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in params:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= (self.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(
                params[name].dtype, copy=False)
        return params
