"""Excitation chirp, echo extraction and spectral features.

The excitation is a 10 ms chirp over 15-20 kHz sampled at 44.1 ksps. An echo
trace is the fixed-length window that follows the direct path and the first
body reflection; it is turned into a 12 x 48 magnitude spectrogram (the
network input) or a 49-bin PSD (the generic baseline feature).
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError, LengthError, ShapeError

TRACE_LEN = 2352
STFT_WINDOW = 96
STFT_HOP = 48
BAND_LOW_HZ = 15000.0
BAND_HIGH_HZ = 20500.0
GUARD_S = 0.001


@dataclass(frozen=True)
class ChirpConfig:
    sample_rate_hz: int = 44100
    f0_hz: float = 15000.0
    f1_hz: float = 20000.0
    duration_s: float = 0.010
    sweep: str = "logarithmic"

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.f0_hz <= 0 or self.f1_hz <= 0 or self.duration_s <= 0:
            raise ConfigurationError("chirp parameters must be positive")
        if not self.f0_hz < self.f1_hz < self.sample_rate_hz / 2:
            raise ConfigurationError(
                f"need f0 < f1 < fs/2, got f0={self.f0_hz}, f1={self.f1_hz}, fs={self.sample_rate_hz}")
        if self.duration_s * self.sample_rate_hz < 2:
            raise ConfigurationError("chirp must span at least two samples")
        if self.sweep not in ("logarithmic", "linear"):
            raise ConfigurationError(f"unknown sweep {self.sweep!r}")

    @property
    def n_samples(self):
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def skip_samples(self):
        """Samples dropped after emission start: the chirp itself plus a 1 ms guard."""
        return int(round((self.duration_s + GUARD_S) * self.sample_rate_hz))


@dataclass(frozen=True)
class Recording:
    samples: np.ndarray
    sample_rate_hz: int = 44100

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError("recording samples must be one-dimensional")
        if np.any(np.abs(samples) > 1.0):
            raise ConfigurationError("recording samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)


def instantaneous_frequency(cfg, t):
    t = np.asarray(t, dtype=np.float64)
    T = cfg.duration_s
    if cfg.sweep == "logarithmic":
        return cfg.f0_hz * (cfg.f1_hz / cfg.f0_hz) ** (t / T)
    return cfg.f0_hz + (cfg.f1_hz - cfg.f0_hz) * t / T


def chirp_phase(cfg, t):
    """Closed-form integral of ``2*pi*f(t)`` from 0 to ``t``."""
    t = np.asarray(t, dtype=np.float64)
    T = cfg.duration_s
    if cfg.sweep == "logarithmic":
        k = cfg.f1_hz / cfg.f0_hz
        return 2 * np.pi * cfg.f0_hz * T / np.log(k) * (k ** (t / T) - 1.0)
    return 2 * np.pi * (cfg.f0_hz * t + 0.5 * (cfg.f1_hz - cfg.f0_hz) * t * t / T)


def generate_chirp(cfg=None):
    cfg = cfg or ChirpConfig()
    t = np.arange(cfg.n_samples) / cfg.sample_rate_hz
    return Recording(np.sin(chirp_phase(cfg, t)), cfg.sample_rate_hz)


def matched_filter(rec, template):
    """Sliding-window Pearson correlation of ``rec`` against ``template``.

    Windows with zero variance (and a constant template) map to 0.
    """
    x = rec.samples if isinstance(rec, Recording) else np.asarray(rec, dtype=np.float64)
    h = template.samples if isinstance(template, Recording) else np.asarray(template, dtype=np.float64)
    if isinstance(rec, Recording) and isinstance(template, Recording):
        if rec.sample_rate_hz != template.sample_rate_hz:
            raise ConfigurationError("recording and template sample rates differ")
    n = len(h)
    if n > len(x):
        raise LengthError(f"template ({n}) longer than recording ({len(x)})")
    h0 = h - h.mean()
    h_norm = np.sqrt(np.dot(h0, h0))
    out = np.zeros(len(x) - n + 1)
    if h_norm == 0:
        return out
    num = signal.correlate(x, h0, mode="valid", method="direct" if n < 64 else "auto")
    # window sums of squares via centred data to limit cancellation
    xc = x - x.mean()
    c1 = np.concatenate(([0.0], np.cumsum(xc)))
    c2 = np.concatenate(([0.0], np.cumsum(xc * xc)))
    s1 = c1[n:] - c1[:-n]
    s2 = c2[n:] - c2[:-n]
    ss = np.maximum(s2 - s1 * s1 / n, 0.0)
    tol = 1e-10 * np.maximum(s2, 1e-300) + 1e-300
    ok = ss > tol
    out[ok] = num[ok] / (np.sqrt(ss[ok]) * h_norm)
    return np.clip(out, -1.0, 1.0)


def extract_echo_trace(rec, cfg=None, emit_offset=0, trace_len=TRACE_LEN):
    """Slice the echo trace out of a raw recording.

    The emission starts at sample ``emit_offset``; the chirp duration plus a
    1 ms guard is dropped and the following ``trace_len`` samples are kept.
    """
    cfg = cfg or ChirpConfig()
    x = rec.samples if isinstance(rec, Recording) else np.asarray(rec, dtype=np.float64)
    start = emit_offset + cfg.skip_samples
    if len(x) < start + trace_len:
        raise LengthError(f"recording has {len(x)} samples, need at least {start + trace_len}")
    return x[start:start + trace_len].copy()


def _frames(trace):
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape[-1] != TRACE_LEN:
        raise ShapeError(f"echo trace must have {TRACE_LEN} samples, got {trace.shape[-1]}")
    view = np.lib.stride_tricks.sliding_window_view(trace, STFT_WINDOW, axis=-1)
    return view[..., ::STFT_HOP, :]


def bin_frequencies(sample_rate_hz=44100):
    return np.fft.rfftfreq(STFT_WINDOW, d=1.0 / sample_rate_hz)


def band_bins(sample_rate_hz=44100):
    f = bin_frequencies(sample_rate_hz)
    return np.flatnonzero((f >= BAND_LOW_HZ) & (f < BAND_HIGH_HZ))


def full_spectrogram(trace):
    """Magnitude STFT, shape ``(..., 49, 48)`` (frequency x time)."""
    win = signal.get_window("hann", STFT_WINDOW)
    spec = np.abs(np.fft.rfft(_frames(trace) * win, axis=-1))
    return np.swapaxes(spec, -1, -2)


def compute_spectrogram(trace, sample_rate_hz=44100):
    """12 x 48 band-limited magnitude spectrogram; also accepts a ``(n, 2352)`` batch."""
    return full_spectrogram(trace)[..., band_bins(sample_rate_hz), :]


def compute_psd(trace, sample_rate_hz=44100):
    """Welch PSD over the same 96/48 framing, 49 bins."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.shape[-1] != TRACE_LEN:
        raise ShapeError(f"echo trace must have {TRACE_LEN} samples, got {trace.shape[-1]}")
    _, psd = signal.welch(trace, fs=sample_rate_hz, window="hann", nperseg=STFT_WINDOW,
                          noverlap=STFT_WINDOW - STFT_HOP, detrend=False, axis=-1)
    return psd


class SpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Echo traces ``(n, 2352)`` to spectrogram images ``(n, 12, 48)``."""

    def __init__(self, sample_rate_hz=44100):
        self.sample_rate_hz = sample_rate_hz

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return compute_spectrogram(X, self.sample_rate_hz)


class PSDTransformer(TransformerMixin, BaseEstimator):
    """Echo traces to unit-norm PSD vectors, the generic baseline feature."""

    def __init__(self, sample_rate_hz=44100, normalize=True):
        self.sample_rate_hz = sample_rate_hz
        self.normalize = normalize

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        P = compute_psd(X, self.sample_rate_hz)
        if self.normalize:
            n = np.linalg.norm(P, axis=1, keepdims=True)
            P = P / np.where(n > 0, n, 1.0)
        return P
