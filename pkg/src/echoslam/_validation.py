"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import ArgumentError, ShapeError

SPEC_SHAPE = (12, 48)


def check_spectrograms(X, shape=SPEC_SHAPE, dtype=np.float64):
    """Coerce ``X`` to a ``(n, H, W)`` float array of spectrogram images.

    A single ``(H, W)`` image is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != tuple(shape):
        raise ShapeError(f"expected spectrograms of shape (n, {shape[0]}, {shape[1]}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ShapeError("spectrograms contain non-finite values")
    return X


def check_features(F, name="features"):
    """Coerce an ELF list to a non-empty ``(k, d)`` float64 array."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[None]
    if F.ndim != 2 or F.shape[0] == 0:
        raise ArgumentError(f"{name} must be a non-empty (k, d) array, got shape {F.shape}")
    return F


def check_poses(P, name="poses"):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[None]
    if P.ndim != 2 or P.shape[1] != 3:
        raise ShapeError(f"{name} must have shape (n, 3), got {P.shape}")
    return P


def check_points(P, name="points"):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[None]
    if P.ndim != 2 or P.shape[1] != 2:
        raise ShapeError(f"{name} must have shape (n, 2), got {P.shape}")
    return P


def l2_normalize(F, axis=-1):
    norm = np.linalg.norm(F, axis=axis, keepdims=True)
    return F / np.where(norm > 0, norm, 1.0)
