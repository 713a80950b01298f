"""Normalised-temperature cross-entropy over in-batch positive pairs."""

import numpy as np
from scipy.special import logsumexp

from .._validation import l2_normalize
from ..exceptions import PairingError


def _partner(n):
    idx = np.arange(n)
    return idx ^ 1


def nt_xent_loss(Z, tau=0.5, return_grad=False):
    """Contrastive loss for ``2M`` embeddings where rows ``2t`` and ``2t+1`` are positives.

    Similarity is cosine, so rows are normalised first. Returns the mean loss
    over all ``2M`` anchor directions and the per-anchor losses; with
    ``return_grad`` also ``dL/dZ`` (taken through the normalisation).
    """
    Z = np.asarray(Z)
    n = len(Z)
    if n % 2:
        raise PairingError(f"need an even number of embeddings, got {n}")
    if n == 0:
        raise PairingError("empty batch")
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    U = Z / np.where(norms > 0, norms, 1.0)
    S = (U @ U.T) / tau
    np.fill_diagonal(S, -np.inf)
    pos = _partner(n)
    lse = logsumexp(S, axis=1)
    per = lse - S[np.arange(n), pos]
    loss = float(per.mean())
    if not return_grad:
        return loss, per
    P = np.exp(S - lse[:, None])
    P[np.arange(n), pos] -= 1.0
    dS = P / n
    dU = (dS + dS.T) @ U / tau
    dZ = (dU - U * np.sum(U * dU, axis=1, keepdims=True)) / np.where(norms > 0, norms, 1.0)
    return loss, per, dZ


def pair_similarity(Z):
    """Cosine similarity of every positive pair ``(2t, 2t+1)``."""
    U = l2_normalize(np.asarray(Z, dtype=np.float64))
    return np.sum(U[0::2] * U[1::2], axis=1)
