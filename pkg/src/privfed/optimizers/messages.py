"""Per-silo pre-noise message computations.

These pure functions are the single code path for silo updates: the
optimizer loops call them with noise added afterwards, and the adjacency
harness calls them directly on swapped datasets to measure sensitivity.
"""

from __future__ import annotations

import numpy as np

from ..core import CompositeLoss

__all__ = ["sgd_message", "diff_message", "per_sample_clipped",
           "per_sample_clipped_diff"]


def sgd_message(loss: CompositeLoss, w: np.ndarray, feats: np.ndarray,
                labels, idx) -> np.ndarray:
    """Mean of clipped per-sample gradients over the batch rows idx."""
    sub_y = None if labels is None else labels[idx]
    return loss.clipped_grad_mean(w, feats[idx], sub_y)


def diff_message(loss: CompositeLoss, w_new: np.ndarray, w_old: np.ndarray,
                 feats: np.ndarray, labels, idx) -> np.ndarray:
    """Mean over the batch of clip(grad(w_new, x)) - clip(grad(w_old, x))."""
    sub_y = None if labels is None else labels[idx]
    return loss.clipped_diff_mean(w_new, w_old, feats[idx], sub_y)


def per_sample_clipped(loss: CompositeLoss, w, feats, labels, idx) -> np.ndarray:
    """Stack of clipped per-sample gradients (shuffle-protocol contributors)."""
    sub_y = None if labels is None else labels[idx]
    return loss.clipped_grads(w, feats[idx], sub_y)


def per_sample_clipped_diff(loss: CompositeLoss, w_new, w_old, feats, labels,
                            idx) -> np.ndarray:
    sub_y = None if labels is None else labels[idx]
    return (loss.clipped_grads(w_new, feats[idx], sub_y)
            - loss.clipped_grads(w_old, feats[idx], sub_y))
