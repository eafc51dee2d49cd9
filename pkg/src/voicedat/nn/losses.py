"""Classification and distribution-matching losses with analytic gradients."""

from __future__ import annotations

import numpy as np

__all__ = ["softmax", "softmax_cross_entropy", "mean_feature_distance"]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray | int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-example cross entropy of softmax(logits) against integer labels.

    Accepts a single (k,) row with an int label or a (B, k) batch with (B,)
    labels. Returns (losses, grads) unreduced: the gradient of each row's
    loss w.r.t. its logits is softmax(logits) - onehot(label). Callers apply
    their own batch reduction.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != z.shape[0]:
        raise ValueError("labels do not match the logits batch")
    k = z.shape[1]
    if k < 2:
        raise ValueError("need at least 2 classes")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in [0, {k})")

    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    sums = e.sum(axis=1)
    rows = np.arange(z.shape[0])
    # loss = logsumexp(z) - z[label], computed in the shifted frame
    losses = np.log(sums) - (z[rows, y] - zmax[:, 0])
    grads = e / sums[:, None]
    grads[rows, y] -= 1.0
    if single:
        return losses[0], grads[0]
    return losses, grads


def mean_feature_distance(
    source: np.ndarray, target: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Squared Euclidean distance between feature means, with gradients.

    value = ||mean(source) - mean(target)||^2 over (Ns, F) and (Nt, F)
    feature batches. Each source row receives gradient 2*diff/Ns and each
    target row -2*diff/Nt.
    """
    s = np.asarray(source, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if s.ndim != 2 or t.ndim != 2 or s.shape[1] != t.shape[1]:
        raise ValueError("expected (Ns, F) and (Nt, F) feature batches")
    diff = s.mean(axis=0) - t.mean(axis=0)
    value = float(diff @ diff)
    gs = np.broadcast_to(2.0 * diff / s.shape[0], s.shape).copy()
    gt = np.broadcast_to(-2.0 * diff / t.shape[0], t.shape).copy()
    return value, gs, gt
