"""Finite-difference gradient checking for the hand-written backward passes."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["relative_error", "finite_difference_check"]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max over elements of |a - n| / max(|a|, |n|, 1)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_difference_check(
    loss_fn: Callable[[], float],
    tensors: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central differences.

    loss_fn() must recompute the scalar loss from the current contents of the
    arrays in `tensors`; the arrays are perturbed in place and restored. When
    max_coords is given, that many coordinates per tensor are checked on a
    seeded random subset (needed for large tensors; full sweep otherwise).
    Returns the worst relative error over every checked coordinate.
    """
    worst = 0.0
    for name, x in tensors.items():
        g = analytic[name]
        if g.shape != x.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        idx = np.arange(x.size)
        if max_coords is not None and x.size > max_coords:
            if rng is None:
                raise ValueError("subsampled checks need an rng")
            idx = rng.choice(x.size, size=max_coords, replace=False)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_fn()
            flat[i] = keep - eps
            down = loss_fn()
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            if err > worst:
                worst = err
    return worst
