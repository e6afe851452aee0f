"""Small statistical helpers shared by the estimators and the experiment driver."""

from __future__ import annotations

import math

import numpy as np


def mean_stderr(values) -> tuple[float, float]:
    """Sample mean and its standard error (``nan`` stderr below two samples)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    mean = float(np.sum(v) / v.size)
    if v.size < 2:
        return mean, math.nan
    return mean, float(np.std(v, ddof=1) / math.sqrt(v.size))


def batch_means_speed(path: np.ndarray, batches: int = 100) -> tuple[float, float]:
    """Speed ``path[-1]/n`` with a batch-means stderr from equal-length segments."""
    path = np.asarray(path, dtype=np.int64)
    n = len(path) - 1
    if n < batches:
        raise ValueError(f"need at least {batches} steps for {batches} batches")
    edges = np.linspace(0, n, batches + 1).astype(np.int64)
    rates = np.diff(path[edges]) / np.diff(edges)
    return path[-1] / n, float(np.std(rates, ddof=1) / math.sqrt(batches))


def normal_ci(mean: float, stderr: float, z: float = 1.959963984540054) -> tuple[float, float]:
    return mean - z * stderr, mean + z * stderr
