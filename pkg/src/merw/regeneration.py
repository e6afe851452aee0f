"""Regeneration times of recorded MERW trajectories and the renewal speed estimator.

A time ``t`` is a regeneration time when the walkers coincide, both stand
strictly to the right of everything either of them visited before, and both
stay strictly to the right of that point afterwards.  The future condition
can only be checked against the recorded path, so candidates in the last
``W`` steps are never accepted (right-censoring).

Time 0 satisfies the past condition vacuously; it is reported on its own
(:attr:`RegenerationRecord.time_zero`) and never enters the gap list.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import Trajectory, detect_fresh_epochs

DEFAULT_CENSOR = 10_000


class InsufficientData(ValueError):
    """Raised when an estimator has too few regenerations to work with."""


@dataclass
class RegenerationRecord:
    times: np.ndarray
    displacement: np.ndarray
    duration: np.ndarray
    censor_window: int
    horizon: int
    censored: int
    time_zero: bool

    @property
    def status(self) -> str:
        return "empty" if len(self.times) == 0 else "ok"

    def gaps(self, burn_in: bool = False) -> tuple[np.ndarray, np.ndarray]:
        if burn_in:
            return self.displacement[1:], self.duration[1:]
        return self.displacement, self.duration

    def write_gap_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "tau", "dX", "dtau"])
            for i, (t, a, b) in enumerate(zip(self.times, self.displacement, self.duration), 1):
                w.writerow([i, int(t), int(a), int(b)])


def _strict_record_times(z: np.ndarray) -> np.ndarray:
    """Mask of times where ``z`` strictly exceeds all earlier values (time 0 included)."""
    prev_max = np.maximum.accumulate(z)
    mask = np.ones(len(z), dtype=bool)
    mask[1:] = z[1:] > prev_max[:-1]
    return mask


def _stays_above(z: np.ndarray) -> np.ndarray:
    """Mask of times after which ``z`` stays strictly above its current value."""
    future_min = np.empty(len(z), dtype=np.int64)
    future_min[-1] = np.iinfo(np.int64).max
    future_min[:-1] = np.minimum.accumulate(z[:0:-1])[::-1]
    return z < future_min


def regeneration_mask(traj: Trajectory) -> np.ndarray:
    """All times meeting the three conditions against the whole recorded path."""
    x = np.asarray(traj.x, dtype=np.int64)
    y = np.asarray(traj.y, dtype=np.int64)
    return (
        (x == y)
        & _strict_record_times(x)
        & _strict_record_times(y)
        & _stays_above(x)
        & _stays_above(y)
    )


def detect_regenerations(traj: Trajectory, censor_window: int = DEFAULT_CENSOR) -> RegenerationRecord:
    if censor_window < 0:
        raise ValueError(f"censor window must be >= 0, got {censor_window}")
    horizon = traj.horizon
    mask = regeneration_mask(traj)
    last = horizon - censor_window
    t = np.flatnonzero(mask)
    accepted = t[(t >= 1) & (t <= last)]
    x = np.asarray(traj.x, dtype=np.int64)
    return RegenerationRecord(
        times=accepted,
        displacement=np.diff(x[accepted]),
        duration=np.diff(accepted),
        censor_window=censor_window,
        horizon=horizon,
        censored=int(np.count_nonzero(t > max(last, 0))),
        time_zero=bool(mask[0]) and last >= 0,
    )


@dataclass
class GapStats:
    """Sufficient statistics of (displacement, duration) gaps; merges across trials."""

    count: int = 0
    sum_dx: float = 0.0
    sum_dt: float = 0.0
    sum_dx2: float = 0.0
    sum_dt2: float = 0.0
    sum_dxdt: float = 0.0

    @classmethod
    def from_gaps(cls, dx, dt) -> "GapStats":
        dx = np.asarray(dx, dtype=np.float64)
        dt = np.asarray(dt, dtype=np.float64)
        return cls(len(dx), dx.sum(), dt.sum(), (dx * dx).sum(), (dt * dt).sum(), (dx * dt).sum())

    def __add__(self, other: "GapStats") -> "GapStats":
        return GapStats(
            self.count + other.count,
            self.sum_dx + other.sum_dx,
            self.sum_dt + other.sum_dt,
            self.sum_dx2 + other.sum_dx2,
            self.sum_dt2 + other.sum_dt2,
            self.sum_dxdt + other.sum_dxdt,
        )

    def speed(self) -> tuple[float, float]:
        """Ratio of mean displacement to mean duration, with a delta-method stderr."""
        g = self.count
        if g < 1:
            raise InsufficientData("need at least two regeneration times")
        mean_a = self.sum_dx / g
        mean_b = self.sum_dt / g
        ratio = mean_a / mean_b
        if g < 2:
            return ratio, math.nan
        var_a = (self.sum_dx2 - g * mean_a**2) / (g - 1)
        var_b = (self.sum_dt2 - g * mean_b**2) / (g - 1)
        cov = (self.sum_dxdt - g * mean_a * mean_b) / (g - 1)
        var_r = (var_a - 2 * ratio * cov + ratio**2 * var_b) / (g * mean_b**2)
        return ratio, math.sqrt(max(var_r, 0.0))


def regeneration_speed(record: RegenerationRecord, burn_in: bool = False) -> tuple[float, float]:
    """Speed as mean gap displacement over mean gap duration, plus stderr.

    Gaps between successive regenerations are i.i.d., so the stderr treats them
    as independent.  ``burn_in`` drops the first gap.
    """
    dx, dt = record.gaps(burn_in)
    if len(dx) == 0:
        raise InsufficientData(
            f"{len(record.times)} regeneration(s) found; at least two are needed"
        )
    return GapStats.from_gaps(dx, dt).speed()


def fresh_to_regen_ratio(traj: Trajectory, censor_window: int = DEFAULT_CENSOR) -> tuple[float, float]:
    """Fraction of uncensored fresh epochs that are regeneration times, with binomial stderr."""
    last = traj.horizon - censor_window
    fresh = detect_fresh_epochs(traj)
    fresh = fresh[fresh <= last]
    if len(fresh) == 0:
        raise InsufficientData("no uncensored fresh epoch")
    regen = regeneration_mask(traj)[fresh]
    ratio = float(regen.mean())
    return ratio, math.sqrt(ratio * (1 - ratio) / len(fresh))


def summary_json(record: RegenerationRecord, burn_in: bool = False, config: dict | None = None) -> str:
    out = {
        "horizon": record.horizon,
        "censor_window": record.censor_window,
        "regenerations": int(len(record.times)),
        "censored": record.censored,
        "time_zero": record.time_zero,
        "status": record.status,
    }
    try:
        out["estimate"], out["stderr"] = regeneration_speed(record, burn_in)
    except InsufficientData:
        out["estimate"] = out["stderr"] = None
    if config is not None:
        out["config"] = config
    return json.dumps(out, sort_keys=True)
