"""Seeded Monte Carlo campaigns, parameter sweeps and exact-chain tables.

Everything here is a pure function of its arguments: trials are identified by
``(seed, trial index)`` and results are gathered in trial order, so the number
of worker processes never changes a single output byte.
"""

from __future__ import annotations

import math
import multiprocessing
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import CookieRule, RunSummary, run, run_trajectory
from .regeneration import (
    DEFAULT_CENSOR,
    GapStats,
    InsufficientData,
    RegenerationRecord,
    detect_regenerations,
    fresh_to_regen_ratio,
)
from .rng import GOLDEN, MASK64, mix64_py
from .rwre import closed_forms, speed_upper_bounds
from .stats import mean_stderr, normal_ci
from .truncated import DEFAULT_STATE_BUDGET, ChainParams, chain_speed, largest_drop

CI_MIN_TRIALS = 30
SWEEP_FIELDS = ("p", "m", "estimator", "estimate", "stderr", "trials", "horizon", "seed")


def parse_grid(text: str) -> list[float]:
    """``a:step:b`` (inclusive) or a comma-separated list."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid must look like a:step:b, got {text!r}")
        a, step, b = (float(v) for v in parts)
        if step <= 0 or b < a:
            raise ValueError(f"bad grid {text!r}")
        n = int(round((b - a) / step)) + 1
        grid = [round(a + i * step, 12) for i in range(n)]
    else:
        grid = [float(v) for v in text.split(",") if v.strip()]
    if not grid:
        raise ValueError("empty grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"grid must be strictly increasing: {grid}")
    return grid


def point_seed(seed: int, p: float, m: int) -> int:
    """Master seed of one sweep point; independent of the grid it sits in."""
    bits = struct.unpack("<Q", struct.pack("<d", float(p)))[0]
    return mix64_py(mix64_py(seed & MASK64) ^ bits ^ ((m * GOLDEN) & MASK64))


def map_ordered(fn, tasks, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally over a process pool; order is preserved."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with multiprocessing.get_context("fork").Pool(workers) as pool:
        return pool.map(fn, tasks, chunksize=chunk)


# --- single trials (module level so they pickle) -----------------------------


def _summary_task(args) -> RunSummary:
    m, p, horizon, seed, trial = args
    return run(CookieRule(m, p), horizon, seed, trial)


def _regen_task(args) -> tuple[RunSummary, GapStats, int]:
    m, p, horizon, seed, trial, censor = args
    traj = run_trajectory(CookieRule(m, p), horizon, seed, trial)
    rec = detect_regenerations(traj, censor)
    return traj.summary, GapStats.from_gaps(rec.displacement, rec.duration), len(rec.times)


# --- campaigns ----------------------------------------------------------------


@dataclass
class Campaign:
    m: int
    p: float
    horizon: int
    seed: int
    summaries: list[RunSummary]
    mean: float
    stderr: float
    ci: tuple[float, float] | None

    @property
    def speeds(self) -> np.ndarray:
        return np.array([s.speed_x for s in self.summaries])

    def aggregate(self) -> dict:
        return {
            "mean_speed": self.mean,
            "stderr": self.stderr,
            "trials": len(self.summaries),
            "ci95": list(self.ci) if self.ci else None,
        }


def simulate_campaign(rule: CookieRule, horizon: int, trials: int, seed: int, workers: int = 1) -> Campaign:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    tasks = [(rule.m, rule.p, horizon, seed, t) for t in range(trials)]
    summaries = map_ordered(_summary_task, tasks, workers)
    mean, se = mean_stderr([s.speed_x for s in summaries])
    ci = normal_ci(mean, se) if trials >= CI_MIN_TRIALS else None
    return Campaign(rule.m, rule.p, horizon, seed, summaries, mean, se, ci)


@dataclass
class SweepRow:
    p: float
    m: int
    estimator: str
    estimate: float
    stderr: float
    trials: int
    horizon: int
    seed: int

    def as_list(self) -> list:
        return [getattr(self, f) for f in SWEEP_FIELDS]


@dataclass
class DropReport:
    m: int
    estimator: str
    p1: float
    p2: float
    v1: float
    v2: float
    se1: float
    se2: float
    factor: float

    @property
    def margin(self) -> float:
        return self.v1 - self.v2

    @property
    def threshold(self) -> float:
        return self.factor * (self.se1 + self.se2)

    @property
    def significant(self) -> bool:
        return self.margin > self.threshold

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(margin=self.margin, threshold=self.threshold, significant=self.significant)
        return d


def significant_drop(rows: list[SweepRow], factor: float = 2.0) -> DropReport | None:
    """Among pairs ``p1 < p2`` of one curve, the drop with the largest excess over
    ``factor * (se1 + se2)``; ``None`` when the curve has fewer than two points."""
    rows = sorted(rows, key=lambda r: r.p)
    best = None
    for i, a in enumerate(rows):
        for b in rows[i + 1 :]:
            excess = (a.estimate - b.estimate) - factor * (a.stderr + b.stderr)
            if best is None or excess > best[0]:
                best = (excess, a, b)
    if best is None:
        return None
    _, a, b = best
    return DropReport(a.m, a.estimator, a.p, b.p, a.estimate, b.estimate, a.stderr, b.stderr, factor)


def sweep(
    grid,
    m: int,
    horizon: int,
    trials: int,
    seed: int,
    workers: int = 1,
    estimators=("direct", "regen"),
    censor: int = DEFAULT_CENSOR,
) -> list[SweepRow]:
    """One row per grid point and estimator.

    ``direct`` averages ``X_n / n`` over trials.  ``regen`` pools the
    regeneration gaps of all trials into one ratio-of-means estimate.
    """
    unknown = set(estimators) - {"direct", "regen"}
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    want_regen = "regen" in estimators
    tasks = []
    for p in grid:
        s = point_seed(seed, p, m)
        for t in range(trials):
            tasks.append((m, p, horizon, s, t, censor) if want_regen else (m, p, horizon, s, t))
    results = map_ordered(_regen_task if want_regen else _summary_task, tasks, workers)
    rows = []
    for g, p in enumerate(grid):
        chunk = results[g * trials : (g + 1) * trials]
        s = point_seed(seed, p, m)
        if "direct" in estimators:
            speeds = [r[0].speed_x if want_regen else r.speed_x for r in chunk]
            mean, se = mean_stderr(speeds)
            rows.append(SweepRow(p, m, "direct", mean, se, trials, horizon, s))
        if want_regen:
            pooled = GapStats()
            for _, gaps, _ in chunk:
                pooled = pooled + gaps
            try:
                est, se = pooled.speed()
            except InsufficientData:
                est, se = math.nan, math.nan
            rows.append(SweepRow(p, m, "regen", est, se, trials, horizon, s))
    return rows


# --- exact chain and closed forms ------------------------------------------


@dataclass
class ChainRow:
    p: float
    k: int
    m: int
    v_k: float
    solver: str
    residual: float


def chain_table(ks, m: int, grid, solver: str = "direct", tolerance: float = 1e-12,
                budget: int = DEFAULT_STATE_BUDGET) -> list[ChainRow]:
    rows = []
    for k in ks:
        for p in grid:
            v, res = chain_speed(ChainParams(k, m, p), solver, tolerance, budget)
            rows.append(ChainRow(p, k, m, v, solver, res))
    return rows


def chain_certificates(rows: list[ChainRow]) -> dict[int, object]:
    out = {}
    for k in sorted({r.k for r in rows}):
        sel = [r for r in rows if r.k == k]
        out[k] = largest_drop([r.p for r in sel], [r.v_k for r in sel])
    return out


@dataclass
class BoundsRow:
    p: float
    E_rho: float
    E_inv_omega: float
    speed_closed_form: float
    bound_2p_minus_1: float
    bound_prop: float


class BoundViolation(AssertionError):
    pass


def bounds_table(grid) -> list[BoundsRow]:
    rows = []
    for p in grid:
        c = closed_forms(p)
        b1, b2 = speed_upper_bounds(p)
        if c.speed > b1 + 1e-15 or c.speed > b2 + 1e-15:
            raise BoundViolation(f"closed-form speed {c.speed} exceeds a bound at p={p}")
        rows.append(BoundsRow(p, c.E_rho, c.E_inv_omega, c.speed, b1, b2))
    return rows


@dataclass
class RegenResult:
    trial: int
    summary: RunSummary
    record: RegenerationRecord
    fresh_ratio: float | None
    gaps: GapStats = field(repr=False)


def regen_runs(rule: CookieRule, horizon: int, trials: int, seed: int, censor: int = DEFAULT_CENSOR):
    """Recorded trials with their regeneration records."""
    out = []
    for t in range(trials):
        traj = run_trajectory(rule, horizon, seed, t)
        rec = detect_regenerations(traj, censor)
        try:
            ratio = fresh_to_regen_ratio(traj, censor)[0]
        except InsufficientData:
            ratio = None
        gaps = GapStats.from_gaps(rec.displacement, rec.duration)
        out.append(RegenResult(t, traj.summary, rec, ratio, gaps))
    return out
