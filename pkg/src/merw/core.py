"""Mutually excited random walks on the integer line.

Two walkers X and Y start at 0.  At every step each walker looks at how many
times the *other* walker has been at its current site (time 0 included) and
steps right with probability 1/2 while that count is below ``m``, and with
probability ``p`` afterwards.  Both walkers move simultaneously, using the
counts of the state they are leaving.

A walker moves left iff its uniform draw is below ``1 - q`` (``q`` being its
right-probability).  Any draw rule with the right law would do; this one is
fixed so that trajectories are reproducible bit for bit and so that couplings
built on the same uniforms (see :mod:`merw.rwre`) line up.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .rng import stream_key, trial_key, uniform


@dataclass(frozen=True)
class CookieRule:
    """``m`` neutral cookies per site, then drift ``p`` forever."""

    m: int = 2
    p: float = 0.75

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m!r}")
        if not 0.5 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [1/2, 1], got {self.p!r}")

    def drift_prob(self, other_visits: int) -> float:
        return drift_prob(self, other_visits)


def drift_prob(rule: CookieRule, other_visits: int) -> float:
    """Right-step probability at a site the other walker visited ``other_visits`` times."""
    return 0.5 if other_visits < rule.m else rule.p


@dataclass
class MerwState:
    """Full configuration of the two walkers after ``n`` steps.

    Visit maps count occupancy including time 0; fronts use running maxima
    over times ``0..n``.
    """

    n: int
    x: int
    y: int
    visits_x: dict[int, int]
    visits_y: dict[int, int]
    max_x: int
    max_y: int

    @classmethod
    def initial(cls) -> "MerwState":
        return cls(0, 0, 0, {0: 1}, {0: 1}, 0, 0)

    @property
    def right_front(self) -> int:
        return max(self.max_x, self.max_y)

    @property
    def left_front(self) -> int:
        return min(self.max_x, self.max_y)


def step(state: MerwState, rule: CookieRule, u_x: float, u_y: float) -> MerwState:
    """One simultaneous move of both walkers driven by the draws ``u_x``, ``u_y``."""
    qx = drift_prob(rule, state.visits_y.get(state.x, 0))
    qy = drift_prob(rule, state.visits_x.get(state.y, 0))
    x = state.x - 1 if u_x < 1.0 - qx else state.x + 1
    y = state.y - 1 if u_y < 1.0 - qy else state.y + 1
    visits_x = dict(state.visits_x)
    visits_y = dict(state.visits_y)
    visits_x[x] = visits_x.get(x, 0) + 1
    visits_y[y] = visits_y.get(y, 0) + 1
    return MerwState(
        state.n + 1, x, y, visits_x, visits_y, max(state.max_x, x), max(state.max_y, y)
    )


@dataclass
class RunSummary:
    """End-of-run record of one trial, with enough provenance to replay it."""

    horizon: int
    x: int
    y: int
    max_x: int
    max_y: int
    right_front: int
    left_front: int
    speed_x: float
    speed_y: float
    fresh_epochs: int
    m: int
    p: float
    master_seed: int
    trial: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class Trajectory:
    """Recorded positions at times ``0..horizon``."""

    x: np.ndarray
    y: np.ndarray
    rule: CookieRule
    master_seed: int | None = None
    trial: int | None = None
    summary: RunSummary | None = field(default=None, repr=False)

    @property
    def horizon(self) -> int:
        return len(self.x) - 1

    def fronts(self) -> tuple[np.ndarray, np.ndarray]:
        mx = np.maximum.accumulate(self.x)
        my = np.maximum.accumulate(self.y)
        return np.maximum(mx, my), np.minimum(mx, my)

    def steps(self) -> np.ndarray:
        """Signed 8-bit step pairs, shape ``(horizon, 2)``."""
        return np.stack([np.diff(self.x), np.diff(self.y)], axis=1).astype(np.int8)

    def to_bytes(self) -> bytes:
        return self.steps().tobytes()

    @classmethod
    def from_steps(cls, steps, rule: CookieRule, **kw) -> "Trajectory":
        steps = np.asarray(steps, dtype=np.int64).reshape(-1, 2)
        x = np.concatenate([[0], np.cumsum(steps[:, 0])])
        y = np.concatenate([[0], np.cumsum(steps[:, 1])])
        return cls(x, y, rule, **kw)

    @classmethod
    def from_bytes(cls, data: bytes, rule: CookieRule, **kw) -> "Trajectory":
        return cls.from_steps(np.frombuffer(data, dtype=np.int8), rule, **kw)

    def write_csv(self, path) -> None:
        right, left = self.fronts()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "x", "y", "R", "L"])
            for row in zip(range(len(self.x)), self.x, self.y, right, left):
                w.writerow([int(v) for v in row])


# --- kernel -----------------------------------------------------------------

# layout of the int64 scalar-state vector shared with the kernel
_X, _Y, _MX, _MY, _FRESH, _N = range(6)


@numba.njit(cache=True)
def _advance(kx, ky, n_end, m, p, cap, st, cx, cy, origin, rec_x, rec_y):
    """Advance until ``st[_N] == n_end`` or a walker reaches the window edge."""
    size = cx.shape[0]
    x = st[_X]
    y = st[_Y]
    mx = st[_MX]
    my = st[_MY]
    fresh = st[_FRESH]
    n = st[_N]
    left_p = 1.0 - p
    record = rec_x.shape[0] > 0
    while n < n_end:
        ix = x + origin
        iy = y + origin
        if ix < 1 or iy < 1 or ix > size - 2 or iy > size - 2:
            break
        lx = left_p if cy[ix] >= m else 0.5
        ly = left_p if cx[iy] >= m else 0.5
        x = x - 1 if uniform(kx, n) < lx else x + 1
        y = y - 1 if uniform(ky, n) < ly else y + 1
        n += 1
        ix = x + origin
        iy = y + origin
        if cx[ix] < cap:
            cx[ix] += 1
        if cy[iy] < cap:
            cy[iy] += 1
        front = mx if mx > my else my
        if x == y and x == front + 1:
            fresh += 1
        if x > mx:
            mx = x
        if y > my:
            my = y
        if record:
            rec_x[n] = x
            rec_y[n] = y
    st[_X] = x
    st[_Y] = y
    st[_MX] = mx
    st[_MY] = my
    st[_FRESH] = fresh
    st[_N] = n


def _grow(arr: np.ndarray, origin: int, lo: int, hi: int) -> tuple[np.ndarray, int]:
    """Re-center ``arr`` so that sites ``lo..hi`` (plus margin) fit."""
    span = hi - lo + 1
    size = max(2 * arr.shape[0], 2 * span + 8)
    new = np.zeros(size, dtype=arr.dtype)
    new_origin = (size - span) // 2 - lo
    a, b = max(lo + origin, 0), min(hi + origin + 1, arr.shape[0])
    new[a - origin + new_origin : b - origin + new_origin] = arr[a:b]
    return new, new_origin


def _simulate(rule, horizon, kx, ky, record=False, exact_counts=False):
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if exact_counts or rule.m >= 255:
        dtype, cap = np.int32, np.iinfo(np.int32).max
    else:
        dtype, cap = np.uint8, rule.m
    if record:
        try:
            rec_x = np.zeros(horizon + 1, dtype=np.int32)
            rec_y = np.zeros(horizon + 1, dtype=np.int32)
        except MemoryError as exc:
            raise MemoryError(
                f"cannot record a {horizon}-step trajectory; run summary-only instead"
            ) from exc
    else:
        rec_x = rec_y = np.zeros(0, dtype=np.int32)
    size = 1024
    origin = size // 2
    cx = np.zeros(size, dtype=dtype)
    cy = np.zeros(size, dtype=dtype)
    cx[origin] = cy[origin] = 1
    st = np.zeros(6, dtype=np.int64)
    kx, ky = np.uint64(kx), np.uint64(ky)
    while True:
        _advance(kx, ky, horizon, rule.m, float(rule.p), cap, st, cx, cy, origin, rec_x, rec_y)
        if st[_N] >= horizon:
            break
        # stepped out of the window: widen it around the occupied range
        nz = np.flatnonzero((cx > 0) | (cy > 0))
        lo, hi = nz[0] - origin - 2, nz[-1] - origin + 2
        cx, _ = _grow(cx, origin, lo, hi)
        cy, origin = _grow(cy, origin, lo, hi)
    return st, cx, cy, origin, rec_x, rec_y


def _summary(rule, horizon, st, master_seed, trial) -> RunSummary:
    x, y, mx, my = (int(v) for v in st[:4])
    return RunSummary(
        horizon=horizon,
        x=x,
        y=y,
        max_x=mx,
        max_y=my,
        right_front=max(mx, my),
        left_front=min(mx, my),
        speed_x=x / horizon,
        speed_y=y / horizon,
        fresh_epochs=int(st[_FRESH]),
        m=rule.m,
        p=float(rule.p),
        master_seed=master_seed,
        trial=trial,
    )


def walker_keys(master_seed: int, trial: int = 0) -> tuple[int, int]:
    """The two per-walker stream keys of a trial."""
    key = trial_key(master_seed, trial)
    return stream_key(key, 0), stream_key(key, 1)


def run(rule: CookieRule, horizon: int, seed: int, trial: int = 0) -> RunSummary:
    """Simulate ``horizon`` steps without storing the path."""
    st, *_ = _simulate(rule, horizon, *walker_keys(seed, trial))
    return _summary(rule, horizon, st, seed, trial)


def run_trajectory(rule: CookieRule, horizon: int, seed: int, trial: int = 0) -> Trajectory:
    """Simulate and record the whole path; the summary is attached."""
    st, _, _, _, rec_x, rec_y = _simulate(rule, horizon, *walker_keys(seed, trial), record=True)
    return Trajectory(
        rec_x, rec_y, rule, seed, trial, summary=_summary(rule, horizon, st, seed, trial)
    )


def run_with_keys(
    rule: CookieRule, horizon: int, key_x: int, key_y: int, exact_counts: bool = False
) -> tuple[Trajectory, MerwState]:
    """Low-level driver with explicit walker streams; also returns the final state.

    With ``exact_counts`` the visit maps hold true counts, otherwise they are
    capped at ``m`` (the rule cannot tell larger counts apart).
    """
    st, cx, cy, origin, rec_x, rec_y = _simulate(
        rule, horizon, key_x, key_y, record=True, exact_counts=exact_counts
    )
    visits_x = {int(i) - origin: int(cx[i]) for i in np.flatnonzero(cx)}
    visits_y = {int(i) - origin: int(cy[i]) for i in np.flatnonzero(cy)}
    state = MerwState(
        horizon, int(st[_X]), int(st[_Y]), visits_x, visits_y, int(st[_MX]), int(st[_MY])
    )
    return Trajectory(rec_x, rec_y, rule), state


def detect_fresh_epochs(traj: Trajectory) -> np.ndarray:
    """Times ``t >= 1`` where both walkers stand together one site past the old front."""
    x = np.asarray(traj.x, dtype=np.int64)
    y = np.asarray(traj.y, dtype=np.int64)
    right = np.maximum.accumulate(np.maximum(x, y))
    t = np.arange(1, len(x))
    hit = (x[1:] == y[1:]) & (x[1:] == right[:-1] + 1)
    return t[hit]


def write_summaries(summaries, path, config: dict | None = None) -> None:
    """One JSON object per line, each carrying the config echo."""
    with open(Path(path), "w") as fh:
        for s in summaries:
            rec = asdict(s)
            if config is not None:
                rec["config"] = config
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
