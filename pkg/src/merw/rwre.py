"""Random walk in an i.i.d. random environment induced by the MERW.

The environment takes the value ``p`` at a site with probability ``(1-p)**2``
and ``1/2`` otherwise.  This module holds its closed-form expectations and
speed, the backtracking bound, an exact quenched hitting-probability solver,
Monte Carlo walkers used to cross-check all of these, and the coupling that
lets an environment of this law sit below the intersection environment read
off a MERW path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import Trajectory
from .rng import GOLDEN, MASK64, mix64, mix64_py, stream_key, uniform, uniform_at, uniform_py


def _check_p(p: float) -> None:
    if not 0.5 <= p < 1.0:
        raise ValueError(f"the induced environment needs p in [1/2, 1), got {p!r}")


@dataclass(frozen=True)
class RwreClosedForms:
    p: float
    E_rho: float
    E_inv_omega: float
    speed: float

    @property
    def speed_simplified(self) -> float:
        """Same speed, written as a single rational function of ``p``."""
        p = self.p
        return (1 - p) ** 2 * (2 * p - 1) / (2 * p**2 * (2 - p) + (1 - p) ** 2)


def closed_forms(p: float) -> RwreClosedForms:
    _check_p(p)
    e_rho = (1 - p) ** 3 / p + p * (2 - p)
    e_inv = 2 * p * (2 - p) + (1 - p) ** 2 / p
    # 1 - E_rho, factored to avoid cancellation near p = 1
    gap = (1 - p) ** 2 * (2 * p - 1) / p
    return RwreClosedForms(p, e_rho, e_inv, gap / e_inv)


def speed_upper_bounds(p: float) -> tuple[float, float]:
    """``(2p - 1, (2p - 1)/(2p + 1))``; the second is the smaller on (1/2, 1)."""
    _check_p(p)
    return 2 * p - 1, (2 * p - 1) / (2 * p + 1)


def backtrack_bound(p: float, k: int) -> float:
    """Upper bound ``2 * E[rho]**k`` on the annealed chance of hitting ``-k`` before ``+1``.

    Returned as-is even when it exceeds 1.
    """
    _check_p(p)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    return 2.0 * closed_forms(p).E_rho ** k


# --- environments -----------------------------------------------------------


class Environment:
    """Site-indexed right-step probabilities; subclasses implement ``values``."""

    def values(self, lo: int, hi: int) -> np.ndarray:
        """Probabilities at sites ``lo..hi`` inclusive."""
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantEnvironment(Environment):
    omega: float

    def values(self, lo, hi):
        return np.full(hi - lo + 1, float(self.omega))


@dataclass(frozen=True)
class ArrayEnvironment(Environment):
    """Explicit values for sites ``lo .. lo+len(omega)-1``; ``fill`` elsewhere."""

    omega: np.ndarray
    lo: int = 0
    fill: float = 0.5

    def values(self, lo, hi):
        out = np.full(hi - lo + 1, float(self.fill))
        a, b = max(lo, self.lo), min(hi, self.lo + len(self.omega) - 1)
        if a <= b:
            out[a - lo : b - lo + 1] = self.omega[a - self.lo : b - self.lo + 1]
        return out


@dataclass
class InducedEnvironment(Environment):
    """I.i.d. sites equal to ``p`` w.p. ``(1-p)**2`` and ``1/2`` otherwise.

    Site ``x`` is a pure function of ``(seed, x)``, so the environment can be
    extended lazily in any order without changing values already seen.
    ``omega`` caches the sites ``0..sites-1`` requested at sampling time.
    """

    p: float
    seed: int
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    @property
    def key(self) -> int:
        return stream_key(self.seed & MASK64, 7)

    def values(self, lo, hi):
        u = uniform_at(self.key, np.arange(lo, hi + 1, dtype=np.int64))
        return np.where(u < (1 - self.p) ** 2, self.p, 0.5)


def sample_environment(p: float, sites: int, seed: int) -> InducedEnvironment:
    _check_p(p)
    if sites < 1:
        raise ValueError(f"sites must be >= 1, got {sites}")
    env = InducedEnvironment(p, seed)
    env.omega = env.values(0, sites - 1)
    return env


# --- quenched walk ----------------------------------------------------------


@numba.njit(cache=True)
def _rwre_advance(key, n, n_end, pos, omega, origin, rec):
    record = rec.shape[0] > 0
    size = omega.shape[0]
    while n < n_end:
        i = pos + origin
        if i < 0 or i >= size:
            break
        pos = pos - 1 if uniform(key, n) < 1.0 - omega[i] else pos + 1
        n += 1
        if record:
            rec[n] = pos
    return n, pos


@dataclass
class RwreRun:
    horizon: int
    position: int
    trajectory: np.ndarray | None = None

    @property
    def speed(self) -> float:
        return self.position / self.horizon


def simulate_rwre(env: Environment, horizon: int, seed: int, record: bool = False) -> RwreRun:
    """Quenched nearest-neighbour walk from 0 for ``horizon`` steps.

    The environment is materialised lazily, doubling the covered window each
    time the walker steps outside it.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    key = np.uint64(stream_key(seed & MASK64, 11))
    rec = np.zeros(horizon + 1 if record else 0, dtype=np.int64)
    lo, hi = -256, 256
    omega = env.values(lo, hi)
    n, pos = 0, 0
    while True:
        n, pos = _rwre_advance(key, n, horizon, pos, omega, -lo, rec)
        if n >= horizon:
            break
        width = hi - lo + 1
        if pos < lo:
            omega = np.concatenate([env.values(lo - width, lo - 1), omega])
            lo -= width
        else:
            omega = np.concatenate([omega, env.values(hi + 1, hi + width)])
            hi += width
    return RwreRun(horizon, int(pos), rec if record else None)


# --- hitting probabilities --------------------------------------------------


def quenched_backtrack_prob(env: Environment, k: int) -> float:
    """Quenched probability of hitting ``-k`` before ``+1`` from 0.

    Solves ``v(z) = w_z v(z+1) + (1 - w_z) v(z-1)`` with ``v(1) = 0`` and
    ``v(-k) = 1``.  Successive differences obey ``d_z = rho_z d_{z-1}``, so one
    pass over the window gives ``v(0) = Pi_0 / sum_j Pi_j`` where ``Pi_j`` is
    the product of ``rho`` over sites ``-k+1..j``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    omega = np.asarray(env.values(-k + 1, 0), dtype=np.float64)
    if np.any(omega <= 0) or np.any(omega > 1):
        raise ValueError("environment values must lie in (0, 1]")
    total = 1.0
    prod = 1.0
    for w in omega:
        prod *= (1.0 - w) / w
        total += prod
    return prod / total


@numba.njit(cache=True)
def _annealed_backtrack(base, p, k, pairs):
    thresh = (1.0 - p) ** 2
    hits = 0
    for i in range(pairs):
        env_key = mix64(base + np.uint64(2 * i + 1) * np.uint64(GOLDEN))
        walk_key = mix64(base + np.uint64(2 * i + 2) * np.uint64(GOLDEN))
        pos = 0
        n = 0
        while pos > -k and pos < 1:
            w = p if uniform(env_key, pos) < thresh else 0.5
            pos = pos - 1 if uniform(walk_key, n) < 1.0 - w else pos + 1
            n += 1
        if pos == -k:
            hits += 1
    return hits


def annealed_backtrack_mc(p: float, k: int, pairs: int, seed: int) -> tuple[float, float]:
    """Monte Carlo ``P(tau_{-k} < tau_1)`` over fresh environment/walk pairs, with stderr."""
    _check_p(p)
    base = np.uint64(stream_key(seed & MASK64, 13))
    hits = _annealed_backtrack(base, float(p), int(k), int(pairs))
    q = hits / pairs
    return q, math.sqrt(q * (1 - q) / pairs)


def quenched_backtrack_mc(env: Environment, k: int, walks: int, seed: int) -> tuple[float, float]:
    """Hitting frequency of ``-k`` before ``+1`` for independent walks in one environment."""
    omega = np.asarray(env.values(-k, 1), dtype=np.float64)
    key = stream_key(seed & MASK64, 17)
    hits = _quenched_hits(np.uint64(key), omega, int(k), int(walks))
    q = hits / walks
    return q, math.sqrt(q * (1 - q) / walks)


@numba.njit(cache=True)
def _quenched_hits(base, omega, k, walks):
    hits = 0
    for i in range(walks):
        walk_key = mix64(base + np.uint64(i + 1) * np.uint64(GOLDEN))
        pos = 0
        n = 0
        while pos > -k and pos < 1:
            pos = pos - 1 if uniform(walk_key, n) < 1.0 - omega[pos + k] else pos + 1
            n += 1
        if pos == -k:
            hits += 1
    return hits


def escape_moment_mc(p: float, k: int, n: int, envs: int, seed: int) -> tuple[float, float]:
    """Monte Carlo ``E[(1 - P_omega(tau_{-k} < tau_1))**n]`` over induced environments."""
    _check_p(p)
    vals = np.array(
        [
            (1.0 - quenched_backtrack_prob(InducedEnvironment(p, mix64_py(seed * GOLDEN + i)), k)) ** n
            for i in range(envs)
        ]
    )
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(envs))


# --- coupling with the MERW -------------------------------------------------


def _mth_visit_times(z: np.ndarray, sites: np.ndarray, m: int) -> np.ndarray:
    """Time of the ``m``-th visit of path ``z`` to each site (``-1`` if fewer)."""
    order = np.argsort(z, kind="stable")
    zs = z[order]
    out = np.full(len(sites), -1, dtype=np.int64)
    start = np.searchsorted(zs, sites, side="left")
    stop = np.searchsorted(zs, sites, side="right")
    ok = stop - start >= m
    out[ok] = order[start[ok] + m - 1]
    return out


def intersection_environment(traj: Trajectory, m: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Resolved sites ``x >= 0`` and whether both walkers had eaten their cookies there.

    Site ``x`` is resolved at the first time the left front reaches ``x + 2``,
    i.e. once both walkers have moved past ``x + 1``.  The boolean marks sites
    that each walker had visited at least ``m`` times by then.
    """
    x = np.asarray(traj.x, dtype=np.int64)
    y = np.asarray(traj.y, dtype=np.int64)
    _, left = traj.fronts()
    if left[-1] < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)
    sites = np.arange(0, int(left[-1]) - 1, dtype=np.int64)
    when = np.searchsorted(left, sites + 2, side="left")
    tx = _mth_visit_times(x, sites, m)
    ty = _mth_visit_times(y, sites, m)
    eaten = (tx >= 0) & (tx <= when) & (ty >= 0) & (ty <= when)
    return sites, eaten


def coupled_induced_environment(traj: Trajectory, key_x: int, key_y: int, p: float, sites) -> np.ndarray:
    """Induced environment built from the uniforms each walker used on its first visit to ``x+1``.

    Site ``x`` gets ``p`` exactly when both of those draws fall below ``1-p``;
    with the package's draw convention both walkers then stepped left.
    """
    x = np.asarray(traj.x, dtype=np.int64)
    y = np.asarray(traj.y, dtype=np.int64)
    sites = np.asarray(sites, dtype=np.int64)
    fx = _mth_visit_times(x, sites + 1, 1)
    fy = _mth_visit_times(y, sites + 1, 1)
    if np.any(fx < 0) or np.any(fy < 0):
        raise ValueError("every site x must have x+1 visited by both walkers")
    ux = np.array([uniform_py(key_x, int(t)) for t in fx])
    uy = np.array([uniform_py(key_y, int(t)) for t in fy])
    return np.where((ux < 1 - p) & (uy < 1 - p), p, 0.5)
