"""The truncated MERW: a finite Markov chain whose speed approximates the MERW speed.

Any walker at distance ``k`` or more behind the right front steps right with
probability one.  Positions are kept as offsets behind the front; with
simultaneous moves an offset can reach ``k + 1`` (a walker at ``k - 1`` steps
left while the other advances the front), so offsets live in ``0..k+1``.

Visit counts are kept (capped at ``m``) for offsets ``0..k-1`` only.  Sites
deeper than that are crossed by forced moves, and since offsets never
decrease their counts can never influence a transition again.

States are packed into one integer: offsets in base ``k + 2``, counts in base
``m + 1``::

    key = (dx * (k+2) + dy) * B**(2k) + sum_i cx[i] B**i + sum_i cy[i] B**(k+i)
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .rng import MASK64, stream_key, uniform
from .stats import batch_means_speed

DEFAULT_STATE_BUDGET = 20_000_000
DENSE_KEY_LIMIT = 1 << 27
DIRECT_LIMIT = 20_000


class StateBudgetExceeded(RuntimeError):
    def __init__(self, reached: int, budget: int):
        super().__init__(f"state budget exceeded: reached {reached} states (budget {budget})")
        self.reached = reached
        self.budget = budget


class ClosedClassError(RuntimeError):
    """The chain does not have exactly one closed communicating class."""

    def __init__(self, representatives):
        self.representatives = list(representatives)
        super().__init__(
            f"expected one closed class, found {len(self.representatives)} "
            f"(representative states {self.representatives})"
        )


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, spread: float):
        super().__init__(f"no convergence after {iterations} iterations (spread {spread:.3e})")
        self.iterations = iterations
        self.spread = spread


@dataclass(frozen=True)
class ChainParams:
    k: int
    m: int
    p: float

    def __post_init__(self):
        if self.k < 2 or self.k % 2:
            raise ValueError(
                f"k must be even and >= 2, got {self.k} "
                "(evenness is a convention of the construction, not a mathematical obstruction)"
            )
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0.5 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [1/2, 1], got {self.p}")

    @property
    def key_space(self) -> int:
        return (self.k + 2) ** 2 * (self.m + 1) ** (2 * self.k)


@dataclass(frozen=True)
class TruncatedState:
    dx: int
    dy: int
    cx: tuple[int, ...]
    cy: tuple[int, ...]

    @classmethod
    def initial(cls, k: int) -> "TruncatedState":
        c = (1,) + (0,) * (k - 1)
        return cls(0, 0, c, c)

    def swapped(self) -> "TruncatedState":
        return TruncatedState(self.dy, self.dx, self.cy, self.cx)

    def encode(self, params: ChainParams) -> int:
        k, b = params.k, params.m + 1
        key = self.dx * (k + 2) + self.dy
        for c in reversed(self.cy):
            key = key * b + c
        for c in reversed(self.cx):
            key = key * b + c
        return key

    @classmethod
    def decode(cls, key: int, params: ChainParams) -> "TruncatedState":
        k, b = params.k, params.m + 1
        digits = []
        for _ in range(2 * k):
            key, d = divmod(key, b)
            digits.append(d)
        dx, dy = divmod(key, k + 2)
        return cls(dx, dy, tuple(digits[:k]), tuple(digits[k:]))


def _right_prob(offset: int, other_counts, params: ChainParams) -> float:
    if offset >= params.k:
        return 1.0
    return 0.5 if other_counts[offset] < params.m else params.p


def drift(state: TruncatedState, params: ChainParams) -> tuple[float, float]:
    """Expected step of X and of Y in ``state``."""
    return (
        2 * _right_prob(state.dx, state.cy, params) - 1,
        2 * _right_prob(state.dy, state.cx, params) - 1,
    )


def transition(state: TruncatedState, params: ChainParams) -> list[tuple[TruncatedState, float]]:
    """Successors of ``state`` with their probabilities (zero-probability moves omitted)."""
    k, m = params.k, params.m
    qx = _right_prob(state.dx, state.cy, params)
    qy = _right_prob(state.dy, state.cx, params)
    out = []
    for mvx, px in ((1, qx), (-1, 1.0 - qx)):
        if px == 0.0:
            continue
        for mvy, py in ((1, qy), (-1, 1.0 - qy)):
            if py == 0.0:
                continue
            nx, ny = state.dx - mvx, state.dy - mvy
            cx, cy = list(state.cx), list(state.cy)
            if min(nx, ny) < 0:
                nx, ny = nx + 1, ny + 1
                cx = [0] + cx[:-1]
                cy = [0] + cy[:-1]
            if nx > k + 1 or ny > k + 1:
                raise AssertionError(f"offset beyond k+1 from {state}")
            if nx < k:
                cx[nx] = min(m, cx[nx] + 1)
            if ny < k:
                cy[ny] = min(m, cy[ny] + 1)
            out.append((TruncatedState(nx, ny, tuple(cx), tuple(cy)), px * py))
    return out


# --- compiled twins of the above --------------------------------------------


@numba.njit(cache=True)
def _decode(key, k, b, cx, cy):
    for i in range(k):
        cx[i] = key % b
        key //= b
    for i in range(k):
        cy[i] = key % b
        key //= b
    return key // (k + 2), key % (k + 2)


@numba.njit(cache=True)
def _encode(dx, dy, cx, cy, k, b):
    key = dx * (k + 2) + dy
    for i in range(k - 1, -1, -1):
        key = key * b + cy[i]
    for i in range(k - 1, -1, -1):
        key = key * b + cx[i]
    return key


@numba.njit(cache=True)
def _successors(key, k, m, p, out_keys, out_probs, sig):
    """Fill successor keys/probabilities of ``key``; returns how many; ``sig`` gets the drifts."""
    b = m + 1
    cx = np.empty(k, np.int64)
    cy = np.empty(k, np.int64)
    ncx = np.empty(k, np.int64)
    ncy = np.empty(k, np.int64)
    dx, dy = _decode(key, k, b, cx, cy)
    if dx >= k:
        qx = 1.0
    elif cy[dx] >= m:
        qx = p
    else:
        qx = 0.5
    if dy >= k:
        qy = 1.0
    elif cx[dy] >= m:
        qy = p
    else:
        qy = 0.5
    sig[0] = 2.0 * qx - 1.0
    sig[1] = 2.0 * qy - 1.0
    cnt = 0
    for a in range(2):
        mvx = 1 if a == 0 else -1
        px = qx if a == 0 else 1.0 - qx
        if px == 0.0:
            continue
        for c in range(2):
            mvy = 1 if c == 0 else -1
            py = qy if c == 0 else 1.0 - qy
            if py == 0.0:
                continue
            nx = dx - mvx
            ny = dy - mvy
            if nx < 0 or ny < 0:
                nx += 1
                ny += 1
                ncx[0] = 0
                ncy[0] = 0
                for i in range(1, k):
                    ncx[i] = cx[i - 1]
                    ncy[i] = cy[i - 1]
            else:
                ncx[:] = cx
                ncy[:] = cy
            if nx > k + 1 or ny > k + 1:
                return -1
            if nx < k and ncx[nx] < m:
                ncx[nx] += 1
            if ny < k and ncy[ny] < m:
                ncy[ny] += 1
            out_keys[cnt] = _encode(nx, ny, ncx, ncy, k, b)
            out_probs[cnt] = px * py
            cnt += 1
    return cnt


@numba.njit(cache=True)
def _explore_hashed(start, k, m, p, budget):
    seen = {start: 0}
    queue = np.empty(1024, np.int64)
    queue[0] = start
    head, tail = 0, 1
    succ = np.empty(4, np.int64)
    prob = np.empty(4, np.float64)
    sig = np.empty(2, np.float64)
    while head < tail:
        key = queue[head]
        head += 1
        cnt = _successors(key, k, m, p, succ, prob, sig)
        if cnt < 0:
            return queue[:0], key
        for j in range(cnt):
            s = succ[j]
            if s not in seen:
                if tail >= budget:
                    return queue[:tail], -2
                seen[s] = 0
                if tail == queue.shape[0]:
                    bigger = np.empty(2 * tail, np.int64)
                    bigger[:tail] = queue
                    queue = bigger
                queue[tail] = s
                tail += 1
    return queue[:tail], -1


@numba.njit(cache=True)
def _explore_dense(start, k, m, p, budget, key_space):
    seen = np.zeros(key_space, np.bool_)
    seen[start] = True
    queue = np.empty(1024, np.int64)
    queue[0] = start
    head, tail = 0, 1
    succ = np.empty(4, np.int64)
    prob = np.empty(4, np.float64)
    sig = np.empty(2, np.float64)
    while head < tail:
        key = queue[head]
        head += 1
        cnt = _successors(key, k, m, p, succ, prob, sig)
        if cnt < 0:
            return queue[:0], key
        for j in range(cnt):
            s = succ[j]
            if not seen[s]:
                if tail >= budget:
                    return queue[:tail], -2
                seen[s] = True
                if tail == queue.shape[0]:
                    bigger = np.empty(2 * tail, np.int64)
                    bigger[:tail] = queue
                    queue = bigger
                queue[tail] = s
                tail += 1
    return queue[:tail], -1


@numba.njit(cache=True)
def _rows(keys, k, m, p):
    n = keys.shape[0]
    succ = np.full((n, 4), -1, np.int64)
    prob = np.zeros((n, 4), np.float64)
    sig = np.empty((n, 2), np.float64)
    for i in range(n):
        _successors(keys[i], k, m, p, succ[i], prob[i], sig[i])
    return succ, prob, sig


@dataclass
class ChainModel:
    """Transition matrix plus per-state drift of each walker.

    ``keys`` (sorted packed states) and ``params`` are present for chains built
    by :func:`enumerate_reachable`; hand-made test chains may omit them.
    """

    matrix: sp.csr_matrix
    sigma: np.ndarray
    sigma_y: np.ndarray | None = None
    keys: np.ndarray | None = None
    params: ChainParams | None = None

    @classmethod
    def from_matrix(cls, matrix, sigma, sigma_y=None) -> "ChainModel":
        return cls(sp.csr_matrix(np.asarray(matrix, dtype=np.float64)), np.asarray(sigma, float), sigma_y)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def state(self, i: int) -> TruncatedState:
        return TruncatedState.decode(int(self.keys[i]), self.params)

    def index(self, state: TruncatedState) -> int:
        key = state.encode(self.params)
        i = int(np.searchsorted(self.keys, key))
        if i >= len(self.keys) or self.keys[i] != key:
            raise KeyError(state)
        return i

    def write_csv(self, path) -> None:
        """Header line with parameters, then ``(state, successor, probability)`` triplets."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            prm = self.params
            w.writerow(["# k", prm.k if prm else "", "m", prm.m if prm else "",
                        "p", repr(prm.p) if prm else "", "states", self.size])
            w.writerow(["state_index", "successor_index", "probability"])
            for i in order:
                w.writerow([int(coo.row[i]), int(coo.col[i]), repr(float(coo.data[i]))])


def enumerate_reachable(
    params: ChainParams,
    initial: TruncatedState | None = None,
    budget: int = DEFAULT_STATE_BUDGET,
    dense: bool | None = None,
) -> ChainModel:
    """Breadth-first closure of the chain from ``initial`` (default: the time-zero state).

    States are indexed in increasing key order, so the model does not depend
    on traversal order.  Dense bitmap bookkeeping is used when the key space is
    small enough (or ``dense`` forces the choice), hashing otherwise.
    """
    k, m, p = params.k, params.m, float(params.p)
    start = (initial or TruncatedState.initial(k)).encode(params)
    if dense is None:
        dense = params.key_space <= DENSE_KEY_LIMIT
    if dense:
        found, flag = _explore_dense(start, k, m, p, budget, params.key_space)
    else:
        found, flag = _explore_hashed(start, k, m, p, budget)
    if flag == -2:
        raise StateBudgetExceeded(len(found), budget)
    if flag >= 0:
        raise AssertionError(f"offset beyond k+1 reached from {TruncatedState.decode(int(flag), params)}")
    keys = np.sort(found)
    succ_keys, probs, sig = _rows(keys, k, m, p)
    valid = succ_keys >= 0
    rows = np.repeat(np.arange(len(keys)), valid.sum(axis=1))
    cols = np.searchsorted(keys, succ_keys[valid])
    matrix = sp.csr_matrix((probs[valid], (rows, cols)), shape=(len(keys), len(keys)))
    return ChainModel(matrix, sig[:, 0].copy(), sig[:, 1].copy(), keys, params)


def closed_class(model: ChainModel) -> np.ndarray:
    """Indices of the unique closed communicating class."""
    ncomp, labels = connected_components(model.matrix, directed=True, connection="strong")
    coo = model.matrix.tocoo()
    leaks = coo.data > 0
    leaving = labels[coo.row[leaks]] != labels[coo.col[leaks]]
    is_closed = np.ones(ncomp, dtype=bool)
    is_closed[labels[coo.row[leaks][leaving]]] = False
    closed = np.flatnonzero(is_closed)
    if len(closed) != 1:
        reps = [int(np.flatnonzero(labels == c)[0]) for c in closed]
        raise ClosedClassError(reps)
    return np.flatnonzero(labels == closed[0])


def stationary_distribution(
    model: ChainModel, method: str = "auto", tolerance: float = 1e-14, max_iter: int = 2_000_000
) -> tuple[np.ndarray, np.ndarray]:
    """``(indices, pi)`` on the closed class, solving ``pi P = pi`` with ``sum(pi) = 1``.

    ``direct`` factorises the system with one balance equation replaced by the
    normalisation; ``power`` iterates ``pi <- pi (I + P) / 2`` until the L1 change
    drops below ``tolerance``.  ``auto`` factorises classes up to
    ``DIRECT_LIMIT`` states; LU fill-in makes larger ones impractical.
    """
    idx = closed_class(model)
    sub = model.matrix[idx][:, idx]
    n = len(idx)
    if method == "auto":
        method = "direct" if n <= DIRECT_LIMIT else "power"
    if method == "direct":
        a = (sub.T - sp.identity(n, format="csr")).tocsr()
        a = sp.vstack([a[:-1], sp.csr_matrix(np.ones((1, n)))]).tocsc()
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = splu(a, permc_spec="MMD_AT_PLUS_A").solve(rhs)
        return idx, pi
    if method == "power":
        pt = sub.T.tocsr()
        pi = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            nxt = 0.5 * (pi + pt @ pi)
            nxt /= nxt.sum()
            delta = float(np.abs(nxt - pi).sum())
            pi = nxt
            if delta < tolerance:
                return idx, pi
        raise ConvergenceError(max_iter, delta)
    raise ValueError(f"unknown method {method!r}")


def stationary_speed(model: ChainModel, walker: str = "x", method: str = "auto") -> float:
    """``sum_y pi(y) sigma(y)`` over the closed class."""
    idx, pi = stationary_distribution(model, method)
    sigma = model.sigma if walker == "x" else model.sigma_y
    return float(pi @ sigma[idx])


def stationary_residual(model: ChainModel, method: str = "auto") -> float:
    idx, pi = stationary_distribution(model, method)
    sub = model.matrix[idx][:, idx]
    return float(np.abs(sub.T @ pi - pi).sum())


def iterated_drift_speed(
    model: ChainModel, tolerance: float = 1e-12, max_iter: int = 1_000_000, walker: str = "x"
) -> float:
    """Deterministic speed by repeated averaging of drifts.

    Starts from the drift vector and applies the lazy kernel ``(I + P)/2``
    until the spread of the iterate falls below ``tolerance``.  The speed lies
    between the minimum and maximum of every iterate, so the midpoint is
    within ``tolerance / 2`` of it.
    """
    s = np.array(model.sigma if walker == "x" else model.sigma_y, dtype=np.float64)
    p = model.matrix
    spread = float(s.max() - s.min())
    for _ in range(max_iter):
        if spread < tolerance:
            return float((s.max() + s.min()) / 2)
        s = 0.5 * (s + p @ s)
        spread = float(s.max() - s.min())
    if spread < tolerance:
        return float((s.max() + s.min()) / 2)
    raise ConvergenceError(max_iter, spread)


def chain_speed(params: ChainParams, solver: str = "direct", tolerance: float = 1e-12,
                budget: int = DEFAULT_STATE_BUDGET) -> tuple[float, float]:
    """``(v_k, residual)`` for one parameter set; residual is ``||pi P - pi||_1`` or the final spread."""
    model = enumerate_reachable(params, budget=budget)
    if solver == "direct":
        return stationary_speed(model), stationary_residual(model)
    if solver == "iterate":
        return iterated_drift_speed(model, tolerance), tolerance
    raise ValueError(f"unknown solver {solver!r}")


# --- non-monotonicity ---------------------------------------------------------


@dataclass
class DropCertificate:
    p1: float
    p2: float
    v1: float
    v2: float

    @property
    def margin(self) -> float:
        return self.v1 - self.v2


def largest_drop(grid, values) -> DropCertificate | None:
    """The pair ``p1 < p2`` maximising ``v(p1) - v(p2)``, or ``None`` if no drop."""
    best = None
    arg_max = 0
    for j in range(1, len(values)):
        if values[j - 1] > values[arg_max]:
            arg_max = j - 1
        drop = values[arg_max] - values[j]
        if drop > 0 and (best is None or drop > best[0]):
            best = (drop, arg_max, j)
    if best is None:
        return None
    _, i, j = best
    return DropCertificate(float(grid[i]), float(grid[j]), float(values[i]), float(values[j]))


@dataclass
class ScanResult:
    k: int
    m: int
    grid: np.ndarray
    curve: np.ndarray
    certificate: DropCertificate | None


def nonmonotonicity_scan(k: int, m: int, p_grid, solver: str = "direct",
                         budget: int = DEFAULT_STATE_BUDGET) -> ScanResult:
    grid = np.asarray(p_grid, dtype=np.float64)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("p grid must be strictly increasing")
    if np.any(grid <= 0.5) or np.any(grid >= 1.0):
        raise ValueError("p grid must lie inside (1/2, 1)")
    curve = np.array([chain_speed(ChainParams(k, m, p), solver, budget=budget)[0] for p in grid])
    return ScanResult(k, m, grid, curve, largest_drop(grid, curve))


# --- Monte Carlo of the truncated walk (independent of the enumerated chain) --


@numba.njit(cache=True)
def _simulate_truncated(kx, ky, k, m, p, steps, rec):
    size = steps + 2 * k + 8
    origin = k + 4
    cx = np.zeros(size, np.uint8)
    cy = np.zeros(size, np.uint8)
    cx[origin] = 1
    cy[origin] = 1
    x = 0
    y = 0
    front = 0
    for n in range(steps):
        if front - x >= k:
            qx = 1.0
        elif cy[x + origin] >= m:
            qx = p
        else:
            qx = 0.5
        if front - y >= k:
            qy = 1.0
        elif cx[y + origin] >= m:
            qy = p
        else:
            qy = 0.5
        x = x - 1 if uniform(kx, n) < 1.0 - qx else x + 1
        y = y - 1 if uniform(ky, n) < 1.0 - qy else y + 1
        if cx[x + origin] < m:
            cx[x + origin] += 1
        if cy[y + origin] < m:
            cy[y + origin] += 1
        if x > front:
            front = x
        if y > front:
            front = y
        rec[n + 1] = x


def simulate_truncated(params: ChainParams, steps: int, seed: int, batches: int = 100) -> tuple[float, float]:
    """Speed of X in a direct simulation of the truncated walk, with batch-means stderr."""
    kx = np.uint64(stream_key(seed & MASK64, 21))
    ky = np.uint64(stream_key(seed & MASK64, 22))
    rec = np.zeros(steps + 1, dtype=np.int64)
    _simulate_truncated(kx, ky, params.k, params.m, float(params.p), steps, rec)
    return batch_means_speed(rec, batches)
