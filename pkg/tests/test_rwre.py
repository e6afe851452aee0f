import math

import numpy as np
import pytest

from merw.core import CookieRule, run_with_keys, walker_keys
from merw.rwre import (
    ArrayEnvironment,
    ConstantEnvironment,
    InducedEnvironment,
    annealed_backtrack_mc,
    backtrack_bound,
    closed_forms,
    coupled_induced_environment,
    escape_moment_mc,
    intersection_environment,
    quenched_backtrack_mc,
    quenched_backtrack_prob,
    sample_environment,
    simulate_rwre,
    speed_upper_bounds,
)

# --- closed forms ------------------------------------------------------------


def test_closed_forms_half():
    c = closed_forms(0.5)
    assert c.E_rho == 1.0 and c.speed == 0.0 and c.E_inv_omega == 2.0


def test_closed_forms_three_quarters():
    c = closed_forms(0.75)
    assert c.E_rho == pytest.approx(0.0208333333 + 0.9375, abs=1e-9)
    assert c.speed == pytest.approx(0.03125 / 1.46875, rel=1e-12)
    assert c.speed == pytest.approx(0.0212766, abs=1e-7)


def test_two_speed_expressions_agree():
    rng = np.random.default_rng(3)
    for p in rng.uniform(0.5, 1.0, 1000):
        c = closed_forms(p)
        assert c.speed == pytest.approx(c.speed_simplified, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("p", np.linspace(0.51, 0.99, 25))
def test_closed_form_ranges(p):
    c = closed_forms(p)
    assert 0 < c.E_rho < 1 and c.speed > 0


@pytest.mark.parametrize("p", [0.49, 1.0, 1.2])
def test_p_outside_domain_rejected(p):
    with pytest.raises(ValueError):
        closed_forms(p)


@pytest.mark.parametrize(
    "p, expected", [(0.75, (0.5, 0.2)), (0.5, (0.0, 0.0)), (0.95, (0.9, 0.310345))]
)
def test_speed_upper_bounds(p, expected):
    b1, b2 = speed_upper_bounds(p)
    assert b1 == pytest.approx(expected[0], abs=1e-12)
    assert b2 == pytest.approx(expected[1], abs=1e-6)


def test_second_bound_tighter():
    for p in np.linspace(0.51, 0.99, 49):
        b1, b2 = speed_upper_bounds(p)
        assert b2 < b1


def test_backtrack_bound_values():
    assert backtrack_bound(0.75, 50) == pytest.approx(2 * (23 / 24) ** 50)
    assert backtrack_bound(0.75, 50) == pytest.approx(0.238, abs=5e-4)
    assert backtrack_bound(0.75, 0) == 2.0


# --- environments ------------------------------------------------------------


@pytest.mark.parametrize("p", [0.6, 0.75, 0.9])
def test_environment_frequency(p):
    n = 10**6
    env = sample_environment(p, n, 5)
    q = (1 - p) ** 2
    freq = np.mean(env.omega == p)
    assert abs(freq - q) <= 4 * math.sqrt(q * (1 - q) / n)
    assert set(np.unique(env.omega)) <= {0.5, p}


def test_environment_half_is_constant():
    env = sample_environment(0.5, 1000, 1)
    assert np.all(env.omega == 0.5)


def test_environment_deterministic_and_lazy():
    a = sample_environment(0.7, 5000, 9)
    b = sample_environment(0.7, 5000, 9)
    assert np.array_equal(a.omega, b.omega)
    assert np.array_equal(a.values(100, 199), a.omega[100:200])
    assert not np.array_equal(a.omega, sample_environment(0.7, 5000, 10).omega)


def test_array_environment_fill():
    env = ArrayEnvironment(np.array([0.9, 0.8]), lo=3, fill=0.5)
    assert list(env.values(2, 5)) == [0.5, 0.9, 0.8, 0.5]


# --- quenched walk -----------------------------------------------------------


def test_rwre_all_right():
    run = simulate_rwre(ConstantEnvironment(1.0), 1000, 0, record=True)
    assert run.position == 1000 and np.array_equal(run.trajectory, np.arange(1001))


def test_rwre_symmetric():
    run = simulate_rwre(ConstantEnvironment(0.5), 10**6, 0)
    assert abs(run.speed) < 5 / math.sqrt(10**6)


def test_rwre_lazy_environment_extends_both_ways():
    env = ConstantEnvironment(0.5)
    run = simulate_rwre(env, 200_000, 4, record=True)
    assert run.trajectory.max() > 256 or run.trajectory.min() < -256
    assert set(np.abs(np.diff(run.trajectory))) == {1}


def test_rwre_constant_drift_speed():
    run = simulate_rwre(ConstantEnvironment(0.7), 10**6, 1)
    assert run.speed == pytest.approx(0.4, abs=5 / math.sqrt(10**6))


# --- hitting probabilities ---------------------------------------------------


def test_quenched_symmetric_ruin():
    assert quenched_backtrack_prob(ConstantEnvironment(0.5), 1) == pytest.approx(0.5)
    # gambler's ruin on {-k, .., 1}: P(hit -k first from 0) = 1/(k+1)
    assert quenched_backtrack_prob(ConstantEnvironment(0.5), 9) == pytest.approx(0.1)


def test_quenched_all_right_never_backtracks():
    assert quenched_backtrack_prob(ConstantEnvironment(1.0), 5) == 0.0


def test_quenched_rejects_zero_sites():
    with pytest.raises(ValueError):
        quenched_backtrack_prob(ConstantEnvironment(0.0), 3)


def _dense_solve(omega, k):
    # unknowns v(-k+1..0); v(-k)=1, v(1)=0
    n = k
    a = np.zeros((n, n))
    b = np.zeros(n)
    for i in range(n):
        w = omega[i]
        a[i, i] = 1.0
        if i + 1 < n:
            a[i, i + 1] = -w
        if i - 1 >= 0:
            a[i, i - 1] = -(1 - w)
        else:
            b[i] = 1 - w
    return np.linalg.solve(a, b)[-1]


def test_quenched_solver_matches_dense_linear_solve():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 40))
        omega = rng.uniform(0.3, 0.95, k)
        env = ArrayEnvironment(omega, lo=-k + 1)
        assert quenched_backtrack_prob(env, k) == pytest.approx(_dense_solve(omega, k), rel=1e-10)


@pytest.mark.slow
def test_quenched_solver_matches_monte_carlo():
    k, fails = 20, 0
    zs = []
    for i in range(100):
        env = InducedEnvironment(0.6, 1000 + i)
        exact = quenched_backtrack_prob(env, k)
        q, se = quenched_backtrack_mc(env, k, 20_000, i)
        sd = math.sqrt(exact * (1 - exact) / 20_000)
        zs.append((q - exact) / sd if sd > 0 else 0.0)
        fails += abs(q - exact) > 3 * sd
    # 3-sigma misses are allowed at the nominal 0.27% rate
    assert fails <= 2
    assert abs(np.mean(zs)) < 3 / math.sqrt(100)


@pytest.mark.parametrize("p, k", [(0.65, 10), (0.75, 30), (0.85, 50)])
def test_annealed_backtrack_below_bound(p, k):
    q, se = annealed_backtrack_mc(p, k, 20_000, 3)
    assert q <= backtrack_bound(p, k) + 3 * se


def test_annealed_matches_mean_of_quenched():
    p, k = 0.55, 4
    q, se = annealed_backtrack_mc(p, k, 200_000, 8)
    exact = np.mean([quenched_backtrack_prob(InducedEnvironment(p, s), k) for s in range(20_000)])
    assert abs(q - exact) < 4 * se + 4 * 0.05 / math.sqrt(20_000)


@pytest.mark.parametrize("p, k, n", [(0.75, 5, 1), (0.75, 10, 3), (0.9, 5, 5), (0.6, 20, 2)])
def test_escape_moment_lower_bound(p, k, n):
    est, se = escape_moment_mc(p, k, n, 2000, 1)
    bound = (1 - min(1.0, backtrack_bound(p, k))) ** n
    assert est >= bound - 3 * se


# --- coupling with the MERW --------------------------------------------------


@pytest.mark.parametrize("p, seed", [(0.6, 1), (0.75, 2), (0.9, 3)])
def test_intersection_environment_dominates_coupled_induced(p, seed):
    rule = CookieRule(2, p)
    kx, ky = walker_keys(seed, 0)
    traj, _ = run_with_keys(rule, 200_000, kx, ky)
    sites, eaten = intersection_environment(traj, 2)
    assert len(sites) > 1000
    xi = np.where(eaten, p, 0.5)
    omega = coupled_induced_environment(traj, kx, ky, p, sites)
    assert np.all(xi >= omega)
    # the coupled environment still has the induced law
    q = (1 - p) ** 2
    assert abs(np.mean(omega == p) - q) <= 4 * math.sqrt(q * (1 - q) / len(sites)) + 1e-12
