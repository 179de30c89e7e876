import numpy as np
import pytest

from errors import InvalidParameterError, TooManyLoadsError
from oslc_opt import (OslcInstance, cost_of, epsilon_bound, ga_solve, solution_for, solve_brute_force,
                      solve_relaxed, verify_equilibrium_optimality)

ONES = np.ones(2)


def fixture(ell):
    """Two unit buses (D = 4, alpha = 1/c), loads c^d = (0.001, 0.004), d_bar = (0.2, 0.2)"""
    return OslcInstance(ONES, ONES, ONES, [ell / 2, ell / 2], [0.001, 0.004], [0.2, 0.2])


@pytest.mark.parametrize('sigma,expected', [((1, 1), 0.005), ((0, 0), 0.02), ((1, 0), 0.006), ((0, 1), 0.009)])
def test_cost_of_fixed_vectors(sigma, expected):
    assert cost_of(sigma, fixture(-0.4)) == pytest.approx(expected)


def test_cost_of_balanced_system():
    assert cost_of((0, 0), fixture(0.0)) == 0.0


def test_solution_for_balances_power():
    instance = fixture(-0.1)
    solution = solution_for((1, 0), instance)
    assert solution.balance_residual(instance) < 1e-12
    np.testing.assert_allclose(solution.p_mech, [0.025, 0.025])
    np.testing.assert_allclose(solution.d_unc, [-0.025, -0.025])


@pytest.mark.parametrize('ell,sigma,cost', [(-0.4, (1, 1), 0.005), (-0.1, (0, 0), 0.00125)])
def test_brute_force(ell, sigma, cost):
    solution = solve_brute_force(fixture(ell))
    assert solution.sigma == sigma
    assert solution.cost == pytest.approx(cost)
    assert solution.solver == 'brute'


def test_brute_force_without_loads():
    instance = OslcInstance(ONES, ONES, ONES, [-0.1, -0.1], [], [])
    solution = solve_brute_force(instance)
    assert solution.sigma == ()
    assert solution.cost == pytest.approx(0.5 * 4 * (0.2 / 4) ** 2)


def test_brute_force_limit():
    instance = OslcInstance(ONES, ONES, ONES, [0.0, 0.0], np.full(25, 0.01), np.full(25, 0.1))
    with pytest.raises(TooManyLoadsError):
        solve_brute_force(instance)


def test_relaxed_on_first_breakpoint():
    relaxed = solve_relaxed(fixture(-0.1))
    assert relaxed.multiplier == pytest.approx(0.005)
    np.testing.assert_allclose(relaxed.demand, [0.08, 0.0], atol=1e-15)
    assert relaxed.cost == pytest.approx(0.00045)
    assert relaxed.on_breakpoint
    assert max(relaxed.kkt_residuals.values()) < 1e-9


def test_relaxed_on_second_breakpoint():
    relaxed = solve_relaxed(fixture(-0.4))
    assert relaxed.multiplier == pytest.approx(0.02)
    np.testing.assert_allclose(relaxed.demand, [0.2, 0.12], atol=1e-12)
    assert max(relaxed.kkt_residuals.values()) < 1e-9


def test_relaxed_balanced_system():
    relaxed = solve_relaxed(fixture(0.0))
    assert relaxed.multiplier == 0.0
    np.testing.assert_array_equal(relaxed.demand, [0.0, 0.0])
    assert relaxed.cost == 0.0


def test_relaxed_between_breakpoints():
    relaxed = solve_relaxed(fixture(-0.25))
    assert not relaxed.on_breakpoint
    assert relaxed.multiplier == pytest.approx(0.0125)
    np.testing.assert_allclose(relaxed.demand, [0.2, 0.0])
    assert relaxed.rounded_sigma(fixture(-0.25)) == (1, 0)


def test_epsilon_bound():
    assert epsilon_bound(fixture(-0.1)) == pytest.approx(0.005)
    single = OslcInstance([1.0], [1.0], [1.0], [0.0], [0.002], [0.1])
    assert epsilon_bound(single) == pytest.approx(0.0025)
    assert epsilon_bound(OslcInstance([1.0], [1.0], [1.0], [0.0], [], [])) == 0.0


def test_certificate_for_switched_equilibrium():
    certificate = verify_equilibrium_optimality((1, 0), fixture(-0.1))
    assert certificate.gap == pytest.approx(0.001)
    assert certificate.epsilon == pytest.approx(0.005)
    assert certificate.passed
    assert certificate.q_hat == pytest.approx(0.12)
    assert certificate.predicted_relaxation_gap == pytest.approx(0.0018)
    assert certificate.relaxation_gap == pytest.approx(0.0018)


def test_certificate_for_optimal_equilibria():
    certificate = verify_equilibrium_optimality((0, 0), fixture(-0.1))
    assert certificate.gap == 0.0
    assert certificate.q_hat == pytest.approx(-0.08)
    assert certificate.relaxation_gap == pytest.approx(0.0008)
    assert verify_equilibrium_optimality((1, 1), fixture(-0.4)).gap == 0.0


def test_unlinked_droop_still_certifies():
    instance = OslcInstance(ONES, ONES, [2.0, 2.0], [-0.05, -0.05], [0.001, 0.004], [0.2, 0.2])
    certificate = verify_equilibrium_optimality((1, 0), instance)
    assert not certificate.optimality_linked


def test_instance_validation():
    with pytest.raises(InvalidParameterError):
        OslcInstance(ONES, ONES, ONES, [0.0, 0.0], [0.001], [0.2, 0.2])
    with pytest.raises(InvalidParameterError):
        OslcInstance(ONES, ONES, ONES, [0.0, 0.0], [0.001, -1.0], [0.2, 0.2])


def test_ga_is_deterministic_and_finds_small_optimum():
    instance = fixture(-0.4)
    first = ga_solve(instance, seed=7, generations=30, population=16)
    second = ga_solve(instance, seed=7, generations=30, population=16)
    assert first.sigma == second.sigma
    assert first.sigma == solve_brute_force(instance).sigma
    assert first.solver == 'ga'


def test_ga_on_larger_instance_is_near_brute_force(rng):
    n = 10
    instance = OslcInstance(np.ones(n), np.ones(n), np.ones(n), np.full(n, -0.08),
                            rng.uniform(0.001, 0.01, n), rng.uniform(0.05, 0.3, n))
    best = solve_brute_force(instance)
    found = ga_solve(instance, seed=1, generations=80, population=48)
    assert found.cost >= best.cost - 1e-15
    assert found.cost <= best.cost + epsilon_bound(instance)


def test_relaxed_off_breakpoint_rounds_to_exact_optimum(rng):
    for _ in range(150):
        n_buses = int(rng.integers(1, 6))
        n_loads = int(rng.integers(1, 10))
        gen_cost = rng.uniform(0.5, 2.0, n_buses)
        damping = rng.uniform(0.5, 2.0, n_buses)
        magnitudes = rng.uniform(0.05, 0.3, n_loads)
        gamma = np.sort(rng.uniform(0.005, 0.05, n_loads))
        load_cost = gamma * magnitudes

        # pick the multiplier strictly inside a gap between breakpoints, then the load that produces it
        slot = int(rng.integers(0, n_loads + 1))
        if slot == 0:
            multiplier = gamma[0] - float(rng.uniform(0.001, 0.05))
        elif slot == n_loads:
            multiplier = gamma[-1] + float(rng.uniform(0.001, 0.05))
        else:
            multiplier = 0.5 * (gamma[slot - 1] + gamma[slot])
        k_total = float(np.sum(1.0 / gen_cost + damping))
        ell = -k_total * multiplier - float(np.sum(magnitudes[gamma < multiplier]))
        instance = OslcInstance(gen_cost, damping, 1.0 / gen_cost, np.full(n_buses, ell / n_buses),
                                load_cost, magnitudes)

        relaxed = solve_relaxed(instance)
        assert not relaxed.on_breakpoint
        assert relaxed.multiplier == pytest.approx(multiplier, rel=1e-9, abs=1e-12)
        np.testing.assert_allclose(relaxed.demand, np.where(gamma < multiplier, magnitudes, 0.0), atol=1e-12)
        rounded = relaxed.rounded_sigma(instance)
        best = solve_brute_force(instance)
        assert cost_of(rounded, instance) == pytest.approx(best.cost, rel=1e-9, abs=1e-15)
        assert relaxed.cost == pytest.approx(best.cost, rel=1e-9, abs=1e-15)
