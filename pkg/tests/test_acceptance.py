"""End-to-end runs over longer horizons; select with `pytest -m slow`"""
import numpy as np
import pytest

from conftest import random_tree_network
from consensus import CommGraph
from diagnostics import detect_chattering, frequency_support_comparison, min_dwell
from equilibrium import equilibria_adapted, solve_hysteresis_equilibrium
from grid_model import BusParams, ContinuousState, LineParams, build_network, flow_field
from hybrid_sim import SimConfig, simulate
from load_control import (ControllerMode, ControllerSet, HysteresisConfig, StaticSubMode, make_design1,
                          make_design2)
from oslc_opt import OslcInstance, verify_equilibrium_optimality

pytestmark = pytest.mark.slow


def test_sampled_static_switching_chatters(single_bus, static_controllers):
    trajectory = simulate(single_bus(-0.15), static_controllers(StaticSubMode.SAMPLED), None,
                          SimConfig(horizon=5.0))
    assert len(trajectory.events) >= 50
    assert detect_chattering(trajectory).flagged


def linked_network(rng, n_buses):
    """Random tree whose generator droop equals the inverse generation cost"""
    buses = []
    for load in rng.uniform(-0.3, 0.05, n_buses):
        droop = float(rng.uniform(0.5, 2.0))
        buses.append(BusParams(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)), droop,
                               float(rng.uniform(0.5, 2.0)), float(load), cost=1.0 / droop))
    lines = [LineParams(int(rng.integers(0, j)), j, float(rng.uniform(0.5, 5.0))) for j in range(1, n_buses)]
    return build_network(buses, lines)


def test_optimal_equilibria_are_epsilon_optimal(rng):
    checked = 0
    for _ in range(500):
        n_buses = int(rng.integers(2, 13))
        model = linked_network(rng, n_buses)
        buses = sorted(rng.permutation(n_buses)[:int(rng.integers(1, n_buses + 1))].tolist())
        loads = make_design2(buses, rng.uniform(0.001, 0.01, len(buses)), rng.uniform(0.05, 0.3, len(buses)),
                             model.aggregate_damping)
        controllers = ControllerSet(ControllerMode.OPTIMAL, loads)
        instance = OslcInstance.from_model(model, controllers)
        for point in equilibria_adapted(model, controllers):
            certificate = verify_equilibrium_optimality(point.sigma, instance)
            assert certificate.gap <= certificate.epsilon + 1e-12
            assert certificate.relaxed_cost <= certificate.optimum + 1e-15
            assert certificate.optimum <= certificate.cost + 1e-15
            if certificate.on_breakpoint:
                assert certificate.relaxation_gap == pytest.approx(certificate.predicted_relaxation_gap, abs=1e-9)
            else:
                assert certificate.gap == pytest.approx(0.0, abs=1e-15)
            checked += 1
    assert checked >= 400


def test_hysteresis_existence_on_many_instances(rng):
    for _ in range(1000):
        n_buses = int(rng.integers(1, 6))
        model = random_tree_network(rng, n_buses, rng.uniform(-0.5, 0.3, size=n_buses))
        buses = rng.permutation(n_buses)[:int(rng.integers(1, n_buses + 1))]
        loads = []
        for bus in buses:
            magnitude = float(rng.uniform(0.05, 0.5))
            omega_off = float(rng.uniform(0.01, 0.1))
            width = magnitude / model.aggregate_damping * float(rng.uniform(1.0, 2.0))
            loads.append(HysteresisConfig(int(bus), omega_off, omega_off + width, magnitude))
        report = solve_hysteresis_equilibrium(model, ControllerSet(ControllerMode.HYSTERESIS, loads))
        assert report.exists and report.certificate == 'constructive'
        assert report.iterations <= len(report.trace[0].pi)
        point = report.point
        state = ContinuousState(point.eta, np.full(n_buses, point.omega), point.p_mech)
        assert np.max(np.abs(flow_field(model, state, point.demand).to_vector())) < 1e-9


def test_distributed_optimal_run_matches_centralized_equilibrium(two_bus, design2_controllers):
    model = two_bus((-0.2, -0.2))
    controllers = design2_controllers()
    graph = CommGraph.from_network(model)
    trajectory = simulate(model, controllers, None, SimConfig(horizon=100.0, dt=0.01), graph)
    (expected,) = equilibria_adapted(model, controllers)
    assert tuple(trajectory.sigma[-1]) == expected.sigma == (1, 1)
    np.testing.assert_allclose(trajectory.omega[-1], expected.omega, atol=1e-5)
    np.testing.assert_allclose(trajectory.power_command[-1], [0.4, 0.4], atol=1e-5)
    assert min_dwell(trajectory).positive


def test_distributed_run_with_light_load_keeps_only_cheap_load_on(two_bus, design2_controllers):
    model = two_bus((-0.05, -0.05))
    controllers = design2_controllers()
    graph = CommGraph.from_network(model)
    trajectory = simulate(model, controllers, None, SimConfig(horizon=100.0, dt=0.01), graph)
    (expected,) = equilibria_adapted(model, controllers)
    assert tuple(trajectory.sigma[-1]) == expected.sigma == (1, 0)
    np.testing.assert_allclose(trajectory.omega[-1], -0.025, atol=1e-5)
    np.testing.assert_allclose(trajectory.power_command[-1], [0.1, 0.1], atol=1e-5)
    assert not any(event.load == 1 for event in trajectory.events)
    assert min_dwell(trajectory).positive


def test_three_bus_adapted_loads_reduce_frequency_excursion():
    buses = [BusParams(1.0, 1.0, 1.0, 1.0, load) for load in (-0.2, -0.1, 0.0)]
    model = build_network(buses, [LineParams(0, 1, 2.0), LineParams(1, 2, 2.0)])
    omega_off = [0.02, 0.03]
    pc_lower = make_design1(omega_off, model.aggregate_damping)
    loads = [HysteresisConfig(bus, off, off + 0.02, 0.1, pc_lower=float(lower))
             for bus, off, lower in zip((0, 2), omega_off, pc_lower)]
    controllers = ControllerSet(ControllerMode.ADAPTED, loads)
    comparison = frequency_support_comparison(model, controllers, None, SimConfig(horizon=30.0, dt=0.005))
    assert comparison.improved
    assert comparison.peak_enabled < comparison.peak_disabled
