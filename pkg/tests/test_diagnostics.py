import numpy as np
import pytest

from consensus import CommGraph, ConsensusState, consensus_steady_state, lyapunov_vc, steady_state_integrators
from diagnostics import (detect_chattering, detect_limit_cycle, frequency_support_comparison, lyapunov_series,
                         min_dwell, peak_frequency_deviation)
from equilibrium import equilibria_adapted, full_equilibrium
from grid_model import ContinuousState
from hybrid_sim import HybridState, SimConfig, SwitchEvent, simulate
from load_control import ControllerMode, ControllerSet, StaticSubMode


def events_at(times, load=3):
    return [SwitchEvent(t, i + 1, load, load, i % 2, 1 - i % 2, 'frequency') for i, t in enumerate(times)]


def test_min_dwell_arithmetic():
    report = min_dwell(events_at([1.0, 1.2, 1.5]))
    assert report.consecutive[3] == pytest.approx(0.2)
    assert report.two_apart[3] == pytest.approx(0.5)
    assert report.positive


def test_min_dwell_without_events():
    report = min_dwell([])
    assert report.consecutive == {}
    assert report.overall is None


def test_quiet_run_is_neither_chattering_nor_cycling(single_bus):
    trajectory = simulate(single_bus(), ControllerSet(ControllerMode.NONE), None, SimConfig(horizon=2.0))
    chattering = detect_chattering(trajectory, sampling_period=0.01)
    assert not chattering.flagged
    assert chattering.min_interval is None
    cycle = detect_limit_cycle(trajectory, window=0.4)
    assert cycle.verdict == 'converged'


def test_sampled_static_chatters(single_bus, static_controllers):
    model = single_bus(-0.15)
    trajectory = simulate(model, static_controllers(StaticSubMode.SAMPLED), None, SimConfig(horizon=5.0))
    report = detect_chattering(trajectory)
    assert report.flagged
    assert report.min_interval == pytest.approx(0.01, abs=1e-9)


def test_hysteresis_run_does_not_chatter(single_bus, limit_cycle_loads):
    model = single_bus(-0.13)
    trajectory = simulate(model, ControllerSet(ControllerMode.HYSTERESIS, limit_cycle_loads), None,
                          SimConfig(horizon=10.0))
    assert not detect_chattering(trajectory, sampling_period=0.01).flagged
    assert min_dwell(trajectory).positive


def test_limit_cycle_against_adapted(single_bus, limit_cycle_loads, adapted_controllers):
    model = single_bus(-0.13)
    config = SimConfig(horizon=30.0)
    cycling = simulate(model, ControllerSet(ControllerMode.HYSTERESIS, limit_cycle_loads), None, config)
    assert detect_limit_cycle(cycling, window=6.0).flagged

    adapted = simulate(model, adapted_controllers, None, config)
    report = detect_limit_cycle(adapted, window=6.0)
    assert report.verdict == 'converged'
    assert report.switches_in_window == (0,)


def test_limit_cycle_needs_two_windows_of_horizon(single_bus, limit_cycle_loads):
    model = single_bus(-0.13)
    trajectory = simulate(model, ControllerSet(ControllerMode.HYSTERESIS, limit_cycle_loads), None,
                          SimConfig(horizon=2.0))
    report = detect_limit_cycle(trajectory, window=1.5)
    assert report.verdict == 'insufficient-horizon'
    assert not report.flagged
    assert report.switches_in_window == ()
    assert report.to_dict()['verdict'] == 'insufficient-horizon'


def test_lyapunov_is_zero_at_equilibrium(single_bus, adapted_controllers):
    model = single_bus(-0.13)
    (point,) = equilibria_adapted(model, adapted_controllers)
    initial = HybridState(ContinuousState(point.eta, [point.omega], point.p_mech), point.sigma)
    trajectory = simulate(model, adapted_controllers, initial, SimConfig(horizon=1.0))
    report = lyapunov_series(trajectory, point)
    assert np.max(np.abs(report.values)) < 1e-20


def test_lyapunov_decreases_after_settling(single_bus, adapted_controllers):
    model = single_bus(-0.13)
    trajectory = simulate(model, adapted_controllers, None, SimConfig(horizon=20.0))
    (point,) = equilibria_adapted(model, adapted_controllers)
    report = lyapunov_series(trajectory, point)
    assert report.settling_time == trajectory.events[-1].time
    assert report.monotone
    assert report.max_jump_delta < 1e-12
    assert report.values[-1] < report.values[0]


def test_lyapunov_on_two_bus_network(two_bus):
    model = two_bus((-0.3, -0.1))
    trajectory = simulate(model, ControllerSet(ControllerMode.NONE), None, SimConfig(horizon=25.0))
    point = full_equilibrium(model, 0.1)
    report = lyapunov_series(trajectory, point)
    assert report.monotone
    assert set(report.components) == {'V_F', 'V_P', 'V_M'}
    assert report.values[-1] < 1e-10


def test_lyapunov_includes_consensus_term_on_distributed_run(two_bus):
    model = two_bus((-0.3, -0.1))
    graph = CommGraph.from_network(model)
    trajectory = simulate(model, ControllerSet(ControllerMode.NONE), None, SimConfig(horizon=80.0, dt=0.01), graph)
    report = lyapunov_series(trajectory, full_equilibrium(model, 0.1))
    assert set(report.components) == {'V_F', 'V_P', 'V_M', 'V_c'}

    vc = report.components['V_c']
    start = lyapunov_vc(graph, ConsensusState.zeros(graph), consensus_steady_state(graph, model.p_load),
                        steady_state_integrators(graph, model.p_load, np.zeros(graph.n_links)))
    assert vc[0] == pytest.approx(start)
    assert vc[0] == pytest.approx(0.165)
    assert np.max(np.diff(vc)) <= 1e-10
    assert vc[-1] < 1e-10
    assert report.values[-1] < 1e-10


def test_loads_reduce_peak_deviation(single_bus, adapted_controllers):
    model = single_bus(-0.13)
    comparison = frequency_support_comparison(model, adapted_controllers, None, SimConfig(horizon=10.0))
    assert comparison.improved
    assert comparison.peak_disabled == pytest.approx(
        peak_frequency_deviation(simulate(model, adapted_controllers.disabled(), None, SimConfig(horizon=10.0))))
