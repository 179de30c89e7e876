import numpy as np
import pytest

from errors import InvalidParameterError
from load_control import (ControllerMode, ControllerSet, HysteresisConfig, StaticSwitchConfig, check_design1,
                          design2_ranking, guard_value, in_flow_set, in_jump_set, jump_update, make_design1,
                          make_design2, static_demand, static_filippov_interval, static_level, switch_vectors,
                          validate_design)

BAND = HysteresisConfig(0, omega_off=0.04, omega_on=0.06, magnitude=0.1, pc_lower=0.08, pc_upper=0.12, cost=0.01)
STATIC = StaticSwitchConfig(0, omega_upper=0.05, omega_lower=-0.05, d_upper=0.2, d_lower=-0.1)


def test_static_policy_levels():
    assert static_demand(0.0, STATIC) == 0.0
    assert static_demand(0.06, STATIC) == 0.2
    assert static_demand(-0.06, STATIC) == -0.1
    assert static_level(0.06, STATIC) == 1
    assert static_level(-0.05, STATIC) == -1


def test_filippov_interval_on_surfaces():
    assert static_filippov_interval(0.05, STATIC) == (0.0, 0.2)
    assert static_filippov_interval(-0.05, STATIC) == (-0.1, 0.0)
    assert static_filippov_interval(-0.06, STATIC) == (-0.1, -0.1)


def test_hysteresis_jump_set():
    mode = ControllerMode.HYSTERESIS
    assert in_jump_set(0.07, 0.0, 0, BAND, mode)
    assert jump_update(0.07, 0.0, 0, BAND, mode) == 1
    assert not in_jump_set(0.05, 0.0, 0, BAND, mode)
    assert in_jump_set(0.04, 0.0, 1, BAND, mode)
    assert not in_jump_set(0.041, 0.0, 1, BAND, mode)


def test_adapted_blocks_switch_off_while_command_is_high():
    mode = ControllerMode.ADAPTED
    assert not in_jump_set(0.03, 0.13, 1, BAND, mode)
    assert in_jump_set(0.03, 0.05, 1, BAND, mode)


def test_optimal_switches_on_from_power_command():
    mode = ControllerMode.OPTIMAL
    assert in_jump_set(0.0, 0.12, 0, BAND, mode)
    assert not in_jump_set(0.0, 0.11, 0, BAND, mode)


@pytest.mark.parametrize('mode', [ControllerMode.HYSTERESIS, ControllerMode.ADAPTED, ControllerMode.OPTIMAL])
@pytest.mark.parametrize('omega,pc', [(0.07, 0.2), (0.02, 0.0), (0.05, 0.1), (0.03, 0.13)])
@pytest.mark.parametrize('sigma', [0, 1])
def test_jump_update_is_idempotent(mode, omega, pc, sigma):
    once = jump_update(omega, pc, sigma, BAND, mode)
    assert jump_update(omega, pc, once, BAND, mode) == once
    assert in_flow_set(omega, pc, once, BAND, mode)


def test_guard_sign_matches_jump_set():
    mode = ControllerMode.ADAPTED
    assert guard_value(0.06, 0.0, 0, BAND, mode) == pytest.approx(0.0)
    assert guard_value(0.05, 0.0, 0, BAND, mode) < 0


def test_flow_set_inside_band_admits_both():
    mode = ControllerMode.HYSTERESIS
    assert in_flow_set(0.05, 0.0, 0, BAND, mode)
    assert in_flow_set(0.05, 0.0, 1, BAND, mode)
    assert not in_flow_set(0.07, 0.0, 0, BAND, mode)


def test_inverted_band_cites_constraint():
    with pytest.raises(InvalidParameterError, match='omega_on > omega_off > 0'):
        ControllerSet(ControllerMode.HYSTERESIS, [HysteresisConfig(0, 0.06, 0.06, 0.1)])


def test_adapted_mode_requires_pc_lower():
    with pytest.raises(InvalidParameterError) as excinfo:
        ControllerSet(ControllerMode.ADAPTED, [HysteresisConfig(0, 0.04, 0.06, 0.1)])
    assert excinfo.value.field == 'pc_lower'


def test_one_load_per_bus():
    with pytest.raises(InvalidParameterError):
        ControllerSet(ControllerMode.HYSTERESIS, [HysteresisConfig(0, 0.04, 0.06, 0.1)] * 2)


def test_design1_boundary_and_check():
    np.testing.assert_allclose(make_design1([0.02], 4.0), [0.08])
    assert not check_design1([0.09], [0.02], 4.0)[0]
    assert check_design1([0.0], [0.02], 4.0)[0]


def test_adapted_design_is_checked_per_load():
    loads = [HysteresisConfig(0, 0.02, 0.06, 0.1, pc_lower=0.08), HysteresisConfig(1, 0.02, 0.06, 0.1, pc_lower=0.09)]
    report = validate_design(ControllerSet(ControllerMode.ADAPTED, loads), 4.0)
    assert not report.passed
    (failure,) = report.failures()
    assert (failure.bus, failure.condition) == (1, 'design1')
    assert failure.value == pytest.approx(0.09)
    assert failure.bound == pytest.approx(0.08)


def test_design2_two_load_thresholds():
    loads = make_design2([0, 1], [0.001, 0.004], [0.2, 0.2], 4.0)
    np.testing.assert_allclose([load.omega_off for load in loads], [0.005, 0.02])
    np.testing.assert_allclose([load.pc_lower for load in loads], [0.02, 0.28])
    np.testing.assert_allclose([load.pc_upper for load in loads], [0.12, 0.38])
    report = validate_design(ControllerSet(ControllerMode.OPTIMAL, loads), 4.0)
    assert report.passed


def test_design2_single_load():
    (load,) = make_design2([0], [0.002], [0.1], 2.0)
    assert load.omega_off == pytest.approx(0.02)
    assert load.pc_lower == pytest.approx(0.04)


def test_design2_ties_broken_by_bus():
    assert design2_ranking([0.01, 0.01], [0.1, 0.1], [5, 3]) == [1, 0]


def test_hysteresis_width_condition_fails_for_narrow_band():
    controllers = ControllerSet(ControllerMode.HYSTERESIS, [HysteresisConfig(0, 0.04, 0.06, 0.1)])
    report = validate_design(controllers, 2.0)
    assert not report.passed
    (failure,) = report.failures()
    assert failure.condition == 'hysteresis_width'
    assert failure.bound == pytest.approx(0.05)


def test_design2_rejects_closed_upper_interval():
    loads = list(make_design2([0, 1], [0.001, 0.004], [0.2, 0.2], 4.0))
    loads[0] = HysteresisConfig(0, loads[0].omega_off, loads[0].omega_on, 0.2, loads[0].pc_lower,
                                loads[0].pc_lower + 0.2, 0.001)
    report = validate_design(ControllerSet(ControllerMode.OPTIMAL, loads), 4.0)
    assert [c.condition for c in report.failures()] == ['design2_pc_upper']


def test_demand_vector():
    controllers = ControllerSet(ControllerMode.HYSTERESIS,
                                [HysteresisConfig(1, 0.04, 0.1, 0.2), HysteresisConfig(0, 0.04, 0.1, 0.3)])
    np.testing.assert_allclose(controllers.demand_vector((1, 1), 2), [0.3, 0.2])
    assert controllers.disabled().n_loads == 0


def test_switch_vectors_are_lexicographic():
    np.testing.assert_array_equal(switch_vectors(2), [[0, 0], [0, 1], [1, 0], [1, 1]])


def random_band(rng, bus=0):
    omega_off = float(rng.uniform(0.01, 0.1))
    pc_lower = float(rng.uniform(0.0, 0.5))
    return HysteresisConfig(bus, omega_off, omega_off + float(rng.uniform(0.01, 0.1)), float(rng.uniform(0.05, 0.3)),
                            pc_lower, pc_lower + float(rng.uniform(0.01, 0.2)), float(rng.uniform(0.001, 0.01)))


@pytest.mark.parametrize('mode', [ControllerMode.HYSTERESIS, ControllerMode.ADAPTED, ControllerMode.OPTIMAL])
def test_flow_and_jump_sets_cover_every_state(rng, mode):
    for _ in range(300):
        cfg = random_band(rng)
        omegas = [cfg.omega_off, cfg.omega_on, float(rng.uniform(-0.05, 0.25))]
        commands = [cfg.pc_lower, cfg.pc_upper, float(rng.uniform(-0.2, 0.9))]
        for omega in omegas:
            for pc in commands:
                for sigma in (0, 1):
                    jumps = in_jump_set(omega, pc, sigma, cfg, mode)
                    assert jumps or in_flow_set(omega, pc, sigma, cfg, mode)
                    if jumps:
                        after = jump_update(omega, pc, sigma, cfg, mode)
                        assert after != sigma
                        assert in_flow_set(omega, pc, after, cfg, mode)
                        assert not in_jump_set(omega, pc, after, cfg, mode)


def test_filippov_interval_contains_static_demand(rng):
    for _ in range(200):
        cfg = StaticSwitchConfig(0, float(rng.uniform(0.01, 0.1)), float(rng.uniform(-0.1, -0.01)),
                                 float(rng.uniform(0.0, 0.5)), float(rng.uniform(-0.5, 0.0)))
        for omega in (cfg.omega_upper, cfg.omega_lower, float(rng.uniform(-0.2, 0.2))):
            lo, hi = static_filippov_interval(omega, cfg)
            assert lo <= static_demand(omega, cfg) <= hi


def test_design2_ladder_on_random_instances(rng):
    for _ in range(100):
        n = int(rng.integers(1, 9))
        buses = rng.permutation(20)[:n].tolist()
        costs = rng.uniform(0.001, 0.01, n)
        magnitudes = rng.uniform(0.05, 0.3, n)
        damping = float(rng.uniform(1.0, 10.0))
        loads = make_design2(buses, costs, magnitudes, damping)
        assert [load.bus for load in loads] == buses

        ranked = [loads[k] for k in design2_ranking(costs, magnitudes, buses)]
        cumulative = 0.0
        for load in ranked:
            assert load.omega_off == pytest.approx(load.cost / load.magnitude)
            assert load.pc_lower == pytest.approx(damping * load.omega_off + cumulative)
            cumulative += load.magnitude
        for lower, upper in zip(ranked, ranked[1:]):
            assert lower.pc_lower < lower.pc_upper < upper.pc_lower
        assert validate_design(ControllerSet(ControllerMode.OPTIMAL, loads), damping).passed
