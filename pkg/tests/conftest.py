import json

import numpy as np
import pytest
from PyQt6.QtCore import QCoreApplication, QSettings

from grid_model import BusParams, LineParams, build_network
from load_control import (ControllerMode, ControllerSet, HysteresisConfig, StaticSubMode, StaticSwitchConfig,
                          make_design1, make_design2)
from settings import Settings


def unit_bus(load=0.0, cost=1.0):
    return BusParams(inertia=1.0, damping=1.0, droop=1.0, time_constant=1.0, load=load, cost=cost)


@pytest.fixture(scope='session')
def qapp():
    return QCoreApplication.instance() or QCoreApplication([])


@pytest.fixture
def settings(tmp_path):
    """Settings backed by an INI file so the user's configuration stays untouched"""
    return Settings(QSettings(str(tmp_path / 'hyload.ini'), QSettings.Format.IniFormat))


@pytest.fixture
def single_bus():
    """One bus with M = A = alpha = tau = 1, so D = 2"""
    def make(load=0.0):
        return build_network([unit_bus(load)], [])
    return make


@pytest.fixture
def two_bus():
    """Two unit buses joined by one line with B = 1, so D = 4"""
    def make(loads=(0.0, 0.0)):
        return build_network([unit_bus(loads[0]), unit_bus(loads[1])], [LineParams(0, 1, 1.0)])
    return make


@pytest.fixture
def static_controllers():
    def make(submode=StaticSubMode.IDEAL_FILIPPOV):
        return ControllerSet(ControllerMode.STATIC, [StaticSwitchConfig(0, 0.05, -0.05, 0.2)], submode)
    return make


@pytest.fixture
def limit_cycle_loads():
    """Hysteresis band narrower than d_bar / D: no equilibrium at l = -0.13"""
    return [HysteresisConfig(0, omega_off=0.04, omega_on=0.06, magnitude=0.1)]


@pytest.fixture
def adapted_controllers():
    pc_lower = make_design1([0.04], 2.0)
    return ControllerSet(ControllerMode.ADAPTED,
                         [HysteresisConfig(0, 0.04, 0.06, 0.1, pc_lower=float(pc_lower[0]))])


@pytest.fixture
def design2_controllers():
    """Two loads, c^d = (0.001, 0.004), d_bar = (0.2, 0.2) on the two-bus network (D = 4)"""
    def make(overrides=None):
        loads = make_design2([0, 1], [0.001, 0.004], [0.2, 0.2], 4.0, omega_on_overrides=overrides)
        return ControllerSet(ControllerMode.OPTIMAL, loads)
    return make


def random_tree_network(rng, n_buses, loads):
    buses = [BusParams(*rng.uniform(0.5, 2.0, size=4), load=float(value)) for value in loads]
    lines = [LineParams(int(rng.integers(0, j)), j, float(rng.uniform(0.5, 5.0))) for j in range(1, n_buses)]
    return build_network(buses, lines)


def random_meshed_network(rng, n_buses, loads, extra_lines=3):
    """Random spanning tree plus up to `extra_lines` chords, so the network may contain cycles"""
    buses = [BusParams(*rng.uniform(0.5, 2.0, size=4), load=float(value)) for value in loads]
    lines = [LineParams(int(rng.integers(0, j)), j, float(rng.uniform(0.5, 5.0))) for j in range(1, n_buses)]
    used = {frozenset((line.source, line.target)) for line in lines}
    for _ in range(extra_lines):
        i, j = (int(v) for v in rng.integers(0, n_buses, size=2))
        if i != j and frozenset((i, j)) not in used:
            used.add(frozenset((i, j)))
            lines.append(LineParams(i, j, float(rng.uniform(0.5, 5.0))))
    return build_network(buses, lines)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def write_scenario(tmp_path):
    def write(document, name='scenario'):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(document), encoding='utf-8')
        return path
    return write


def scenario_buses(count, loads=None):
    loads = loads or [0.0] * count
    return [{'inertia': 1.0, 'damping': 1.0, 'droop': 1.0, 'time_constant': 1.0, 'load': value}
            for value in loads]
