"""
Scenario documents: strict JSON parsing, threshold synthesis and canonical re-emission.

Frequencies are rad/s. Threshold fields also accept an `_hz` twin
(e.g. `omega_on_hz`) which is converted by 2*pi; a field and its twin
may not both be given.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
import json
import logging
import math

import numpy as np

from consensus import CommGraph, ConsensusState
from errors import HyloadError, InvalidParameterError, ScenarioParseError, ScenarioValidationError
from grid_model import BusParams, ContinuousState, LineParams, build_network
from hybrid_sim import Disturbance, HybridState, SimConfig
from load_control import (ControllerMode, ControllerSet, HysteresisConfig, StaticSubMode,
                          StaticSwitchConfig, make_design1, make_design2)
from settings import Settings

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NUMBER = (int, float)

# section -> {key: (accepted types, required)}
SCENARIO_SCHEMA = {
    'scenario': {
        'schema_version': (int, True),
        'name': (str, False),
        'description': (str, False),
        'network': (dict, True),
        'controllers': (dict, False),
        'disturbances': (list, False),
        'simulation': (dict, False),
        'communication': (dict, False),
        'optimization': (dict, False),
        'initial': (dict, False),
    },
    'network': {'buses': (list, True), 'lines': (list, False)},
    'bus': {
        'inertia': (NUMBER, True), 'damping': (NUMBER, True), 'droop': (NUMBER, True),
        'time_constant': (NUMBER, True), 'load': (NUMBER, False), 'cost': (NUMBER, False),
    },
    'line': {'from': (int, True), 'to': (int, True), 'susceptance': (NUMBER, True)},
    'controllers': {
        'mode': (str, True), 'static_submode': (str, False), 'sample_period': (NUMBER, False),
        'pc_offset': (NUMBER, False), 'loads': (list, False), 'synthesis': (dict, False),
    },
    'load': {
        'bus': (int, True),
        'omega_upper': (NUMBER, False), 'omega_upper_hz': (NUMBER, False),
        'omega_lower': (NUMBER, False), 'omega_lower_hz': (NUMBER, False),
        'd_upper': (NUMBER, False), 'd_lower': (NUMBER, False),
        'omega_off': (NUMBER, False), 'omega_off_hz': (NUMBER, False),
        'omega_on': (NUMBER, False), 'omega_on_hz': (NUMBER, False),
        'magnitude': (NUMBER, False), 'pc_lower': (NUMBER, False), 'pc_upper': (NUMBER, False),
        'cost': (NUMBER, False),
    },
    'synthesis': {'rule': (str, True), 'omega_on_factor': (NUMBER, False)},
    'disturbance': {'time': (NUMBER, True), 'bus': (int, True), 'delta': (NUMBER, True)},
    'simulation': {
        'horizon': (NUMBER, False), 'dt': (NUMBER, False), 'event_tolerance': (NUMBER, False),
        'max_jumps': (int, False), 'output_period': (NUMBER, False), 'settling_time': (NUMBER, False),
        'limit_cycle_window': (NUMBER, False), 'chattering_run': (int, False),
    },
    'communication': {'links': (list, False), 'bus_gains': (list, False), 'link_gains': (list, False)},
    'optimization': {'ga': (dict, False), 'sigma': (list, False)},
    'ga': {'generations': (int, False), 'population': (int, False)},
    'initial': {'sigma': (list, False), 'omega': (list, False), 'p_mech': (list, False), 'eta': (list, False)},
}

HZ_FIELDS = ('omega_upper', 'omega_lower', 'omega_off', 'omega_on')
DEFAULT_HORIZON = 30.0


@dataclass(frozen=True)
class SimulationSettings:
    horizon: float = DEFAULT_HORIZON
    dt: float = 1e-3
    event_tolerance: float = 1e-6
    max_jumps: int = 1_000_000
    output_period: float = 1e-2
    settling_time: Optional[float] = None
    limit_cycle_window: Optional[float] = None
    chattering_run: int = 5

    @property
    def window(self):
        """Limit-cycle window, a fifth of the horizon unless set"""
        return self.limit_cycle_window if self.limit_cycle_window is not None else self.horizon / 5.0

    def to_dict(self):
        result = dict(self.__dict__)
        return {key: value for key, value in result.items() if value is not None}


@dataclass(eq=False)
class ScenarioDocument:
    model: object
    controllers: ControllerSet
    simulation: SimulationSettings
    disturbances: tuple = ()
    communication: Optional[CommGraph] = None
    optimization: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    name: str = ''
    description: str = ''
    synthesis: Optional[dict] = None
    schema_version: int = SCHEMA_VERSION

    def sim_config(self):
        sim = self.simulation
        return SimConfig(horizon=sim.horizon, dt=sim.dt, event_tolerance=sim.event_tolerance,
                         max_jumps=sim.max_jumps, disturbances=self.disturbances)

    @property
    def final_load(self):
        """Per-bus uncontrollable load after every disturbance has occurred"""
        p_load = self.model.p_load.copy()
        for disturbance in self.disturbances:
            p_load[disturbance.bus] += disturbance.delta
        return p_load

    def to_dict(self):
        model = self.model
        result = {'schema_version': self.schema_version}
        if self.name:
            result['name'] = self.name
        if self.description:
            result['description'] = self.description
        result['network'] = {
            'buses': [{'inertia': b.inertia, 'damping': b.damping, 'droop': b.droop,
                       'time_constant': b.time_constant, 'load': b.load, 'cost': b.cost}
                      for b in model.buses],
            'lines': [{'from': line.source, 'to': line.target, 'susceptance': line.susceptance}
                      for line in model.lines],
        }
        controllers = self.controllers
        result['controllers'] = {
            'mode': controllers.mode.value,
            'static_submode': controllers.static_submode.value,
            'sample_period': controllers.sample_period,
            'pc_offset': controllers.pc_offset,
            'loads': [{key: value for key, value in load.__dict__.items() if value is not None}
                      for load in controllers.loads],
        }
        if self.disturbances:
            result['disturbances'] = [{'time': d.time, 'bus': d.bus, 'delta': d.delta}
                                      for d in self.disturbances]
        result['simulation'] = self.simulation.to_dict()
        if self.communication is not None:
            graph = self.communication
            result['communication'] = {'links': [list(link) for link in graph.links],
                                       'bus_gains': graph.bus_gains.tolist(),
                                       'link_gains': graph.link_gains.tolist()}
        if self.optimization:
            result['optimization'] = self.optimization
        if self.initial:
            result['initial'] = self.initial
        return result


def _check_section(data, section, path):
    if not isinstance(data, dict):
        raise ScenarioParseError(f"Expected an object for {section}", field=path)
    schema = SCENARIO_SCHEMA[section]
    for key in data:
        if key not in schema:
            raise ScenarioParseError(f"Unknown key '{key}'", field=f"{path}.{key}" if path else key)
    for key, (types, required) in schema.items():
        where = f"{path}.{key}" if path else key
        if key not in data:
            if required:
                raise ScenarioParseError(f"Missing required key '{key}'", field=where)
            continue
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, types):
            expected = types.__name__ if isinstance(types, type) else 'number'
            raise ScenarioParseError(f"Expected {expected}, got {type(value).__name__}", field=where)
    return data


def _number_list(values, path):
    if not all(isinstance(v, NUMBER) and not isinstance(v, bool) for v in values):
        raise ScenarioParseError("Expected a list of numbers", field=path)
    return [float(v) for v in values]


def _frequency(entry, key, path):
    """Value of a rad/s field or its Hz twin, None when neither is given"""
    hz_key = f"{key}_hz"
    if key in entry and hz_key in entry:
        raise ScenarioParseError(f"Give either '{key}' or '{hz_key}', not both", field=f"{path}.{key}")
    if hz_key in entry:
        return 2.0 * math.pi * float(entry[hz_key])
    if key in entry:
        return float(entry[key])
    return None


def _validation(section, error):
    if isinstance(error, InvalidParameterError):
        return ScenarioValidationError(f"{section}: {error.field} of {error.element}", str(error))
    return ScenarioValidationError(section, str(error))


def _build_network(data):
    network = _check_section(data['network'], 'network', 'network')
    buses = []
    for j, entry in enumerate(network['buses']):
        entry = _check_section(entry, 'bus', f"network.buses[{j}]")
        buses.append(BusParams(float(entry['inertia']), float(entry['damping']), float(entry['droop']),
                               float(entry['time_constant']), float(entry.get('load', 0.0)),
                               float(entry.get('cost', 1.0))))
    lines = []
    for k, entry in enumerate(network.get('lines', [])):
        entry = _check_section(entry, 'line', f"network.lines[{k}]")
        lines.append(LineParams(entry['from'], entry['to'], float(entry['susceptance'])))
    try:
        return build_network(buses, lines)
    except HyloadError as e:
        raise _validation('network', e) from e


def _require(entry, keys, path, mode):
    for key in keys:
        if entry.get(key) is None:
            raise ScenarioValidationError(f"{path}.{key}", f"required in {mode} mode")


def _build_controllers(data, model):
    raw = data.get('controllers', {'mode': 'none'})
    raw = _check_section(raw, 'controllers', 'controllers')
    try:
        mode = ControllerMode(raw['mode'])
    except ValueError:
        raise ScenarioValidationError('controllers.mode', f"unknown mode '{raw['mode']}'")
    try:
        submode = StaticSubMode(raw.get('static_submode', StaticSubMode.IDEAL_FILIPPOV.value))
    except ValueError:
        raise ScenarioValidationError('controllers.static_submode',
                                      f"unknown static sub-mode '{raw['static_submode']}'")
    synthesis = None
    if 'synthesis' in raw:
        synthesis = dict(_check_section(raw['synthesis'], 'synthesis', 'controllers.synthesis'))
        if synthesis['rule'] not in ('design1', 'design2'):
            raise ScenarioValidationError('controllers.synthesis.rule',
                                          f"unknown rule '{synthesis['rule']}'")

    entries = []
    for k, entry in enumerate(raw.get('loads', [])):
        path = f"controllers.loads[{k}]"
        entry = _check_section(entry, 'load', path)
        values = {key: value for key, value in entry.items() if not key.endswith('_hz')}
        for key in HZ_FIELDS:
            value = _frequency(entry, key, path)
            if value is not None:
                values[key] = value
        if not 0 <= values['bus'] < model.n_buses:
            raise ScenarioValidationError(f"{path}.bus", f"bus {values['bus']} does not exist")
        entries.append(values)

    try:
        loads = _make_loads(mode, entries, synthesis, model)
        controllers = ControllerSet(mode, loads, submode, float(raw.get('sample_period', 0.01)),
                                    float(raw.get('pc_offset', 0.0)))
    except InvalidParameterError as e:
        raise _validation('controllers', e) from e
    return controllers, synthesis


def _make_loads(mode, entries, synthesis, model):
    aggregate_damping = model.aggregate_damping
    if mode is ControllerMode.NONE:
        return ()
    if mode is ControllerMode.STATIC:
        loads = []
        for k, e in enumerate(entries):
            _require(e, ('omega_upper', 'omega_lower', 'd_upper'), f"controllers.loads[{k}]", mode.value)
            loads.append(StaticSwitchConfig(e['bus'], e['omega_upper'], e['omega_lower'],
                                            float(e['d_upper']), float(e.get('d_lower', 0.0))))
        return tuple(loads)

    rule = synthesis['rule'] if synthesis else None
    if rule == 'design2':
        for k, e in enumerate(entries):
            _require(e, ('magnitude', 'cost'), f"controllers.loads[{k}]", 'design2')
        overrides = {e['bus']: e['omega_on'] for e in entries if 'omega_on' in e}
        return make_design2([e['bus'] for e in entries], [e['cost'] for e in entries],
                            [e['magnitude'] for e in entries], aggregate_damping,
                            float(synthesis.get('omega_on_factor', 2.0)), overrides)

    for k, e in enumerate(entries):
        _require(e, ('omega_off', 'omega_on', 'magnitude'), f"controllers.loads[{k}]", mode.value)
    if rule == 'design1':
        pc_lower = make_design1([e['omega_off'] for e in entries], aggregate_damping)
        for e, value in zip(entries, pc_lower):
            e.setdefault('pc_lower', float(value))
    return tuple(HysteresisConfig(e['bus'], e['omega_off'], e['omega_on'], float(e['magnitude']),
                                  e.get('pc_lower'), e.get('pc_upper'), e.get('cost'))
                 for e in entries)


def _build_simulation(data, defaults):
    raw = _check_section(data.get('simulation', {}), 'simulation', 'simulation')
    values = {key: defaults[key] for key in ('dt', 'event_tolerance', 'output_period', 'max_jumps',
                                             'chattering_run') if key in defaults}
    values.update(raw)
    try:
        settings = SimulationSettings(**values)
        if not settings.output_period > 0:
            raise InvalidParameterError('output_period', 'simulation', settings.output_period, "must be > 0")
        if settings.limit_cycle_window is not None and not settings.limit_cycle_window > 0:
            raise InvalidParameterError('limit_cycle_window', 'simulation', settings.limit_cycle_window,
                                        "must be > 0")
        SimConfig(settings.horizon, settings.dt, settings.event_tolerance, settings.max_jumps)
    except InvalidParameterError as e:
        raise _validation('simulation', e) from e
    return settings


def _build_disturbances(data, model, horizon):
    disturbances = []
    for k, entry in enumerate(data.get('disturbances', [])):
        path = f"disturbances[{k}]"
        entry = _check_section(entry, 'disturbance', path)
        if not 0 <= entry['bus'] < model.n_buses:
            raise ScenarioValidationError(f"{path}.bus", f"bus {entry['bus']} does not exist")
        if not 0 <= entry['time'] <= horizon:
            raise ScenarioValidationError(f"{path}.time", "must lie within the simulation horizon")
        disturbances.append(Disturbance(float(entry['time']), entry['bus'], float(entry['delta'])))
    return tuple(sorted(disturbances, key=lambda d: d.time))


def _build_communication(data, model):
    if 'communication' not in data:
        return None
    raw = _check_section(data['communication'], 'communication', 'communication')
    links = raw.get('links')
    if links is None:
        links = [(line.source, line.target) for line in model.lines]
    else:
        for k, link in enumerate(links):
            if not (isinstance(link, list) and len(link) == 2 and all(isinstance(v, int) for v in link)):
                raise ScenarioParseError("Expected a [from, to] pair", field=f"communication.links[{k}]")
    bus_gains = _number_list(raw['bus_gains'], 'communication.bus_gains') if 'bus_gains' in raw else None
    link_gains = _number_list(raw['link_gains'], 'communication.link_gains') if 'link_gains' in raw else None
    try:
        return CommGraph(model.n_buses, links, bus_gains, link_gains)
    except HyloadError as e:
        raise _validation('communication', e) from e


def _build_optimization(data):
    if 'optimization' not in data:
        return {}
    raw = _check_section(data['optimization'], 'optimization', 'optimization')
    result = {}
    if 'ga' in raw:
        result['ga'] = dict(_check_section(raw['ga'], 'ga', 'optimization.ga'))
    if 'sigma' in raw:
        if not all(v in (0, 1) and not isinstance(v, bool) for v in raw['sigma']):
            raise ScenarioValidationError('optimization.sigma', "entries must be 0 or 1")
        result['sigma'] = list(raw['sigma'])
    return result


def _build_initial(data, model, controllers):
    if 'initial' not in data:
        return {}
    raw = _check_section(data['initial'], 'initial', 'initial')
    result = {}
    sizes = {'omega': model.n_buses, 'p_mech': model.n_buses, 'eta': model.n_lines,
             'sigma': controllers.n_loads}
    for key, size in sizes.items():
        if key not in raw:
            continue
        if key == 'sigma':
            if not all(v in (0, 1) and not isinstance(v, bool) for v in raw[key]):
                raise ScenarioValidationError('initial.sigma', "entries must be 0 or 1")
            values = [int(v) for v in raw[key]]
        else:
            values = _number_list(raw[key], f"initial.{key}")
        if len(values) != size:
            raise ScenarioValidationError(f"initial.{key}", f"expected {size} entries, got {len(values)}")
        result[key] = values
    return result


def parse_scenario(text, defaults=None) -> ScenarioDocument:
    """
    Strictly parse a scenario document.

    `defaults` supplies simulation values the document leaves out (normally
    the persisted settings); built-in defaults apply otherwise.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, line=e.lineno, column=e.colno) from e
    data = _check_section(data, 'scenario', '')
    if data['schema_version'] != SCHEMA_VERSION:
        raise ScenarioValidationError('schema_version',
                                      f"unsupported version {data['schema_version']} (expected {SCHEMA_VERSION})")
    if defaults is None:
        defaults = {key: Settings.default(key) for key in
                    ('dt', 'event_tolerance', 'output_period', 'max_jumps', 'chattering_run')}

    model = _build_network(data)
    controllers, synthesis = _build_controllers(data, model)
    simulation = _build_simulation(data, defaults)
    document = ScenarioDocument(
        model=model,
        controllers=controllers,
        simulation=simulation,
        disturbances=_build_disturbances(data, model, simulation.horizon),
        communication=_build_communication(data, model),
        optimization=_build_optimization(data),
        initial=_build_initial(data, model, controllers),
        name=data.get('name', ''),
        description=data.get('description', ''),
        synthesis=synthesis,
    )
    logger.debug(f"Parsed scenario '{document.name}': {model.n_buses} buses, "
                 f"{controllers.n_loads} {controllers.mode.value} loads")
    return document


def load_scenario(path, defaults=None) -> ScenarioDocument:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ScenarioParseError(f"Cannot read {path}: {e}") from e
    document = parse_scenario(text, defaults)
    if not document.name:
        document.name = path.stem
    return document


def dump_scenario(document: ScenarioDocument) -> str:
    """Canonical JSON form: resolved thresholds, rad/s units"""
    return json.dumps(document.to_dict(), indent=2)


def scenario_initial_state(document: ScenarioDocument) -> HybridState:
    """HybridState from the document's initial block, at rest where unspecified"""
    model = document.model
    initial = document.initial
    continuous = ContinuousState(np.array(initial.get('eta', np.zeros(model.n_lines))),
                                 np.array(initial.get('omega', np.zeros(model.n_buses))),
                                 np.array(initial.get('p_mech', np.zeros(model.n_buses))))
    sigma = tuple(initial.get('sigma', (0,) * document.controllers.n_loads))
    consensus = ConsensusState.zeros(document.communication) if document.communication is not None else None
    return HybridState(continuous, sigma, consensus)
