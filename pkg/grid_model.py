"""
Network model of buses and lossless lines with the linearized swing,
governor and frequency-dependent load dynamics.

Conventions: line k = (i, j) carries p_ij = B_ij * eta_ij from bus i to bus j;
the incidence matrix has +1 at the sending bus and -1 at the receiving bus.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence
import logging

import networkx as nx
import numpy as np
from scipy import linalg

from errors import (DimensionMismatchError, DisconnectedGraphError,
                    InvalidParameterError, UnbalancedInjectionsError)

logger = logging.getLogger(__name__)

BALANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BusParams:
    inertia: float
    damping: float
    droop: float
    time_constant: float
    load: float = 0.0
    cost: float = 1.0

    def validate(self, index):
        for name in ('inertia', 'damping', 'droop', 'time_constant', 'cost'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterError(name, f"bus {index}", value, "must be > 0")
        if not np.isfinite(self.load):
            raise InvalidParameterError('load', f"bus {index}", self.load, "must be finite")


@dataclass(frozen=True)
class LineParams:
    source: int
    target: int
    susceptance: float


def _frozen(values):
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ContinuousState:
    eta: np.ndarray
    omega: np.ndarray
    p_mech: np.ndarray

    def __post_init__(self):
        for name in ('eta', 'omega', 'p_mech'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def zeros(cls, model):
        return cls(np.zeros(model.n_lines), np.zeros(model.n_buses), np.zeros(model.n_buses))

    @classmethod
    def from_vector(cls, model, vector):
        m, n = model.n_lines, model.n_buses
        vector = np.asarray(vector, dtype=float)
        if vector.shape[0] < m + 2 * n:
            raise DimensionMismatchError('state vector', m + 2 * n, vector.shape[0])
        return cls(vector[:m], vector[m:m + n], vector[m + n:m + 2 * n])

    def to_vector(self):
        return np.concatenate([self.eta, self.omega, self.p_mech])

    def check(self, model):
        if self.eta.shape != (model.n_lines,):
            raise DimensionMismatchError('eta', model.n_lines, self.eta.shape[0])
        if self.omega.shape != (model.n_buses,):
            raise DimensionMismatchError('omega', model.n_buses, self.omega.shape[0])
        if self.p_mech.shape != (model.n_buses,):
            raise DimensionMismatchError('p_mech', model.n_buses, self.p_mech.shape[0])


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple
    lines: tuple
    inertia: np.ndarray = field(init=False, repr=False, compare=False)
    damping: np.ndarray = field(init=False, repr=False, compare=False)
    droop: np.ndarray = field(init=False, repr=False, compare=False)
    time_constant: np.ndarray = field(init=False, repr=False, compare=False)
    p_load: np.ndarray = field(init=False, repr=False, compare=False)
    cost: np.ndarray = field(init=False, repr=False, compare=False)
    susceptance: np.ndarray = field(init=False, repr=False, compare=False)
    incidence: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = {
            'inertia': [b.inertia for b in self.buses],
            'damping': [b.damping for b in self.buses],
            'droop': [b.droop for b in self.buses],
            'time_constant': [b.time_constant for b in self.buses],
            'p_load': [b.load for b in self.buses],
            'cost': [b.cost for b in self.buses],
            'susceptance': [line.susceptance for line in self.lines],
        }
        for name, values in arrays.items():
            object.__setattr__(self, name, _frozen(values))
        incidence = np.zeros((len(self.buses), len(self.lines)))
        for k, line in enumerate(self.lines):
            incidence[line.source, k] = 1.0
            incidence[line.target, k] = -1.0
        incidence.setflags(write=False)
        object.__setattr__(self, 'incidence', incidence)

    @property
    def n_buses(self):
        return len(self.buses)

    @property
    def n_lines(self):
        return len(self.lines)

    @property
    def state_size(self):
        return self.n_lines + 2 * self.n_buses

    @property
    def aggregate_damping(self):
        """Aggregate droop-plus-damping, sum of (alpha_j + A_j)"""
        return float(np.sum(self.droop) + np.sum(self.damping))

    @property
    def aggregate_load(self):
        return float(np.sum(self.p_load))

    def with_loads(self, p_load):
        p_load = np.asarray(p_load, dtype=float)
        if p_load.shape != (self.n_buses,):
            raise DimensionMismatchError('p_load', self.n_buses, p_load.shape[0])
        buses = tuple(replace(bus, load=float(value)) for bus, value in zip(self.buses, p_load))
        return NetworkModel(buses, self.lines)

    def graph(self):
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_buses))
        graph.add_edges_from((line.source, line.target) for line in self.lines)
        return graph


def build_network(buses: Sequence[BusParams], lines: Sequence[LineParams]) -> NetworkModel:
    """Validate buses and lines and return an immutable NetworkModel"""
    buses = tuple(buses)
    lines = tuple(lines)
    if not buses:
        raise InvalidParameterError('buses', 'network', 0, "at least one bus is required")
    for index, bus in enumerate(buses):
        bus.validate(index)

    seen = set()
    for k, line in enumerate(lines):
        for end in (line.source, line.target):
            if not 0 <= end < len(buses):
                raise InvalidParameterError('endpoint', f"line {k}", end, "no such bus")
        if line.source == line.target:
            raise InvalidParameterError('endpoint', f"line {k}", line.source, "self loop")
        if not np.isfinite(line.susceptance) or line.susceptance <= 0:
            raise InvalidParameterError('susceptance', f"line {k}", line.susceptance, "must be > 0")
        pair = frozenset((line.source, line.target))
        if pair in seen:
            raise InvalidParameterError('endpoint', f"line {k}", (line.source, line.target),
                                        "duplicate or antiparallel line")
        seen.add(pair)

    model = NetworkModel(buses, lines)
    if not nx.is_connected(model.graph()):
        raise DisconnectedGraphError(
            f"Network with {len(buses)} buses and {len(lines)} lines is not connected")
    logger.debug(f"Built network: {model.n_buses} buses, {model.n_lines} lines, "
                 f"D={model.aggregate_damping:.6g}, l={model.aggregate_load:.6g}")
    return model


def _check_length(name, values, expected):
    values = np.asarray(values, dtype=float)
    if values.shape != (expected,):
        raise DimensionMismatchError(name, expected, values.shape[0] if values.ndim else 0)
    return values


def flow_vector(model, vector, demand, p_load=None):
    """Flow map on the flat state vector (eta, omega, p_mech)"""
    m, n = model.n_lines, model.n_buses
    eta = vector[:m]
    omega = vector[m:m + n]
    p_mech = vector[m + n:m + 2 * n]
    p_load = model.p_load if p_load is None else p_load
    flows = model.susceptance * eta
    derivative = np.empty(m + 2 * n)
    derivative[:m] = model.incidence.T @ omega
    derivative[m:m + n] = (-p_load + p_mech - demand - model.damping * omega
                           - model.incidence @ flows) / model.inertia
    derivative[m + n:] = -(p_mech + model.droop * omega) / model.time_constant
    return derivative


def flow_field(model: NetworkModel, state: ContinuousState, demand,
               p_load: Optional[np.ndarray] = None) -> ContinuousState:
    """Time derivative of (eta, omega, p_mech) for controllable demand d^c"""
    state.check(model)
    demand = _check_length('demand', demand, model.n_buses)
    if p_load is not None:
        p_load = _check_length('p_load', p_load, model.n_buses)
    derivative = flow_vector(model, state.to_vector(), demand, p_load)
    return ContinuousState.from_vector(model, derivative)


def flow_matrix(model):
    """Constant matrix of the (linear) flow map in (eta, omega, p_mech) coordinates"""
    m, n = model.n_lines, model.n_buses
    matrix = np.zeros((m + 2 * n, m + 2 * n))
    matrix[:m, m:m + n] = model.incidence.T
    matrix[m:m + n, :m] = -(model.incidence * model.susceptance) / model.inertia[:, None]
    matrix[m:m + n, m:m + n] = np.diag(-model.damping / model.inertia)
    matrix[m:m + n, m + n:] = np.diag(1.0 / model.inertia)
    matrix[m + n:, m:m + n] = np.diag(-model.droop / model.time_constant)
    matrix[m + n:, m + n:] = np.diag(-1.0 / model.time_constant)
    return matrix


def lipschitz_estimate(model):
    return float(np.linalg.norm(flow_matrix(model), 2))


def dc_power_flow(model: NetworkModel, injections, tolerance=BALANCE_TOLERANCE):
    """
    Solve the lossless DC power flow for balanced net injections.

    The lowest-index bus is the angle reference. Returns (eta, flows) per line.
    """
    injections = _check_length('injections', injections, model.n_buses)
    imbalance = float(np.sum(injections))
    if abs(imbalance) > tolerance:
        raise UnbalancedInjectionsError(imbalance, tolerance)
    if model.n_lines == 0:
        return np.zeros(0), np.zeros(0)

    laplacian = (model.incidence * model.susceptance) @ model.incidence.T
    angles = np.zeros(model.n_buses)
    angles[1:] = linalg.solve(laplacian[1:, 1:], injections[1:], assume_a='pos')
    eta = model.incidence.T @ angles
    return eta, model.susceptance * eta
