"""
Distributed power-command averaging over a communication graph.

Each bus keeps a local command p^c_j and each link an integrator psi_ij:
    gamma_ij * dpsi_ij/dt = p^c_i - p^c_j
    gamma_j  * dp^c_j/dt  = -p^L_j - p^c_j / |N| - sum_out psi_jk + sum_in psi_ij
so that every p^c_j settles at the centralized command -l. The gains here are
`gamma_gain` values; they are unrelated to the cost per unit (`gamma_cost`)
used by the allocation problem.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence
import logging

import networkx as nx
import numpy as np

from errors import DimensionMismatchError, DisconnectedGraphError, InvalidParameterError

logger = logging.getLogger(__name__)

DEFAULT_GUARD_BAND = 1e-9


@dataclass(frozen=True, eq=False)
class CommGraph:
    n_buses: int
    links: tuple
    bus_gains: np.ndarray = None
    link_gains: np.ndarray = None
    incidence: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        links = tuple((int(i), int(j)) for i, j in self.links)
        object.__setattr__(self, 'links', links)
        bus_gains = np.ones(self.n_buses) if self.bus_gains is None else np.asarray(self.bus_gains, dtype=float)
        link_gains = np.ones(len(links)) if self.link_gains is None else np.asarray(self.link_gains, dtype=float)
        if bus_gains.shape != (self.n_buses,):
            raise DimensionMismatchError('bus_gains', self.n_buses, bus_gains.shape[0])
        if link_gains.shape != (len(links),):
            raise DimensionMismatchError('link_gains', len(links), link_gains.shape[0])
        for j, gain in enumerate(bus_gains):
            if not gain > 0:
                raise InvalidParameterError('gamma_gain', f"bus {j}", gain, "must be > 0")
        for k, gain in enumerate(link_gains):
            if not gain > 0:
                raise InvalidParameterError('gamma_gain', f"link {k}", gain, "must be > 0")

        seen = set()
        incidence = np.zeros((self.n_buses, len(links)))
        for k, (i, j) in enumerate(links):
            if not (0 <= i < self.n_buses and 0 <= j < self.n_buses) or i == j:
                raise InvalidParameterError('endpoint', f"link {k}", (i, j), "invalid communication link")
            if frozenset((i, j)) in seen:
                raise InvalidParameterError('endpoint', f"link {k}", (i, j), "duplicate communication link")
            seen.add(frozenset((i, j)))
            incidence[i, k] = 1.0
            incidence[j, k] = -1.0

        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_buses))
        graph.add_edges_from(links)
        if self.n_buses == 0 or not nx.is_connected(graph):
            raise DisconnectedGraphError("Communication graph is not connected")

        for name, array in (('bus_gains', bus_gains), ('link_gains', link_gains), ('incidence', incidence)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @classmethod
    def from_network(cls, model, bus_gains=None, link_gains=None):
        """Use the power lines as communication links"""
        return cls(model.n_buses, [(line.source, line.target) for line in model.lines],
                   bus_gains, link_gains)

    @property
    def n_links(self):
        return len(self.links)

    @property
    def state_size(self):
        return self.n_buses + self.n_links

    def algebraic_connectivity(self):
        if self.n_buses < 2:
            return 0.0
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_buses))
        graph.add_edges_from(self.links)
        return float(nx.algebraic_connectivity(graph, method='tracemin_lu'))


@dataclass(frozen=True, eq=False)
class ConsensusState:
    p_command: np.ndarray
    integrators: np.ndarray

    def __post_init__(self):
        for name in ('p_command', 'integrators'):
            array = np.array(getattr(self, name), dtype=float)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @classmethod
    def zeros(cls, graph):
        return cls(np.zeros(graph.n_buses), np.zeros(graph.n_links))

    @classmethod
    def from_vector(cls, graph, vector):
        return cls(vector[:graph.n_buses], vector[graph.n_buses:graph.state_size])

    def to_vector(self):
        return np.concatenate([self.p_command, self.integrators])

    def check(self, graph):
        if self.p_command.shape != (graph.n_buses,):
            raise DimensionMismatchError('p_command', graph.n_buses, self.p_command.shape[0])
        if self.integrators.shape != (graph.n_links,):
            raise DimensionMismatchError('integrators', graph.n_links, self.integrators.shape[0])


def consensus_matrix(graph: CommGraph, n_buses=None):
    """Constant matrix of the protocol in (p^c, psi) coordinates"""
    n = graph.n_buses
    total = n if n_buses is None else n_buses
    matrix = np.zeros((graph.state_size, graph.state_size))
    matrix[:n, :n] = -np.eye(n) / (total * graph.bus_gains[:, None])
    matrix[:n, n:] = -graph.incidence / graph.bus_gains[:, None]
    matrix[n:, :n] = graph.incidence.T / graph.link_gains[:, None]
    return matrix


def consensus_field(graph: CommGraph, state: ConsensusState, p_load, n_buses=None) -> ConsensusState:
    state.check(graph)
    p_load = np.asarray(p_load, dtype=float)
    if p_load.shape != (graph.n_buses,):
        raise DimensionMismatchError('p_load', graph.n_buses, p_load.shape[0] if p_load.ndim else 0)
    total = graph.n_buses if n_buses is None else n_buses
    p_dot = (-p_load - state.p_command / total - graph.incidence @ state.integrators) / graph.bus_gains
    psi_dot = (graph.incidence.T @ state.p_command) / graph.link_gains
    return ConsensusState(p_dot, psi_dot)


def consensus_steady_state(graph: CommGraph, p_load):
    return np.full(graph.n_buses, -float(np.sum(p_load)))


def steady_state_integrators(graph: CommGraph, p_load, initial_integrators=None):
    """
    Integrator values balancing every bus at p^c = -l.

    Without an initial condition this is the minimum-norm least-squares
    solution. With one, it is the limit actually reached from that start:
    psi can only move within psi(0) + range(Gamma^-1 E^T).
    """
    p_load = np.asarray(p_load, dtype=float)
    rhs = -p_load + np.sum(p_load) / graph.n_buses
    if graph.n_links == 0:
        return np.zeros(0)
    if initial_integrators is None:
        psi, *_ = np.linalg.lstsq(graph.incidence, rhs, rcond=None)
        return psi
    psi0 = np.asarray(initial_integrators, dtype=float)
    weighted = graph.incidence / graph.link_gains
    laplacian = weighted @ graph.incidence.T
    y, *_ = np.linalg.lstsq(laplacian, rhs - graph.incidence @ psi0, rcond=None)
    return psi0 + weighted.T @ y


def lyapunov_vc(graph: CommGraph, state: ConsensusState, p_star, psi_star):
    dp = state.p_command - np.asarray(p_star, dtype=float)
    dpsi = state.integrators - np.asarray(psi_star, dtype=float)
    return float(0.5 * np.sum(graph.bus_gains * dp ** 2) + 0.5 * np.sum(graph.link_gains * dpsi ** 2))


@dataclass(frozen=True)
class Assumption1Report:
    passed: bool
    ell: float
    excluded: tuple
    distance: Optional[float]
    guard_band: float

    def to_dict(self):
        return {'passed': self.passed, 'ell': self.ell, 'excluded': list(self.excluded),
                'distance': self.distance, 'guard_band': self.guard_band}


def check_assumption1(p_load, thresholds: Sequence, guard_band=DEFAULT_GUARD_BAND):
    """
    Check that the aggregate load avoids every negated power-command threshold.

    `thresholds` holds (pc_lower, pc_upper) pairs; pc_upper may be None.
    """
    ell = float(np.sum(p_load))
    excluded = []
    for lower, upper in thresholds:
        excluded.append(-float(lower))
        if upper is not None:
            excluded.append(-float(upper))
    if not excluded:
        return Assumption1Report(True, ell, (), None, guard_band)
    distance = float(np.min(np.abs(np.array(excluded) - ell)))
    passed = distance > guard_band
    if not passed:
        logger.warning(f"Aggregate load {ell:.6g} sits on a power-command threshold")
    return Assumption1Report(passed, ell, tuple(sorted(excluded)), distance, guard_band)


@dataclass
class ConsensusTrajectory:
    times: np.ndarray
    p_command: np.ndarray
    integrators: np.ndarray
    vc: np.ndarray
    p_star: np.ndarray
    psi_star: np.ndarray

    def max_vc_increase(self):
        if len(self.vc) < 2:
            return 0.0
        return float(max(0.0, np.max(np.diff(self.vc))))

    def terminal_error(self):
        return float(np.max(np.abs(self.p_command[-1] - self.p_star)))


def simulate_consensus(graph: CommGraph, p_load, initial: Optional[ConsensusState] = None,
                       horizon=20.0, dt=1e-3):
    """Fixed-step RK4 integration of the averaging protocol on its own"""
    p_load = np.asarray(p_load, dtype=float)
    if p_load.shape != (graph.n_buses,):
        raise DimensionMismatchError('p_load', graph.n_buses, p_load.shape[0] if p_load.ndim else 0)
    if not horizon > 0 or not dt > 0:
        raise InvalidParameterError('horizon/dt', 'consensus simulation', (horizon, dt), "must be > 0")
    initial = ConsensusState.zeros(graph) if initial is None else initial
    initial.check(graph)

    matrix = consensus_matrix(graph)
    affine = np.zeros(graph.state_size)
    affine[:graph.n_buses] = -p_load / graph.bus_gains

    def rhs(z):
        return matrix @ z + affine

    steps = int(np.ceil(horizon / dt - 1e-9))
    z = initial.to_vector()
    states = np.empty((steps + 1, graph.state_size))
    times = np.empty(steps + 1)
    states[0] = z
    times[0] = 0.0
    t = 0.0
    for k in range(1, steps + 1):
        h = min(dt, horizon - t)
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        states[k] = z
        times[k] = t

    p_star = consensus_steady_state(graph, p_load)
    psi_star = steady_state_integrators(graph, p_load, initial.integrators)
    n = graph.n_buses
    dp = states[:, :n] - p_star
    dpsi = states[:, n:] - psi_star
    vc = 0.5 * (dp ** 2) @ graph.bus_gains + 0.5 * (dpsi ** 2) @ graph.link_gains
    logger.info(f"Consensus run: {graph.n_buses} buses, {graph.n_links} links, "
                f"terminal error {np.max(np.abs(states[-1, :n] - p_star)):.3e}")
    return ConsensusTrajectory(times, states[:, :n], states[:, n:], vc, p_star, psi_star)
