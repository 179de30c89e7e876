"""
Fixed-step hybrid integrator for the network with on-off loads.

Flows use classical RK4 on the linear swing/governor dynamics. Guard
crossings are localized by bisection on the step size and the jump map is
applied with the continuous state untouched; every jump advances the
jump counter l by one. The static policy is integrated either with ideal
Filippov sliding on its threshold surfaces or with a sampled controller.
"""
from dataclasses import dataclass, field
from typing import Optional
import logging

import numpy as np

from consensus import CommGraph, ConsensusState, consensus_matrix
from errors import (DimensionMismatchError, InvalidParameterError,
                    MaxJumpsExceededError, NonFiniteStateError)
from grid_model import ContinuousState, NetworkModel, flow_matrix
from load_control import (ControllerMode, ControllerSet, StaticSubMode,
                          guard_value, static_level)

logger = logging.getLogger(__name__)

TIME_EPS = 1e-12


@dataclass(frozen=True)
class HybridTimeStamp:
    t: float
    l: int

    def __lt__(self, other):
        return (self.t, self.l) < (other.t, other.l)


@dataclass(frozen=True, eq=False)
class HybridState:
    continuous: ContinuousState
    sigma: tuple = ()
    consensus: Optional[ConsensusState] = None

    def __post_init__(self):
        for k, s in enumerate(self.sigma):
            if isinstance(s, (bool, np.bool_)) or s not in (0, 1):
                raise InvalidParameterError('sigma', f"load {k}", s, "switch states must be 0 or 1")
        object.__setattr__(self, 'sigma', tuple(int(s) for s in self.sigma))

    @classmethod
    def at_rest(cls, model, controllers, graph=None):
        consensus = ConsensusState.zeros(graph) if graph is not None else None
        return cls(ContinuousState.zeros(model), (0,) * controllers.n_loads, consensus)


@dataclass(frozen=True)
class Disturbance:
    time: float
    bus: int
    delta: float


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt: float = 1e-3
    event_tolerance: float = 1e-6
    max_jumps: int = 1_000_000
    disturbances: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'disturbances',
                           tuple(sorted(self.disturbances, key=lambda d: d.time)))
        if not self.horizon > 0:
            raise InvalidParameterError('horizon', 'simulation', self.horizon, "must be > 0")
        if not self.dt > 0:
            raise InvalidParameterError('dt', 'simulation', self.dt, "must be > 0")
        if not 0 < self.event_tolerance <= self.dt:
            raise InvalidParameterError('event_tolerance', 'simulation', self.event_tolerance,
                                        "must lie in (0, dt]")
        if not self.max_jumps > 0:
            raise InvalidParameterError('max_jumps', 'simulation', self.max_jumps, "must be > 0")
        for k, disturbance in enumerate(self.disturbances):
            if not 0 <= disturbance.time <= self.horizon:
                raise InvalidParameterError('time', f"disturbance {k}", disturbance.time,
                                            "must lie within the horizon")


@dataclass(frozen=True)
class SwitchEvent:
    time: float
    jump_index: int
    load: int
    bus: int
    old: int
    new: int
    trigger: str

    def to_dict(self):
        return {'t': self.time, 'l': self.jump_index, 'load': self.load, 'bus': self.bus,
                'old': self.old, 'new': self.new, 'trigger': self.trigger}


@dataclass(frozen=True)
class SlidingRecord:
    time: float
    load: int
    surface: str
    action: str


@dataclass
class Trajectory:
    model: NetworkModel
    controllers: ControllerSet
    times: np.ndarray
    jumps: np.ndarray
    states: np.ndarray
    sigma: np.ndarray
    demand: np.ndarray
    power_command: np.ndarray
    p_load: np.ndarray
    consensus: Optional[np.ndarray]
    events: list
    sliding_log: list
    terminal_rate: float
    metadata: dict = field(default_factory=dict)
    graph: Optional[CommGraph] = None

    def __len__(self):
        return len(self.times)

    @property
    def eta(self):
        return self.states[:, :self.model.n_lines]

    @property
    def omega(self):
        m, n = self.model.n_lines, self.model.n_buses
        return self.states[:, m:m + n]

    @property
    def p_mech(self):
        m, n = self.model.n_lines, self.model.n_buses
        return self.states[:, m + n:m + 2 * n]

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def distributed(self):
        return self.consensus is not None

    def stamps(self):
        return [HybridTimeStamp(float(t), int(l)) for t, l in zip(self.times, self.jumps)]


class _Flow:
    """Linear flow map on z = (eta, omega, p_mech[, p_command, psi])"""

    def __init__(self, model: NetworkModel, graph: Optional[CommGraph]):
        m, n = model.n_lines, model.n_buses
        self.m, self.n = m, n
        self.x_size = m + 2 * n
        self.graph = graph
        size = self.x_size + (graph.state_size if graph is not None else 0)
        self.matrix = np.zeros((size, size))
        self.matrix[:self.x_size, :self.x_size] = flow_matrix(model)
        if graph is not None:
            self.matrix[self.x_size:, self.x_size:] = consensus_matrix(graph, n)
        self.inertia = model.inertia
        self.size = size

    def omega_index(self, bus):
        return self.m + bus

    def pc_index(self, bus):
        return self.x_size + bus

    def derivative(self, z, demand, p_load, sliding):
        """sliding: list of (bus, lo, hi); those buses carry the clipped balancing demand"""
        dz = self.matrix @ z
        dz[self.m:self.m + self.n] -= (p_load + demand) / self.inertia
        if self.graph is not None:
            dz[self.x_size:self.x_size + self.n] -= p_load / self.graph.bus_gains
        for bus, lo, hi in sliding:
            index = self.m + bus
            required = dz[index] * self.inertia[bus]
            dz[index] -= min(max(required, lo), hi) / self.inertia[bus]
        return dz

    def required_demand(self, z, p_load, bus):
        """M_j * d(omega_j)/dt with no controllable demand at the bus"""
        return float((self.matrix[self.m + bus] @ z) * self.inertia[bus] - p_load[bus])

    def rk4(self, z, h, demand, p_load, sliding):
        k1 = self.derivative(z, demand, p_load, sliding)
        k2 = self.derivative(z + 0.5 * h * k1, demand, p_load, sliding)
        k3 = self.derivative(z + 0.5 * h * k2, demand, p_load, sliding)
        k4 = self.derivative(z + h * k3, demand, p_load, sliding)
        return z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


class _Simulator:
    def __init__(self, model, controllers, initial, config, graph):
        controllers.check_buses(model.n_buses)
        self.model = model
        self.controllers = controllers
        self.config = config
        self.graph = graph
        self.mode = controllers.mode
        self.loads = controllers.loads if self.mode is not ControllerMode.NONE else ()
        self.static = self.mode is ControllerMode.STATIC
        self.sampled = self.static and controllers.static_submode is StaticSubMode.SAMPLED
        self.filippov = self.static and not self.sampled
        self.flow = _Flow(model, graph)

        if initial is None:
            initial = HybridState.at_rest(model, controllers, graph)
        initial.continuous.check(model)
        self.z = np.zeros(self.flow.size)
        self.z[:self.flow.x_size] = initial.continuous.to_vector()
        if graph is not None:
            consensus = initial.consensus if initial.consensus is not None else ConsensusState.zeros(graph)
            consensus.check(graph)
            self.z[self.flow.x_size:] = consensus.to_vector()

        n_loads = len(self.loads)
        if len(initial.sigma) == 0:
            if self.static:
                self.sigma = [static_level(self._omega(k), load) for k, load in enumerate(self.loads)]
            else:
                self.sigma = [0] * n_loads
        elif len(initial.sigma) == n_loads:
            self.sigma = list(initial.sigma)
        else:
            raise DimensionMismatchError('sigma', n_loads, len(initial.sigma))

        self.sliding = [None] * n_loads
        self.t = 0.0
        self.l = 0
        self.p_load = model.p_load.copy()
        self.pending = list(config.disturbances)
        self.next_sample = 0
        self.events = []
        self.sliding_log = []
        self.samples = {name: [] for name in
                        ('times', 'jumps', 'states', 'sigma', 'demand', 'pc', 'p_load', 'consensus')}

        if self.sampled:
            ratio = controllers.sample_period / config.dt
            if abs(ratio - round(ratio)) > 1e-9:
                logger.warning(f"Sample period {controllers.sample_period} s is not a multiple of "
                               f"dt={config.dt} s; steps are shortened to hit sample instants")

    # -- bookkeeping ---------------------------------------------------------------

    def _omega(self, k):
        return float(self.z[self.flow.omega_index(self.loads[k].bus)])

    def _pc_central(self):
        return -float(np.sum(self.p_load)) + self.controllers.pc_offset

    def _pc(self, z, k):
        if self.graph is not None:
            return float(z[self.flow.pc_index(self.loads[k].bus)])
        return self._pc_central()

    def _bounds(self, k):
        load = self.loads[k]
        if self.sliding[k] == 'upper':
            return 0.0, load.d_upper
        return load.d_lower, 0.0

    def _demand(self):
        demand = np.zeros(self.model.n_buses)
        for k, load in enumerate(self.loads):
            if self.static:
                if self.sliding[k] is None:
                    level = self.sigma[k]
                    demand[load.bus] += load.d_upper if level == 1 else (load.d_lower if level == -1 else 0.0)
            else:
                demand[load.bus] += load.magnitude * self.sigma[k]
        return demand

    def _sliding_terms(self):
        return [(self.loads[k].bus, *self._bounds(k)) for k in range(len(self.loads))
                if self.sliding[k] is not None]

    def _recorded_demand(self):
        demand = self._demand()
        for k in range(len(self.loads)):
            if self.sliding[k] is not None:
                lo, hi = self._bounds(k)
                required = self.flow.required_demand(self.z, self.p_load, self.loads[k].bus)
                demand[self.loads[k].bus] = min(max(required, lo), hi)
        return demand

    def _record(self):
        samples = self.samples
        samples['times'].append(self.t)
        samples['jumps'].append(self.l)
        samples['states'].append(self.z[:self.flow.x_size].copy())
        samples['sigma'].append(list(self.sigma))
        samples['demand'].append(self._recorded_demand())
        samples['p_load'].append(self.p_load.copy())
        if self.graph is not None:
            samples['pc'].append(self.z[self.flow.x_size:self.flow.x_size + self.model.n_buses].copy())
            samples['consensus'].append(self.z[self.flow.x_size:].copy())
        else:
            samples['pc'].append(self._pc_central())

    def _switch(self, k, new, trigger):
        old = self.sigma[k]
        self.sigma[k] = new
        self.l += 1
        if self.l > self.config.max_jumps:
            raise MaxJumpsExceededError(self.config.max_jumps, self.t)
        event = SwitchEvent(self.t, self.l, k, self.loads[k].bus, old, new, trigger)
        self.events.append(event)
        logger.debug(f"Jump l={self.l} at t={self.t:.6f}: load {k} (bus {event.bus}) "
                     f"{old} -> {new} [{trigger}]")
        self._record()

    # -- hysteretic modes ----------------------------------------------------------

    def _guards(self, z):
        return [guard_value(float(z[self.flow.omega_index(load.bus)]), self._pc(z, k),
                            self.sigma[k], load, self.mode)
                for k, load in enumerate(self.loads)]

    def _trigger(self, k):
        load = self.loads[k]
        omega = self._omega(k)
        pc = self._pc(self.z, k)
        if self.sigma[k] == 0:
            return 'frequency' if omega >= load.omega_on else 'power-command'
        if self.mode.uses_power_command and load.pc_lower - pc < load.omega_off - omega:
            return 'power-command'
        return 'frequency'

    def _apply_jumps(self):
        while True:
            pending = [k for k, value in enumerate(self._guards(self.z)) if value >= 0]
            if not pending:
                return
            k = pending[0]
            self._switch(k, 1 - self.sigma[k], self._trigger(k))

    # -- static policy -------------------------------------------------------------

    def _levels_changed(self, z):
        for k, load in enumerate(self.loads):
            if self.sliding[k] is None:
                if static_level(float(z[self.flow.omega_index(load.bus)]), load) != self.sigma[k]:
                    return True
        return False

    def _try_slide(self, k, surface):
        load = self.loads[k]
        threshold = load.omega_upper if surface == 'upper' else load.omega_lower
        lo, hi = (0.0, load.d_upper) if surface == 'upper' else (load.d_lower, 0.0)
        snapped = self.z.copy()
        snapped[self.flow.omega_index(load.bus)] = threshold
        required = self.flow.required_demand(snapped, self.p_load, load.bus)
        if not lo < required < hi:
            return False
        self.z = snapped
        self.sliding[k] = surface
        self.sliding_log.append(SlidingRecord(self.t, k, surface, 'enter'))
        logger.debug(f"Load {k} sliding on {surface} surface at t={self.t:.6f} "
                     f"with demand {required:.6g}")
        return True

    def _static_transitions(self, exit_margin=1e-10):
        """Sliding exits and entries after a step; returns the level changes to log"""
        changes = []
        exited = set()
        for k, load in enumerate(self.loads):
            if self.sliding[k] is None:
                continue
            lo, hi = self._bounds(k)
            required = self.flow.required_demand(self.z, self.p_load, load.bus)
            if lo - exit_margin <= required <= hi + exit_margin:
                continue
            surface = self.sliding[k]
            if surface == 'upper':
                new = 1 if required > hi else 0
            else:
                new = -1 if required < lo else 0
            self.sliding[k] = None
            self.sliding_log.append(SlidingRecord(self.t, k, surface, 'exit'))
            exited.add(k)
            if new != self.sigma[k]:
                changes.append((k, new))

        for k, load in enumerate(self.loads):
            if self.sliding[k] is not None or k in exited:
                continue
            new = static_level(self._omega(k), load)
            if new == self.sigma[k]:
                continue
            pair = {new, self.sigma[k]}
            surface = 'upper' if pair == {0, 1} else ('lower' if pair == {0, -1} else None)
            if surface is not None and self._try_slide(k, surface):
                new = 0 if surface == 'upper' else -1
                if new == self.sigma[k]:
                    continue
            changes.append((k, new))
        return changes

    def _sample_static(self):
        for k, load in enumerate(self.loads):
            new = static_level(self._omega(k), load)
            if new != self.sigma[k]:
                self._switch(k, new, 'frequency')
        self.next_sample += 1

    # -- main loop -----------------------------------------------------------------

    def _sample_time(self):
        return self.next_sample * self.controllers.sample_period

    def _apply_disturbances(self):
        while self.pending and self.pending[0].time <= self.t + TIME_EPS:
            disturbance = self.pending.pop(0)
            if not 0 <= disturbance.bus < self.model.n_buses:
                raise InvalidParameterError('bus', 'disturbance', disturbance.bus, "no such bus")
            self.p_load[disturbance.bus] += disturbance.delta
            logger.info(f"Step disturbance at t={self.t:.6f}: bus {disturbance.bus} "
                        f"p_load += {disturbance.delta:.6g}")

    def _next_stop(self):
        stop = self.config.horizon
        if self.pending:
            stop = min(stop, self.pending[0].time)
        if self.sampled:
            stop = min(stop, self._sample_time())
        return stop

    def _localize(self, h, demand, sliding, crossed):
        lo, hi = 0.0, h
        while hi - lo > self.config.event_tolerance:
            mid = 0.5 * (lo + hi)
            if crossed(self.flow.rk4(self.z, mid, demand, self.p_load, sliding)):
                hi = mid
            else:
                lo = mid
        return hi

    def run(self):
        config = self.config
        hybrid = self.mode not in (ControllerMode.NONE, ControllerMode.STATIC)
        self._apply_disturbances()
        if self.filippov:
            for k, load in enumerate(self.loads):
                omega = self._omega(k)
                if omega == load.omega_upper:
                    self._try_slide(k, 'upper')
                elif omega == load.omega_lower:
                    self._try_slide(k, 'lower')
        self._record()
        steps = 0

        while self.t < config.horizon - TIME_EPS:
            if hybrid:
                self._apply_jumps()
            if self.sampled and abs(self.t - self._sample_time()) <= TIME_EPS:
                self._sample_static()

            stop = self._next_stop()
            h = min(config.dt, stop - self.t)
            if stop - (self.t + h) < TIME_EPS:
                h = stop - self.t
            demand = self._demand()
            sliding = self._sliding_terms()
            z_next = self.flow.rk4(self.z, h, demand, self.p_load, sliding)

            if hybrid and any(value >= 0 for value in self._guards(z_next)):
                h = self._localize(h, demand, sliding,
                                   lambda z: any(value >= 0 for value in self._guards(z)))
                z_next = self.flow.rk4(self.z, h, demand, self.p_load, sliding)
            elif self.filippov and self._levels_changed(z_next):
                h = self._localize(h, demand, sliding, self._levels_changed)
                z_next = self.flow.rk4(self.z, h, demand, self.p_load, sliding)

            self.t += h
            if abs(self.t - stop) <= TIME_EPS:
                self.t = stop
            self.z = z_next
            steps += 1
            if not np.all(np.isfinite(self.z)):
                raise NonFiniteStateError(self.t)

            changes = self._static_transitions() if self.filippov else []
            self._apply_disturbances()
            self._record()
            for k, new in changes:
                self._switch(k, new, 'frequency')

        if hybrid:
            self._apply_jumps()
        return self._trajectory(steps)

    def _trajectory(self, steps):
        samples = self.samples
        n_loads = len(self.loads)
        rate = self.flow.derivative(self.z, self._demand(), self.p_load, self._sliding_terms())
        metadata = {
            'mode': self.mode.value,
            'static_submode': self.controllers.static_submode.value if self.static else None,
            'sample_period': self.controllers.sample_period if self.sampled else None,
            'dt': self.config.dt,
            'event_tolerance': self.config.event_tolerance,
            'horizon': self.config.horizon,
            'max_jumps': self.config.max_jumps,
            'steps': steps,
            'distributed': self.graph is not None,
        }
        return Trajectory(
            model=self.model,
            controllers=self.controllers,
            times=np.array(samples['times']),
            jumps=np.array(samples['jumps'], dtype=int),
            states=np.array(samples['states']),
            sigma=np.array(samples['sigma'], dtype=int).reshape(len(samples['times']), n_loads),
            demand=np.array(samples['demand']),
            power_command=np.array(samples['pc']),
            p_load=np.array(samples['p_load']),
            consensus=np.array(samples['consensus']) if self.graph is not None else None,
            events=self.events,
            sliding_log=self.sliding_log,
            terminal_rate=float(np.max(np.abs(rate))) if rate.size else 0.0,
            metadata=metadata,
            graph=self.graph,
        )


def simulate(model: NetworkModel, controllers: ControllerSet, initial: Optional[HybridState],
             config: SimConfig, graph: Optional[CommGraph] = None) -> Trajectory:
    """
    Integrate the hybrid system over [0, horizon].

    With a communication graph the loads read their local averaged power
    command; otherwise every load reads p^c = -l(t) + pc_offset.
    """
    if graph is not None and graph.n_buses != model.n_buses:
        raise DimensionMismatchError('communication graph', model.n_buses, graph.n_buses)
    logger.info(f"Simulating {controllers.mode.value} mode: {model.n_buses} buses, "
                f"{controllers.n_loads} loads, horizon {config.horizon} s, dt {config.dt} s")
    trajectory = _Simulator(model, controllers, initial, config, graph).run()
    logger.info(f"Simulation finished: {len(trajectory.events)} switch events, "
                f"terminal rate {trajectory.terminal_rate:.3e}")
    return trajectory
