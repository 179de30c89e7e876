"""
On-off load control policies as pure guard/jump logic, plus threshold
synthesis and validation for the adapted and optimality-tuned schemes.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence
import logging

import numpy as np

from errors import InvalidParameterError

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_PERIOD = 0.01
DESIGN_TOLERANCE = 1e-12


class ControllerMode(Enum):
    NONE = 'none'
    STATIC = 'static'
    HYSTERESIS = 'hysteresis'
    ADAPTED = 'adapted'
    OPTIMAL = 'optimal'

    @property
    def uses_power_command(self):
        return self in (ControllerMode.ADAPTED, ControllerMode.OPTIMAL)


class StaticSubMode(Enum):
    IDEAL_FILIPPOV = 'ideal_filippov'
    SAMPLED = 'sampled'


@dataclass(frozen=True)
class StaticSwitchConfig:
    bus: int
    omega_upper: float
    omega_lower: float
    d_upper: float
    d_lower: float = 0.0

    def validate(self, index=None):
        element = f"load at bus {self.bus}" if index is None else f"load {index} (bus {self.bus})"
        if not self.omega_upper > 0:
            raise InvalidParameterError('omega_upper', element, self.omega_upper, "must be > 0")
        if not self.omega_lower < 0:
            raise InvalidParameterError('omega_lower', element, self.omega_lower, "must be < 0")
        if not 0 <= self.d_upper < np.inf:
            raise InvalidParameterError('d_upper', element, self.d_upper, "must be >= 0")
        if not -np.inf < self.d_lower <= 0:
            raise InvalidParameterError('d_lower', element, self.d_lower, "must be <= 0")


@dataclass(frozen=True)
class HysteresisConfig:
    bus: int
    omega_off: float
    omega_on: float
    magnitude: float
    pc_lower: Optional[float] = None
    pc_upper: Optional[float] = None
    cost: Optional[float] = None

    def validate(self, mode, index=None):
        element = f"load at bus {self.bus}" if index is None else f"load {index} (bus {self.bus})"
        if not self.omega_off > 0:
            raise InvalidParameterError('omega_off', element, self.omega_off,
                                        "hysteresis requires omega_on > omega_off > 0")
        if not self.omega_on > self.omega_off:
            raise InvalidParameterError('omega_on', element, self.omega_on,
                                        "hysteresis requires omega_on > omega_off > 0")
        if not self.magnitude > 0:
            raise InvalidParameterError('magnitude', element, self.magnitude, "must be > 0")
        if mode.uses_power_command and self.pc_lower is None:
            raise InvalidParameterError('pc_lower', element, None, f"required in {mode.value} mode")
        if mode is ControllerMode.OPTIMAL:
            if self.pc_upper is None or not self.pc_upper > self.pc_lower:
                raise InvalidParameterError('pc_upper', element, self.pc_upper,
                                            "optimal mode requires pc_upper > pc_lower")
            if self.cost is None or not self.cost > 0:
                raise InvalidParameterError('cost', element, self.cost, "optimal mode requires cost > 0")


@dataclass(frozen=True)
class ControllerSet:
    mode: ControllerMode
    loads: tuple = ()
    static_submode: StaticSubMode = StaticSubMode.IDEAL_FILIPPOV
    sample_period: float = DEFAULT_SAMPLE_PERIOD
    pc_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'loads', tuple(self.loads))
        if not self.sample_period > 0:
            raise InvalidParameterError('sample_period', 'controllers', self.sample_period, "must be > 0")
        buses = [load.bus for load in self.loads]
        if len(set(buses)) != len(buses):
            raise InvalidParameterError('bus', 'controllers', buses, "at most one load per bus")
        for index, load in enumerate(self.loads):
            if self.mode is ControllerMode.STATIC:
                if not isinstance(load, StaticSwitchConfig):
                    raise InvalidParameterError('loads', f"load {index}", type(load).__name__,
                                                "static mode needs StaticSwitchConfig")
                load.validate(index)
            elif self.mode is not ControllerMode.NONE:
                if not isinstance(load, HysteresisConfig):
                    raise InvalidParameterError('loads', f"load {index}", type(load).__name__,
                                                f"{self.mode.value} mode needs HysteresisConfig")
                load.validate(self.mode, index)

    @property
    def n_loads(self):
        return 0 if self.mode is ControllerMode.NONE else len(self.loads)

    @property
    def buses(self):
        return np.array([load.bus for load in self.loads], dtype=int)

    @property
    def magnitudes(self):
        if self.mode is ControllerMode.STATIC:
            return np.array([load.d_upper for load in self.loads])
        return np.array([load.magnitude for load in self.loads])

    def check_buses(self, n_buses):
        for index, load in enumerate(self.loads):
            if not 0 <= load.bus < n_buses:
                raise InvalidParameterError('bus', f"load {index}", load.bus, "no such bus")

    def demand_vector(self, sigma, n_buses):
        """Per-bus controllable demand d^c = d_bar * sigma for the hybrid modes"""
        demand = np.zeros(n_buses)
        if self.n_loads:
            np.add.at(demand, self.buses, self.magnitudes * np.asarray(sigma, dtype=float))
        return demand

    def disabled(self):
        return replace(self, mode=ControllerMode.NONE)


# -- static policy --------------------------------------------------------------

def static_demand(omega, cfg: StaticSwitchConfig):
    if omega > cfg.omega_upper:
        return cfg.d_upper
    if omega > cfg.omega_lower:
        return 0.0
    return cfg.d_lower


def static_level(omega, cfg: StaticSwitchConfig):
    """Demand level of the static policy: 1 (d_upper), 0, or -1 (d_lower)"""
    if omega > cfg.omega_upper:
        return 1
    if omega > cfg.omega_lower:
        return 0
    return -1


def static_filippov_interval(omega, cfg: StaticSwitchConfig):
    """Convexified demand at omega as a closed interval (lo, hi)"""
    if omega == cfg.omega_upper:
        return 0.0, cfg.d_upper
    if omega == cfg.omega_lower:
        return cfg.d_lower, 0.0
    value = static_demand(omega, cfg)
    return value, value


# -- hysteretic policies ----------------------------------------------------------

def guard_value(omega, pc, sigma, cfg: HysteresisConfig, mode: ControllerMode):
    """
    Signed distance to the jump set: >= 0 means (omega, pc, sigma) is in it.

    Off loads jump on at omega >= omega_on (or pc >= pc_upper in optimal mode);
    on loads jump off at omega <= omega_off, additionally requiring
    pc <= pc_lower in the adapted and optimal modes.
    """
    if sigma == 0:
        value = omega - cfg.omega_on
        if mode is ControllerMode.OPTIMAL:
            value = max(value, pc - cfg.pc_upper)
        return value
    value = cfg.omega_off - omega
    if mode.uses_power_command:
        value = min(value, cfg.pc_lower - pc)
    return value


def in_jump_set(omega, pc, sigma, cfg: HysteresisConfig, mode: ControllerMode):
    return guard_value(omega, pc, sigma, cfg, mode) >= 0


def jump_update(omega, pc, sigma, cfg: HysteresisConfig, mode: ControllerMode):
    if in_jump_set(omega, pc, sigma, cfg, mode):
        return 1 - sigma
    return sigma


def in_flow_set(omega, pc, sigma, cfg: HysteresisConfig, mode: ControllerMode):
    """Membership of sigma in the closed set of admissible flow values"""
    forced_on = omega > cfg.omega_on
    if mode is ControllerMode.OPTIMAL:
        forced_on = forced_on or pc > cfg.pc_upper
    forced_off = omega < cfg.omega_off
    if mode.uses_power_command:
        forced_off = forced_off and pc < cfg.pc_lower
    if forced_on:
        return sigma == 1
    if forced_off:
        return sigma == 0
    return sigma in (0, 1)


# -- threshold synthesis -----------------------------------------------------------

def make_design1(omega_off: Sequence[float], aggregate_damping):
    """Lower power-command thresholds on the boundary pc_lower = D * omega_off"""
    omega_off = np.asarray(omega_off, dtype=float)
    if not aggregate_damping > 0:
        raise InvalidParameterError('aggregate_damping', 'design 1', aggregate_damping, "must be > 0")
    for index, value in enumerate(omega_off):
        if not value > 0:
            raise InvalidParameterError('omega_off', f"load {index}", value, "must be > 0")
    return aggregate_damping * omega_off


def check_design1(pc_lower, omega_off, aggregate_damping):
    """Per-load verdicts of pc_lower <= D * omega_off"""
    bound = aggregate_damping * np.asarray(omega_off, dtype=float)
    return np.asarray(pc_lower, dtype=float) <= bound + DESIGN_TOLERANCE


def design2_ranking(costs, magnitudes, buses):
    """Load indices sorted by ascending cost per unit, ties by ascending bus"""
    ratios = np.asarray(costs, dtype=float) / np.asarray(magnitudes, dtype=float)
    return sorted(range(len(ratios)), key=lambda k: (ratios[k], buses[k]))


def make_design2(buses, costs, magnitudes, aggregate_damping, omega_on_factor=2.0,
                 omega_on_overrides=None):
    """
    Optimal-mode thresholds: omega_off = c^d / d_bar, a cumulative pc_lower ladder
    in cost-per-unit order and pc_upper at the middle of (pc_lower, pc_lower + delta).

    Returns HysteresisConfig objects in the input order.
    """
    costs = np.asarray(costs, dtype=float)
    magnitudes = np.asarray(magnitudes, dtype=float)
    buses = [int(b) for b in buses]
    if not aggregate_damping > 0:
        raise InvalidParameterError('aggregate_damping', 'design 2', aggregate_damping, "must be > 0")
    for index in range(len(buses)):
        if not costs[index] > 0:
            raise InvalidParameterError('cost', f"load {index}", costs[index], "must be > 0")
        if not magnitudes[index] > 0:
            raise InvalidParameterError('magnitude', f"load {index}", magnitudes[index], "must be > 0")
    if not omega_on_factor > 1:
        raise InvalidParameterError('omega_on_factor', 'design 2', omega_on_factor, "must be > 1")
    overrides = omega_on_overrides or {}
    if not buses:
        return ()

    delta = float(np.min(magnitudes))
    omega_off = costs / magnitudes
    configs = [None] * len(buses)
    cumulative = 0.0
    for index in design2_ranking(costs, magnitudes, buses):
        pc_lower = aggregate_damping * omega_off[index] + cumulative
        cumulative += magnitudes[index]
        omega_on = overrides.get(buses[index], omega_on_factor * omega_off[index])
        configs[index] = HysteresisConfig(
            bus=buses[index], omega_off=float(omega_off[index]), omega_on=float(omega_on),
            magnitude=float(magnitudes[index]), pc_lower=float(pc_lower),
            pc_upper=float(pc_lower + delta / 2), cost=float(costs[index]))
    logger.info(f"Design 2 thresholds synthesized for {len(configs)} loads (delta={delta:.6g})")
    return tuple(configs)


@dataclass(frozen=True)
class ConditionCheck:
    bus: int
    condition: str
    passed: bool
    value: float
    bound: float
    informational: bool = False


@dataclass(frozen=True)
class DesignReport:
    mode: ControllerMode
    checks: tuple = field(default_factory=tuple)

    @property
    def passed(self):
        return all(check.passed for check in self.checks if not check.informational)

    def failures(self, include_informational=False):
        return [c for c in self.checks
                if not c.passed and (include_informational or not c.informational)]

    def to_dict(self):
        return {
            'mode': self.mode.value,
            'passed': self.passed,
            'checks': [{'bus': c.bus, 'condition': c.condition, 'passed': bool(c.passed),
                        'value': c.value, 'bound': c.bound, 'informational': c.informational}
                       for c in self.checks],
        }


def validate_design(controllers: ControllerSet, aggregate_damping, mode=None):
    """Report-only check of the design conditions that apply to the mode"""
    mode = controllers.mode if mode is None else mode
    loads = controllers.loads
    checks = []
    if mode in (ControllerMode.NONE, ControllerMode.STATIC):
        return DesignReport(mode, ())

    for load in loads:
        width = load.omega_on - load.omega_off
        bound = load.magnitude / aggregate_damping
        checks.append(ConditionCheck(load.bus, 'hysteresis_width', bool(width >= bound - DESIGN_TOLERANCE),
                                     float(width), float(bound),
                                     informational=mode is not ControllerMode.HYSTERESIS))

    if mode is ControllerMode.ADAPTED and loads:
        pc_lower = [load.pc_lower for load in loads]
        omega_off = [load.omega_off for load in loads]
        verdicts = check_design1(pc_lower, omega_off, aggregate_damping)
        for load, passed in zip(loads, verdicts):
            checks.append(ConditionCheck(load.bus, 'design1', bool(passed), float(load.pc_lower),
                                         float(aggregate_damping * load.omega_off)))

    if mode is ControllerMode.OPTIMAL and loads:
        costs = [load.cost for load in loads]
        magnitudes = [load.magnitude for load in loads]
        delta = min(magnitudes)
        cumulative = 0.0
        for index in design2_ranking(costs, magnitudes, [load.bus for load in loads]):
            load = loads[index]
            ratio = load.cost / load.magnitude
            checks.append(ConditionCheck(load.bus, 'design2_omega_off',
                                         bool(abs(load.omega_off - ratio) <= DESIGN_TOLERANCE),
                                         float(load.omega_off), float(ratio)))
            ladder = aggregate_damping * load.omega_off + cumulative
            checks.append(ConditionCheck(load.bus, 'design2_pc_lower',
                                         bool(abs(load.pc_lower - ladder) <= DESIGN_TOLERANCE),
                                         float(load.pc_lower), float(ladder)))
            inside = load.pc_lower < load.pc_upper < load.pc_lower + delta
            checks.append(ConditionCheck(load.bus, 'design2_pc_upper', bool(inside),
                                         float(load.pc_upper), float(load.pc_lower + delta)))
            cumulative += load.magnitude
    return DesignReport(mode, tuple(checks))


def switch_vectors(n, start=0, stop=None):
    """
    Rows of every switch vector with integer codes in [start, stop).

    The first load is the most significant bit, so ascending codes follow
    lexicographic order of sigma.
    """
    stop = 2 ** n if stop is None else stop
    codes = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.int8)
