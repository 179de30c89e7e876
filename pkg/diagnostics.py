"""Post-run monitors for simulated trajectories."""
from dataclasses import dataclass, field
from typing import Optional
import logging

import numpy as np

from consensus import consensus_steady_state, steady_state_integrators
from grid_model import lipschitz_estimate
from hybrid_sim import HybridState, simulate

logger = logging.getLogger(__name__)

LYAPUNOV_FACTOR = 10.0
INTERVAL_SLACK = 1e-9


@dataclass(frozen=True)
class LoadChattering:
    load: int
    bus: int
    switches: int
    min_interval: Optional[float]
    longest_rapid_run: int
    flagged: bool


@dataclass(frozen=True)
class ChatteringReport:
    sampling_period: float
    min_run: int
    loads: tuple

    @property
    def flagged(self):
        return any(entry.flagged for entry in self.loads)

    @property
    def min_interval(self):
        values = [entry.min_interval for entry in self.loads if entry.min_interval is not None]
        return min(values) if values else None

    def to_dict(self):
        return {
            'flagged': self.flagged,
            'sampling_period': self.sampling_period,
            'min_run': self.min_run,
            'min_interval': self.min_interval,
            'loads': [entry.__dict__ for entry in self.loads],
        }


def _switch_times(events, n_loads):
    times = {k: [] for k in range(n_loads)}
    for event in events:
        times.setdefault(event.load, []).append(event.time)
    return {k: np.array(v) for k, v in times.items()}


def detect_chattering(trajectory, sampling_period=None, min_run=5):
    """
    Flag loads that switch at the pace of the controller clock.

    A switch counts as rapid when the shorter of its two neighbouring
    inter-switch intervals is at most twice the sampling period; a load
    chatters when min_run consecutive switches are rapid. Duty-cycled
    chattering keeps only one of the two dwell phases at the clock period.
    """
    if sampling_period is None:
        sampling_period = trajectory.controllers.sample_period
    limit = 2.0 * sampling_period + INTERVAL_SLACK
    buses = [load.bus for load in trajectory.controllers.loads]
    entries = []
    for k, times in _switch_times(trajectory.events, trajectory.sigma.shape[1]).items():
        if len(times) < 2:
            entries.append(LoadChattering(k, buses[k] if k < len(buses) else -1, len(times), None, 0, False))
            continue
        gaps = np.diff(times)
        neighbour = np.full(len(times), np.inf)
        neighbour[:-1] = gaps
        neighbour[1:] = np.minimum(neighbour[1:], gaps)
        run = longest = 0
        for rapid in neighbour <= limit:
            run = run + 1 if rapid else 0
            longest = max(longest, run)
        entries.append(LoadChattering(k, buses[k], len(times), float(np.min(gaps)),
                                      longest, longest >= min_run))
    report = ChatteringReport(sampling_period, min_run, tuple(entries))
    if report.flagged:
        logger.info(f"Chattering detected (min interval {report.min_interval:.6g} s)")
    return report


@dataclass(frozen=True)
class LimitCycleReport:
    verdict: str
    window: float
    switches_in_window: tuple
    frequency_range: tuple
    terminal_rate: float
    min_switches: int
    frequency_tolerance: float
    converged_tolerance: float

    @property
    def flagged(self):
        return self.verdict == 'limit-cycle'

    def to_dict(self):
        return {
            'verdict': self.verdict,
            'window': self.window,
            'switches_in_window': list(self.switches_in_window),
            'frequency_range': list(self.frequency_range),
            'terminal_rate': self.terminal_rate,
            'min_switches': self.min_switches,
            'frequency_tolerance': self.frequency_tolerance,
            'converged_tolerance': self.converged_tolerance,
        }


def detect_limit_cycle(trajectory, window, min_switches=4, frequency_tolerance=1e-6,
                       converged_tolerance=1e-8):
    horizon = trajectory.horizon
    if horizon < 2 * window:
        logger.warning(f"Limit-cycle window {window} s is longer than half the horizon {horizon} s")
        return LimitCycleReport('insufficient-horizon', window, (), (), trajectory.terminal_rate,
                                min_switches, frequency_tolerance, converged_tolerance)
    start = horizon - window
    in_window = trajectory.times >= start
    omega = trajectory.omega[in_window]

    counts = []
    ranges = []
    flagged = False
    for k, load in enumerate(trajectory.controllers.loads[:trajectory.sigma.shape[1]]):
        count = sum(1 for event in trajectory.events if event.load == k and event.time >= start)
        spread = float(np.ptp(omega[:, load.bus])) if len(omega) else 0.0
        counts.append(count)
        ranges.append(spread)
        if count >= min_switches and spread > frequency_tolerance:
            flagged = True

    if flagged:
        verdict = 'limit-cycle'
    elif trajectory.terminal_rate < converged_tolerance:
        verdict = 'converged'
    else:
        verdict = 'undetermined'
    return LimitCycleReport(verdict, window, tuple(counts), tuple(ranges), trajectory.terminal_rate,
                            min_switches, frequency_tolerance, converged_tolerance)


@dataclass(frozen=True)
class DwellReport:
    consecutive: dict
    two_apart: dict

    @property
    def overall(self):
        return min(self.consecutive.values()) if self.consecutive else None

    @property
    def positive(self):
        values = list(self.consecutive.values()) + list(self.two_apart.values())
        return all(value > 0 for value in values)

    def to_dict(self):
        return {'consecutive': {str(k): v for k, v in self.consecutive.items()},
                'two_apart': {str(k): v for k, v in self.two_apart.items()},
                'positive': self.positive}


def min_dwell(trajectory):
    """Per-load minimum gap between consecutive switches and between switches two apart"""
    events = getattr(trajectory, 'events', trajectory)
    per_load = {}
    for event in events:
        per_load.setdefault(event.load, []).append(event.time)
    consecutive = {}
    two_apart = {}
    for load, times in sorted(per_load.items()):
        times = np.array(times)
        if len(times) >= 2:
            consecutive[load] = float(np.min(np.diff(times)))
        if len(times) >= 3:
            two_apart[load] = float(np.min(times[2:] - times[:-2]))
    return DwellReport(consecutive, two_apart)


@dataclass
class LyapunovReport:
    times: np.ndarray
    values: np.ndarray
    components: dict
    settling_time: float
    max_flow_increase: float
    violations: int
    max_jump_delta: float
    lipschitz: float
    factor: float = LYAPUNOV_FACTOR
    extra: dict = field(default_factory=dict)

    @property
    def monotone(self):
        return self.violations == 0

    def to_dict(self):
        return {
            'monotone': self.monotone,
            'settling_time': self.settling_time,
            'max_flow_increase': self.max_flow_increase,
            'violations': self.violations,
            'max_jump_delta': self.max_jump_delta,
            'lipschitz': self.lipschitz,
            'factor': self.factor,
            'initial_value': float(self.values[0]) if len(self.values) else None,
            'final_value': float(self.values[-1]) if len(self.values) else None,
        }


def lyapunov_series(trajectory, equilibrium, settling_time=None, factor=LYAPUNOV_FACTOR):
    """
    Evaluate V = V_F + V_P + V_M (+ V_c with a communication graph) along the run.

    V_F = 1/2 sum M (omega - omega*)^2, V_P = 1/2 sum B (eta - eta*)^2,
    V_M = 1/2 sum (tau / alpha) (p^M - p^M*)^2. After the settling time every
    flow step may increase V by at most factor * (h L)^5 * V plus round-off.
    """
    model = trajectory.model
    omega_star = np.broadcast_to(np.asarray(equilibrium.omega, dtype=float), (model.n_buses,))
    components = {
        'V_F': 0.5 * ((trajectory.omega - omega_star) ** 2) @ model.inertia,
        'V_P': 0.5 * ((trajectory.eta - np.asarray(equilibrium.eta)) ** 2) @ model.susceptance,
        'V_M': 0.5 * ((trajectory.p_mech - np.asarray(equilibrium.p_mech)) ** 2)
        @ (model.time_constant / model.droop),
    }
    lipschitz = lipschitz_estimate(model)
    if trajectory.distributed:
        graph = trajectory.graph
        n = graph.n_buses
        final_load = trajectory.p_load[-1]
        p_star = consensus_steady_state(graph, final_load)
        psi_star = steady_state_integrators(graph, final_load, trajectory.consensus[0, n:])
        components['V_c'] = (0.5 * ((trajectory.consensus[:, :n] - p_star) ** 2) @ graph.bus_gains
                             + 0.5 * ((trajectory.consensus[:, n:] - psi_star) ** 2) @ graph.link_gains)
    values = sum(components.values())

    if settling_time is None:
        settling_time = trajectory.events[-1].time if trajectory.events else 0.0

    times = trajectory.times
    jumps = trajectory.jumps
    steps = np.diff(times)
    deltas = np.diff(values)
    flow = (jumps[1:] == jumps[:-1]) & (times[:-1] >= settling_time) & (steps > 0)
    round_off = 64 * np.finfo(float).eps * (float(np.max(values)) if len(values) else 0.0)
    tolerance = factor * (steps * lipschitz) ** 5 * values[:-1] + round_off
    violations = int(np.count_nonzero(flow & (deltas > tolerance)))
    max_increase = float(max(0.0, np.max(deltas[flow]))) if np.any(flow) else 0.0
    across = jumps[1:] != jumps[:-1]
    max_jump = float(np.max(np.abs(deltas[across]))) if np.any(across) else 0.0

    if violations:
        logger.warning(f"Lyapunov function increased on {violations} flow steps after "
                       f"t={settling_time:.6g} s (max {max_increase:.3e})")
    return LyapunovReport(times, values, components, float(settling_time), max_increase,
                          violations, max_jump, lipschitz, factor)


def peak_frequency_deviation(trajectory):
    return float(np.max(np.abs(trajectory.omega))) if trajectory.omega.size else 0.0


@dataclass(frozen=True)
class SupportComparison:
    peak_enabled: float
    peak_disabled: float

    @property
    def improved(self):
        return self.peak_enabled < self.peak_disabled

    def to_dict(self):
        return {'peak_enabled': self.peak_enabled, 'peak_disabled': self.peak_disabled,
                'improved': self.improved}


def frequency_support_comparison(model, controllers, initial, config, graph=None):
    """Peak |omega| of the same run with the on-off loads enabled and disabled"""
    enabled = simulate(model, controllers, initial, config, graph)
    disabled_initial = None
    if initial is not None:
        disabled_initial = HybridState(initial.continuous, (), initial.consensus)
    disabled = simulate(model, controllers.disabled(), disabled_initial, config, graph)
    comparison = SupportComparison(peak_frequency_deviation(enabled), peak_frequency_deviation(disabled))
    logger.info(f"Peak |omega|: {comparison.peak_enabled:.6g} with loads, "
                f"{comparison.peak_disabled:.6g} without")
    return comparison
