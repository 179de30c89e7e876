"""
Equilibria of the network under each load-control policy.

At any equilibrium every bus shares one frequency deviation
    omega* = (-l - d_bar^T sigma*) / D
and the line state follows from a DC power flow on the balanced injections.
"""
from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from errors import DesignConditionViolatedError, InvalidParameterError, TooManyLoadsError
from grid_model import NetworkModel, dc_power_flow
from load_control import (ControllerMode, ControllerSet, design2_ranking, in_flow_set, static_demand,
                          static_filippov_interval, static_level, switch_vectors, validate_design)

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 20
ENUMERATION_CHUNK = 1 << 16
BALANCE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class EquilibriumPoint:
    omega: float
    sigma: tuple
    p_mech: np.ndarray
    d_unc: np.ndarray
    eta: np.ndarray
    flows: np.ndarray
    demand: np.ndarray
    demand_interval: Optional[tuple] = None
    p_command: Optional[float] = None

    def to_dict(self):
        result = {
            'omega': self.omega,
            'sigma': list(self.sigma),
            'p_mech': self.p_mech.tolist(),
            'd_unc': self.d_unc.tolist(),
            'eta': self.eta.tolist(),
            'flows': self.flows.tolist(),
            'demand': self.demand.tolist(),
        }
        if self.demand_interval is not None:
            result['demand_interval'] = [list(pair) for pair in self.demand_interval]
        if self.p_command is not None:
            result['p_command'] = self.p_command
        return result


def equilibrium_frequency(ell, sigma, aggregate_damping, magnitudes):
    if not aggregate_damping > 0:
        raise InvalidParameterError('aggregate_damping', 'equilibrium', aggregate_damping, "must be > 0")
    switched = float(np.dot(np.asarray(magnitudes, dtype=float), np.asarray(sigma, dtype=float))) \
        if len(sigma) else 0.0
    return (-ell - switched) / aggregate_damping


def full_equilibrium(model: NetworkModel, omega, sigma=(), demand=None, demand_interval=None,
                     p_command=None) -> EquilibriumPoint:
    """Assemble the full equilibrium state for a common frequency and controllable demand"""
    demand = np.zeros(model.n_buses) if demand is None else np.asarray(demand, dtype=float)
    p_mech = -model.droop * omega
    d_unc = model.damping * omega
    injections = -model.p_load + p_mech - demand - d_unc
    eta, flows = dc_power_flow(model, injections)
    return EquilibriumPoint(float(omega), tuple(int(s) for s in sigma), p_mech, d_unc, eta, flows,
                            demand, demand_interval, p_command)


def _model_for(model, ell):
    """The model itself, or one with l spread evenly when a different aggregate is requested"""
    if ell is None or abs(ell - model.aggregate_load) <= BALANCE_SLACK:
        return model
    shift = (ell - model.aggregate_load) / model.n_buses
    return model.with_loads(model.p_load + shift)


@dataclass(frozen=True)
class IterationStep:
    pi: tuple
    omega_tilde: float
    switched_on: Optional[int]


@dataclass(frozen=True)
class ExistenceReport:
    conditions: tuple
    verdict: str
    trace: tuple
    certificate: str
    point: Optional[EquilibriumPoint] = None
    algorithm_succeeded: bool = True

    @property
    def exists(self):
        return self.verdict == 'exists'

    @property
    def iterations(self):
        return sum(1 for step in self.trace if step.switched_on is not None)

    def to_dict(self):
        return {
            'verdict': self.verdict,
            'certificate': self.certificate,
            'algorithm_succeeded': self.algorithm_succeeded,
            'conditions': [{'bus': c.bus, 'width': c.value, 'bound': c.bound, 'passed': c.passed}
                           for c in self.conditions],
            'trace': [{'pi': list(step.pi), 'omega_tilde': step.omega_tilde,
                       'switched_on': step.switched_on} for step in self.trace],
            'point': self.point.to_dict() if self.point is not None else None,
        }


def _exhaustive_hysteresis(ell, aggregate_damping, loads):
    """First sigma (lexicographic) whose equilibrium frequency lies in every load's flow set"""
    n = len(loads)
    magnitudes = np.array([load.magnitude for load in loads])
    omega_off = np.array([load.omega_off for load in loads])
    omega_on = np.array([load.omega_on for load in loads])
    for start in range(0, 2 ** n, ENUMERATION_CHUNK):
        sigma = switch_vectors(n, start, min(start + ENUMERATION_CHUNK, 2 ** n))
        omega = (-ell - sigma @ magnitudes) / aggregate_damping
        on_ok = (sigma == 0) | (omega[:, None] >= omega_off)
        off_ok = (sigma == 1) | (omega[:, None] <= omega_on)
        valid = np.flatnonzero(np.all(on_ok & off_ok, axis=1))
        if valid.size:
            return tuple(int(s) for s in sigma[valid[0]])
    return None


def solve_hysteresis_equilibrium(model: NetworkModel, controllers: ControllerSet, ell=None,
                                 certify=None) -> ExistenceReport:
    """
    Constructive search for an equilibrium of the plain hysteresis policy.

    Starting from every load off, repeatedly switch on the load with the
    smallest off-threshold among those forced on, until nothing is forced on.
    If a switched-on load ends up forced off the search fails; the 2^n
    candidates are then checked exhaustively (certify=None does so when
    n <= 20, certify=True insists on it, certify=False skips it).
    """
    loads = controllers.loads
    n = len(loads)
    ell = model.aggregate_load if ell is None else float(ell)
    aggregate_damping = model.aggregate_damping
    conditions = tuple(check for check in
                       validate_design(controllers, aggregate_damping, ControllerMode.HYSTERESIS).checks
                       if check.condition == 'hysteresis_width')
    if certify and n > EXHAUSTIVE_LIMIT:
        raise TooManyLoadsError(n, EXHAUSTIVE_LIMIT)

    sigma = [0] * n
    omega = -ell / aggregate_damping
    trace = []
    consistent = True
    while True:
        pi = tuple(k for k in range(n) if sigma[k] == 0 and omega > loads[k].omega_on)
        if not pi:
            trace.append(IterationStep(pi, omega, None))
            break
        k = min(pi, key=lambda j: (loads[j].omega_off, j))
        trace.append(IterationStep(pi, omega, k))
        sigma[k] = 1
        omega -= loads[k].magnitude / aggregate_damping
        if any(sigma[j] == 1 and omega < loads[j].omega_off for j in range(n)):
            consistent = False
            trace.append(IterationStep((), omega, None))
            break

    target = _model_for(model, ell)
    if consistent:
        demand = controllers.demand_vector(sigma, model.n_buses)
        omega = equilibrium_frequency(ell, sigma, aggregate_damping, controllers.magnitudes)
        point = full_equilibrium(target, omega, sigma, demand)
        logger.debug(f"Hysteresis equilibrium found after {len(trace) - 1} iterations: omega*={omega:.6g}")
        return ExistenceReport(conditions, 'exists', tuple(trace), 'constructive', point)

    if certify is False or n > EXHAUSTIVE_LIMIT:
        logger.info("Constructive search failed; no exhaustive certificate computed")
        return ExistenceReport(conditions, 'none', tuple(trace), 'trace-only', None, False)

    found = _exhaustive_hysteresis(ell, aggregate_damping, loads)
    if found is None:
        logger.info(f"No hysteresis equilibrium exists for l={ell:.6g} (checked {2 ** n} candidates)")
        return ExistenceReport(conditions, 'none', tuple(trace), 'exhaustive', None, False)
    omega = equilibrium_frequency(ell, found, aggregate_damping, controllers.magnitudes)
    point = full_equilibrium(target, omega, found, controllers.demand_vector(found, model.n_buses))
    return ExistenceReport(conditions, 'exists', tuple(trace), 'exhaustive', point, False)


def _optimal_candidates(ell, pc, aggregate_damping, loads):
    n = len(loads)
    magnitudes = np.array([load.magnitude for load in loads])
    omega_off = np.array([load.omega_off for load in loads])
    omega_on = np.array([load.omega_on for load in loads])
    pc_lower = np.array([load.pc_lower for load in loads])
    pc_upper = np.array([load.pc_upper for load in loads])

    def admissible(sigma):
        omega = (-ell - sigma @ magnitudes) / aggregate_damping
        forced_on = (omega[:, None] > omega_on) | (pc > pc_upper)[None, :]
        forced_off = (omega[:, None] < omega_off) & (pc < pc_lower)[None, :]
        valid = ((sigma == 1) & ~forced_off) | ((sigma == 0) & ~forced_on)
        return np.all(valid, axis=1)

    found = []
    if n <= EXHAUSTIVE_LIMIT:
        for start in range(0, 2 ** n, ENUMERATION_CHUNK):
            sigma = switch_vectors(n, start, min(start + ENUMERATION_CHUNK, 2 ** n))
            found.extend(tuple(int(s) for s in row) for row in sigma[admissible(sigma)])
        return found

    order = design2_ranking([load.cost for load in loads], magnitudes, [load.bus for load in loads])
    ladder = np.zeros((n + 1, n), dtype=np.int8)
    for count in range(1, n + 1):
        ladder[count, order[:count]] = 1
    found = sorted(tuple(int(s) for s in row) for row in ladder[admissible(ladder)])
    return found


def equilibria_adapted(model: NetworkModel, controllers: ControllerSet, ell=None, mode=None):
    """
    Equilibria of the adapted or optimality-tuned schemes with p^c = -l.

    Adapted: loads with p^c <= pc_lower are off, the rest on. Optimal: every
    switch vector whose equilibrium frequency lies in each load's flow set.
    """
    mode = controllers.mode if mode is None else mode
    if mode not in (ControllerMode.ADAPTED, ControllerMode.OPTIMAL):
        raise InvalidParameterError('mode', 'equilibria_adapted', mode.value, "adapted or optimal required")
    aggregate_damping = model.aggregate_damping
    report = validate_design(controllers, aggregate_damping, mode)
    if not report.passed:
        raise DesignConditionViolatedError(report)

    ell = model.aggregate_load if ell is None else float(ell)
    pc = -ell + controllers.pc_offset
    loads = controllers.loads
    if mode is ControllerMode.ADAPTED:
        candidates = [tuple(0 if pc <= load.pc_lower else 1 for load in loads)]
    else:
        candidates = _optimal_candidates(ell, pc, aggregate_damping, loads)

    target = _model_for(model, ell)
    points = []
    for sigma in candidates:
        omega = equilibrium_frequency(ell, sigma, aggregate_damping, controllers.magnitudes)
        if not all(in_flow_set(omega, pc, s, load, mode) for s, load in zip(sigma, loads)):
            logger.debug(f"Candidate {sigma} leaves the flow set at omega*={omega:.6g}; dropped")
            continue
        points.append(full_equilibrium(target, omega, sigma, controllers.demand_vector(sigma, model.n_buses),
                                       p_command=pc))
    logger.info(f"{mode.value} equilibria for l={ell:.6g}: {[p.sigma for p in points]}")
    return points


def solve_static_equilibrium(model: NetworkModel, controllers: ControllerSet, ell=None) -> EquilibriumPoint:
    """
    Equilibrium of the static on-off policy with Filippov-convexified demand.

    The balance D*omega + l + sum d(omega) = 0 is monotone in omega, so the
    root is found either inside a region between thresholds or on a
    threshold where the convexified demand brackets the residual.
    """
    loads = controllers.loads
    ell = model.aggregate_load if ell is None else float(ell)
    aggregate_damping = model.aggregate_damping
    thresholds = sorted({load.omega_upper for load in loads} | {load.omega_lower for load in loads})
    target = _model_for(model, ell)

    for theta in thresholds:
        lo = sum(static_filippov_interval(theta, load)[0] for load in loads)
        hi = sum(static_filippov_interval(theta, load)[1] for load in loads)
        need = -ell - aggregate_damping * theta
        if lo - BALANCE_SLACK <= need <= hi + BALANCE_SLACK:
            demand = np.zeros(model.n_buses)
            intervals = [(0.0, 0.0)] * model.n_buses
            remaining = need - lo
            for load in loads:
                low, high = static_filippov_interval(theta, load)
                share = min(max(remaining, 0.0), high - low)
                demand[load.bus] = low + share
                remaining -= share
                intervals[load.bus] = (low, high)
            sigma = tuple(static_level(theta, load) for load in loads)
            return full_equilibrium(target, theta, sigma, demand, tuple(intervals))

    edges = [-np.inf] + thresholds + [np.inf]
    for left, right in zip(edges[:-1], edges[1:]):
        if np.isinf(left) and np.isinf(right):
            sample = 0.0
        elif np.isinf(left):
            sample = right - 1.0
        elif np.isinf(right):
            sample = left + 1.0
        else:
            sample = 0.5 * (left + right)
        demand = np.zeros(model.n_buses)
        for load in loads:
            demand[load.bus] = static_demand(sample, load)
        omega = (-ell - float(np.sum(demand))) / aggregate_damping
        if left < omega < right:
            sigma = tuple(static_level(omega, load) for load in loads)
            return full_equilibrium(target, omega, sigma, demand,
                                    tuple((d, d) for d in demand))
    raise InvalidParameterError('controllers', 'static equilibrium', len(loads), "no balancing frequency found")
