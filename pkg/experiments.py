"""
Experiment subcommands run on a scenario document, plus the batch worker.

Every subcommand returns a SummaryReport; `run_command` also writes it
(and any trajectory) into the output directory.
"""
from dataclasses import dataclass, field
from pathlib import Path
import json
import logging

import numpy as np
import pandas as pd
from PyQt6.QtCore import QThread, pyqtSignal

from consensus import CommGraph, check_assumption1, simulate_consensus
from diagnostics import (detect_chattering, detect_limit_cycle, frequency_support_comparison, lyapunov_series,
                         min_dwell)
from equilibrium import (equilibria_adapted, equilibrium_frequency, full_equilibrium,
                         solve_hysteresis_equilibrium, solve_static_equilibrium)
from errors import DesignConditionViolatedError, HyloadError, TooManyLoadsError
from grid_model import ContinuousState, flow_field
from hybrid_sim import simulate
from load_control import ControllerMode, validate_design
from oslc_opt import (BRUTE_FORCE_LIMIT, OslcInstance, epsilon_bound, ga_solve, solve_brute_force, solve_relaxed,
                      verify_equilibrium_optimality)
from scenario import load_scenario, scenario_initial_state
from settings import Settings

logger = logging.getLogger(__name__)

COMMANDS = ('simulate', 'equilibrium', 'design', 'optimize', 'consensus', 'validate', 'compare')
MATCH_TOLERANCE = 1e-6
CONSENSUS_TOLERANCE = 1e-6
VC_TOLERANCE = 1e-10
FLOAT_FORMAT = '%.10g'


@dataclass
class SummaryReport:
    scenario: str
    command: str
    verdicts: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.errors and all(self.verdicts.values())

    @property
    def exit_code(self):
        if self.errors:
            return 2
        return 0 if self.passed else 1

    def to_dict(self):
        return {
            'scenario': self.scenario,
            'command': self.command,
            'passed': self.passed,
            'verdicts': dict(self.verdicts),
            'sections': self.sections,
            'errors': list(self.errors),
            'artifacts': [str(path) for path in self.artifacts],
        }


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (tuple, set)):
        return list(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def _final_model(document):
    return document.model.with_loads(document.final_load)


def _expected_equilibria(document):
    """Equilibria under the post-disturbance load, or an explanation of why there are none"""
    model = _final_model(document)
    controllers = document.controllers
    mode = controllers.mode
    if mode is ControllerMode.NONE:
        omega = equilibrium_frequency(model.aggregate_load, (), model.aggregate_damping, ())
        return [full_equilibrium(model, omega)], None
    if mode is ControllerMode.STATIC:
        return [solve_static_equilibrium(model, controllers)], None
    if mode is ControllerMode.HYSTERESIS:
        try:
            report = solve_hysteresis_equilibrium(model, controllers)
        except TooManyLoadsError as e:
            return [], str(e)
        return ([report.point], None) if report.exists else ([], 'no hysteresis equilibrium exists')
    try:
        return equilibria_adapted(model, controllers), None
    except DesignConditionViolatedError as e:
        return [], str(e)


def _matches(trajectory, point, static):
    omega = trajectory.omega[-1]
    if np.max(np.abs(omega - point.omega)) > MATCH_TOLERANCE:
        return False
    if static:
        return True
    return tuple(int(s) for s in trajectory.sigma[-1]) == tuple(point.sigma)


def _settling_time(document, trajectory):
    if document.simulation.settling_time is not None:
        return document.simulation.settling_time
    times = [event.time for event in trajectory.events[-1:]]
    times += [d.time for d in document.disturbances]
    return max(times) if times else 0.0


def output_indices(times, jumps, period):
    """Samples on the output grid, both sides of every jump and the last sample"""
    times = np.asarray(times)
    jumps = np.asarray(jumps)
    if times.size == 0:
        return np.array([], dtype=int)
    bins = np.floor(times / period + 1e-9)
    keep = np.r_[True, bins[1:] != bins[:-1]]
    jumped = np.flatnonzero(jumps[1:] != jumps[:-1])
    keep[jumped] = True
    keep[jumped + 1] = True
    keep[-1] = True
    return np.flatnonzero(keep)


def trajectory_frame(trajectory, period):
    """Plot-ready table: t, l, omega_i, sigma_k, pM_i, then pc (or pc_i when distributed)"""
    rows = output_indices(trajectory.times, trajectory.jumps, period)
    n = trajectory.model.n_buses
    columns = {'t': trajectory.times[rows], 'l': trajectory.jumps[rows]}
    for i in range(n):
        columns[f"omega_{i + 1}"] = trajectory.omega[rows, i]
    for k in range(trajectory.sigma.shape[1]):
        columns[f"sigma_{k + 1}"] = trajectory.sigma[rows, k]
    for i in range(n):
        columns[f"pM_{i + 1}"] = trajectory.p_mech[rows, i]
    command = np.asarray(trajectory.power_command)
    if command.ndim == 2:
        for i in range(command.shape[1]):
            columns[f"pc_{i + 1}"] = command[rows, i]
    else:
        columns['pc'] = command[rows]
    return pd.DataFrame(columns)


def _simulate(document, report, settings):
    config = document.sim_config()
    trajectory = simulate(document.model, document.controllers, scenario_initial_state(document), config,
                          document.communication)
    static = document.controllers.mode is ControllerMode.STATIC
    sim = document.simulation

    chattering = detect_chattering(trajectory, min_run=sim.chattering_run)
    limit_cycle = detect_limit_cycle(trajectory, sim.window)
    dwell = min_dwell(trajectory)
    report.sections.update({
        'terminal_omega': trajectory.omega[-1].tolist(),
        'terminal_sigma': trajectory.sigma[-1].tolist(),
        'terminal_rate': trajectory.terminal_rate,
        'switch_events': len(trajectory.events),
        'chattering': chattering.to_dict(),
        'limit_cycle': limit_cycle.to_dict(),
        'dwell': dwell.to_dict(),
    })
    report.verdicts['dwell_positive'] = dwell.positive
    if limit_cycle.verdict == 'insufficient-horizon':
        report.verdicts['limit_cycle_window'] = False

    if limit_cycle.verdict == 'converged':
        points, reason = _expected_equilibria(document)
        matched = next((p for p in points if _matches(trajectory, p, static)), None)
        report.sections['equilibrium'] = {
            'candidates': [p.to_dict() for p in points],
            'matched': matched.to_dict() if matched is not None else None,
            'reason': reason,
        }
        report.verdicts['equilibrium_match'] = matched is not None
        if matched is not None:
            lyapunov = lyapunov_series(trajectory, matched, _settling_time(document, trajectory))
            report.sections['lyapunov'] = lyapunov.to_dict()
            report.verdicts['lyapunov_monotone'] = lyapunov.monotone
    return trajectory


def _equilibrium(document, report, settings):
    model = _final_model(document)
    controllers = document.controllers
    mode = controllers.mode
    if mode is ControllerMode.HYSTERESIS:
        existence = solve_hysteresis_equilibrium(model, controllers)
        report.sections['existence'] = existence.to_dict()
        points = [existence.point] if existence.exists else []
    else:
        points, reason = _expected_equilibria(document)
        if reason is not None:
            report.errors.append(reason)
    residuals = []
    for point in points:
        state = ContinuousState(point.eta, np.full(model.n_buses, point.omega), point.p_mech)
        residuals.append(float(np.max(np.abs(flow_field(model, state, point.demand).to_vector()))))
    report.sections['equilibria'] = [p.to_dict() for p in points]
    report.sections['flow_residuals'] = residuals
    report.verdicts['equilibrium_exists'] = bool(points)
    return None


def _design(document, report, settings):
    model = document.model
    controllers = document.controllers
    design = validate_design(controllers, model.aggregate_damping)
    report.sections['synthesis'] = document.synthesis
    report.sections['thresholds'] = [{key: value for key, value in load.__dict__.items() if value is not None}
                                     for load in controllers.loads]
    report.sections['design'] = design.to_dict()
    report.verdicts['design_conditions'] = design.passed
    for failure in design.failures():
        logger.warning(f"Design condition '{failure.condition}' fails at bus {failure.bus}: "
                       f"{failure.value:.6g} vs {failure.bound:.6g}")
    return None


def _optimize(document, report, settings, seed=0):
    instance = OslcInstance.from_model(_final_model(document), document.controllers)
    if not instance.optimality_linked:
        logger.warning("alpha_j = 1/c_j does not hold; the epsilon guarantee does not apply")
    relaxed = solve_relaxed(instance)
    ga_options = document.optimization.get('ga', {})
    generations = ga_options.get('generations', settings.get('ga_generations'))
    population = ga_options.get('population', settings.get('ga_population'))
    sections = {
        'ell': instance.ell,
        'epsilon': epsilon_bound(instance),
        'optimality_linked': instance.optimality_linked,
        'relaxed': relaxed.to_dict(),
        'ga': dict(ga_solve(instance, seed, generations, population).to_dict(), seed=seed),
    }
    if instance.n_loads <= BRUTE_FORCE_LIMIT:
        sections['brute_force'] = solve_brute_force(instance).to_dict()

    candidates = []
    if 'sigma' in document.optimization:
        candidates.append(tuple(document.optimization['sigma']))
    elif document.controllers.mode in (ControllerMode.ADAPTED, ControllerMode.OPTIMAL):
        points, reason = _expected_equilibria(document)
        if reason is not None:
            report.errors.append(reason)
        candidates.extend(point.sigma for point in points)
    if candidates and instance.n_loads > BRUTE_FORCE_LIMIT:
        raise TooManyLoadsError(instance.n_loads, BRUTE_FORCE_LIMIT)
    certificates = [verify_equilibrium_optimality(sigma, instance) for sigma in candidates]
    sections['certificates'] = [c.to_dict() for c in certificates]
    report.sections.update(sections)
    if certificates:
        report.verdicts['epsilon_optimal'] = all(c.passed for c in certificates)
    return None


def _consensus(document, report, settings):
    graph = document.communication or CommGraph.from_network(document.model)
    sim = document.simulation
    p_load = document.final_load
    run = simulate_consensus(graph, p_load, horizon=sim.horizon, dt=sim.dt)
    report.sections.update({
        'algebraic_connectivity': graph.algebraic_connectivity(),
        'p_star': run.p_star.tolist(),
        'terminal_p_command': run.p_command[-1].tolist(),
        'terminal_error': run.terminal_error(),
        'max_vc_increase': run.max_vc_increase(),
    })
    thresholds = [(load.pc_lower, load.pc_upper) for load in document.controllers.loads
                  if getattr(load, 'pc_lower', None) is not None]
    if thresholds:
        assumption = check_assumption1(p_load, thresholds)
        report.sections['assumption1'] = assumption.to_dict()
        report.verdicts['load_off_threshold'] = assumption.passed
    scale = float(np.max(run.vc)) if run.vc.size else 0.0
    report.verdicts['consensus_converged'] = run.terminal_error() <= CONSENSUS_TOLERANCE
    report.verdicts['vc_nonincreasing'] = run.max_vc_increase() <= VC_TOLERANCE * max(scale, 1.0)
    return run


def _validate(document, report, settings):
    report.sections['schema'] = 'ok'
    _design(document, report, settings)
    if document.communication is not None:
        report.sections['communication'] = {'links': [list(link) for link in document.communication.links],
                                            'algebraic_connectivity': document.communication.algebraic_connectivity()}
    return None


def _compare(document, report, settings):
    comparison = frequency_support_comparison(document.model, document.controllers,
                                              scenario_initial_state(document), document.sim_config(),
                                              document.communication)
    report.sections['frequency_support'] = comparison.to_dict()
    report.verdicts['frequency_support'] = comparison.improved
    return None


def consensus_frame(run, period):
    rows = output_indices(run.times, np.zeros(len(run.times), dtype=int), period)
    columns = {'t': run.times[rows]}
    for i in range(run.p_command.shape[1]):
        columns[f"pc_{i + 1}"] = run.p_command[rows, i]
    for k in range(run.integrators.shape[1]):
        columns[f"psi_{k + 1}"] = run.integrators[rows, k]
    columns['V_c'] = run.vc[rows]
    return pd.DataFrame(columns)


def _write_table(frame, path, fmt):
    if fmt == 'json':
        path = path.with_suffix('.json')
        frame.to_json(path, orient='records', double_precision=10)
    else:
        path = path.with_suffix('.csv')
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def run_command(command, document, out_dir, seed=0, fmt='csv', settings=None):
    """Run one subcommand on a parsed scenario and write its artifacts"""
    if command not in COMMANDS:
        raise ValueError(f"Unknown command: {command}")
    settings = settings or Settings()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = document.name or 'scenario'
    report = SummaryReport(name, command)
    logger.info(f"Running '{command}' on scenario '{name}'")

    handlers = {
        'simulate': _simulate,
        'equilibrium': _equilibrium,
        'design': _design,
        'consensus': _consensus,
        'validate': _validate,
        'compare': _compare,
    }
    try:
        if command == 'optimize':
            result = _optimize(document, report, settings, seed)
        else:
            result = handlers[command](document, report, settings)
    except HyloadError as e:
        logger.error(f"'{command}' failed on '{name}': {e}")
        report.errors.append(str(e))
        result = None

    period = document.simulation.output_period
    if command == 'simulate' and result is not None:
        report.artifacts.append(_write_table(trajectory_frame(result, period), out_dir / f"{name}_trajectory", fmt))
    elif command == 'consensus' and result is not None:
        report.artifacts.append(_write_table(consensus_frame(result, period), out_dir / f"{name}_consensus", fmt))

    summary_path = out_dir / f"{name}_{command}_summary.json"
    report.artifacts.append(summary_path)
    summary_path.write_text(json.dumps(report.to_dict(), indent=2, default=_jsonable) + '\n', encoding='utf-8')
    logger.info(f"Wrote {', '.join(str(p) for p in report.artifacts)} "
                f"({'pass' if report.passed else 'FAIL'})")
    return report


class ScenarioWorker(QThread):
    """Runs one scenario file through a subcommand off the main thread"""
    finished = pyqtSignal(object)
    progress = pyqtSignal(str)
    error = pyqtSignal(str)

    def __init__(self, command, scenario_path, out_dir, seed=0, fmt='csv', settings=None):
        super().__init__()
        self.command = command
        self.scenario_path = Path(scenario_path)
        self.out_dir = out_dir
        self.seed = seed
        self.fmt = fmt
        self.settings = settings

    def run(self):
        report = SummaryReport(self.scenario_path.stem, self.command)
        try:
            self.progress.emit(f"Loading {self.scenario_path}...")
            settings = self.settings.copy() if self.settings is not None else Settings()
            document = load_scenario(self.scenario_path, settings.simulation_defaults())
            self.progress.emit(f"Running {self.command} on {document.name}...")
            report = run_command(self.command, document, self.out_dir, self.seed, self.fmt, settings)
        except HyloadError as e:
            logger.error(f"Scenario {self.scenario_path} rejected: {e}")
            report.errors.append(str(e))
            self.error.emit(str(e))
        except Exception as e:
            logger.exception(f"Unexpected failure on {self.scenario_path}")
            report.errors.append(f"unexpected: {e}")
            report.sections['unexpected'] = True
            self.error.emit(f"Unexpected failure: {e}")
        self.finished.emit(report)
