"""
Optimal supply and on-off load control allocation.

For a fixed switch vector sigma the generation/damping split has a closed
form; the discrete problem is solved by enumeration or a genetic heuristic,
and the relaxation with linear load cost gamma_cost = c^d / d_bar by a
breakpoint search on the frequency multiplier lambda.
"""
from dataclasses import dataclass, field
import logging
import random
import threading

import numpy as np
from deap import algorithms, base, creator, tools

from errors import InvalidParameterError, TooManyLoadsError
from load_control import ControllerMode, switch_vectors

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 24
ENUMERATION_CHUNK = 1 << 18
LINK_TOLERANCE = 1e-9
GAP_SLACK = 1e-12

GA_TOURNAMENT = 3
GA_CROSSOVER_RATE = 0.9
GA_MUTATION_RATE = 1.0

# deap draws from the global random module; batch workers share it
_GA_LOCK = threading.Lock()


def _positive(name, element, values):
    values = np.asarray(values, dtype=float)
    for k, value in enumerate(values):
        if not np.isfinite(value) or value <= 0:
            raise InvalidParameterError(name, f"{element} {k}", value, "must be > 0")
    return values


@dataclass(frozen=True, eq=False)
class OslcInstance:
    gen_cost: np.ndarray
    damping: np.ndarray
    droop: np.ndarray
    p_load: np.ndarray
    load_cost: np.ndarray
    magnitudes: np.ndarray
    load_buses: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'gen_cost', _positive('cost', 'bus', self.gen_cost))
        object.__setattr__(self, 'damping', _positive('damping', 'bus', self.damping))
        object.__setattr__(self, 'droop', _positive('droop', 'bus', self.droop))
        object.__setattr__(self, 'p_load', np.asarray(self.p_load, dtype=float))
        object.__setattr__(self, 'load_cost', _positive('cost', 'load', self.load_cost))
        object.__setattr__(self, 'magnitudes', _positive('magnitude', 'load', self.magnitudes))
        if len(self.load_cost) != len(self.magnitudes):
            raise InvalidParameterError('load_cost', 'instance', len(self.load_cost),
                                        f"expected {len(self.magnitudes)} entries")
        buses = tuple(self.load_buses) or tuple(range(len(self.magnitudes)))
        object.__setattr__(self, 'load_buses', buses)

    @classmethod
    def from_model(cls, model, controllers):
        """Generation cost from the buses, load cost and magnitude from the hysteretic controllers"""
        loads = controllers.loads if controllers.mode is not ControllerMode.NONE else ()
        costs = []
        for k, load in enumerate(loads):
            cost = getattr(load, 'cost', None)
            if cost is None:
                raise InvalidParameterError('cost', f"load {k}", cost, "load cost is required for allocation")
            costs.append(cost)
        return cls(model.cost, model.damping, model.droop, model.p_load, np.array(costs),
                   np.array([load.magnitude for load in loads]), tuple(load.bus for load in loads))

    @property
    def n_loads(self):
        return len(self.magnitudes)

    @property
    def ell(self):
        return float(np.sum(self.p_load))

    @property
    def aggregate_damping(self):
        return float(np.sum(self.droop + self.damping))

    @property
    def cost_damping(self):
        """Sum of (1/c_j + A_j); equals the aggregate damping when alpha_j = 1/c_j"""
        return float(np.sum(1.0 / self.gen_cost + self.damping))

    @property
    def gamma_cost(self):
        return self.load_cost / self.magnitudes

    @property
    def optimality_linked(self):
        return bool(np.allclose(self.droop, 1.0 / self.gen_cost, rtol=LINK_TOLERANCE, atol=0.0))


@dataclass(frozen=True, eq=False)
class OslcSolution:
    sigma: tuple
    p_mech: np.ndarray
    d_unc: np.ndarray
    cost: float
    solver: str

    def balance_residual(self, instance):
        supplied = float(np.sum(self.p_mech - self.d_unc - instance.p_load))
        switched = float(np.dot(instance.magnitudes, self.sigma)) if self.sigma else 0.0
        return abs(supplied - switched)

    def to_dict(self):
        return {'sigma': list(self.sigma), 'p_mech': self.p_mech.tolist(), 'd_unc': self.d_unc.tolist(),
                'cost': self.cost, 'solver': self.solver}


def cost_of(sigma, instance: OslcInstance):
    """Cost of the best continuous allocation once the on-off loads are fixed"""
    sigma = np.asarray(sigma, dtype=float)
    switched = float(instance.magnitudes @ sigma) if instance.n_loads else 0.0
    shortfall = instance.ell + switched
    load_cost = float(instance.load_cost @ sigma) if instance.n_loads else 0.0
    return 0.5 * shortfall ** 2 / instance.cost_damping + load_cost


def solution_for(sigma, instance: OslcInstance, solver='given') -> OslcSolution:
    sigma = tuple(int(s) for s in sigma)
    switched = float(instance.magnitudes @ np.asarray(sigma, dtype=float)) if sigma else 0.0
    mu = (instance.ell + switched) / instance.cost_damping
    return OslcSolution(sigma, mu / instance.gen_cost, -instance.damping * mu, cost_of(sigma, instance), solver)


def solve_brute_force(instance: OslcInstance) -> OslcSolution:
    """Exhaustive minimum over all 2^n switch vectors, ties to the lexicographically smallest"""
    n = instance.n_loads
    if n > BRUTE_FORCE_LIMIT:
        raise TooManyLoadsError(n, BRUTE_FORCE_LIMIT)
    if n == 0:
        return solution_for((), instance, 'brute')

    best_cost = np.inf
    best_sigma = None
    for start in range(0, 2 ** n, ENUMERATION_CHUNK):
        sigma = switch_vectors(n, start, min(start + ENUMERATION_CHUNK, 2 ** n))
        shortfall = instance.ell + sigma @ instance.magnitudes
        costs = 0.5 * shortfall ** 2 / instance.cost_damping + sigma @ instance.load_cost
        index = int(np.argmin(costs))
        if costs[index] < best_cost:
            best_cost = float(costs[index])
            best_sigma = sigma[index]
    solution = solution_for(best_sigma, instance, 'brute')
    logger.debug(f"Brute force over {2 ** n} vectors: sigma={solution.sigma}, cost={solution.cost:.6g}")
    return solution


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    multiplier: float
    p_mech: np.ndarray
    d_unc: np.ndarray
    demand: np.ndarray
    cost: float
    on_breakpoint: bool
    kkt_residuals: dict = field(default_factory=dict)

    def rounded_sigma(self, instance):
        """Loads at full magnitude are on; a fractional load rounds down"""
        return tuple(int(d >= m) for d, m in zip(self.demand, instance.magnitudes))

    def to_dict(self):
        return {'lambda': self.multiplier, 'p_mech': self.p_mech.tolist(), 'd_unc': self.d_unc.tolist(),
                'demand': self.demand.tolist(), 'cost': self.cost, 'on_breakpoint': self.on_breakpoint,
                'kkt_residuals': self.kkt_residuals}


def _kkt_residuals(instance, multiplier, p_mech, d_unc, demand):
    balance = abs(float(np.sum(p_mech - d_unc - instance.p_load) - np.sum(demand)))
    generation = float(np.max(np.abs(instance.gen_cost * p_mech + multiplier))) if len(p_mech) else 0.0
    damping = float(np.max(np.abs(d_unc / instance.damping - multiplier))) if len(d_unc) else 0.0
    stationarity = max(generation, damping)
    complementarity = 0.0
    for gamma, value, top in zip(instance.gamma_cost, demand, instance.magnitudes):
        if value <= 0:
            violation = max(0.0, multiplier - gamma)
        elif value >= top:
            violation = max(0.0, gamma - multiplier)
        else:
            violation = abs(multiplier - gamma)
        complementarity = max(complementarity, violation)
    return {'balance': balance, 'stationarity': stationarity, 'complementarity': complementarity}


def solve_relaxed(instance: OslcInstance) -> RelaxedSolution:
    """
    Solve the relaxation through its scalar balance
        -K lambda - l = sum_j d_j(lambda),
    where d_j is 0 below gamma_j, d_bar_j above it and anywhere in between at
    it. The left side strictly decreases, so exactly one region or breakpoint
    holds the root. Fractional demand on a breakpoint fills the lowest-index
    tied loads first.
    """
    ell = instance.ell
    k_total = instance.cost_damping
    gamma = instance.gamma_cost
    n = instance.n_loads
    demand = np.zeros(n)
    multiplier = None
    on_breakpoint = False

    below = 0.0
    lower_edge = -np.inf
    for value in list(np.unique(gamma)) + [np.inf]:
        candidate = (-ell - below) / k_total
        if lower_edge < candidate < value:
            multiplier = candidate
            demand = np.where(gamma <= lower_edge, instance.magnitudes, 0.0)
            break
        if np.isinf(value):
            break
        tied = np.flatnonzero(gamma == value)
        need = -k_total * value - ell - below
        capacity = float(np.sum(instance.magnitudes[tied]))
        if -GAP_SLACK <= need <= capacity + GAP_SLACK:
            multiplier = float(value)
            on_breakpoint = True
            demand = np.where(gamma < value, instance.magnitudes, 0.0)
            remaining = min(max(need, 0.0), capacity)
            for k in tied:
                share = min(remaining, instance.magnitudes[k])
                demand[k] = share
                remaining -= share
            break
        below += capacity
        lower_edge = value

    if multiplier is None:
        multiplier = (-ell - below) / k_total
        demand = np.where(gamma <= lower_edge, instance.magnitudes, 0.0) if n else demand

    p_mech = -multiplier / instance.gen_cost
    d_unc = instance.damping * multiplier
    cost = 0.5 * k_total * multiplier ** 2 + (float(gamma @ demand) if n else 0.0)
    residuals = _kkt_residuals(instance, multiplier, p_mech, d_unc, demand)
    logger.debug(f"Relaxed allocation: lambda={multiplier:.6g}, cost={cost:.6g}, residuals={residuals}")
    return RelaxedSolution(float(multiplier), p_mech, d_unc, demand, float(cost), on_breakpoint, residuals)


def epsilon_bound(instance: OslcInstance):
    if instance.n_loads == 0:
        return 0.0
    return float(np.max(instance.magnitudes) ** 2 / (2.0 * instance.aggregate_damping))


@dataclass(frozen=True)
class OptimalityCertificate:
    sigma: tuple
    cost: float
    optimum: float
    optimum_sigma: tuple
    gap: float
    epsilon: float
    passed: bool
    relaxed_cost: float
    relaxation_gap: float
    q_hat: float
    predicted_relaxation_gap: float
    on_breakpoint: bool
    optimality_linked: bool

    def to_dict(self):
        return dict(self.__dict__, sigma=list(self.sigma), optimum_sigma=list(self.optimum_sigma))


def verify_equilibrium_optimality(sigma, instance: OslcInstance) -> OptimalityCertificate:
    """Cost gap of an equilibrium switch vector against the exact optimum and the relaxation"""
    if not instance.optimality_linked:
        logger.warning("Generator droop does not satisfy alpha_j = 1/c_j; "
                       "the epsilon bound is reported without its guarantee")
    sigma = tuple(int(s) for s in sigma)
    cost = cost_of(sigma, instance)
    best = solve_brute_force(instance)
    relaxed = solve_relaxed(instance)
    epsilon = epsilon_bound(instance)
    gap = cost - best.cost
    q_hat = float(np.sum(instance.magnitudes * np.asarray(sigma, dtype=float) - relaxed.demand)) if sigma else 0.0
    certificate = OptimalityCertificate(
        sigma=sigma, cost=cost, optimum=best.cost, optimum_sigma=best.sigma, gap=gap, epsilon=epsilon,
        passed=bool(gap <= epsilon + GAP_SLACK), relaxed_cost=relaxed.cost,
        relaxation_gap=cost - relaxed.cost, q_hat=q_hat,
        predicted_relaxation_gap=q_hat ** 2 / (2.0 * instance.cost_damping),
        on_breakpoint=relaxed.on_breakpoint, optimality_linked=instance.optimality_linked)
    logger.info(f"Optimality of sigma={sigma}: gap {gap:.6g} vs epsilon {epsilon:.6g} "
                f"({'pass' if certificate.passed else 'FAIL'})")
    return certificate


def _ga_types():
    with _GA_LOCK:
        if not hasattr(creator, 'FitnessMinCost'):
            creator.create('FitnessMinCost', base.Fitness, weights=(-1.0,))
        if not hasattr(creator, 'SwitchIndividual'):
            creator.create('SwitchIndividual', list, fitness=creator.FitnessMinCost)
    return creator.SwitchIndividual


def ga_solve(instance: OslcInstance, seed=0, generations=100, population=64) -> OslcSolution:
    """Bit-string genetic search over sigma; deterministic for a given seed"""
    n = instance.n_loads
    if n == 0:
        return solution_for((), instance, 'ga')
    if population < 2:
        raise InvalidParameterError('population', 'ga', population, "must be >= 2")
    individual = _ga_types()

    toolbox = base.Toolbox()
    toolbox.register('attr_bool', random.randint, 0, 1)
    toolbox.register('individual', tools.initRepeat, individual, toolbox.attr_bool, n=n)
    toolbox.register('population', tools.initRepeat, list, toolbox.individual)
    toolbox.register('evaluate', lambda ind: (cost_of(ind, instance),))
    toolbox.register('mate', tools.cxUniform, indpb=0.5)
    toolbox.register('mutate', tools.mutFlipBit, indpb=1.0 / n)
    toolbox.register('select', tools.selTournament, tournsize=GA_TOURNAMENT)

    with _GA_LOCK:
        state = random.getstate()
        try:
            random.seed(seed)
            pop = toolbox.population(n=population)
            best = tools.HallOfFame(1)
            algorithms.eaSimple(pop, toolbox, cxpb=GA_CROSSOVER_RATE, mutpb=GA_MUTATION_RATE,
                                ngen=generations, halloffame=best, verbose=False)
        finally:
            random.setstate(state)

    solution = solution_for(best[0], instance, 'ga')
    logger.info(f"GA (seed {seed}, {generations} generations): sigma={solution.sigma}, cost={solution.cost:.6g}")
    return solution
