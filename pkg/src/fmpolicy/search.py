"""Local search, simulated annealing and a genetic algorithm over policy tables.

Every search works on pair codes (see :mod:`fmpolicy.evaluation`) and owns a
``numpy`` PCG64 generator seeded from a 64-bit integer, so a run is fully
determined by ``(pomdp, k, horizon, seed, config)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import EvalCounter, FiniteMemoryPolicy, evaluate_codes
from .model import Pomdp

log = logging.getLogger(__name__)


@dataclass
class SearchResult:
    best_policy: FiniteMemoryPolicy
    best_value: float
    evaluations: int
    iterations: int
    seed: int
    # ("scan", offset, accepted neighbor or None) / ("jump", neighbor)
    trace: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class SaConfig:
    initial_temperature: int = 95
    decrement: int = 1

    def __post_init__(self):
        if not 0 <= self.initial_temperature <= 100:
            raise ValueError("initial_temperature must be in [0, 100]")
        if self.decrement < 1:
            raise ValueError("decrement must be >= 1")


@dataclass(frozen=True)
class GaConfig:
    crossover_rate: float = 0.5
    mutation_rate: float = 0.005
    stagnation_limit: int = 10
    stdev_threshold: float = 0.0001
    population_override: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.crossover_rate <= 1.0 and 0.0 <= self.mutation_rate <= 1.0):
            raise ValueError("crossover_rate and mutation_rate must lie in [0, 1]")
        if self.stagnation_limit < 2:
            raise ValueError("stagnation_limit must be >= 2")
        if not self.stdev_threshold > 0:
            raise ValueError("stdev_threshold must be > 0")
        if self.population_override is not None and self.population_override < 2:
            raise ValueError("population_override must be >= 2")


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; the only random source used by the searches."""
    return np.random.Generator(np.random.PCG64(seed))


def random_policy(n_observations, n_actions, k, rng) -> FiniteMemoryPolicy:
    """Draw every cell uniformly from the ``n_actions * k`` (action, memory) pairs."""
    if min(n_observations, n_actions, k) < 1:
        raise ValueError("all dimensions must be >= 1")
    codes = rng.integers(0, n_actions * k, size=(n_observations, k))
    return FiniteMemoryPolicy.from_codes(codes, k)


def neighbor_count(n_observations, n_actions, k) -> int:
    return n_observations * k * (n_actions * k - 1)


def _neighbor_codes(flat, i, n_pairs):
    cell, r = divmod(i, n_pairs - 1)
    out = flat.copy()
    out[cell] = r if r < flat[cell] else r + 1
    return out


def neighbor_at(policy: FiniteMemoryPolicy, i: int, n_actions: int) -> FiniteMemoryPolicy:
    """The ``i``-th single-cell modification of ``policy``.

    Cells run observation-major, memory-minor; within a cell the alternative
    pairs run action-major, skipping the cell's current pair.
    """
    k = policy.memory_count
    n = neighbor_count(policy.n_observations, n_actions, k)
    if not 0 <= i < n:
        raise IndexError(f"neighbor index {i} outside [0, {n})")
    flat = policy.codes.reshape(-1)
    return FiniteMemoryPolicy.from_codes(
        _neighbor_codes(flat, i, n_actions * k).reshape(policy.codes.shape), k
    )


class _Walk:
    """Shared state of local search and annealing: current and best policy."""

    def __init__(self, p: Pomdp, k, horizon, seed, counter):
        self.p, self.k, self.horizon = p, k, horizon
        self.shape = (p.n_observations, k)
        self.n_pairs = p.n_actions * k
        self.n_neighbors = neighbor_count(p.n_observations, p.n_actions, k)
        self.counter = counter if counter is not None else EvalCounter()
        self.start_count = self.counter.evaluations
        self.rng = make_rng(seed)
        self.seed = seed
        self.trace = []
        self.iterations = 0
        start = random_policy(p.n_observations, p.n_actions, k, self.rng)
        self.current = start.codes.reshape(-1)
        self.value = self._evaluate(self.current)
        self.best, self.best_value = self.current, self.value

    def _evaluate(self, flat):
        v = float(evaluate_codes(self.p, flat.reshape(1, *self.shape), self.k, self.horizon, self.counter)[0])
        return v

    def _seen(self, flat, v):
        if v > self.best_value:
            self.best, self.best_value = flat, v

    def improve_step(self):
        """One randomized-first-improvement scan; True if a move was made."""
        n = self.n_neighbors
        if n == 0:
            self.trace.append(("scan", 0, None))
            return False
        offset = int(self.rng.integers(n))
        for step in range(n):
            i = (offset + step) % n
            cand = _neighbor_codes(self.current, i, self.n_pairs)
            v = self._evaluate(cand)
            self._seen(cand, v)
            if v > self.value:
                self.current, self.value = cand, v
                self.trace.append(("scan", offset, i))
                return True
        self.trace.append(("scan", offset, None))
        return False

    def jump(self):
        i = int(self.rng.integers(self.n_neighbors))
        cand = _neighbor_codes(self.current, i, self.n_pairs)
        v = self._evaluate(cand)
        self._seen(cand, v)
        self.current, self.value = cand, v
        self.trace.append(("jump", i))

    def result(self):
        return SearchResult(
            best_policy=FiniteMemoryPolicy.from_codes(self.best.reshape(self.shape), self.k),
            best_value=self.best_value,
            evaluations=self.counter.evaluations - self.start_count,
            iterations=self.iterations,
            seed=self.seed,
            trace=self.trace,
        )


def _check_args(p, k, horizon):
    if k < 1:
        raise ValueError("memory count must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")


def local_search(p: Pomdp, k: int, horizon: int, seed: int, counter: EvalCounter | None = None) -> SearchResult:
    """Randomized first improvement from a random policy until a local maximum.

    Every scan starts at a fresh uniformly drawn neighbor index and wraps
    around; the first strictly better neighbor is taken.
    """
    _check_args(p, k, horizon)
    walk = _Walk(p, k, horizon, seed, counter)
    while True:
        walk.iterations += 1
        if not walk.improve_step():
            break
    return walk.result()


def simulated_annealing(
    p: Pomdp, k: int, horizon: int, seed: int, cfg: SaConfig = SaConfig(), counter: EvalCounter | None = None
) -> SearchResult:
    """Local search with random jumps at a linearly falling temperature.

    With probability ``T/100`` an iteration moves to a uniformly random
    neighbor; otherwise it does one first-improvement scan. ``T`` drops by
    ``cfg.decrement`` per iteration; at ``T == 0`` the run continues as plain
    local search. No coin is flipped at ``T == 0``, so a zero start
    temperature reproduces :func:`local_search` draw for draw.
    """
    _check_args(p, k, horizon)
    walk = _Walk(p, k, horizon, seed, counter)
    temp = cfg.initial_temperature
    while True:
        walk.iterations += 1
        if temp > 0 and walk.n_neighbors and walk.rng.random() < temp / 100:
            walk.jump()
        elif not walk.improve_step() and temp == 0:
            break
        temp = max(0, temp - cfg.decrement)
    return walk.result()


def population_size(n_observations, n_actions, k, override=None) -> int:
    if override is not None:
        return override
    return max(30, math.ceil(n_observations * math.log2(n_actions * k)))


def fitness_transform(values):
    """Trim a population's values to within two standard deviations of the mean.

    Values below ``mean - 2*sd`` are discarded; values above ``mean + 2*sd``
    are clamped to it. Fitnesses are then shifted by ``-(mean - 2*sd)`` so
    they are nonnegative. Discarded members get fitness 0.
    Returns ``(fitnesses, discarded_indices)``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("fitness_transform needs at least two values")
    if np.all(v == v[0]):
        return np.zeros_like(v), set()
    mu = v.mean()
    sd = v.std()
    low, high = mu - 2.0 * sd, mu + 2.0 * sd
    dropped = v < low
    fit = np.minimum(v, high) - low
    fit[dropped] = 0.0
    return fit, set(np.flatnonzero(dropped).tolist())


def _crossover_flat(a, b, cell):
    child_a, child_b = b.copy(), a.copy()
    child_a[cell], child_b[cell] = a[cell], b[cell]
    return child_a, child_b


def crossover(pa: FiniteMemoryPolicy, pb: FiniteMemoryPolicy, cell) -> tuple[FiniteMemoryPolicy, FiniteMemoryPolicy]:
    """Swap every decision before and after ``cell`` between two parents.

    ``cell`` is an ``(observation, memory)`` pair; that one decision stays
    with its own parent.
    """
    if pa.codes.shape != pb.codes.shape:
        raise ValueError("parents have different dimensions")
    k = pa.memory_count
    o, m = cell
    if not (0 <= o < pa.n_observations and 0 <= m < k):
        raise IndexError(f"cell {cell} out of range")
    ca, cb = _crossover_flat(pa.codes.reshape(-1), pb.codes.reshape(-1), o * k + m)
    return (
        FiniteMemoryPolicy.from_codes(ca.reshape(pa.codes.shape), k),
        FiniteMemoryPolicy.from_codes(cb.reshape(pa.codes.shape), k),
    )


def _mutate_flat(flat, n_pairs, rng):
    out = flat.copy()
    cell = int(rng.integers(out.size))
    r = int(rng.integers(n_pairs - 1))
    out[cell] = r if r < out[cell] else r + 1
    return out


def mutate(policy: FiniteMemoryPolicy, n_actions: int, rng) -> FiniteMemoryPolicy:
    """Reassign one random cell to a different, uniformly chosen pair."""
    k = policy.memory_count
    n_pairs = n_actions * k
    if n_pairs < 2:
        log.warning("mutation is the identity: only one (action, memory) pair exists")
        return policy
    flat = _mutate_flat(policy.codes.reshape(-1), n_pairs, rng)
    return FiniteMemoryPolicy.from_codes(flat.reshape(policy.codes.shape), k)


def genetic_search(
    p: Pomdp, k: int, horizon: int, seed: int, cfg: GaConfig = GaConfig(), counter: EvalCounter | None = None
) -> SearchResult:
    """Generational GA with 2-sigma fitness trimming and roulette selection.

    Stops once the same policy has been generation-best for
    ``cfg.stagnation_limit`` consecutive generations, or for half that many
    while the population's value spread is below ``cfg.stdev_threshold``.
    """
    _check_args(p, k, horizon)
    counter = counter if counter is not None else EvalCounter()
    start_count = counter.evaluations
    rng = make_rng(seed)
    n_obs, n_pairs = p.n_observations, p.n_actions * k
    shape = (n_obs, k)
    size = population_size(n_obs, p.n_actions, k, cfg.population_override)
    n_cross = min(math.floor(size * cfg.crossover_rate), size // 2)
    n_mut = min(size, max(1, math.ceil(size * cfg.mutation_rate))) if cfg.mutation_rate > 0 else 0
    if n_mut and n_pairs < 2:
        log.warning("mutation is the identity: only one (action, memory) pair exists")
        n_mut = 0
    short_limit = math.ceil(cfg.stagnation_limit / 2)

    pop = rng.integers(0, n_pairs, size=(size, n_obs * k))
    best, best_value = None, -math.inf
    previous, streak, generation = None, 0, 0
    while True:
        generation += 1
        values = evaluate_codes(p, pop.reshape(size, *shape), k, horizon, counter)
        top = int(np.argmax(values))
        if values[top] > best_value:
            best, best_value = pop[top].copy(), float(values[top])
        if previous is not None and np.array_equal(pop[top], previous):
            streak += 1
        else:
            streak = 1
        previous = pop[top].copy()
        if streak >= cfg.stagnation_limit or (
            streak >= short_limit and values.std() < cfg.stdev_threshold
        ):
            break

        fit, dropped = fitness_transform(values)
        keep = np.array([i for i in range(size) if i not in dropped], dtype=np.intp)
        if keep.size == 0:
            log.warning("generation %d: every member discarded; selecting from all", generation)
            keep = np.arange(size)
        weights = fit[keep]
        if weights.sum() > 0:
            picks = rng.choice(keep, size=size, replace=True, p=weights / weights.sum())
        else:
            picks = rng.choice(keep, size=size, replace=True)
        pool = pop[picks]

        if n_cross:
            order = rng.permutation(size)
            for j in range(n_cross):
                a, b = order[2 * j], order[2 * j + 1]
                cell = int(rng.integers(n_obs * k))
                pool[a], pool[b] = _crossover_flat(pool[a], pool[b], cell)
        if n_mut:
            for idx in rng.choice(size, size=n_mut, replace=False):
                pool[idx] = _mutate_flat(pool[idx], n_pairs, rng)
        pop = pool

    return SearchResult(
        best_policy=FiniteMemoryPolicy.from_codes(best.reshape(shape), k),
        best_value=best_value,
        evaluations=counter.evaluations - start_count,
        iterations=generation,
        seed=seed,
    )


ALGORITHMS = {
    "local": local_search,
    "anneal": simulated_annealing,
    "genetic": genetic_search,
}
