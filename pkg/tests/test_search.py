import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import random_pomdp
from fmpolicy.evaluation import EvalCounter, FiniteMemoryPolicy, evaluate_exact
from fmpolicy.harness import gen_clockwork, gen_signal_corridor
from fmpolicy.model import Pomdp
from fmpolicy.search import (
    GaConfig,
    SaConfig,
    crossover,
    fitness_transform,
    genetic_search,
    local_search,
    make_rng,
    mutate,
    neighbor_at,
    neighbor_count,
    population_size,
    random_policy,
    simulated_annealing,
)


def singleton():
    return Pomdp(["s"], ["a"], ["o"], [[[1.0]]], [0], [[1.0]], [1.0])


def n_diff(a, b):
    return int(np.sum(a.codes != b.codes))


# random_policy


def test_random_policy_singleton_space():
    for seed in range(5):
        pi = random_policy(1, 1, 1, make_rng(seed))
        assert pi == FiniteMemoryPolicy([[0]], [[0]])


def test_random_policy_deterministic_per_seed():
    assert random_policy(3, 2, 3, make_rng(11)) == random_policy(3, 2, 3, make_rng(11))


def test_random_policy_cells_uniform():
    rng = make_rng(2024)
    n_actions, k = 3, 2
    draws = np.stack([random_policy(2, n_actions, k, rng).codes for _ in range(10_000)])
    for cell in draws.reshape(10_000, -1).T:
        counts = np.bincount(cell, minlength=n_actions * k)
        assert chisquare(counts).pvalue > 0.01


# neighborhood


@pytest.mark.parametrize("dims, expected", [((2, 2, 1), 2), ((2, 2, 2), 12), ((1, 1, 1), 0)])
def test_neighbor_count(dims, expected):
    assert neighbor_count(*dims) == expected


def test_neighbors_are_distinct_single_cell_changes(rng):
    pi = random_policy(2, 3, 2, rng)
    n = neighbor_count(2, 3, 2)
    seen = set()
    for i in range(n):
        q = neighbor_at(pi, i, 3)
        assert n_diff(pi, q) == 1
        seen.add(q)
    assert len(seen) == n


def test_neighbor_order_is_lexicographic():
    pi = FiniteMemoryPolicy([[1, 0]], [[0, 1]])  # codes (0,0)->2, (0,1)->1 with |A|=2, k=2
    got = [neighbor_at(pi, i, 2).codes.ravel().tolist() for i in range(6)]
    assert got == [[0, 1], [1, 1], [3, 1], [2, 0], [2, 2], [2, 3]]


def test_neighbor_index_out_of_range():
    with pytest.raises(IndexError):
        neighbor_at(FiniteMemoryPolicy([[0]], [[0]]), 1, 2)


# local search


def is_local_max(p, pi, horizon, n_actions):
    v = evaluate_exact(p, pi, horizon)
    n = neighbor_count(pi.n_observations, n_actions, pi.memory_count)
    return all(evaluate_exact(p, neighbor_at(pi, i, n_actions), horizon) <= v for i in range(n))


def test_local_search_singleton():
    res = local_search(singleton(), 1, 3, seed=0)
    assert res.evaluations == 1
    assert res.iterations == 1
    assert res.best_value == 3.0


def test_local_search_clockwork_memoryless():
    # the two memoryless policies (always stay / always swap) both score 0 at H=2
    for seed in range(10):
        assert local_search(gen_clockwork(), 1, 2, seed).best_value == 0.0


def test_local_search_clockwork_two_memory_sometimes_optimal():
    values = [local_search(gen_clockwork(), 2, 2, seed).best_value for seed in range(100)]
    assert set(values) <= {0.0, 1.0}
    assert 0 < values.count(1.0) < 100


@pytest.mark.parametrize("make, k, horizon", [(gen_clockwork, 2, 3), (lambda: gen_signal_corridor(1), 2, 3)])
def test_local_search_returns_local_max(make, k, horizon):
    p = make()
    for seed in range(15):
        counter = EvalCounter(5)
        res = local_search(p, k, horizon, seed, counter)
        assert is_local_max(p, res.best_policy, horizon, p.n_actions)
        assert res.evaluations == counter.evaluations - 5
        assert res.best_value == evaluate_exact(p, res.best_policy, horizon)


def test_local_search_deterministic():
    p = gen_signal_corridor(1)
    a, b = local_search(p, 2, 3, 77), local_search(p, 2, 3, 77)
    assert a.best_policy == b.best_policy
    assert (a.best_value, a.evaluations, a.iterations, a.trace) == (b.best_value, b.evaluations, b.iterations, b.trace)


# simulated annealing


def test_anneal_zero_temperature_is_local_search():
    p = gen_signal_corridor(0)
    for seed in range(20):
        sa = simulated_annealing(p, 2, 2, seed, SaConfig(initial_temperature=0))
        ls = local_search(p, 2, 2, seed)
        assert sa.trace == ls.trace
        assert sa.best_policy == ls.best_policy
        assert sa.evaluations == ls.evaluations


def test_anneal_singleton():
    res = simulated_annealing(singleton(), 1, 2, seed=4)
    assert res.best_policy == FiniteMemoryPolicy([[0]], [[0]])
    assert res.best_value == 2.0


def test_anneal_hot_phase_length():
    res = simulated_annealing(gen_signal_corridor(0), 2, 2, seed=1)
    assert res.iterations >= 96  # 95 hot iterations, then at least one scan at T=0
    assert res.trace[-1] == ("scan", res.trace[-1][1], None)
    assert any(step[0] == "jump" for step in res.trace[:95])
    assert all(step[0] == "scan" for step in res.trace[95:])


def test_anneal_tracks_best_ever():
    p = gen_signal_corridor(1)
    for seed in range(10):
        counter = EvalCounter()
        res = simulated_annealing(p, 2, 3, seed, counter=counter)
        assert res.best_value == evaluate_exact(p, res.best_policy, 3)
        assert res.evaluations == counter.evaluations


def test_sa_config_validation():
    with pytest.raises(ValueError):
        SaConfig(initial_temperature=101)
    with pytest.raises(ValueError):
        SaConfig(decrement=0)


# GA operators


@pytest.mark.parametrize(
    "dims, override, expected",
    [((2, 2, 1), None, 30), ((40, 4, 4), None, 160), ((2, 2, 1), 50, 50)],
)
def test_population_size(dims, override, expected):
    assert population_size(*dims, override) == expected


@given(st.integers(1, 60), st.integers(1, 16), st.integers(1, 10))
def test_population_size_floor(n_obs, n_act, k):
    size = population_size(n_obs, n_act, k)
    assert size >= 30
    assert size == max(30, math.ceil(n_obs * math.log2(n_act * k)))


def test_fitness_all_equal():
    fit, dropped = fitness_transform([3.0] * 5)
    assert dropped == set()
    assert len(set(fit.tolist())) == 1


def test_fitness_clamps_high_outlier():
    values = [0, 0, 0, 0, 0, 60]
    mu, sd = statistics.fmean(values), statistics.pstdev(values)
    assert (mu, round(sd, 2)) == (10.0, 22.36)
    fit, dropped = fitness_transform(values)
    assert dropped == set()
    low = mu - 2 * sd
    assert fit[5] + low == pytest.approx(54.72, abs=5e-3)
    assert fit[5] + low == pytest.approx(mu + 2 * sd, rel=1e-12)
    assert fit[0] == pytest.approx(0 - low, rel=1e-12)


def test_fitness_discards_low_outlier():
    values = [-60, 0, 0, 0, 0, 0]
    mu, sd = statistics.fmean(values), statistics.pstdev(values)
    assert mu - 2 * sd == pytest.approx(-54.72, abs=5e-3)
    fit, dropped = fitness_transform(values)
    assert dropped == {0}
    assert fit[0] == 0.0
    assert np.all(fit[1:] > 0)


def test_fitness_needs_two_values():
    with pytest.raises(ValueError):
        fitness_transform([1.0])


@settings(max_examples=100)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=40))
def test_fitness_preserves_order_of_survivors(values):
    fit, dropped = fitness_transform(values)
    assert np.all(fit >= 0)
    v = np.asarray(values)
    mu, sd = v.mean(), v.std()
    keep = [i for i in range(len(v)) if i not in dropped and v[i] <= mu + 2 * sd]
    for i in keep:
        for j in keep:
            if v[i] < v[j]:
                assert fit[i] <= fit[j]


def test_crossover_identical_parents(rng):
    pi = random_policy(3, 2, 2, rng)
    a, b = crossover(pi, pi, (1, 1))
    assert a == pi and b == pi


def test_crossover_parents_differing_at_selected_cell():
    pa = FiniteMemoryPolicy([[0, 1]], [[0, 0]])
    pb = FiniteMemoryPolicy([[1, 1]], [[0, 0]])
    a, b = crossover(pa, pb, (0, 0))
    # everything but the selected cell is exchanged, and that is all they share
    assert {a, b} == {pa, pb}
    assert a == pa and b == pb


def test_crossover_four_cells():
    pa = FiniteMemoryPolicy.from_codes([[0, 1], [2, 3]], 2)
    pb = FiniteMemoryPolicy.from_codes([[4, 5], [6, 7]], 2)
    a, b = crossover(pa, pb, (1, 0))  # global cell index 2
    assert a.codes.ravel().tolist() == [4, 5, 2, 7]
    assert b.codes.ravel().tolist() == [0, 1, 6, 3]


def test_crossover_swaps_single_differing_cell():
    pa = FiniteMemoryPolicy.from_codes([[0, 1], [2, 3]], 2)
    pb = FiniteMemoryPolicy.from_codes([[0, 1], [2, 0]], 2)
    a, b = crossover(pa, pb, (0, 1))
    assert a.codes.ravel().tolist() == [0, 1, 2, 0]
    assert b.codes.ravel().tolist() == [0, 1, 2, 3]


def test_crossover_dimension_mismatch():
    with pytest.raises(ValueError):
        crossover(FiniteMemoryPolicy([[0]], [[0]]), FiniteMemoryPolicy([[0, 0]], [[0, 0]]), (0, 0))


def test_mutate_two_actions_flips():
    pi = FiniteMemoryPolicy([[0]], [[0]])
    assert mutate(pi, 2, make_rng(0)) == FiniteMemoryPolicy([[1]], [[0]])


def test_mutate_singleton_is_identity():
    pi = FiniteMemoryPolicy([[0]], [[0]])
    assert mutate(pi, 1, make_rng(0)) == pi


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
def test_mutate_changes_exactly_one_cell(seed, n_obs, n_act, k):
    if n_act * k < 2:
        return
    rng = make_rng(seed)
    pi = random_policy(n_obs, n_act, k, rng)
    assert n_diff(pi, mutate(pi, n_act, rng)) == 1


# genetic search


def test_ga_defaults():
    cfg = GaConfig()
    assert (cfg.crossover_rate, cfg.mutation_rate, cfg.stagnation_limit, cfg.stdev_threshold) == (
        0.5, 0.005, 10, 0.0001,
    )


def test_ga_singleton_stops_on_zero_spread():
    counter = EvalCounter()
    res = genetic_search(singleton(), 1, 2, seed=0, counter=counter)
    # a one-policy space has zero spread, so the half-limit rule fires first
    assert res.iterations == 5
    assert res.evaluations == 5 * 30 == counter.evaluations
    assert res.best_value == 2.0
    res = genetic_search(singleton(), 1, 2, seed=0, cfg=GaConfig(stagnation_limit=7))
    assert res.iterations == 4


def test_ga_clockwork_reaches_optimum_sometimes():
    values = [genetic_search(gen_clockwork(), 2, 2, seed).best_value for seed in range(30)]
    assert values.count(1.0) > 0
    assert max(values) <= 1.0


def test_ga_best_is_exact_and_deterministic():
    p = gen_signal_corridor(1)
    a = genetic_search(p, 2, 3, 5)
    b = genetic_search(p, 2, 3, 5)
    assert a.best_value == evaluate_exact(p, a.best_policy, 3)
    assert a.best_policy == b.best_policy and a.evaluations == b.evaluations


def test_ga_on_random_instances():
    rng = np.random.default_rng(3)
    for seed in range(5):
        p = random_pomdp(rng, 4, 3, 2)
        res = genetic_search(p, 2, 4, seed, GaConfig(population_override=12))
        assert res.best_value == evaluate_exact(p, res.best_policy, 4)
        assert res.evaluations % 12 == 0


def test_ga_config_validation():
    with pytest.raises(ValueError):
        GaConfig(stagnation_limit=1)
    with pytest.raises(ValueError):
        GaConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        GaConfig(stdev_threshold=0)
