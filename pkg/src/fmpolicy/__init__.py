"""Search for bounded-memory policies of POMDPs and check them against exact optima."""

from .evaluation import (
    EvalCounter,
    FiniteMemoryPolicy,
    evaluate_exact,
    parse_policy,
    serialize_policy,
    simulate,
    stationary_image,
)
from .exact import (
    ExactResult,
    PartialPolicy,
    SpaceTooLarge,
    branch_and_bound,
    exhaustive_optimal,
    policy_space_size,
    relaxed_upper_bound,
)
from .harness import (
    ExperimentSpec,
    emit_csv,
    emit_plot_data,
    gen_clockwork,
    gen_signal_corridor,
    run_experiment,
)
from .model import Pomdp, cross_product, validate_pomdp
from .pomdp_io import PomdpParseError, parse_pomdp, serialize_pomdp
from .search import (
    GaConfig,
    SaConfig,
    SearchResult,
    crossover,
    fitness_transform,
    genetic_search,
    local_search,
    mutate,
    neighbor_at,
    neighbor_count,
    population_size,
    random_policy,
    simulated_annealing,
)

__version__ = "0.1.0"
