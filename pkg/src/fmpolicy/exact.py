"""Exact optimal finite-memory policies by enumeration and branch-and-bound."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .evaluation import EvalCounter, FiniteMemoryPolicy, evaluate_codes, evaluate_exact, ordered_sum
from .model import Pomdp
from .search import local_search

log = logging.getLogger(__name__)

DEFAULT_LIMIT = 2_000_000
UNASSIGNED = -1


class SpaceTooLarge(Exception):
    def __init__(self, size, limit):
        self.size = size
        self.limit = limit
        super().__init__(f"policy space has {size} members, above the limit of {limit}")


@dataclass
class ExactResult:
    optimal_policy: FiniteMemoryPolicy
    optimal_value: float
    nodes_expanded: int
    method: str  # "enumeration" or "branch-and-bound"


class PartialPolicy:
    """Policy table in which some cells are still unassigned.

    ``codes`` holds pair codes in global cell order (observation-major,
    memory-minor) with ``UNASSIGNED`` marking free cells.
    """

    def __init__(self, n_observations, memory_count, codes=None):
        self.memory_count = memory_count
        self.n_observations = n_observations
        if codes is None:
            codes = np.full(n_observations * memory_count, UNASSIGNED, dtype=np.intp)
        self.codes = np.asarray(codes, dtype=np.intp).reshape(-1)
        if self.codes.size != n_observations * memory_count:
            raise ValueError("partial policy has the wrong number of cells")

    @classmethod
    def from_policy(cls, policy: FiniteMemoryPolicy):
        return cls(policy.n_observations, policy.memory_count, policy.codes.reshape(-1))

    def assign(self, cell, code):
        codes = self.codes.copy()
        codes[cell] = code
        return PartialPolicy(self.n_observations, self.memory_count, codes)

    @property
    def complete(self):
        return bool(np.all(self.codes != UNASSIGNED))

    def to_policy(self) -> FiniteMemoryPolicy:
        if not self.complete:
            raise ValueError("partial policy still has unassigned cells")
        return FiniteMemoryPolicy.from_codes(
            self.codes.reshape(self.n_observations, self.memory_count), self.memory_count
        )


def policy_space_size(n_observations, n_actions, k) -> int:
    return (n_actions * k) ** (n_observations * k)


def _all_codes(start, stop, n_cells, n_pairs):
    """Policies ``start..stop-1`` in lexicographic order (first cell most significant)."""
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((idx.size, n_cells), dtype=np.intp)
    for c in range(n_cells - 1, -1, -1):
        idx, digits[:, c] = np.divmod(idx, n_pairs)
    return digits


def exhaustive_optimal(
    p: Pomdp, k: int, horizon: int, limit: int = DEFAULT_LIMIT, counter: EvalCounter | None = None,
    chunk: int = 65536,
) -> ExactResult:
    """Evaluate every policy; return the first one attaining the maximum."""
    n_obs, n_pairs = p.n_observations, p.n_actions * k
    size = policy_space_size(n_obs, p.n_actions, k)
    if size > limit:
        raise SpaceTooLarge(size, limit)
    n_cells = n_obs * k
    best_value, best_codes = -np.inf, None
    for start in range(0, size, chunk):
        stop = min(size, start + chunk)
        codes = _all_codes(start, stop, n_cells, n_pairs)
        values = evaluate_codes(p, codes.reshape(-1, n_obs, k), k, horizon, counter)
        i = int(np.argmax(values))
        if values[i] > best_value:
            best_value, best_codes = float(values[i]), codes[i]
    policy = FiniteMemoryPolicy.from_codes(best_codes.reshape(n_obs, k), k)
    return ExactResult(policy, best_value, size, "enumeration")


def relaxed_upper_bound(p: Pomdp, partial: PartialPolicy, horizon: int) -> float:
    """Admissible bound on every completion of ``partial``.

    Backward induction over (state, memory) where an unassigned cell may pick
    its best (action, memory) pair separately for each state and stage.
    Fully assigned partials give exactly the policy value.
    """
    k = partial.memory_count
    if partial.n_observations != p.n_observations:
        raise ValueError("partial policy does not match the POMDP's observations")
    n_s, n_a = p.n_states, p.n_actions
    cell_codes = partial.codes.reshape(p.n_observations, k)[p.observation_of]  # (S, k)
    free = cell_codes == UNASSIGNED
    fixed = np.where(free, 0, cell_codes)
    rows = np.arange(n_s)[:, None]
    trans = p.transition[:, :, None, :]  # (S, A, 1, S)
    reward = np.broadcast_to(p.reward[:, :, None], (n_s, n_a, k))
    value = np.zeros((n_s, k))
    for _ in range(horizon):
        # q[s, a, m2] = r[s, a] + sum_t T[s, a, t] * V[t, m2]; same reduction as evaluate_codes
        q = (reward + ordered_sum(trans * value.T[None, None, :, :])).reshape(n_s, n_a * k)
        value = np.where(free, q.max(axis=1)[:, None], q[rows, fixed])
    return float(ordered_sum(p.start_belief * value[:, 0]))


def _symmetry_ok(codes, cell, code, k):
    """Canonical memory labelling for the first observation's row.

    In the row of observation 0, a next-memory label may exceed every label
    seen so far (row labels 0..m plus earlier targets) by at most one. Every
    policy can be relabelled (fixing memory 0) to meet this, and relabelling
    does not change the value.
    """
    if cell >= k:
        return True
    seen = cell
    for c in range(cell):
        seen = max(seen, int(codes[c]) % k)
    return code % k <= seen + 1


def branch_and_bound(
    p: Pomdp, k: int, horizon: int, seed: int = 0, symmetry: bool = False,
    counter: EvalCounter | None = None, progress_every: float = 10.0,
) -> ExactResult:
    """Depth-first branch-and-bound over cells in global order.

    Children are tried best bound first; a node is pruned when its bound is
    not above the incumbent, which starts from one local search run.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_obs, n_pairs = p.n_observations, p.n_actions * k
    n_cells = n_obs * k
    seeded = local_search(p, k, horizon, seed, counter)
    incumbent = seeded.best_policy.codes.reshape(-1).copy()
    incumbent_value = seeded.best_value
    expanded = 0
    last_report = time.monotonic()

    def visit(partial, depth):
        nonlocal incumbent, incumbent_value, expanded, last_report
        expanded += 1
        if time.monotonic() - last_report > progress_every:
            last_report = time.monotonic()
            log.info("branch-and-bound: %d nodes expanded, incumbent %.12g", expanded, incumbent_value)
        children = []
        for code in range(n_pairs):
            if symmetry and not _symmetry_ok(partial.codes, depth, code, k):
                continue
            child = partial.assign(depth, code)
            children.append((relaxed_upper_bound(p, child, horizon), code, child))
        children.sort(key=lambda c: -c[0])  # stable: ties keep code order
        for bound, _, child in children:
            if bound <= incumbent_value:
                break
            if depth + 1 == n_cells:
                incumbent, incumbent_value = child.codes.copy(), bound
            else:
                visit(child, depth + 1)

    visit(PartialPolicy(n_obs, k), 0)
    policy = FiniteMemoryPolicy.from_codes(incumbent.reshape(n_obs, k), k)
    value = evaluate_exact(p, policy, horizon, counter)
    return ExactResult(policy, value, expanded, "branch-and-bound")
