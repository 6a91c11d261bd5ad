"""Free finite-memory policies and their finite-horizon total-reward value.

A policy with ``k`` memory states maps each (observation, memory) cell to an
(action, next memory) pair. Memory starts in state 0. Cells are ordered
observation-major, memory-minor; the pair ``(a, m2)`` is coded as
``a * k + m2``, so pair codes are ordered action-major as well.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Pomdp


class FiniteMemoryPolicy:
    """Deterministic table from (observation, memory) to (action, memory)."""

    __slots__ = ("memory_count", "actions", "next_memory")

    def __init__(self, actions, next_memory, memory_count=None):
        actions = np.array(actions, dtype=np.intp, copy=True)
        next_memory = np.array(next_memory, dtype=np.intp, copy=True)
        if actions.ndim != 2 or actions.shape != next_memory.shape:
            raise ValueError("actions and next_memory must be equal-shaped 2-d tables")
        k = actions.shape[1] if memory_count is None else memory_count
        if actions.shape[1] != k or k < 1:
            raise ValueError(f"table has {actions.shape[1]} memory columns, expected {k}")
        if np.any(next_memory < 0) or np.any(next_memory >= k) or np.any(actions < 0):
            raise ValueError("policy entry out of range")
        actions.setflags(write=False)
        next_memory.setflags(write=False)
        self.memory_count = k
        self.actions = actions
        self.next_memory = next_memory

    @classmethod
    def from_codes(cls, codes, memory_count):
        codes = np.asarray(codes, dtype=np.intp)
        return cls(codes // memory_count, codes % memory_count, memory_count)

    @property
    def n_observations(self):
        return self.actions.shape[0]

    @property
    def codes(self):
        """Pair codes ``a*k + m2`` per cell, shape ``(n_observations, k)``."""
        return self.actions * self.memory_count + self.next_memory

    def cell(self, o, m):
        return int(self.actions[o, m]), int(self.next_memory[o, m])

    def check_dimensions(self, p: Pomdp):
        if self.n_observations != p.n_observations:
            raise ValueError(
                f"policy covers {self.n_observations} observations, POMDP has {p.n_observations}"
            )
        if np.any(self.actions >= p.n_actions):
            raise ValueError(f"policy uses an action index >= {p.n_actions}")

    def __eq__(self, other):
        if not isinstance(other, FiniteMemoryPolicy):
            return NotImplemented
        return (
            self.memory_count == other.memory_count
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.next_memory, other.next_memory)
        )

    def __hash__(self):
        return hash((self.memory_count, self.actions.tobytes(), self.next_memory.tobytes()))

    def __repr__(self):
        cells = ", ".join(
            f"({o},{m})->{self.cell(o, m)}"
            for o in range(self.n_observations)
            for m in range(self.memory_count)
        )
        return f"FiniteMemoryPolicy(k={self.memory_count}: {cells})"


class EvalCounter:
    """Number of exact policy evaluations performed.

    Not shared between workers; each search run owns one and callers sum them.
    """

    __slots__ = ("evaluations",)

    def __init__(self, evaluations=0):
        self.evaluations = evaluations

    def add(self, n=1):
        self.evaluations += n

    def __repr__(self):
        return f"EvalCounter({self.evaluations})"


def ordered_sum(x):
    """Sum over the last axis strictly left to right.

    numpy's own reductions pick a summation order from the array layout, so
    the same row can round differently in different batch shapes.
    """
    acc = x[..., 0].copy()
    for t in range(1, x.shape[-1]):
        acc += x[..., t]
    return acc


def evaluate_codes(p: Pomdp, codes, k: int, horizon: int, counter: EvalCounter | None = None):
    """Exact values of a batch of policies given as pair codes.

    ``codes`` has shape ``(batch, n_observations, k)``. This is the one
    evaluation routine; every other path goes through it so that equal
    policies always get bit-identical values.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    codes = np.asarray(codes, dtype=np.intp)
    if codes.ndim != 3 or codes.shape[1:] != (p.n_observations, k):
        raise ValueError(
            f"policy batch has shape {codes.shape[1:]}, expected {(p.n_observations, k)}"
        )
    batch = codes.shape[0]
    if counter is not None:
        counter.add(batch)
    n_s = p.n_states
    per_state = codes[:, p.observation_of, :]  # (batch, S, k)
    act = per_state // k
    nxt = per_state % k
    if np.any(act >= p.n_actions):
        raise ValueError(f"policy uses an action index >= {p.n_actions}")
    s_idx = np.arange(n_s)[None, :, None]
    t_sel = p.transition[s_idx, act]  # (batch, S, k, S)
    r_sel = p.reward[s_idx, act]  # (batch, S, k)
    b_idx = np.arange(batch)[:, None, None]
    value = np.zeros((batch, n_s, k))
    for _ in range(horizon):
        ahead = value.transpose(0, 2, 1)[b_idx, nxt]  # ahead[b,s,m,t] = V[b,t,nxt[b,s,m]]
        value = r_sel + ordered_sum(t_sel * ahead)
    return ordered_sum(p.start_belief * value[:, :, 0])


def evaluate_exact(p: Pomdp, policy: FiniteMemoryPolicy, horizon: int, counter: EvalCounter | None = None) -> float:
    """Expected total reward of ``policy`` over ``horizon`` steps from the start belief."""
    policy.check_dimensions(p)
    return float(evaluate_codes(p, policy.codes[None], policy.memory_count, horizon, counter)[0])


def simulate(p: Pomdp, policy: FiniteMemoryPolicy, horizon: int, episodes: int, seed) -> tuple[float, float]:
    """Monte Carlo estimate of the policy value: ``(mean, standard error)``.

    Episodes are simulated side by side. With a single episode, or when every
    episode returns the same total, the standard error is 0.
    """
    policy.check_dimensions(p)
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(p.transition, axis=-1)
    cum[..., -1] = 1.0
    start_cum = np.cumsum(p.start_belief)
    start_cum[-1] = 1.0
    state = np.searchsorted(start_cum, rng.random(episodes), side="right")
    memory = np.zeros(episodes, dtype=np.intp)
    rewards = np.zeros((horizon, episodes))
    for t in range(horizon):
        obs = p.observation_of[state]
        act = policy.actions[obs, memory]
        memory = policy.next_memory[obs, memory]
        rewards[t] = p.reward[state, act]
        u = rng.random(episodes)
        state = (u[:, None] >= cum[state, act]).sum(axis=-1)
    # r1 + (r2 + (... + rH)), the order of the backward recursion
    total = np.zeros(episodes)
    for t in range(horizon - 1, -1, -1):
        total = rewards[t] + total
    if np.all(total == total[0]):
        return float(total[0]), 0.0
    mean = float(total.mean())
    stderr = float(total.std(ddof=1) / math.sqrt(episodes))
    return mean, stderr


def stationary_image(policy: FiniteMemoryPolicy, n_actions: int) -> FiniteMemoryPolicy:
    """The memoryless policy on ``cross_product(p, k)`` that mirrors ``policy``."""
    codes = policy.codes.reshape(-1, 1)  # observation (o, m) has index o*k + m
    if np.any(policy.actions >= n_actions):
        raise ValueError("policy uses an action outside the action set")
    return FiniteMemoryPolicy(codes, np.zeros_like(codes), 1)


class PolicyFormatError(ValueError):
    pass


def serialize_policy(policy: FiniteMemoryPolicy) -> str:
    k = policy.memory_count
    lines = [f"fmp 1 {policy.n_observations} {k}"]
    for o in range(policy.n_observations):
        for m in range(k):
            a, m2 = policy.cell(o, m)
            lines.append(f"{o} {m} {a} {m2}")
    return "\n".join(lines) + "\n"


def parse_policy(text: str, n_actions: int | None = None) -> FiniteMemoryPolicy:
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise PolicyFormatError("empty policy text")
    head = lines[0]
    if len(head) != 4 or head[:2] != ["fmp", "1"] or not all(x.isdigit() for x in head[2:]):
        raise PolicyFormatError(f"bad header {' '.join(head)!r}, expected 'fmp 1 <n_obs> <k>'")
    n_obs, k = int(head[2]), int(head[3])
    if n_obs < 1 or k < 1:
        raise PolicyFormatError("observation and memory counts must be >= 1")
    body = lines[1:]
    if len(body) != n_obs * k:
        raise PolicyFormatError(f"expected {n_obs * k} cell lines, found {len(body)}")
    actions = np.zeros((n_obs, k), dtype=np.intp)
    nxt = np.zeros((n_obs, k), dtype=np.intp)
    for i, row in enumerate(body):
        try:
            o, m, a, m2 = (int(x) for x in row)
        except ValueError:
            raise PolicyFormatError(f"cell line {i + 1} must hold four integers: {' '.join(row)!r}") from None
        if (o, m) != divmod(i, k):
            raise PolicyFormatError(f"cell line {i + 1} is ({o}, {m}), expected {divmod(i, k)}")
        if not 0 <= m2 < k or a < 0 or (n_actions is not None and a >= n_actions):
            raise PolicyFormatError(f"cell line {i + 1} has an out-of-range entry")
        actions[o, m], nxt[o, m] = a, m2
    return FiniteMemoryPolicy(actions, nxt, k)

