"""POMDP data model and the state x memory cross-product construction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-9


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Pomdp:
    """A finite POMDP with deterministic, action-independent observations.

    ``transition[s, a, s2]`` is the probability of moving from ``s`` to ``s2``
    under action ``a``; ``observation_of[s]`` is the index of the observation
    emitted in state ``s``; ``reward[s, a]`` is the immediate reward.
    Arrays are copied and made read-only on construction.
    """

    state_names: tuple[str, ...]
    action_names: tuple[str, ...]
    observation_names: tuple[str, ...]
    transition: np.ndarray
    observation_of: np.ndarray
    reward: np.ndarray
    start_belief: np.ndarray
    discount: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "state_names", tuple(str(x) for x in self.state_names))
        object.__setattr__(self, "action_names", tuple(str(x) for x in self.action_names))
        object.__setattr__(
            self, "observation_names", tuple(str(x) for x in self.observation_names)
        )
        object.__setattr__(self, "transition", _frozen(self.transition, np.float64))
        object.__setattr__(self, "observation_of", _frozen(self.observation_of, np.intp))
        object.__setattr__(self, "reward", _frozen(self.reward, np.float64))
        object.__setattr__(self, "start_belief", _frozen(self.start_belief, np.float64))
        n_s, n_a = self.n_states, self.n_actions
        if self.transition.shape != (n_s, n_a, n_s):
            raise ValueError(
                f"transition has shape {self.transition.shape}, expected {(n_s, n_a, n_s)}"
            )
        if self.reward.shape != (n_s, n_a):
            raise ValueError(f"reward has shape {self.reward.shape}, expected {(n_s, n_a)}")
        if self.observation_of.shape != (n_s,):
            raise ValueError("observation_of must have one entry per state")
        if self.start_belief.shape != (n_s,):
            raise ValueError("start_belief must have one entry per state")

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def n_observations(self) -> int:
        return len(self.observation_names)

    def __eq__(self, other):
        if not isinstance(other, Pomdp):
            return NotImplemented
        return (
            self.state_names == other.state_names
            and self.action_names == other.action_names
            and self.observation_names == other.observation_names
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.observation_of, other.observation_of)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.start_belief, other.start_belief)
            and self.discount == other.discount
        )

    __hash__ = object.__hash__

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_cache"] = {}
        return state

    def __setstate__(self, state):
        for key, value in state.items():
            object.__setattr__(self, key, value)


def validate_pomdp(p: Pomdp) -> list[str]:
    """Return a list of invariant violations; empty means well formed."""
    problems = []
    t = p.transition
    for s in range(p.n_states):
        for a in range(p.n_actions):
            row = t[s, a]
            if np.any(row < 0.0) or np.any(row > 1.0):
                problems.append(f"transition[{s}][{a}] has an entry outside [0, 1]")
            total = float(row.sum())
            if abs(total - 1.0) > PROB_TOL:
                problems.append(f"transition[{s}][{a}] sums to {total!r}, not 1")
    b0 = p.start_belief
    for s in np.flatnonzero((b0 < 0.0) | (b0 > 1.0)):
        problems.append(f"start_belief[{s}] = {b0[s]!r} is outside [0, 1]")
    total = float(b0.sum())
    if abs(total - 1.0) > PROB_TOL:
        problems.append(f"start_belief sums to {total!r}, not 1")
    for s, o in enumerate(p.observation_of):
        if not 0 <= o < p.n_observations:
            problems.append(f"observation_of[{s}] = {o} is not a valid observation index")
    if not np.all(np.isfinite(p.reward)):
        for s, a in zip(*np.nonzero(~np.isfinite(p.reward))):
            problems.append(f"reward[{s}][{a}] is not finite")
    return problems


def cross_product(p: Pomdp, k: int) -> Pomdp:
    """Pair every world state with one of ``k`` memory states.

    State ``(s, m)`` gets index ``s*k + m``, observation ``(o, m)`` index
    ``o*k + m`` and action ``(a, m2)`` index ``a*k + m2``; taking action
    ``(a, m2)`` sets the memory to ``m2``. The start belief places all
    mass on memory 0.
    """
    if k < 1:
        raise ValueError(f"memory count must be >= 1, got {k}")
    n_s, n_a = p.n_states, p.n_actions
    ns2, na2 = n_s * k, n_a * k
    trans = np.zeros((ns2, na2, ns2))
    reward = np.zeros((ns2, na2))
    obs = np.zeros(ns2, dtype=np.intp)
    start = np.zeros(ns2)
    for s in range(n_s):
        start[s * k] = p.start_belief[s]
        for m in range(k):
            row = s * k + m
            obs[row] = p.observation_of[s] * k + m
            for a in range(n_a):
                for m2 in range(k):
                    col = a * k + m2
                    trans[row, col, m2::k] = p.transition[s, a]
                    reward[row, col] = p.reward[s, a]

    def pairs(names):
        return [f"{x}|{m}" for x in names for m in range(k)]

    return Pomdp(
        state_names=pairs(p.state_names),
        action_names=pairs(p.action_names),
        observation_names=pairs(p.observation_names),
        transition=trans,
        observation_of=obs,
        reward=reward,
        start_belief=start,
        discount=p.discount,
    )
