"""Seeded multi-run experiments, built-in instances and result tables."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evaluation import EvalCounter
from .exact import SpaceTooLarge, branch_and_bound, exhaustive_optimal
from .model import Pomdp
from .pomdp_io import load_pomdp
from .search import ALGORITHMS, GaConfig, SaConfig, genetic_search, simulated_annealing

log = logging.getLogger(__name__)

OPTIMAL_TOL = 1e-9
CSV_HEADER = [
    "instance", "algorithm", "memory_states", "horizon", "run", "seed",
    "value", "evaluations", "wall_ms", "reached_optimal",
]


def gen_clockwork() -> Pomdp:
    """Two states, one observation; ``swap`` toggles the state, ``stay`` holds it.

    Only ``stay`` in ``s1`` pays 1. The start is ``s0``, so a memoryless
    policy cannot both swap and then stay.
    """
    trans = np.zeros((2, 2, 2))
    trans[:, 0, :] = np.eye(2)
    trans[:, 1, :] = np.eye(2)[::-1]
    reward = np.array([[0.0, 0.0], [1.0, 0.0]])
    return Pomdp(
        state_names=["s0", "s1"],
        action_names=["stay", "swap"],
        observation_names=["o"],
        transition=trans,
        observation_of=[0, 0],
        reward=reward,
        start_belief=[1.0, 0.0],
    )


def gen_signal_corridor(n: int) -> Pomdp:
    """A hidden signal shown once, then ``n`` identical hall cells, then a choice.

    States are ``(signal, position)`` for positions ``0..n+1`` plus an
    absorbing terminal. Committing to the signal at the end pays 1.
    """
    if n < 0:
        raise ValueError("corridor length must be >= 0")
    length = n + 2
    n_s = 2 * length + 1
    term = n_s - 1
    states = [f"{g}{pos}" for g in "AB" for pos in range(length)] + ["terminal"]
    obs_names = ["oA", "oB"] + (["hall"] if n else []) + ["end", "term"]
    o_index = {name: i for i, name in enumerate(obs_names)}
    actions = ["advance", "commitA", "commitB"]
    trans = np.zeros((n_s, 3, n_s))
    reward = np.zeros((n_s, 3))
    observation_of = np.zeros(n_s, dtype=np.intp)
    for g in range(2):
        for pos in range(length):
            s = g * length + pos
            if pos == 0:
                observation_of[s] = o_index["oA" if g == 0 else "oB"]
            elif pos <= n:
                observation_of[s] = o_index["hall"]
            else:
                observation_of[s] = o_index["end"]
            trans[s, 0, s + 1 if pos < length - 1 else s] = 1.0
            trans[s, 1, term] = trans[s, 2, term] = 1.0
            if pos == length - 1:
                reward[s, 1 + g] = 1.0
    observation_of[term] = o_index["term"]
    trans[term, :, term] = 1.0
    start = np.zeros(n_s)
    start[0] = start[length] = 0.5
    return Pomdp(states, actions, obs_names, trans, observation_of, reward, start)


GENERATORS = {"clockwork": gen_clockwork, "signal-corridor": gen_signal_corridor}


def generate(spec: str) -> Pomdp:
    """Build a generator instance from ``NAME`` or ``NAME:n``."""
    name, _, arg = spec.partition(":")
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    if name == "clockwork":
        if arg:
            raise ValueError("clockwork takes no parameter")
        return gen_clockwork()
    return gen_signal_corridor(int(arg) if arg else 0)


def load_instance(source: str) -> Pomdp:
    """``gen:NAME[:n]`` builds a generator instance; anything else is a file path."""
    if source.startswith("gen:"):
        return generate(source[4:])
    return load_pomdp(source)


def stable_seed(base_seed: int, algorithm: str, k: int, run: int) -> int:
    digest = hashlib.blake2b(f"{algorithm}:{k}:{run}".encode(), digest_size=8).digest()
    return (base_seed ^ int.from_bytes(digest, "big")) & 0xFFFF_FFFF_FFFF_FFFF


@dataclass
class ExperimentSpec:
    instance: str  # "gen:NAME[:n]" or a .pomdp path
    algorithms: tuple[str, ...]
    memory_sizes: tuple[int, ...]
    horizon: int
    runs: int = 100
    base_seed: int = 0
    optimum: str | float | tuple = "bnb"  # "bnb", "enum", one value, or one value per k
    sa: SaConfig = field(default_factory=SaConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    enum_limit: int = 2_000_000

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        self.memory_sizes = tuple(self.memory_sizes)
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.memory_sizes or list(self.memory_sizes) != sorted(set(self.memory_sizes)):
            raise ValueError("memory_sizes must be nonempty and strictly ascending")
        if self.memory_sizes[0] < 1:
            raise ValueError("memory sizes must be >= 1")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if not self.algorithms or unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}; choose from {sorted(ALGORITHMS)}")


@dataclass
class RunRecord:
    instance: str
    algorithm: str
    k: int
    horizon: int
    run: int
    seed: int
    value: float
    evaluations: int
    wall_ms: float
    reached_optimal: bool | None  # None when no optimum is known

    @property
    def sort_key(self):
        return (self.algorithm, self.k, self.run)


@dataclass
class CellStats:
    runs: int
    successes: int | None
    mean_evaluations: float
    stdev_evaluations: float
    mean_wall_ms: float
    stdev_wall_ms: float
    best_value: float

    @property
    def success_fraction(self):
        return None if self.successes is None else self.successes / self.runs


@dataclass
class Report:
    instance: str
    horizon: int
    optimum: dict  # k -> value or None
    cells: dict  # (algorithm, k) -> CellStats

    @property
    def algorithms(self):
        return sorted({a for a, _ in self.cells})


def compute_optimum(p: Pomdp, spec: ExperimentSpec) -> dict:
    out = {}
    opt = spec.optimum
    for idx, k in enumerate(spec.memory_sizes):
        if opt == "bnb":
            out[k] = branch_and_bound(p, k, spec.horizon, seed=spec.base_seed).optimal_value
        elif opt == "enum":
            try:
                out[k] = exhaustive_optimal(p, k, spec.horizon, limit=spec.enum_limit).optimal_value
            except SpaceTooLarge as exc:
                log.warning("k=%d: %s; success is unknown", k, exc)
                out[k] = None
        elif isinstance(opt, (tuple, list)):
            out[k] = float(opt[idx])
        else:
            out[k] = float(opt)
    return out


def _run_one(task):
    p, instance, algorithm, k, horizon, run, seed, sa, ga, timing = task
    counter = EvalCounter()
    began = time.perf_counter()
    if algorithm == "anneal":
        res = simulated_annealing(p, k, horizon, seed, sa, counter)
    elif algorithm == "genetic":
        res = genetic_search(p, k, horizon, seed, ga, counter)
    else:
        res = ALGORITHMS[algorithm](p, k, horizon, seed, counter)
    wall = (time.perf_counter() - began) * 1000.0 if timing else 0.0
    return RunRecord(instance, algorithm, k, horizon, run, seed, res.best_value,
                     res.evaluations, wall, None)


def run_experiment(spec: ExperimentSpec, workers: int = 1, timing: bool = True, pomdp: Pomdp | None = None):
    """Run every (algorithm, k, run) cell; return ``(report, records)``.

    Records come back sorted by (algorithm, k, run) whatever the worker count.
    With ``timing=False`` wall times are recorded as 0 so output files are
    byte-for-byte reproducible.
    """
    p = pomdp if pomdp is not None else load_instance(spec.instance)
    optimum = compute_optimum(p, spec)
    ks = spec.memory_sizes
    for lo, hi in zip(ks, ks[1:]):
        if optimum[lo] is not None and optimum[hi] is not None and optimum[hi] < optimum[lo] - OPTIMAL_TOL:
            raise RuntimeError(f"optimum decreased from k={lo} to k={hi}")
    tasks = [
        (p, spec.instance, algo, k, spec.horizon, run,
         stable_seed(spec.base_seed, algo, k, run), spec.sa, spec.ga, timing)
        for algo in spec.algorithms for k in ks for run in range(spec.runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_run_one(t) for t in tasks]
    for rec in records:
        opt = optimum[rec.k]
        if opt is None:
            continue
        if rec.value > opt + OPTIMAL_TOL:
            raise RuntimeError(
                f"{rec.algorithm} run {rec.run} at k={rec.k} found {rec.value!r} above the optimum {opt!r}"
            )
        rec.reached_optimal = abs(rec.value - opt) <= OPTIMAL_TOL
    records.sort(key=lambda r: r.sort_key)
    return aggregate(records, optimum, spec.instance, spec.horizon), records


def _stdev(xs):
    return statistics.stdev(xs) if len(xs) > 1 else 0.0


def aggregate(records, optimum, instance, horizon) -> Report:
    groups = {}
    for rec in records:
        groups.setdefault((rec.algorithm, rec.k), []).append(rec)
    cells = {}
    for key, recs in sorted(groups.items()):
        flags = [r.reached_optimal for r in recs]
        evals = [r.evaluations for r in recs]
        walls = [r.wall_ms for r in recs]
        cells[key] = CellStats(
            runs=len(recs),
            successes=None if any(f is None for f in flags) else sum(flags),
            mean_evaluations=statistics.fmean(evals),
            stdev_evaluations=_stdev(evals),
            mean_wall_ms=statistics.fmean(walls),
            stdev_wall_ms=_stdev(walls),
            best_value=max(r.value for r in recs),
        )
    return Report(instance, horizon, dict(optimum), cells)


def _num(x):
    return format(x, ".12g")


def emit_csv(records) -> str:
    if not records:
        raise ValueError("no records to write")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in sorted(records, key=lambda r: r.sort_key):
        flag = "" if r.reached_optimal is None else int(r.reached_optimal)
        writer.writerow([r.instance, r.algorithm, r.k, r.horizon, r.run, r.seed,
                         _num(r.value), r.evaluations, _num(r.wall_ms), flag])
    return buf.getvalue()


def emit_plot_data(report: Report) -> str:
    """Gnuplot-style blocks, one per algorithm: ``k success_fraction mean_evaluations``."""
    if not report.cells:
        raise ValueError("empty report")
    blocks = []
    for algo in report.algorithms:
        lines = [f"# {algo}"]
        for (a, k), cell in sorted(report.cells.items()):
            if a != algo:
                continue
            frac = cell.success_fraction
            lines.append(f"{k} {'nan' if frac is None else _num(frac)} {_num(cell.mean_evaluations)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def format_report(report: Report) -> str:
    """Plain-text table in the layout of a success-likelihood table."""
    ks = sorted({k for _, k in report.cells})
    lines = [f"instance {report.instance}, horizon {report.horizon}"]
    lines.append("optimum  " + "  ".join(
        f"k={k}: {'?' if report.optimum.get(k) is None else _num(report.optimum[k])}" for k in ks
    ))
    lines.append(f"{'algorithm':<10}" + "".join(f"{'k=' + str(k):>10}" for k in ks))
    for algo in report.algorithms:
        row = f"{algo:<10}"
        for k in ks:
            cell = report.cells.get((algo, k))
            frac = None if cell is None else cell.success_fraction
            row += f"{'-' if frac is None else f'{100 * frac:.0f}%':>10}"
        lines.append(row)
    return "\n".join(lines)
