"""Command line interface: ``fmpolicy solve|exact|eval|experiment|gen``.

Exit codes: 0 success, 1 usage error, 2 parse or validation error,
3 exact method refused (policy space above ``--limit``).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import exact, harness
from .evaluation import PolicyFormatError, evaluate_exact, parse_policy, serialize_policy, simulate
from .model import validate_pomdp
from .pomdp_io import PomdpParseError, load_pomdp, serialize_pomdp
from .search import GaConfig, SaConfig, genetic_search, local_search, simulated_annealing

EXIT_USAGE, EXIT_PARSE, EXIT_REFUSED = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Fail(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_instance(sp, required=True):
    group = sp.add_mutually_exclusive_group(required=required)
    group.add_argument("--pomdp", metavar="FILE", help="POMDP file in Cassandra format")
    group.add_argument("--gen", metavar="NAME[:n]", help="built-in instance: clockwork, signal-corridor:N")


def _instance(args):
    try:
        if args.gen:
            return f"gen:{args.gen}", harness.generate(args.gen)
        p = load_pomdp(args.pomdp)
    except PomdpParseError as exc:
        raise _Fail(EXIT_PARSE, f"{args.pomdp}:\n{exc}") from None
    except ValueError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    except OSError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    problems = validate_pomdp(p)
    if problems:
        raise _Fail(EXIT_PARSE, "\n".join(problems))
    return args.pomdp, p


def _sa_config(args):
    return SaConfig(initial_temperature=args.temp)


def _ga_config(args):
    return GaConfig(
        crossover_rate=args.crossover_rate,
        mutation_rate=args.mutation_rate,
        stagnation_limit=args.stagnation,
        stdev_threshold=args.stdev_threshold,
        population_override=args.population,
    )


def _add_algorithm_flags(sp):
    sp.add_argument("--temp", type=int, default=95, help="annealing start temperature (percent)")
    sp.add_argument("--crossover-rate", type=float, default=0.5)
    sp.add_argument("--mutation-rate", type=float, default=0.005)
    sp.add_argument("--stagnation", type=int, default=10)
    sp.add_argument("--stdev-threshold", type=float, default=0.0001)
    sp.add_argument("--population", type=int, default=None)


def cmd_solve(args):
    _, p = _instance(args)
    try:
        if args.algo == "local":
            res = local_search(p, args.memory, args.horizon, args.seed)
        elif args.algo == "anneal":
            res = simulated_annealing(p, args.memory, args.horizon, args.seed, _sa_config(args))
        else:
            res = genetic_search(p, args.memory, args.horizon, args.seed, _ga_config(args))
    except ValueError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    print(f"value {res.best_value!r}")
    print(f"evaluations {res.evaluations}")
    print(f"iterations {res.iterations}")
    print(f"seed {res.seed}")
    _write_policy(res.best_policy, args.out)


def _write_policy(policy, out):
    text = serialize_policy(policy)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_exact(args):
    _, p = _instance(args)
    try:
        if args.method == "enum":
            res = exact.exhaustive_optimal(p, args.memory, args.horizon, limit=args.limit)
        else:
            res = exact.branch_and_bound(p, args.memory, args.horizon, seed=args.seed, symmetry=args.symmetry)
    except exact.SpaceTooLarge as exc:
        raise _Fail(EXIT_REFUSED, str(exc)) from None
    except ValueError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    print(f"value {res.optimal_value!r}")
    print(f"method {res.method}")
    print(f"nodes {res.nodes_expanded}")
    _write_policy(res.optimal_policy, args.out)


def cmd_eval(args):
    _, p = _instance(args)
    try:
        with open(args.policy, encoding="utf-8") as fh:
            policy = parse_policy(fh.read(), p.n_actions)
    except PolicyFormatError as exc:
        raise _Fail(EXIT_PARSE, f"{args.policy}: {exc}") from None
    except OSError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    try:
        print(f"value {evaluate_exact(p, policy, args.horizon)!r}")
        if args.simulate:
            mean, err = simulate(p, policy, args.horizon, args.simulate, args.seed)
            print(f"simulated {mean!r} stderr {err!r} episodes {args.simulate}")
    except ValueError as exc:
        raise _Fail(EXIT_PARSE, str(exc)) from None


def _optimum_arg(text):
    if text in ("bnb", "enum"):
        return text
    if text.startswith("value:"):
        vals = [float(x) for x in text[6:].split(",")]
        return vals[0] if len(vals) == 1 else tuple(vals)
    raise argparse.ArgumentTypeError("expected bnb, enum or value:X[,X...]")


def cmd_experiment(args):
    source, p = _instance(args)
    try:
        spec = harness.ExperimentSpec(
            instance=source,
            algorithms=[a for a in args.algos.split(",") if a],
            memory_sizes=args.memory,
            horizon=args.horizon,
            runs=args.runs,
            base_seed=args.seed,
            optimum=args.optimum,
            sa=_sa_config(args),
            ga=_ga_config(args),
            enum_limit=args.limit,
        )
    except ValueError as exc:
        raise _Fail(EXIT_USAGE, str(exc)) from None
    report, records = harness.run_experiment(spec, workers=args.workers, timing=args.timing, pomdp=p)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(harness.emit_csv(records))
    if args.plot:
        with open(args.plot, "w", encoding="utf-8") as fh:
            fh.write(harness.emit_plot_data(report))
    print(harness.format_report(report))


def cmd_gen(args):
    if args.family == "clockwork":
        p = harness.gen_clockwork()
    else:
        if args.n < 0:
            raise _Fail(EXIT_USAGE, "--n must be >= 0")
        p = harness.gen_signal_corridor(args.n)
    text = serialize_pomdp(p)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser():
    parser = _Parser(prog="fmpolicy", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("solve", help="search for a good policy")
    _add_instance(sp)
    sp.add_argument("--memory", type=int, required=True)
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--algo", choices=["local", "anneal", "genetic"], required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", metavar="FILE")
    _add_algorithm_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("exact", help="compute the optimal policy value")
    _add_instance(sp)
    sp.add_argument("--memory", type=int, required=True)
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--method", choices=["enum", "bnb"], default="bnb")
    sp.add_argument("--limit", type=int, default=exact.DEFAULT_LIMIT)
    sp.add_argument("--symmetry", action="store_true", help="skip memory relabellings (bnb)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", metavar="FILE")
    sp.set_defaults(func=cmd_exact)

    sp = sub.add_parser("eval", help="evaluate a stored policy")
    _add_instance(sp)
    sp.add_argument("--policy", required=True, metavar="FILE")
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--simulate", type=int, metavar="N", default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiment", help="repeated seeded runs with success statistics")
    _add_instance(sp)
    sp.add_argument("--memory", type=_int_list, required=True, metavar="K1,K2,...")
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--algos", default="local,anneal,genetic")
    sp.add_argument("--runs", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", metavar="FILE")
    sp.add_argument("--plot", metavar="FILE")
    sp.add_argument("--optimum", type=_optimum_arg, default="bnb")
    sp.add_argument("--limit", type=int, default=exact.DEFAULT_LIMIT, help="enumeration limit")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-timing", dest="timing", action="store_false",
                    help="write wall_ms as 0 for byte-reproducible CSV")
    _add_algorithm_flags(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("gen", help="write a built-in instance as a .pomdp file")
    sp.add_argument("--family", choices=["clockwork", "signal-corridor"], required=True)
    sp.add_argument("--n", type=int, default=0)
    sp.add_argument("--out", metavar="FILE")
    sp.set_defaults(func=cmd_gen)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _Fail as exc:
        print(f"fmpolicy: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
