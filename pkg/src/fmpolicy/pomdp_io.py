"""Reader and writer for the Cassandra ``.pomdp`` text format.

Only the part of the format that fits deterministic, action-independent
observations is accepted. General rewards ``R(a, s, s', o)`` are folded to
``r(s, a)`` by taking the expectation over the successor state.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .model import PROB_TOL, Pomdp, validate_pomdp

log = logging.getLogger(__name__)

PARSE_TOL = 1e-6
KEYWORDS = ("discount", "values", "states", "actions", "observations", "start", "T", "O", "R")
_TOKEN = re.compile(r"[^\s:]+|:")


@dataclass(frozen=True)
class Diagnostic:
    line: int
    severity: str  # "error" or "warning"
    message: str

    def __str__(self):
        return f"line {self.line}: {self.severity}: {self.message}"


@dataclass
class ParseDiagnostics:
    items: list[Diagnostic] = field(default_factory=list)

    def error(self, line, message):
        self.items.append(Diagnostic(line, "error", message))

    def warning(self, line, message):
        self.items.append(Diagnostic(line, "warning", message))

    @property
    def errors(self):
        return [d for d in self.items if d.severity == "error"]

    @property
    def warnings(self):
        return [d for d in self.items if d.severity == "warning"]

    def __str__(self):
        return "\n".join(str(d) for d in self.items)


class PomdpParseError(ValueError):
    def __init__(self, diagnostics: ParseDiagnostics):
        self.diagnostics = diagnostics
        super().__init__(str(diagnostics))


class _Abort(Exception):
    pass


class _StatementError(Exception):
    def __init__(self, line, message):
        self.line = line
        self.message = message


def _tokenize(text):
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens.extend((tok, lineno) for tok in _TOKEN.findall(line))
    return tokens


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.pos = 0
        self.diag = ParseDiagnostics()
        self.discount = None
        self.names = {}
        self.start = None
        self.trans = self.obs = self.rew = None
        self.saw_obs = False

    # token helpers

    def _starts_statement(self, i):
        if i + 1 >= len(self.toks):
            return False
        tok, line = self.toks[i]
        if tok == "start" and self.toks[i + 1][0] in ("include", "exclude"):
            return True
        if self.toks[i + 1][0] != ":":
            return False
        # data never contains ':', so "word :" opening a line starts a statement
        return tok in KEYWORDS or i == 0 or self.toks[i - 1][1] != line

    def _rest_of_statement(self):
        out = []
        while self.pos < len(self.toks) and not self._starts_statement(self.pos):
            out.append(self.toks[self.pos])
            self.pos += 1
        return out

    def _skip_to_next_statement(self):
        self.pos += 1
        self._rest_of_statement()

    # main loop

    def parse(self):
        while self.pos < len(self.toks):
            tok, line = self.toks[self.pos]
            if not self._starts_statement(self.pos) or tok not in KEYWORDS:
                self.diag.error(line, f"unknown keyword {tok!r}")
                self._skip_to_next_statement()
                continue
            try:
                self._statement(tok, line)
            except _StatementError as exc:
                self.diag.error(exc.line, exc.message)
                self._rest_of_statement()
            except _Abort:
                return None
        return self._finish()

    def _statement(self, keyword, line):
        if keyword == "start" and self.toks[self.pos + 1][0] != ":":
            self.pos += 1
            raise _StatementError(line, "'start include/exclude' is not supported")
        self.pos += 2
        if keyword in ("T", "O", "R"):
            self._require_dimensions(line)
            getattr(self, f"_stmt_{keyword}")(line)
        elif keyword in ("states", "actions", "observations"):
            self._stmt_names(keyword, line)
        else:
            getattr(self, f"_stmt_{keyword}")(line)

    def _require_dimensions(self, line):
        if self.trans is not None:
            return
        missing = [k for k in ("states", "actions", "observations") if k not in self.names]
        if missing:
            for k in missing:
                self.diag.error(line, f"missing {k!r} declaration before first T/O/R entry")
            raise _Abort
        n_s = len(self.names["states"])
        n_a = len(self.names["actions"])
        n_o = len(self.names["observations"])
        self.trans = np.zeros((n_a, n_s, n_s))
        self.obs = np.zeros((n_a, n_s, n_o))
        self.rew = np.zeros((n_a, n_s, n_s, n_o))

    # preamble

    def _stmt_discount(self, line):
        rest = self._rest_of_statement()
        if len(rest) != 1 or not _is_number(rest[0][0]):
            raise _StatementError(line, "discount expects a single number")
        self.discount = float(rest[0][0])
        self.diag.warning(
            line, "discount is retained but evaluation uses undiscounted total reward"
        )

    def _stmt_values(self, line):
        rest = self._rest_of_statement()
        if [t for t, _ in rest] != ["reward"]:
            raise _StatementError(line, "only 'values: reward' is supported")

    def _stmt_names(self, keyword, line):
        if self.trans is not None:
            raise _StatementError(line, f"{keyword!r} declared after T/O/R entries")
        rest = [t for t, _ in self._rest_of_statement()]
        if not rest:
            raise _StatementError(line, f"{keyword!r} needs a count or a list of names")
        if len(rest) == 1 and rest[0].isdigit():
            n = int(rest[0])
            if n < 1:
                raise _StatementError(line, f"{keyword!r} count must be at least 1")
            names = [str(i) for i in range(n)]
        else:
            names = rest
            if len(set(names)) != len(names):
                raise _StatementError(line, f"duplicate name in {keyword!r}")
        self.names[keyword] = names

    def _stmt_start(self, line):
        rest = self._rest_of_statement()
        if "states" not in self.names:
            raise _StatementError(line, "'start' must follow the 'states' declaration")
        n_s = len(self.names["states"])
        words = [t for t, _ in rest]
        if words == ["uniform"]:
            self.start = np.full(n_s, 1.0 / n_s)
        elif len(words) == n_s and all(_is_number(w) for w in words):
            self.start = np.array([float(w) for w in words])
        elif len(words) == 1:
            b0 = np.zeros(n_s)
            b0[self._index("states", rest[0])] = 1.0
            self.start = b0
        else:
            raise _StatementError(line, f"'start' expects 'uniform' or {n_s} probabilities")
        self.start_line = line

    # T, O, R

    def _fields(self):
        out = []
        while True:
            if self.pos >= len(self.toks) or self._starts_statement(self.pos):
                break
            out.append(self.toks[self.pos])
            self.pos += 1
            if self.pos < len(self.toks) and self.toks[self.pos][0] == ":":
                self.pos += 1
                continue
            break
        return out

    def _index(self, kind, tok):
        word, line = tok
        names = self.names[kind]
        if word in names:
            return names.index(word)
        if word.isdigit() and int(word) < len(names):
            return int(word)
        raise _StatementError(line, f"reference to undeclared {kind[:-1]} {word!r}")

    def _indices(self, kind, tok):
        if tok[0] == "*":
            return list(range(len(self.names[kind])))
        return [self._index(kind, tok)]

    def _numbers(self, line, count, specials=()):
        rest = self._rest_of_statement()
        words = [t for t, _ in rest]
        if len(words) == 1 and words[0] in specials:
            return words[0]
        if len(words) != count or not all(_is_number(w) for w in words):
            raise _StatementError(line, f"expected {count} numbers, found {words[:count + 2]!r}")
        return np.array([float(w) for w in words])

    def _stmt_T(self, line):
        f = self._fields()
        n_s = len(self.names["states"])
        if not 1 <= len(f) <= 3:
            raise _StatementError(line, "malformed T entry")
        acts = self._indices("actions", f[0])
        if len(f) == 3:
            src, dst = self._indices("states", f[1]), self._indices("states", f[2])
            (p,) = self._numbers(line, 1)
            for a in acts:
                for s in src:
                    self.trans[a, s, dst] = p
        elif len(f) == 2:
            src = self._indices("states", f[1])
            row = self._numbers(line, n_s, ("uniform",))
            if isinstance(row, str):
                row = np.full(n_s, 1.0 / n_s)
            for a in acts:
                self.trans[a, src, :] = row
        else:
            mat = self._numbers(line, n_s * n_s, ("identity", "uniform"))
            if isinstance(mat, str):
                mat = np.eye(n_s) if mat == "identity" else np.full((n_s, n_s), 1.0 / n_s)
            for a in acts:
                self.trans[a] = np.reshape(mat, (n_s, n_s))

    def _stmt_O(self, line):
        self.saw_obs = True
        f = self._fields()
        n_s, n_o = len(self.names["states"]), len(self.names["observations"])
        if not 1 <= len(f) <= 3:
            raise _StatementError(line, "malformed O entry")
        acts = self._indices("actions", f[0])
        if len(f) == 3:
            dst, obs = self._indices("states", f[1]), self._indices("observations", f[2])
            (p,) = self._numbers(line, 1)
            for a in acts:
                for s in dst:
                    self.obs[a, s, obs] = p
        elif len(f) == 2:
            dst = self._indices("states", f[1])
            row = self._numbers(line, n_o, ("uniform",))
            if isinstance(row, str):
                row = np.full(n_o, 1.0 / n_o)
            for a in acts:
                self.obs[a, dst, :] = row
        else:
            mat = self._numbers(line, n_s * n_o, ("uniform",))
            if isinstance(mat, str):
                mat = np.full((n_s, n_o), 1.0 / n_o)
            for a in acts:
                self.obs[a] = np.reshape(mat, (n_s, n_o))

    def _stmt_R(self, line):
        f = self._fields()
        n_s, n_o = len(self.names["states"]), len(self.names["observations"])
        if not 2 <= len(f) <= 4:
            raise _StatementError(line, "malformed R entry")
        acts = self._indices("actions", f[0])
        src = self._indices("states", f[1])
        if len(f) == 4:
            dst, obs = self._indices("states", f[2]), self._indices("observations", f[3])
            (v,) = self._numbers(line, 1)
            for a in acts:
                for s in src:
                    for s2 in dst:
                        self.rew[a, s, s2, obs] = v
        elif len(f) == 3:
            dst = self._indices("states", f[2])
            row = self._numbers(line, n_o)
            for a in acts:
                for s in src:
                    self.rew[a, s, dst, :] = row
        else:
            mat = np.reshape(self._numbers(line, n_s * n_o), (n_s, n_o))
            for a in acts:
                for s in src:
                    self.rew[a, s] = mat

    # post-processing

    def _finish(self):
        diag = self.diag
        if self.trans is None:
            for k in ("states", "actions", "observations"):
                if k not in self.names:
                    diag.error(0, f"missing {k!r} declaration")
            if diag.errors:
                return None
            self._require_dimensions(0)
        if diag.errors:
            return None
        s_names = self.names["states"]
        a_names = self.names["actions"]
        o_names = self.names["observations"]
        n_s, n_a, n_o = len(s_names), len(a_names), len(o_names)

        trans = np.transpose(self.trans, (1, 0, 2)).copy()
        for s in range(n_s):
            for a in range(n_a):
                row = trans[s, a]
                if np.any(row < 0.0):
                    diag.error(0, f"negative transition probability for action {a_names[a]!r}, state {s_names[s]!r}")
                    continue
                total = row.sum()
                if abs(total - 1.0) > PARSE_TOL:
                    diag.error(
                        0,
                        f"transition row for action {a_names[a]!r}, state {s_names[s]!r} "
                        f"sums to {total:.9g}, not 1",
                    )
                elif abs(total - 1.0) > PROB_TOL:
                    trans[s, a] = row / total

        if not self.saw_obs and n_o == 1:
            self.obs[:] = 1.0
            diag.warning(0, "no O entries; every state emits the single observation")
        observation_of = np.zeros(n_s, dtype=np.intp)
        for s in range(n_s):
            seen = set()
            for a in range(n_a):
                row = self.obs[a, s]
                if abs(row.sum() - 1.0) > PARSE_TOL:
                    diag.error(
                        0,
                        f"observation row for action {a_names[a]!r}, state {s_names[s]!r} "
                        f"sums to {row.sum():.9g}, not 1",
                    )
                    break
                hit = np.flatnonzero(row > PARSE_TOL)
                if len(hit) != 1 or abs(row[hit[0]] - 1.0) > PARSE_TOL:
                    seen = None
                    break
                seen.add(int(hit[0]))
            else:
                if len(seen) == 1:
                    observation_of[s] = seen.pop()
                    continue
                seen = None
            if seen is None:
                diag.error(
                    0,
                    f"observation must be a deterministic function of state "
                    f"(state {s_names[s]!r})",
                )

        if self.start is None:
            diag.warning(0, "no 'start' entry; using the uniform start belief")
            start = np.full(n_s, 1.0 / n_s)
        else:
            start = self.start
            total = start.sum()
            if np.any(start < 0.0) or abs(total - 1.0) > PARSE_TOL:
                diag.error(self.start_line, f"start belief sums to {total:.9g}, not 1")
            elif abs(total - 1.0) > PROB_TOL:
                start = start / total
        if diag.errors:
            return None

        reward = np.zeros((n_s, n_a))
        for s in range(n_s):
            for a in range(n_a):
                vals = self.rew[a, s, np.arange(n_s), observation_of]
                support = trans[s, a] > 0.0
                live = vals[support]
                if len(live) and np.all(live == live[0]):
                    reward[s, a] = live[0]
                else:
                    reward[s, a] = float(np.sum(trans[s, a] * vals))

        p = Pomdp(
            state_names=s_names,
            action_names=a_names,
            observation_names=o_names,
            transition=trans,
            observation_of=observation_of,
            reward=reward,
            start_belief=start,
            discount=self.discount,
        )
        for problem in validate_pomdp(p):
            diag.error(0, problem)
        return None if diag.errors else p


def parse_pomdp_with_diagnostics(text: str) -> tuple[Pomdp | None, ParseDiagnostics]:
    """Parse ``text``; the Pomdp is None whenever any error was reported."""
    parser = _Parser(text)
    p = parser.parse()
    if parser.diag.errors:
        p = None
    return p, parser.diag


def parse_pomdp(text: str) -> Pomdp:
    """Parse ``text`` or raise :class:`PomdpParseError`. Warnings are logged."""
    p, diag = parse_pomdp_with_diagnostics(text)
    if p is None:
        raise PomdpParseError(diag)
    for w in diag.warnings:
        log.warning("%s", w)
    return p


def load_pomdp(path) -> Pomdp:
    with open(path, encoding="utf-8") as fh:
        return parse_pomdp(fh.read())


def _names_line(keyword, names):
    if list(names) == [str(i) for i in range(len(names))]:
        return f"{keyword}: {len(names)}"
    return f"{keyword}: " + " ".join(names)


def serialize_pomdp(p: Pomdp) -> str:
    """Write ``p`` in an explicit canonical form that parses back to equal tables."""
    lines = []
    if p.discount is not None:
        lines.append(f"discount: {p.discount!r}")
    lines.append("values: reward")
    lines.append(_names_line("states", p.state_names))
    lines.append(_names_line("actions", p.action_names))
    lines.append(_names_line("observations", p.observation_names))
    lines.append("start: " + " ".join(repr(float(x)) for x in p.start_belief))
    lines.append("")
    for a, an in enumerate(p.action_names):
        for s, sn in enumerate(p.state_names):
            lines.append(f"T: {an} : {sn}")
            lines.append(" ".join(repr(float(x)) for x in p.transition[s, a]))
    lines.append("")
    for s, sn in enumerate(p.state_names):
        lines.append(f"O: * : {sn} : {p.observation_names[p.observation_of[s]]} 1.0")
    lines.append("")
    for a, an in enumerate(p.action_names):
        for s, sn in enumerate(p.state_names):
            v = float(p.reward[s, a])
            if v != 0.0:
                lines.append(f"R: {an} : {sn} : * : * {v!r}")
    return "\n".join(lines) + "\n"
