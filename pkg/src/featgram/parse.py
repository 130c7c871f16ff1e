"""Agenda-driven bidirectional chart parser.

Rules are anchored at their key daughter: a passive edge that can fill
the key slot starts an active edge, which then grows over adjacent
passive edges on either side until every slot is filled.  Unification
happens only when a task is executed; a precomputed rule filter discards
tasks whose producer can never fill the slot in question.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

from . import fs as F
from .errors import FeatgramError, StrategyError
from .expand import UNSATISFIABLE, expander

DEFAULT_MAX_EDGES = 20000
DEFAULT_MAX_READINGS = 64
UNARY_CHAIN_LIMIT = 3

SCAN = "scan"
START = "start-rule"
LEFT = "complete-left"
RIGHT = "complete-right"
TEMPLATE = "template"

FILTER_FORMAT = "featgram-rule-filter 1"


# -- strategies ---------------------------------------------------------------


@dataclass
class Strategy:
    """Agenda ordering.

    Tasks are ordered by rule weight (higher first), then by the
    direction bias (``"left"`` or ``"right"`` completions first), then by
    task id, ascending for breadth-first and descending otherwise.
    ``daughter_order`` fixes the slot filling sequence of individual
    rules; rules not listed grow at both ends.
    """

    name: str = "breadth-first"
    breadth_first: bool = True
    rule_weights: dict = field(default_factory=dict)
    direction: str = ""
    daughter_order: dict = field(default_factory=dict)

    def validate(self, grammar):
        names = {r.name for r in grammar.rules}
        for n in list(self.rule_weights) + list(self.daughter_order):
            if n not in names:
                raise StrategyError(f"strategy {self.name}: unknown rule {n!r}")
        if self.direction not in ("", "left", "right"):
            raise StrategyError(f"bad direction bias {self.direction!r}")
        for n, order in self.daughter_order.items():
            r = grammar.rule(n)
            if sorted(order) != list(range(r.arity)) or order[0] != r.key:
                raise StrategyError(
                    f"daughter order for {n} must start at the key daughter "
                    "and list every slot once")
            lo = hi = order[0]
            for d in order[1:]:
                if d == lo - 1:
                    lo = d
                elif d == hi + 1:
                    hi = d
                else:
                    raise StrategyError(
                        f"daughter order for {n} must grow contiguously")
        return self

    def priority(self, task):
        if task.kind in (SCAN, TEMPLATE):
            return (0, 0, 0, task.id)
        w = self.rule_weights.get(task.rule.name, 0)
        side = 0
        if self.direction and task.kind != START:
            side = 0 if task.kind == (LEFT if self.direction == "left"
                                      else RIGHT) else 1
        order = task.id if self.breadth_first else -task.id
        return (1, -w, side, order)


def builtin_strategy(name, grammar=None):
    """Named presets: breadth-first, depth-first, rule-weighted,
    left-first, right-first."""
    if name == "breadth-first":
        return Strategy(name)
    if name == "depth-first":
        return Strategy(name, breadth_first=False)
    if name == "left-first":
        return Strategy(name, direction="left")
    if name == "right-first":
        return Strategy(name, direction="right")
    if name == "rule-weighted":
        # later rules first; enough to reorder the agenda substantially
        rules = grammar.rules if grammar is not None else ()
        return Strategy(name, rule_weights={r.name: i
                                            for i, r in enumerate(rules)})
    raise StrategyError(f"unknown strategy {name!r}")


STRATEGY_NAMES = ("breadth-first", "depth-first", "rule-weighted",
                  "left-first", "right-first")


# -- rule filter ---------------------------------------------------------------


def producer_of_entry(entry):
    return "lex:" + entry.category


class RuleFilter:
    """possible[rule, slot, producer]; producers are rule names and
    ``lex:<category>`` for lexical items.  Unknown triples are allowed."""

    def __init__(self, table, veto=(), digest=""):
        self.table = dict(table)
        self.veto = frozenset(tuple(v) for v in veto)
        self.digest = digest

    def possible(self, rule, slot, producer):
        key = (rule, slot, producer)
        if key in self.veto:
            return False
        return self.table.get(key, True)

    def to_text(self):
        lines = [FILTER_FORMAT, f"grammar {self.digest}"]
        for (r, d, p), ok in sorted(self.table.items()):
            lines.append(f"{r}\t{d}\t{p}\t{int(ok)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, grammar=None):
        lines = text.splitlines()
        if not lines or lines[0] != FILTER_FORMAT:
            raise FeatgramError("not a rule filter file")
        digest = lines[1].split(" ", 1)[1] if len(lines) > 1 else ""
        if grammar is not None and digest != grammar.digest:
            raise FeatgramError("rule filter was computed for another grammar")
        table = {}
        for ln in lines[2:]:
            r, d, p, ok = ln.split("\t")
            table[(r, int(d), p)] = ok == "1"
        veto = grammar.manifest.veto if grammar is not None else ()
        return cls(table, veto, digest)


def compute_rule_filter(grammar):
    """Try every producer in every slot of every rule once."""
    items = {}
    for e in grammar.items():
        items.setdefault(producer_of_entry(e), []).append(e)
    table = {}
    for r in grammar.rules:
        for d, path in enumerate(r.daughters):
            for p in grammar.rules:
                table[(r.name, d, p.name)] = \
                    F.unify_at(r.fs, path, p.mother) is not None
            for prod, es in sorted(items.items()):
                table[(r.name, d, prod)] = any(
                    F.unify_at(r.fs, path, e.fs) is not None for e in es)
    return RuleFilter(table, grammar.manifest.veto, grammar.digest)


def rule_filter(grammar):
    """The grammar's filter, computed on first use and then cached."""
    f = getattr(grammar, "_rule_filter", None)
    if f is None:
        f = compute_rule_filter(grammar)
        grammar._rule_filter = f
    return f


# -- chart objects ---------------------------------------------------------


@dataclass
class Edge:
    id: int
    start: int
    end: int
    fs: object
    category: str = ""
    rule: object = None
    slots: tuple = ()  # daughter edge id per slot, None while open
    entry: object = None
    deriv: object = None  # passive only
    template: object = None
    unary: int = 0

    @property
    def passive(self):
        return self.rule is None or None not in self.slots

    @property
    def producer(self):
        if self.entry is not None:
            return producer_of_entry(self.entry)
        return self.rule.name

    @property
    def tree(self):
        return tree_string(self.deriv)

    def open_sides(self, strategy):
        """(side, slot) pairs this active edge may extend next."""
        r = self.rule
        filled = [i for i, e in enumerate(self.slots) if e is not None]
        order = strategy.daughter_order.get(r.name)
        if order is not None:
            nxt = order[len(filled)]
            return [(LEFT if nxt < filled[0] else RIGHT, nxt)]
        out = []
        if filled[0] > 0:
            out.append((LEFT, filled[0] - 1))
        if filled[-1] < r.arity - 1:
            out.append((RIGHT, filled[-1] + 1))
        return out


def tree_string(deriv):
    if deriv is None:
        return "?"
    if isinstance(deriv, tuple):
        name, kids = deriv
        return f"{name}({','.join(tree_string(k) for k in kids)})"
    return deriv.name


def derivation_leaves(deriv):
    if isinstance(deriv, tuple):
        out = []
        for k in deriv[1]:
            out.extend(derivation_leaves(k))
        return out
    return [deriv]


@dataclass
class Task:
    id: int
    kind: str
    rule: object = None
    passive: object = None
    active: object = None
    slot: int = 0
    payload: object = None  # lexical item or template match
    span: tuple = ()


@dataclass
class Stats:
    tasks_created: int = 0
    tasks_executed: int = 0
    tasks_filtered: int = 0
    unifications: int = 0
    unification_failures: int = 0
    edges_passive: int = 0
    edges_active: int = 0
    template_hits: int = 0
    rule_attempts: dict = field(default_factory=dict)
    rule_successes: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def merge(self, other):
        for k in ("tasks_created", "tasks_executed", "tasks_filtered",
                  "unifications", "unification_failures", "edges_passive",
                  "edges_active", "template_hits", "elapsed"):
            setattr(self, k, getattr(self, k) + getattr(other, k))
        for k, v in other.rule_attempts.items():
            self.rule_attempts[k] = self.rule_attempts.get(k, 0) + v
        for k, v in other.rule_successes.items():
            self.rule_successes[k] = self.rule_successes.get(k, 0) + v
        return self


COUNTERS = (("tasks-created", "tasks_created"),
            ("tasks-executed", "tasks_executed"),
            ("tasks-filtered", "tasks_filtered"),
            ("unifications", "unifications"),
            ("unification-failures", "unification_failures"),
            ("edges-passive", "edges_passive"),
            ("edges-active", "edges_active"),
            ("template-hits", "template_hits"))


def stats_report(stats, timing=False):
    """Fixed-width table: one counter per line, then per-rule ratios.

    Columns are ``name`` (left, 22 wide) and integers right-aligned in
    10-character fields; ratios use three decimals.
    """
    lines = [f"{'counter':<22}{'value':>10}"]
    for label, attr in COUNTERS:
        lines.append(f"{label:<22}{getattr(stats, attr):>10}")
    if timing:
        lines.append(f"{'elapsed-ms':<22}{stats.elapsed * 1000:>10.1f}")
    lines.append("")
    lines.append(f"{'rule':<22}{'attempts':>10}{'successes':>10}"
                 f"{'ratio':>10}")
    for name in sorted(stats.rule_attempts):
        a = stats.rule_attempts[name]
        s = stats.rule_successes.get(name, 0)
        ratio = s / a if a else 0.0
        lines.append(f"{name:<22}{a:>10}{s:>10}{ratio:>10.3f}")
    return "\n".join(lines) + "\n"


@dataclass
class Reading:
    tree: str
    fs: object
    edge: int
    deriv: object = None
    template: bool = False

    @property
    def key(self):
        return (self.tree, F.dnf_key(self.fs))


@dataclass
class ParseResult:
    tokens: tuple
    readings: list
    stats: Stats
    chart: list
    resource_limited: bool = False
    reading_limited: bool = False
    gaps: tuple = ()

    def reading_keys(self):
        return {r.key for r in self.readings}

    @property
    def flags(self):
        out = []
        if self.resource_limited:
            out.append("resource-limited")
        if self.reading_limited:
            out.append("reading-limited")
        if self.gaps:
            out.append("gap@" + ",".join(map(str, self.gaps)))
        return out

    def chart_text(self):
        lines = []
        for e in self.chart:
            what = e.rule.name if e.rule is not None else e.entry.name
            if e.entry is None and e.rule is not None:
                bp = " ".join("_" if x is None else str(x) for x in e.slots)
            else:
                bp = ""
            kind = "passive" if e.passive else "active"
            if e.template is not None:
                kind += " template"
            lines.append(f"{e.id}\t[{e.start},{e.end})\t{e.category}\t{what}"
                         f"\t({bp})\t{kind}")
        return "\n".join(lines) + ("\n" if lines else "")


class FsSolver:
    """The constraint solver seam; the parser only talks to this."""

    unify_at = staticmethod(F.unify_at)
    restrict = staticmethod(F.restrict)


# -- the parser ------------------------------------------------------------


class Parser:
    def __init__(self, grammar, strategy=None, use_filter=True,
                 max_edges=DEFAULT_MAX_EDGES,
                 max_readings=DEFAULT_MAX_READINGS,
                 templates=None, templates_only=False, solver=None):
        self.grammar = grammar
        self.strategy = None
        self.set_strategy(strategy or Strategy())
        if use_filter is True:
            self.filter = rule_filter(grammar)
        elif use_filter:
            self.filter = use_filter
        else:
            self.filter = None
        self.max_edges = max_edges
        self.max_readings = max_readings
        self.templates = templates
        self.templates_only = templates_only
        self.solver = solver or FsSolver()

    def set_strategy(self, strategy):
        if isinstance(strategy, str):
            strategy = builtin_strategy(strategy, self.grammar)
        self.strategy = strategy.validate(self.grammar)

    def parse(self, tokens):
        if isinstance(tokens, str):
            tokens = tokens.split()
        tokens = tuple(t.lower() for t in tokens)
        if not tokens:
            raise FeatgramError("cannot parse an empty token sequence")
        return _Run(self, tokens).run()


def parse(tokens, grammar, strategy=None, use_filter=True, **limits):
    return Parser(grammar, strategy, use_filter, **limits).parse(tokens)


class _Run:
    def __init__(self, parser, tokens):
        self.p = parser
        self.g = parser.grammar
        self.s = parser.strategy
        self.filter = parser.filter
        self.solver = parser.solver
        self.tokens = tokens
        self.n = len(tokens)
        self.edges = []
        self.by_start = {}  # passive edges by start
        self.by_end = {}
        self.active_by_start = {}
        self.active_by_end = {}
        self.agenda = []
        self.task_ids = 0
        self.claimed = set()
        self.trees = set()  # (start, end, tree) of passive edges
        self.stats = Stats()
        self.limited = False
        m = self.g.manifest
        self.cut = tuple(m.daughter_features) + (m.key_feature,)

    # -- tasks

    def _task(self, kind, **kw):
        self.task_ids += 1
        t = Task(self.task_ids, kind, **kw)
        self.stats.tasks_created += 1
        return t

    def _push(self, task):
        heapq.heappush(self.agenda, (self.s.priority(task), task.id, task))

    def _filtered(self, rule, slot, producer):
        if self.filter is None:
            return False
        if self.filter.possible(rule.name, slot, producer):
            return False
        self.stats.tasks_filtered += 1
        return True

    def _propose(self, kind, rule, slot, passive, active=None):
        slots = list(active.slots) if active is not None else [None] * rule.arity
        slots[slot] = passive.id
        claim = (rule.name, tuple(slots))
        if claim in self.claimed:
            return
        self.claimed.add(claim)
        if kind == START and rule.arity == 1 and \
                passive.unary >= UNARY_CHAIN_LIMIT:
            return
        task = self._task(kind, rule=rule, slot=slot, passive=passive,
                          active=active)
        if self._filtered(rule, slot, passive.producer):
            return
        if None not in slots:
            # the result is known before unifying; skip exact duplicates
            start = min(passive.start, active.start) if active else passive.start
            end = max(passive.end, active.end) if active else passive.end
            tree = tree_string((rule.name, tuple(
                self.edges[i].deriv for i in slots)))
            if (start, end, tree) in self.trees:
                self.stats.tasks_filtered += 1
                return
        self._push(task)

    # -- edges

    def _add(self, edge):
        self.edges.append(edge)
        if edge.passive:
            self.stats.edges_passive += 1
            self.by_start.setdefault(edge.start, []).append(edge)
            self.by_end.setdefault(edge.end, []).append(edge)
            self.trees.add((edge.start, edge.end, edge.tree))
            if self.p.templates_only:
                return
            for r in self.g.rules:
                self._propose(START, r, r.key, edge)
            for a in list(self.active_by_end.get(edge.start, ())):
                for side, d in a.open_sides(self.s):
                    if side == RIGHT:
                        self._propose(RIGHT, a.rule, d, edge, a)
            for a in list(self.active_by_start.get(edge.end, ())):
                for side, d in a.open_sides(self.s):
                    if side == LEFT:
                        self._propose(LEFT, a.rule, d, edge, a)
        else:
            self.stats.edges_active += 1
            self.active_by_start.setdefault(edge.start, []).append(edge)
            self.active_by_end.setdefault(edge.end, []).append(edge)
            for side, d in edge.open_sides(self.s):
                if side == RIGHT:
                    for q in list(self.by_start.get(edge.end, ())):
                        self._propose(RIGHT, edge.rule, d, q, edge)
                else:
                    for q in list(self.by_end.get(edge.start, ())):
                        self._propose(LEFT, edge.rule, d, q, edge)

    def _new_id(self):
        return len(self.edges)

    def _finish(self, rule, fs, slots, start, end, unary):
        """Edge for a rule application; passive ones are projected."""
        if None in slots:
            return Edge(self._new_id(), start, end, fs, rule.category, rule,
                        tuple(slots), unary=unary)
        mother = self.solver.restrict(fs, self.cut)
        deriv = (rule.name, tuple(self.edges[i].deriv for i in slots))
        return Edge(self._new_id(), start, end, mother,
                    self.g.category(mother), rule, tuple(slots),
                    deriv=deriv, unary=unary)

    def _execute(self, task):
        st = self.stats
        st.tasks_executed += 1
        if task.kind == SCAN:
            item = task.payload
            i, j = task.span
            self._add(Edge(self._new_id(), i, j, item.fs, item.category,
                           entry=item, deriv=item))
            return
        if task.kind == TEMPLATE:
            match = task.payload
            st.unifications += 1
            fs = match.instantiate()
            if fs is None:
                st.unification_failures += 1
                return
            i, j = task.span
            if (i, j, match.tree) in self.trees:
                return
            st.template_hits += 1
            rule = self.g.rule(match.template.skeleton[0])
            self._add(Edge(self._new_id(), i, j, fs, self.g.category(fs),
                           rule, (), deriv=match.deriv,
                           template=match.template.id))
            return
        rule, p = task.rule, task.passive
        name = rule.name
        st.rule_attempts[name] = st.rule_attempts.get(name, 0) + 1
        st.unifications += 1
        if task.kind == START:
            fs = self.solver.unify_at(rule.fs, rule.daughters[task.slot], p.fs)
            slots = [None] * rule.arity
            start, end = p.start, p.end
            unary = p.unary + 1 if rule.arity == 1 else 0
        else:
            a = task.active
            fs = self.solver.unify_at(a.fs, rule.daughters[task.slot], p.fs)
            slots = list(a.slots)
            start, end = min(a.start, p.start), max(a.end, p.end)
            unary = 0
        if fs is None:
            st.unification_failures += 1
            return
        st.rule_successes[name] = st.rule_successes.get(name, 0) + 1
        slots[task.slot] = p.id
        self._add(self._finish(rule, fs, slots, start, end, unary))

    # -- driver

    def _seed(self):
        gaps = []
        lexical = {}
        for i in range(self.n):
            entries = self.g.lookup(self.tokens, i)
            if not entries:
                gaps.append(i)
            for e in entries:
                for item in self.g.apply_lex_rules(e):
                    lexical.setdefault(i, []).append(item)
                    self._push(self._task(SCAN, payload=item,
                                          span=(i, i + item.span)))
        store = self.p.templates
        if store is not None:
            spans = [(0, self.n)] if self.p.templates_only else [
                (i, j) for i in range(self.n) for j in range(i + 2, self.n + 1)]
            for i, j in spans:
                for m in store.match(self.tokens, (i, j), lexical):
                    self._push(self._task(TEMPLATE, payload=m, span=(i, j)))
        return tuple(gaps)

    def run(self):
        t0 = time.perf_counter()
        gaps = self._seed()
        while self.agenda:
            if len(self.edges) >= self.p.max_edges:
                self.limited = True
                self.stats.tasks_filtered += len(self.agenda)
                self.agenda = []
                break
            _, _, task = heapq.heappop(self.agenda)
            self._execute(task)
        readings, capped = self._readings()
        self.stats.elapsed = time.perf_counter() - t0
        return ParseResult(self.tokens, readings, self.stats, self.edges,
                           self.limited, capped, gaps)

    def _readings(self):
        exp = expander(self.g.lattice)
        out, seen = [], set()
        cands = sorted((e for e in self.by_start.get(0, ())
                        if e.end == self.n and e.category == self.g.start),
                       key=lambda e: (e.tree, e.id))
        for e in cands:
            full, verdict = exp.expand_fully(e.fs)
            if verdict == UNSATISFIABLE:
                continue
            r = Reading(e.tree, full, e.id, e.deriv, e.template is not None)
            if r.key in seen:
                continue
            if len(out) >= self.p.max_readings:
                return out, True
            seen.add(r.key)
            out.append(r)
        return out, False
