"""Semantic-head-driven generation.

A goal is a sign description carrying the semantics to express.  The
generator picks a pivot whose semantics is exactly the goal's: either a
lexical item found through the predicate index, or the mother of a rule
whose semantics is built compositionally (a non-chain rule, generated
top-down).  The pivot is then connected upward through chain rules,
whose mother shares its semantics with the head daughter; the remaining
daughters are generated recursively from the semantics they received.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import dsl
from . import fs as F
from .errors import FeatgramError, GenerationGap, GrammarError
from .grammar import _predicates
from .parse import derivation_leaves, rule_filter, tree_string

DEFAULT_DEPTH = 12


# -- semantic terms ---------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class SemTerm:
    """``pred(arg, ...)``; arguments are terms, leaf values (str) or Vars."""

    pred: str
    args: tuple = ()

    def __str__(self):
        if not self.args:
            return self.pred
        return f"{self.pred}({', '.join(_fmt(a) for a in self.args)})"

    def predicates(self):
        out = {self.pred}
        for a in self.args:
            if isinstance(a, SemTerm):
                out |= a.predicates()
        return out


def _fmt(a):
    if isinstance(a, str):
        return "'" + a
    return str(a)


_SEM_TOKEN = re.compile(r"\s*(?:(?P<q>'[\w\-]+)|(?P<id>[A-Za-z_][\w\-]*)|"
                        r"(?P<p>[(),]))")


def parse_semterm(text):
    """Parse ``pred(arg, ...)``.

    Arguments are nested terms, quoted leaf values (``'sg``) or
    variables (capitalized names).  A bare lowercase name is a term
    without arguments.
    """
    toks = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _SEM_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise FeatgramError(f"bad semantic term at offset {pos}: {text!r}")
        pos = m.end()
        kind = m.lastgroup
        toks.append((kind, m.group(kind)))
    toks.append(("end", ""))
    i = 0

    def arg():
        nonlocal i
        kind, val = toks[i]
        if kind == "q":
            i += 1
            return val[1:]
        if kind == "id" and val[0].isupper():
            i += 1
            return Var(val)
        return term()

    def term():
        nonlocal i
        kind, val = toks[i]
        if kind != "id" or val[0].isupper():
            raise FeatgramError(f"expected a predicate in {text!r}")
        i += 1
        args = []
        if toks[i] == ("p", "("):
            i += 1
            if toks[i] != ("p", ")"):
                args.append(arg())
                while toks[i] == ("p", ","):
                    i += 1
                    args.append(arg())
            if toks[i] != ("p", ")"):
                raise FeatgramError(f"unbalanced parentheses in {text!r}")
            i += 1
        return SemTerm(val, tuple(args))

    t = term()
    if toks[i][0] != "end":
        raise FeatgramError(f"trailing input in semantic term {text!r}")
    return t


def canonical_term(t):
    """Rename variables in order of first occurrence (for comparison)."""
    names = {}

    def walk(x):
        if isinstance(x, Var):
            return Var(names.setdefault(x.name, f"_{len(names)}"))
        if isinstance(x, SemTerm):
            return SemTerm(x.pred, tuple(walk(a) for a in x.args))
        return x
    return walk(t)


def same_semantics(a, b):
    return canonical_term(a) == canonical_term(b)


def _arg_features(fs, n):
    d = fs.arcs.get(n, {})
    args = []
    for f in d:
        if f.startswith("ARG") and f[3:].isdigit():
            args.append((int(f[3:]), f))
    return [f for _, f in sorted(args)]


def term_of(fs, path=("SEM",), pred="PRED"):
    """Semantic term at ``path`` of a disjunction-free structure."""
    lat = fs.lattice
    start = fs.follow(path)
    if start is None:
        return None

    def walk(n, stack):
        if n in stack:
            raise FeatgramError("cyclic semantics")
        d = fs.arcs.get(n, {})
        t = fs.types[n]
        if pred in d:
            pt = fs.types[d[pred]]
            if not lat.is_atom(pt):
                return Var(f"X{n}")
            args = tuple(walk(d[f], stack | {n}) for f in _arg_features(fs, n))
            return SemTerm(str(lat.atom_value(pt)), args)
        if lat.is_atom(t):
            return str(lat.atom_value(t))
        name = lat.name(t)
        if not d and name not in ("top", "atom"):
            return name
        return Var(f"X{n}")

    t = walk(start, frozenset())
    return t if isinstance(t, SemTerm) else None


def semantics(fs, path=("SEM",)):
    """Distinct terms over the DNF alternatives of ``fs``."""
    out = []
    for alt in F.dnf(fs):
        t = term_of(alt, path)
        if t is not None and all(not same_semantics(t, u) for u in out):
            out.append(t)
    return out


def term_expr(t, lattice):
    """DSL description of a term (to be placed under the semantics path)."""
    tags = {}

    def conv(x):
        if isinstance(x, SemTerm):
            pairs = [("PRED", dsl.Atom(x.pred))]
            pairs += [(f"ARG{i}", conv(a)) for i, a in enumerate(x.args, 1)]
            return dsl.Avm(tuple(pairs))
        if isinstance(x, Var):
            return dsl.Coref(tags.setdefault(x.name, x.name))
        if x in lattice.by_name and not lattice.is_atom(lattice.id(x)):
            return dsl.TypeRef(x)
        return dsl.Atom(x)
    return conv(t)


# -- compilation -----------------------------------------------------------


@dataclass
class GenerationGrammar:
    grammar: object
    chain: dict  # rule name -> semantic head slot
    nonchain: tuple
    triggers: dict  # (rule name, slot) -> empty-semantics items
    reachable: dict  # rule name -> set of rule names it can invoke
    rule_predicates: frozenset = frozenset()  # contributed by rules themselves

    def mark(self, entry_name):
        """Constructions that license a semantically empty entry."""
        return sorted((r, d) for (r, d), items in self.triggers.items()
                      if any(e.name == entry_name for e in items))


def classify_rules(grammar):
    """({chain rule: head slot}, [non-chain rules])."""
    sem = grammar.manifest.sem_path
    chain, nonchain = {}, []
    for r in grammar.rules:
        m = r.fs.follow(sem)
        heads = [d for d, p in enumerate(r.daughters)
                 if m is not None and r.fs.follow(p + sem) == m]
        if len(heads) > 1:
            raise GrammarError(f"rule {r.name}: several semantic heads {heads}")
        if heads:
            chain[r.name] = heads[0]
        else:
            nonchain.append(r.name)
    return chain, tuple(nonchain)


def compute_accessibility(grammar, table=None):
    """Reflexive-transitive closure of "b's mother fits a slot of a"."""
    filt = table or rule_filter(grammar)
    names = [r.name for r in grammar.rules]
    direct = {a.name: {b for b in names
                       if any(filt.possible(a.name, d, b)
                              for d in range(a.arity))}
              for a in grammar.rules}
    return close_relation(direct)


def close_relation(direct):
    reach = {a: set(bs) | {a} for a, bs in direct.items()}
    changed = True
    while changed:
        changed = False
        for a in reach:
            extra = set()
            for b in reach[a]:
                extra |= reach.get(b, set())
            if not extra <= reach[a]:
                reach[a] |= extra
                changed = True
    return {a: frozenset(v) for a, v in reach.items()}


def compile_for_generation(grammar):
    chain, nonchain = classify_rules(grammar)
    sem = grammar.manifest.sem_path
    empty = grammar.semantic_index().get("", ())
    triggers = {}
    for r in grammar.rules:
        for d, p in enumerate(r.daughters):
            n = r.fs.follow(p + sem)
            if n is not None and r.fs.arcs.get(n):
                continue
            fit = [e for e in empty if F.unify_at(r.fs, p, e.fs) is not None]
            if fit:
                triggers[(r.name, d)] = tuple(fit)
    own = frozenset(p for r in grammar.rules
                    for p in _predicates(r.mother, sem))
    return GenerationGrammar(grammar, chain, nonchain, triggers,
                             compute_accessibility(grammar), own)


# -- the generator ---------------------------------------------------------


@dataclass
class GenStats:
    rule_attempts: dict = field(default_factory=dict)
    lexical_lookups: int = 0
    unifications: int = 0

    def tried(self, name):
        self.rule_attempts[name] = self.rule_attempts.get(name, 0) + 1


@dataclass
class Realization:
    tokens: tuple
    deriv: object
    fs: object

    @property
    def text(self):
        return " ".join(self.tokens)

    @property
    def tree(self):
        return tree_string(self.deriv)


@dataclass
class GenerationResult:
    strings: list
    realizations: list
    partial: bool
    stats: GenStats


class Generator:
    def __init__(self, grammar, max_depth=DEFAULT_DEPTH, use_accessibility=True,
                 compiled=None):
        self.g = grammar
        self.cg = compiled or _compiled(grammar)
        self.max_depth = max_depth
        self.use_accessibility = use_accessibility
        m = grammar.manifest
        self.sem = m.sem_path
        self.cut = tuple(m.daughter_features) + (m.key_feature,)

    def lexical_access(self, pred):
        return self.g.semantic_index().get(pred, ())

    def generate(self, sem, category=None):
        if isinstance(sem, str):
            sem = parse_semterm(sem)
        idx = self.g.semantic_index()
        for p in sorted(sem.predicates()):
            if p not in idx and p not in self.cg.rule_predicates:
                raise GenerationGap(p)
        cat = self.g.start if category is None else category
        desc = dsl.Avm(tuple([(self.g.manifest.cat_path[0], dsl.Atom(cat))]
                             if len(self.g.manifest.cat_path) == 1 else []))
        goal = F.build(desc, self.g.lattice)
        goal = F.unify_at(goal, self.sem, F.build(term_expr(sem, self.g.lattice),
                                                  self.g.lattice))
        run = _GenRun(self)
        found = run.gen(goal, 0) if goal is not None else []
        out, strings = [], set()
        for fs, deriv in found:
            if not any(same_semantics(sem, t) for t in semantics(fs, self.sem)):
                continue
            toks = tuple(t for e in derivation_leaves(deriv) for t in e.forms)
            out.append(Realization(toks, deriv, fs))
            strings.add(" ".join(toks))
        out.sort(key=lambda r: (r.text, r.tree))
        return GenerationResult(sorted(strings), out, run.partial, run.stats)


def _compiled(grammar):
    cg = getattr(grammar, "_generation", None)
    if cg is None:
        cg = compile_for_generation(grammar)
        grammar._generation = cg
    return cg


def generate(sem, grammar, max_depth=DEFAULT_DEPTH):
    """Sorted distinct token strings realizing ``sem``."""
    return Generator(grammar, max_depth).generate(sem).strings


class _GenRun:
    def __init__(self, gen):
        self.gn = gen
        self.g = gen.g
        self.cg = gen.cg
        self.stats = GenStats()
        self.partial = False
        self.memo = {}

    def _pred(self, fs):
        n = fs.follow(self.gn.sem + ("PRED",))
        if n is None:
            return None
        t = fs.types[n]
        lat = fs.lattice
        return str(lat.atom_value(t)) if lat.is_atom(t) else None

    def _allowed(self, rule_name, goal):
        if not self.gn.use_accessibility:
            return True
        cat = self.g.category(goal)
        for a in self.g.rules:
            if a.category == cat and rule_name in self.cg.reachable[a.name]:
                return True
        return False

    def gen(self, goal, depth):
        """(fs, derivation) pairs for constituents satisfying ``goal``."""
        if depth > self.gn.max_depth:
            self.partial = True
            return []
        key = (F.dnf_key(goal), depth)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.memo[key] = []
        pred = self._pred(goal)
        out = []
        if pred is not None:
            sem_fs = F.extract_subterm(goal, self.gn.sem)
            self.stats.lexical_lookups += 1
            for e in self.gn.lexical_access(pred):
                self.stats.unifications += 1
                pivot = F.unify_at(e.fs, self.gn.sem, sem_fs)
                if pivot is not None:
                    out.extend(self.connect(pivot, e, goal, depth))
            for name in self.cg.nonchain:
                if not self._allowed(name, goal):
                    continue
                r = self.g.rule(name)
                self.stats.tried(name)
                self.stats.unifications += 1
                inst = F.unify_at(r.fs, self.gn.sem, sem_fs)
                if inst is None:
                    continue
                for fs, kids in self.daughters(r, inst, range(r.arity), depth):
                    mother = F.restrict(fs, self.gn.cut)
                    out.extend(self.connect(mother, (name, kids), goal, depth))
        self.memo[key] = out
        return out

    def daughters(self, r, inst, slots, depth, fixed=None):
        """Fill ``slots`` of rule instance ``inst`` left to right."""
        partial = [(inst, dict(fixed or {}))]
        for d in slots:
            nxt = []
            for fs, kids in partial:
                for real_fs, deriv in self.daughter(r, d, fs, depth):
                    self.stats.unifications += 1
                    u = F.unify_at(fs, r.daughters[d], real_fs)
                    if u is not None:
                        nxt.append((u, {**kids, d: deriv}))
            partial = nxt
        return [(fs, tuple(kids[d] for d in range(r.arity)))
                for fs, kids in partial]

    def daughter(self, r, d, inst, depth):
        trig = self.cg.triggers.get((r.name, d))
        if trig is not None:
            return [(e.fs, e) for e in trig]
        goal = F.extract_subterm(inst, r.daughters[d])
        if goal is None or self._pred(goal) is None:
            return []
        return self.gen(goal, depth + 1)

    def connect(self, pivot, deriv, goal, depth):
        if depth > self.gn.max_depth:
            self.partial = True
            return []
        out = []
        self.stats.unifications += 1
        done = F.unify(pivot, goal)
        if done is not None:
            out.append((done, deriv))
        for name, h in sorted(self.cg.chain.items()):
            if not self._allowed(name, goal):
                continue
            r = self.g.rule(name)
            self.stats.tried(name)
            self.stats.unifications += 1
            inst = F.unify_at(r.fs, r.daughters[h], pivot)
            if inst is None:
                continue
            others = [d for d in range(r.arity) if d != h]
            for fs, kids in self.daughters(r, inst, others, depth,
                                           fixed={h: deriv}):
                mother = F.restrict(fs, self.gn.cut)
                out.extend(self.connect(mother, (name, kids), goal, depth + 1))
        return out
