"""Independent reference implementations used only by the tests.

Everything here works on disjunction-free data: descriptions are expanded
to DNF syntactically (one expression per full choice of alternatives)
and unified with a deliberately naive graph unifier.
"""

from itertools import product

from featgram import dsl
from featgram.lattice import BOTTOM


# -- syntactic DNF -----------------------------------------------------------


def _collect(expr, named, plain):
    if isinstance(expr, dsl.Disj):
        plain.append(expr)
        for x in expr.items:
            _collect(x, named, plain)
    elif isinstance(expr, dsl.DistDisj):
        named.setdefault(expr.group, len(expr.alts))
        for x in expr.alts:
            _collect(x, named, plain)
    elif isinstance(expr, dsl.Conj):
        for x in expr.items:
            _collect(x, named, plain)
    elif isinstance(expr, dsl.Neg):
        _collect(expr.expr, named, plain)
    elif isinstance(expr, dsl.Avm):
        for _, v in expr.pairs:
            _collect(v, named, plain)
    elif isinstance(expr, dsl.Call):
        for a in expr.args:
            _collect(a, named, plain)


def _select(expr, choice, plain_index):
    if isinstance(expr, dsl.Disj):
        k = choice[("plain", plain_index[id(expr)])]
        return _select(expr.items[k], choice, plain_index)
    if isinstance(expr, dsl.DistDisj):
        return _select(expr.alts[choice[("named", expr.group)]], choice,
                       plain_index)
    if isinstance(expr, dsl.Conj):
        return dsl.Conj(tuple(_select(x, choice, plain_index)
                              for x in expr.items))
    if isinstance(expr, dsl.Neg):
        return dsl.Neg(_select(expr.expr, choice, plain_index))
    if isinstance(expr, dsl.Avm):
        return dsl.Avm(tuple((f, _select(v, choice, plain_index))
                             for f, v in expr.pairs))
    if isinstance(expr, dsl.Call):
        return dsl.Call(expr.name, tuple(_select(a, choice, plain_index)
                                         for a in expr.args))
    return expr


def syntactic_dnf(expr):
    """One disjunction-free expression per full choice of alternatives.

    Negation is pushed inwards first so that negated disjunctions become
    conjunctions of negations (and vice versa) before choices are made.
    """
    expr = _nnf(expr)
    named, plain = {}, []
    _collect(expr, named, plain)
    plain_index = {id(d): k for k, d in enumerate(plain)}
    keys = [("named", g) for g in sorted(named)] + \
        [("plain", k) for k in range(len(plain))]
    ranges = [range(named[k[1]]) if k[0] == "named"
              else range(len(plain[k[1]].items)) for k in keys]
    out = []
    for combo in product(*ranges):
        out.append(_select(expr, dict(zip(keys, combo)), plain_index))
    return out


def _nnf(expr, neg=False):
    if isinstance(expr, dsl.Neg):
        return _nnf(expr.expr, not neg)
    if isinstance(expr, dsl.Conj):
        items = tuple(_nnf(x, neg) for x in expr.items)
        return dsl.Disj(items) if neg else dsl.Conj(items)
    if isinstance(expr, dsl.Disj):
        items = tuple(_nnf(x, neg) for x in expr.items)
        return dsl.Conj(items) if neg else dsl.Disj(items)
    if isinstance(expr, dsl.DistDisj):
        return dsl.DistDisj(expr.group, tuple(_nnf(x, neg) for x in expr.alts))
    if isinstance(expr, dsl.Avm):
        if neg:
            raise ValueError("negated avm")
        return dsl.Avm(tuple((f, _nnf(v)) for f, v in expr.pairs))
    if isinstance(expr, dsl.Call):
        return expr
    return dsl.Neg(expr) if neg else expr


# -- naive graphs --------------------------------------------------------------


class Graph:
    """Disjunction-free structure: antichain types, arcs, negatives."""

    def __init__(self, lat):
        self.lat = lat
        self.types = {}
        self.arcs = {}
        self.fwd = {}
        self.negs = []
        self.root = None

    def new(self):
        n = len(self.types)
        self.types[n] = frozenset((0,))
        self.arcs[n] = {}
        return n

    def find(self, n):
        while n in self.fwd:
            n = self.fwd[n]
        return n

    def copy(self):
        g = Graph(self.lat)
        g.types = dict(self.types)
        g.arcs = {n: dict(d) for n, d in self.arcs.items()}
        g.fwd = dict(self.fwd)
        g.negs = list(self.negs)
        g.root = self.root
        return g

    def merge(self, x, y):
        x, y = self.find(x), self.find(y)
        if x == y:
            return True
        t = self.lat.meet_sets(self.types[x], self.types[y])
        if not t:
            return False
        self.fwd[y] = x
        self.types[x] = t
        pending = list(self.arcs[y].items())
        for f, m in pending:
            x = self.find(x)
            if f in self.arcs[x]:
                if not self.merge(self.arcs[x][f], m):
                    return False
            else:
                self.arcs[x][f] = m
        return self._atoms_ok(self.find(x))

    def constrain(self, n, tid):
        n = self.find(n)
        t = self.lat.meet_sets(self.types[n], frozenset((tid,)))
        if not t:
            return False
        self.types[n] = t
        return self._atoms_ok(n)

    def _atoms_ok(self, n):
        n = self.find(n)
        if not self.arcs[n]:
            return True
        t = frozenset(x for x in self.types[n] if not self.lat.is_atom(x)
                      and x != 1)
        if not t:
            return False
        self.types[n] = t
        return True

    def add_arc(self, n, f, m):
        n = self.find(n)
        if f in self.arcs[n]:
            ok = self.merge(self.arcs[n][f], m)
        else:
            self.arcs[n][f] = m
            ok = True
        return ok and self._atoms_ok(self.find(n))


def graph_from_expr(expr, lat, funcs=None):
    """Build a naive graph from a disjunction-free expression (or None)."""
    g = Graph(lat)
    tags = {}
    ok = [True]

    def tag(name):
        if name not in tags:
            tags[name] = g.new()
        return tags[name]

    def comp(e, n):
        if not ok[0]:
            return
        if isinstance(e, dsl.TypeRef):
            ok[0] = g.constrain(n, lat.id(e.name))
        elif isinstance(e, dsl.Atom):
            ok[0] = g.constrain(n, lat.intern_atom(e.value))
        elif isinstance(e, dsl.Avm):
            for f, v in e.pairs:
                m = g.new()
                comp(v, m)
                if ok[0]:
                    ok[0] = g.add_arc(n, f, m)
        elif isinstance(e, dsl.Coref):
            ok[0] = g.merge(n, tag(e.tag))
        elif isinstance(e, dsl.Conj):
            for x in e.items:
                comp(x, n)
        elif isinstance(e, dsl.Neg):
            x = e.expr
            if isinstance(x, dsl.TypeRef):
                g.negs.append(("ntype", n, lat.id(x.name)))
            elif isinstance(x, dsl.Atom):
                g.negs.append(("ntype", n, lat.intern_atom(x.value)))
            elif isinstance(x, dsl.Coref):
                g.negs.append(("neq", n, tag(x.tag)))
            else:
                raise ValueError(x)
        else:
            raise ValueError(e)

    g.root = g.new()
    comp(expr, g.root)
    return g if ok[0] else None


def unify_graphs(a, b):
    g = a.copy()
    shift = len(g.types)
    for n, t in b.types.items():
        g.types[n + shift] = t
        g.arcs[n + shift] = {f: m + shift for f, m in b.arcs[n].items()}
    for n, m in b.fwd.items():
        g.fwd[n + shift] = m + shift
    for kind, x, y in b.negs:
        g.negs.append((kind, x + shift, y + shift if kind == "neq" else y))
    return g if g.merge(a.root, b.root + shift) else None


def resolve(g):
    """Split remaining type disjunctions; drop violated negatives.

    Returns a list of canonical strings, one per consistent resolution.
    """
    if g is None:
        return []
    lat = g.lat
    reach = _reachable(g)
    multi = sorted(n for n in reach if len(g.types[n]) > 1)
    out = []
    for combo in product(*(sorted(g.types[n]) for n in multi)):
        types = {n: next(iter(g.types[n])) for n in reach}
        types.update(zip(multi, combo))
        bad = False
        kept = []
        for kind, x, y in g.negs:
            x = g.find(x)
            if kind == "ntype":
                tx = types.get(x)
                if tx is None:
                    tx = None
                ts = [tx] if tx is not None else sorted(g.types[x])
                if all(lat.subsumes(y, t) for t in ts):
                    bad = True
                    break
                if all(lat.glb(t, y) == BOTTOM for t in ts):
                    continue
                if x in reach:
                    kept.append(("ntype", x, lat.name(y)))
            else:
                y = g.find(y)
                if x == y:
                    bad = True
                    break
                tx, ty = types.get(x), types.get(y)
                sx = frozenset((tx,)) if tx is not None else g.types[x]
                sy = frozenset((ty,)) if ty is not None else g.types[y]
                if len(sx) == 1 and sx == sy and lat.is_atom(next(iter(sx))):
                    bad = True
                    break
                if not lat.meet_sets(sx, sy):
                    continue
                if x in reach and y in reach:
                    kept.append(("neq", x, y))
        if not bad:
            out.append(canonical_graph(g, types, kept))
    return out


def _reachable(g):
    seen = set()
    stack = [g.find(g.root)]
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        stack.extend(g.find(m) for m in g.arcs[n].values())
    return seen


def canonical_graph(g, types, negs):
    lat = g.lat
    order = {}
    parts = []

    def walk(n):
        n = g.find(n)
        if n in order:
            parts.append(f"<{order[n]}>")
            return
        order[n] = len(order)
        parts.append(lat.name(types[n]))
        arcs = g.arcs[n]
        if arcs:
            parts.append("(")
            for f in sorted(arcs):
                parts.append(f + "=")
                walk(arcs[f])
                parts.append(";")
            parts.append(")")

    walk(g.root)
    extra = []
    for kind, x, y in negs:
        if kind == "ntype":
            extra.append(f"not {order[x]} {y}")
        else:
            a, b = sorted((order[x], order[y]))
            extra.append(f"ne {a} {b}")
    return "".join(parts) + ("!" + ",".join(sorted(set(extra))) if extra else "")


def graph_of_fs(x):
    """Convert a disjunction-free FeatureStructure to a naive graph."""
    from featgram import fs as F
    g = Graph(x.lattice)
    for n in sorted(x.types):
        g.types[n] = frozenset((x.types[n],))
        g.arcs[n] = dict(x.arcs.get(n, {}))
    g.root = x.root
    for ctx, con in x.cons:
        if con[0] == F.NTYPE:
            g.negs.append(("ntype", con[1], con[2]))
        elif con[0] == F.NEQ:
            g.negs.append(("neq", con[1], con[2]))
    return g


def fs_alternatives(x):
    """Canonical strings of a structure's DNF, via the naive graphs."""
    from featgram import fs as F
    out = []
    for alt in F.dnf(x):
        out.extend(resolve(graph_of_fs(alt)))
    return out


def expr_alternatives(expr, lat):
    out = []
    for e in syntactic_dnf(expr):
        out.extend(resolve(graph_from_expr(e, lat)))
    return out


# -- type hierarchy -------------------------------------------------------------


def random_dag(rng, n, kind, incompat=5):
    """Random hierarchy: parents[i] lists earlier type indices."""
    parents = {0: []}
    for i in range(1, n):
        k = rng.randint(1, min(3, i))
        parents[i] = sorted(rng.sample(range(i), k))
    ups = reach_up(parents)
    downs = {i: {j for j in parents if i in ups[j]} for i in parents}
    pairs = []
    tries = 0
    while len(pairs) < incompat and tries < 1000:
        tries += 1
        a, b = rng.sample(range(1, n), 2)
        if a in ups[b] or b in ups[a] or downs[a] & downs[b]:
            continue
        pairs.append((a, b))
    return parents, pairs, kind


def reach_up(parents):
    """Ancestors (reflexive) by plain depth-first search."""
    out = {}
    for i in parents:
        seen = set()
        stack = [i]
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(parents[x])
        out[i] = seen
    return out


def brute_glb(ups, incompat, kind, a, b):
    """('type', t) | ('bottom',) | ('disj', sorted ts) | ('synthetic',)."""
    if a in ups[b]:
        return ("type", b)
    if b in ups[a]:
        return ("type", a)
    for x, y in incompat:
        if (x in ups[a] and y in ups[b]) or (y in ups[a] and x in ups[b]):
            return ("bottom",)
    common = {t for t in ups if a in ups[t] and b in ups[t]}
    maximal = sorted(t for t in common
                     if not any(s != t and s in ups[t] for s in common))
    if len(maximal) == 1:
        return ("type", maximal[0])
    if kind == "avm":
        return ("synthetic",)
    return ("disj", maximal) if maximal else ("bottom",)


def brute_lub(ups, a, b):
    common = ups[a] & ups[b]
    minimal = [t for t in common
               if not any(s != t and t in ups[s] for s in common)]
    return min(minimal)
