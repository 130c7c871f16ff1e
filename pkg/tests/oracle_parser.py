"""Exhaustive bottom-up reference parser over DNF-expanded structures.

Every rule, entry and lexical rule is split into its disjunction-free
alternatives, and every split of every span is tried with the naive
graph unifier from ``oracle``.  Slow, but shares no code with the real
parser beyond the grammar objects and string lookup.
"""

from itertools import product

from featgram import fs as F

from oracle import Graph, graph_of_fs, resolve


def _alts(x):
    return [graph_of_fs(a) for a in F.dnf(x)]


def _node_at(g, path, create):
    n = g.find(g.root)
    for f in path:
        nxt = g.arcs[n].get(f)
        if nxt is None:
            if not create:
                return None
            m = g.new()
            g.arcs[n][f] = m
            nxt = m
        n = g.find(nxt)
    return n


def _embed(g, b):
    shift = max(g.types) + 1
    for n, t in b.types.items():
        g.types[n + shift] = t
        g.arcs[n + shift] = {f: m + shift for f, m in b.arcs[n].items()}
    for n, m in b.fwd.items():
        g.fwd[n + shift] = m + shift
    for kind, x, y in b.negs:
        g.negs.append((kind, x + shift, y + shift if kind == "neq" else y))
    return b.root + shift


def unify_at(a, path, b):
    g = a.copy()
    n = _node_at(g, path, True)
    r = _embed(g, b)
    return g if g.merge(n, r) else None


def subgraph(g, path):
    n = _node_at(g, path, False)
    if n is None:
        return None
    h = g.copy()
    h.root = n
    return h


def cut(g, features):
    h = g.copy()
    root = h.find(h.root)
    h.arcs[root] = {f: m for f, m in h.arcs[root].items()
                    if f not in features}
    return h


def category(g, cat_path):
    n = _node_at(g, cat_path, False)
    if n is None:
        return None
    (t,) = g.types[n] if len(g.types[n]) == 1 else (None,)
    if t is not None and g.lat.is_atom(t):
        return str(g.lat.atom_value(t))
    return None


class OracleParser:
    def __init__(self, grammar):
        self.g = grammar
        m = grammar.manifest
        self.cut = tuple(m.daughter_features) + (m.key_feature,)
        self.rules = [(r, _alts(r.fs)) for r in grammar.rules]
        self.lexrules = [(r, _alts(r.fs)) for r in grammar.lexrules]

    def _lexical(self, entry):
        items = [(entry.name, g) for g in _alts(entry.fs)]
        out = list(items)
        if entry.multiword:
            return out
        frontier = items
        for _ in range(self.g.manifest.lexrule_depth):
            nxt = []
            for name, item in frontier:
                for r, alts in self.lexrules:
                    for ra in alts:
                        u = unify_at(ra, r.input_path, item)
                        if u is None:
                            continue
                        o = subgraph(u, r.output_path)
                        if o is not None:
                            nxt.append((f"{r.name}({name})", o))
            out.extend(nxt)
            frontier = nxt
        return out

    def parse(self, tokens):
        """{tree: frozenset of canonical alternative strings}."""
        tokens = [t.lower() for t in tokens]
        n = len(tokens)
        chart = {}
        for i in range(n):
            for e in self.g.lookup(tokens, i):
                for tree, gr in self._lexical(e):
                    if resolve(gr):
                        chart.setdefault((i, i + e.span), []).append((tree, gr))
        for length in range(1, n + 1):
            for i in range(0, n - length + 1):
                j = i + length
                for _ in range(3):  # unary chains
                    added = self._fill(chart, i, j)
                    if not added:
                        break
        out = {}
        cat_path = self.g.manifest.cat_path
        for tree, gr in chart.get((0, n), ()):
            if category(gr, cat_path) != self.g.start:
                continue
            alts = resolve(gr)
            if alts:
                out.setdefault(tree, set()).update(alts)
        return {t: frozenset(v) for t, v in out.items()}

    def _splits(self, i, j, k):
        if k == 1:
            yield [(i, j)]
            return
        for m in range(i + 1, j - k + 2):
            for rest in self._splits(m, j, k - 1):
                yield [(i, m)] + rest

    def _fill(self, chart, i, j):
        have = {t for t, _ in chart.get((i, j), ())}
        new = []
        for r, alts in self.rules:
            for parts in self._splits(i, j, r.arity):
                cells = [chart.get(p, []) for p in parts]
                if not all(cells):
                    continue
                for combo in product(*cells):
                    tree = f"{r.name}({','.join(t for t, _ in combo)})"
                    if tree in have:
                        continue
                    for ra in alts:
                        g = ra
                        for path, (_, d) in zip(r.daughters, combo):
                            g = unify_at(g, path, d)
                            if g is None:
                                break
                        if g is None:
                            continue
                        mother = cut(g, self.cut)
                        if not resolve(mother):
                            continue
                        new.append((tree, mother))
        for tree, g in new:
            chart.setdefault((i, j), []).append((tree, g))
        return bool(new)
