"""Typed feature structures with distributed disjunctions.

A structure is stored as an unconditional *base graph* (one type per
node, feature arcs) plus a list of *contexted constraints*.  A context is
a frozenset of ``(group, index)`` choices; a constraint applies in every
full choice of alternatives that agrees with its context.  Disjunctions
therefore never copy structure: ``[F: %d(a, b), G: %d(c, e)]`` is one
graph with four annotated type assignments and a single group ``d`` of
arity 2.

Constraint tuples (first element is the kind)::

    (ARC, n, feat, m)       n.feat = m
    (TYPE, n, t)            type(n) <= t
    (EQ, n, m)              n and m are the same node
    (NTYPE, n, t)           not type(n) <= t
    (NEQ, n, m)             n and m are different nodes
    (FUNC, n, name, args)   n = name(*args) once args are atoms
    (FALSE,)                the context is inconsistent (a nogood)
    (EXP, n, t)             bookkeeping: t's own constraints applied at n

Every operation returns a new structure; ``None`` signals unification
failure.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from . import dsl
from .errors import (BuildError, ContractError, FunctionError,
                     StaleEncodingError, UnsupportedNegation)
from .lattice import ATOM, BOTTOM, TOP

ARC, TYPE, EQ, NTYPE, NEQ, FUNC, FALSE, EXP = (
    "arc", "type", "eq", "ntype", "neq", "func", "false", "exp")
POSITIVE = frozenset((ARC, TYPE, EQ))
EMPTY = frozenset()
TOPSET = frozenset((TOP,))


def _add(a, b):
    if isinstance(a, str) or isinstance(b, str):
        raise TypeError("add needs numbers")
    return a + b


def _concat(a, b):
    return f"{a}{b}"


def _eq(a, b):
    return "true" if a == b else "false"


BUILTIN_FUNCTIONS = {"add": _add, "concat": _concat, "eq": _eq}


def ctx_ok(ctx):
    seen = {}
    for g, i in ctx:
        if seen.setdefault(g, i) != i:
            return False
    return True


def _nodes_of(con):
    k = con[0]
    if k in (ARC,):
        return (con[1], con[3])
    if k in (TYPE, NTYPE, EXP):
        return (con[1],)
    if k in (EQ, NEQ):
        return (con[1], con[2])
    if k == FUNC:
        return (con[1],) + tuple(con[3])
    return ()


def _map_con(con, f):
    k = con[0]
    if k == ARC:
        return (ARC, f(con[1]), con[2], f(con[3]))
    if k in (TYPE, NTYPE, EXP):
        return (k, f(con[1]), con[2])
    if k in (EQ, NEQ):
        a, b = f(con[1]), f(con[2])
        if a > b:
            a, b = b, a
        return (k, a, b)
    if k == FUNC:
        return (FUNC, f(con[1]), con[2], tuple(f(x) for x in con[3]))
    return con


def _ctx_key(ctx):
    return tuple(sorted(ctx))


# -- solver ------------------------------------------------------------------


class _Solver:
    """Union-find over nodes with a trail so search can roll back."""

    __slots__ = ("lat", "parent", "types", "arcs", "trail")

    def __init__(self, lat):
        self.lat = lat
        self.parent = {}
        self.types = {}
        self.arcs = {}
        self.trail = []

    def load(self, fs, shift=0):
        parent, types, arcs = self.parent, self.types, self.arcs
        for n, t in fs.types.items():
            n += shift
            parent[n] = n
            types[n] = frozenset((t,))
        for n, d in fs.arcs.items():
            if shift:
                arcs[n + shift] = {f: m + shift for f, m in d.items()}
            else:
                arcs[n] = dict(d)

    def node(self, n):
        if n not in self.parent:
            self.parent[n] = n
            self.types[n] = TOPSET
            self.trail.append(("n", n))

    def find(self, n):
        parent = self.parent
        while True:
            p = parent[n]
            if p == n:
                return n
            n = p

    def mark(self):
        return len(self.trail)

    def undo(self, mark):
        trail = self.trail
        parent, types, arcs = self.parent, self.types, self.arcs
        while len(trail) > mark:
            e = trail.pop()
            k = e[0]
            if k == "p":
                parent[e[1]] = e[1]
            elif k == "t":
                types[e[1]] = e[2]
            elif k == "a":
                if e[3] is None:
                    del arcs[e[1]][e[2]]
                else:
                    arcs[e[1]][e[2]] = e[3]
            elif k == "A":
                del arcs[e[1]]
            elif k == "n":
                del parent[e[1]]
                del types[e[1]]

    def _set_type(self, r, new):
        self.trail.append(("t", r, self.types[r]))
        self.types[r] = new

    def _strip_atoms(self, r):
        ts = self.types[r]
        lat = self.lat
        if any(lat.is_atom(t) or t == ATOM for t in ts):
            keep = frozenset(t for t in ts if not (lat.is_atom(t) or t == ATOM))
            if not keep:
                return False
            self._set_type(r, keep)
        return True

    def meet(self, n, tset):
        r = self.find(n)
        old = self.types[r]
        new = self.lat.meet_sets(old, tset)
        if not new:
            return False
        if new != old:
            self._set_type(r, new)
            if self.arcs.get(r):
                return self._strip_atoms(r)
        return True

    def arc(self, n, f, m):
        r = self.find(n)
        if not self._strip_atoms(r):
            return False
        d = self.arcs.get(r)
        if d is None:
            d = self.arcs[r] = {}
            self.trail.append(("A", r))
        old = d.get(f)
        if old is None:
            self.trail.append(("a", r, f, None))
            d[f] = m
            return True
        return self.union(old, m)

    def union(self, x, y):
        stack = [(x, y)]
        find, lat, arcs = self.find, self.lat, self.arcs
        while stack:
            x, y = stack.pop()
            rx, ry = find(x), find(y)
            if rx == ry:
                continue
            if rx > ry:
                rx, ry = ry, rx
            self.trail.append(("p", ry))
            self.parent[ry] = rx
            tx = self.types[rx]
            new = lat.meet_sets(tx, self.types[ry])
            if not new:
                return False
            if new != tx:
                self._set_type(rx, new)
            dy = arcs.get(ry)
            if dy:
                if not self._strip_atoms(rx):
                    return False
                dx = arcs.get(rx)
                if dx is None:
                    dx = arcs[rx] = {}
                    self.trail.append(("A", rx))
                for f, m in dy.items():
                    o = dx.get(f)
                    if o is None:
                        self.trail.append(("a", rx, f, None))
                        dx[f] = m
                    else:
                        stack.append((o, m))
            elif arcs.get(rx) and new != tx:
                if not self._strip_atoms(rx):
                    return False
        return True

    def apply(self, con):
        k = con[0]
        if k == TYPE:
            self.node(con[1])
            return self.meet(con[1], frozenset((con[2],)))
        if k == ARC:
            self.node(con[1])
            self.node(con[3])
            return self.arc(con[1], con[2], con[3])
        if k == EQ:
            self.node(con[1])
            self.node(con[2])
            return self.union(con[1], con[2])
        if k == FALSE:
            return False
        return True

    # negative constraints: True = violated, False = not violated
    def violated(self, con):
        k = con[0]
        if k == NTYPE:
            ts = self.types[self.find(con[1])]
            return all(self.lat.subsumes(con[2], t) for t in ts)
        if k == NEQ:
            a, b = self.find(con[1]), self.find(con[2])
            if a == b:
                return True
            ta, tb = self.types[a], self.types[b]
            return len(ta) == 1 and ta == tb and self.lat.is_atom(next(iter(ta)))
        return False

    def discharged(self, con):
        k = con[0]
        lat = self.lat
        if k == NTYPE:
            ts = self.types[self.find(con[1])]
            return all(lat.glb(t, con[2]) == BOTTOM for t in ts)
        if k == NEQ:
            a, b = self.find(con[1]), self.find(con[2])
            return a != b and not lat.meet_sets(self.types[a], self.types[b])
        return False

    def atom_of(self, n):
        ts = self.types[self.find(n)]
        if len(ts) == 1:
            t = next(iter(ts))
            if self.lat.is_atom(t):
                return t
        return None

    def run_funcs(self, funcs, registry):
        """Fire every ground functional constraint; False on clash."""
        pending = list(funcs)
        changed = True
        while changed and pending:
            changed = False
            rest = []
            for con in pending:
                args = [self.atom_of(a) for a in con[3]]
                if any(a is None for a in args):
                    rest.append(con)
                    continue
                fn = registry.get(con[2])
                if fn is None:
                    raise FunctionError(f"unknown function {con[2]!r}")
                try:
                    value = fn(*(self.lat.atom_value(a) for a in args))
                except (TypeError, ValueError, ArithmeticError):
                    return False
                if not self.meet(con[1], frozenset((self.lat.intern_atom(value),))):
                    return False
                changed = True
            pending = rest
        return True

    def check(self, negs, funcs, registry):
        if funcs and not self.run_funcs(funcs, registry):
            return False
        for con in negs:
            if self.violated(con):
                return False
        return True


# -- search over alternatives ---------------------------------------------------


class _Search:
    """Enumerate consistent full choices of alternatives.

    ``cond`` holds constraints with a nonempty context; ``negs`` and
    ``funcs`` the unconditional suspended ones.  The solver already holds
    the solved base graph and is left at each leaf while it is yielded.
    """

    def __init__(self, solver, cond, negs=(), funcs=(), registry=None):
        self.solver = solver
        self.cond = [(ctx, con) for ctx, con in cond if ctx and con[0] != EXP]
        self.negs = list(negs)
        self.funcs = list(funcs)
        self.registry = BUILTIN_FUNCTIONS if registry is None else registry

    def groups_in_play(self):
        return sorted({g for ctx, _ in self.cond for g, _ in ctx})

    def leaves(self, order, domains, split=True):
        """Yield a copy of each consistent full assignment over ``order``.

        With ``split`` set, closed-world type disjunctions left in the
        solver are resolved too, and an assignment is yielded once per
        consistent resolution.
        """
        solver = self.solver
        pos = {g: k for k, g in enumerate(order)}
        levels = [[] for _ in order]
        for ctx, con in self.cond:
            if all(g in pos for g, _ in ctx):
                levels[max(pos[g] for g, _ in ctx)].append((ctx, con))
        assignment = {}
        negs, funcs = list(self.negs), list(self.funcs)

        def finish():
            if split:
                for _ in self._splits(negs, funcs):
                    yield dict(assignment)
            else:
                mark = solver.mark()
                try:
                    if solver.check(negs, funcs, self.registry):
                        yield dict(assignment)
                finally:
                    solver.undo(mark)

        def rec(k):
            if k == len(order):
                yield from finish()
                return
            g = order[k]
            for i in domains[g]:
                assignment[g] = i
                mark = solver.mark()
                nn, nf = len(negs), len(funcs)
                ok = True
                for ctx, con in levels[k]:
                    if not all(assignment[h] == j for h, j in ctx):
                        continue
                    kind = con[0]
                    if kind in (NTYPE, NEQ):
                        negs.append(con)
                    elif kind == FUNC:
                        funcs.append(con)
                    elif not solver.apply(con):
                        ok = False
                        break
                if ok and (len(negs) > nn or len(funcs) > nf or levels[k]):
                    ok = solver.check(negs, funcs, self.registry)
                try:
                    if ok:
                        yield from rec(k + 1)
                finally:
                    solver.undo(mark)
                    del negs[nn:]
                    del funcs[nf:]
                    del assignment[g]

        if not order:
            yield from finish()
        else:
            yield from rec(0)

    def _splits(self, negs, funcs):
        solver = self.solver
        multi = sorted(r for r, ts in solver.types.items()
                       if len(ts) > 1 and solver.parent[r] == r)
        if not multi:
            mark = solver.mark()
            try:
                if solver.check(negs, funcs, self.registry):
                    yield {}
            finally:
                solver.undo(mark)
            return
        for combo in product(*(sorted(solver.types[r]) for r in multi)):
            mark = solver.mark()
            try:
                if all(solver.meet(r, frozenset((t,)))
                       for r, t in zip(multi, combo)):
                    # a choice merges nothing, but a function may now fire
                    if solver.check(negs, funcs, self.registry):
                        yield dict(zip(multi, combo))
            finally:
                solver.undo(mark)

    def first(self, order, domains):
        gen = self.leaves(order, domains)
        try:
            return next(gen, None)
        finally:
            gen.close()


# -- the structure -------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    id: int
    type: int
    arcs: tuple  # ((feature, target, context), ...)
    cond_types: tuple  # ((type, context), ...)
    atom: object = None


class FeatureStructure:
    """Immutable once constructed; build one with :func:`build`."""

    __slots__ = ("lattice", "generation", "root", "types", "arcs", "cons",
                 "groups", "depth", "blocked", "_dnf", "_key")

    def __init__(self, lattice, root, types, arcs, cons=(), groups=None,
                 depth=None, blocked=frozenset(), generation=None):
        self.lattice = lattice
        self.generation = lattice.generation if generation is None else generation
        self.root = root
        self.types = types
        self.arcs = arcs
        self.cons = tuple(cons)
        self.groups = groups or {}
        self.depth = depth or {}
        self.blocked = frozenset(blocked)
        self._dnf = None
        self._key = None

    @property
    def is_disjunction_free(self):
        return not self.groups

    @property
    def max_node(self):
        return max(self.types) if self.types else -1

    @property
    def max_group(self):
        return max(self.groups) if self.groups else -1

    def node_count(self):
        return len(self.types)

    def follow(self, path, start=None):
        """Node at ``path`` through unconditional arcs, or None."""
        n = self.root if start is None else start
        for f in path:
            d = self.arcs.get(n)
            if not d or f not in d:
                return None
            n = d[f]
        return n

    def type_at(self, path=()):
        n = self.follow(path)
        return None if n is None else self.types[n]

    def type_name_at(self, path=()):
        t = self.type_at(path)
        return None if t is None else self.lattice.name(t)

    def atom_at(self, path=()):
        t = self.type_at(path)
        if t is not None and self.lattice.is_atom(t):
            return self.lattice.atom_value(t)
        return None

    @property
    def nodes(self):
        cond_arcs, cond_types = {}, {}
        for ctx, con in self.cons:
            if con[0] == ARC:
                cond_arcs.setdefault(con[1], []).append((con[2], con[3], ctx))
            elif con[0] == TYPE:
                cond_types.setdefault(con[1], []).append((con[2], ctx))
        lat = self.lattice
        out = {}
        for n, t in sorted(self.types.items()):
            arcs = [(f, m, EMPTY) for f, m in self.arcs.get(n, {}).items()]
            arcs += cond_arcs.get(n, [])
            out[n] = Node(n, t, tuple(arcs), tuple(cond_types.get(n, ())),
                          lat.atom_value(t) if lat.is_atom(t) else None)
        return out

    def negatives(self):
        return [(ctx, con) for ctx, con in self.cons if con[0] in (NTYPE, NEQ)]

    def functionals(self):
        return [(ctx, con) for ctx, con in self.cons if con[0] == FUNC]

    def __repr__(self):
        return (f"<FeatureStructure nodes={len(self.types)} "
                f"groups={len(self.groups)} cons={len(self.cons)}>")


def _check_generation(*structures):
    for fs in structures:
        if fs.generation != fs.lattice.generation:
            raise StaleEncodingError(
                "feature structure built against an outdated type encoding")


def _feature_key(lat):
    order = lat.features
    return lambda f: (order.get(f, len(order)), f)


# -- normalization ----------------------------------------------------------------


def _normalize(lat, root, solver, cons, groups, depth=None,
               blocked=frozenset(), registry=None, skip=(), project=False):
    """Solve, prune dead alternatives, inline decided groups, compact.

    ``solver`` holds the base graph (it is consumed).  Returns a
    FeatureStructure, or None when the description is inconsistent.
    """
    registry = BUILTIN_FUNCTIONS if registry is None else registry
    groups = dict(groups)
    cons = list(cons)
    while True:
        negs, funcs, cond = [], [], []
        for ctx, con in cons:
            kind = con[0]
            if ctx or kind == EXP:
                cond.append((ctx, con))
            elif kind in POSITIVE or kind == FALSE:
                if not solver.apply(con):
                    return None
            else:
                for n in _nodes_of(con):
                    solver.node(n)
                (funcs if kind == FUNC else negs).append(con)
        if not solver.run_funcs(funcs, registry):
            return None
        find = solver.find
        funcs = [_map_con(c, find) for c in funcs
                 if any(solver.atom_of(a) is None for a in c[3])]
        kept = []
        for con in negs:
            if solver.violated(con):
                return None
            if not solver.discharged(con):
                kept.append(_map_con(con, find))
        negs = kept

        # rewrite conditional constraints against the solved base graph
        live = {g: set(v[1]) for g, v in groups.items()}
        rewritten, seen = [], set()
        for ctx, con in cond:
            if not ctx_ok(ctx) or not all(g in live and i in live[g]
                                          for g, i in ctx):
                continue
            for n in _nodes_of(con):
                solver.node(n)
            con = _map_con(con, find)
            kind = con[0]
            if ctx:
                if kind == ARC:
                    d = solver.arcs.get(con[1])
                    if d and con[2] in d:
                        x = find(d[con[2]])
                        if x == con[3]:
                            continue
                        con = _map_con((EQ, x, con[3]), find)
                elif kind == TYPE:
                    if all(lat.subsumes(con[2], t) for t in solver.types[con[1]]):
                        continue
                elif kind == EQ and con[1] == con[2]:
                    continue
                elif kind in (NTYPE, NEQ):
                    if solver.discharged(con):
                        continue
                    if solver.violated(con):
                        con = (FALSE,)
            if (ctx, con) not in seen:
                seen.add((ctx, con))
                rewritten.append((ctx, con))
        cond = rewritten

        # find the live indices: every index needs a consistent witness
        search = _Search(solver, cond, negs, funcs, registry)
        in_play = search.groups_in_play()
        if not in_play and search.first([], {}) is None:
            return None
        dead, witnessed = set(), set()
        for g in in_play:
            for i in sorted(live[g]):
                if (g, i) in witnessed:
                    continue
                order = [g] + [h for h in in_play if h != g]
                domains = {h: sorted(live[h]) for h in in_play}
                domains[g] = [i]
                hit = search.first(order, domains)
                if hit is None:
                    live[g].discard(i)
                    dead.add((g, i))
                else:
                    witnessed.update(hit.items())
            if not live[g]:
                return None
        changed = bool(dead)
        if dead:
            cond = [(ctx, con) for ctx, con in cond
                    if not any(p in dead for p in ctx)]

        # inline groups with a single live index
        single = {g for g, v in live.items() if len(v) == 1}
        if single:
            cond = [(frozenset(p for p in ctx if p[0] not in single), con)
                    if any(p[0] in single for p in ctx) else (ctx, con)
                    for ctx, con in cond]
            for g in single:
                del live[g]
            changed = True
        groups = {g: (groups[g][0], frozenset(v)) for g, v in live.items()}

        # closed-world type disjunctions left in the base become groups
        multi = sorted(r for r, ts in solver.types.items()
                       if len(ts) > 1 and solver.parent[r] == r)
        if multi:
            nxt = max(groups, default=-1) + 1
            for r in multi:
                ts = sorted(solver.types[r])
                lub = ts[0]
                for t in ts[1:]:
                    lub = lat.lub(lub, t)
                solver._set_type(r, frozenset((lub,)))
                for i, t in enumerate(ts):
                    cond.append((frozenset(((nxt, i),)), (TYPE, r, t)))
                groups[nxt] = (len(ts), frozenset(range(len(ts))))
                nxt += 1
            changed = True

        cons = ([(EMPTY, c) for c in negs] + [(EMPTY, c) for c in funcs]
                + cond)
        if not changed:
            break

    return _compact(lat, root, solver, cons, groups, depth or {}, blocked,
                    registry, skip, project)


def _compact(lat, root, solver, cons, groups, depth, blocked, registry,
             skip=(), project=False):
    """Drop everything not connected to ``root`` and renumber densely.

    Constraints on dropped nodes can still rule out combinations of
    alternatives; those are kept as explicit nogoods.  ``skip`` names
    root features to cut (used to project away daughters).  Groups that
    no constraint mentions survive unless ``project`` is set, so that
    unification keeps the exact multiset of alternatives.
    """
    find = solver.find
    root = find(root)
    cons = [(ctx, _map_con(con, find)) for ctx, con in cons]
    reps = [n for n in solver.parent if solver.parent[n] == n]
    skip = set(skip)

    succ = {}
    for r in reps:
        d = solver.arcs.get(r)
        if d:
            succ[r] = [find(m) for f, m in d.items()
                       if not (r == root and f in skip)]
    sym = {}
    for ctx, con in cons:
        kind = con[0]
        if kind == ARC and not (con[1] == root and con[2] in skip):
            succ.setdefault(con[1], []).append(con[3])
        elif kind in (EQ, NEQ, FUNC):
            ns = _nodes_of(con)
            for a in ns:
                sym.setdefault(a, set()).update(ns)

    def close(seeds, keep):
        stack = list(seeds)
        while stack:
            n = stack.pop()
            if n in keep:
                continue
            keep.add(n)
            stack.extend(succ.get(n, ()))
            stack.extend(sym.get(n, ()))
        return keep

    keep = close([root], set())
    conditional = [(ctx, con) for ctx, con in cons if ctx and con[0] != EXP]
    if conditional and len(keep) < len(reps):
        # a conditional merge among dropped nodes that lead into kept
        # nodes would carry information across; keep those too
        pred = {}
        for n, ms in succ.items():
            for m in ms:
                pred.setdefault(m, set()).add(n)
        for ctx, con in conditional:
            if con[0] == EQ:
                pred.setdefault(con[1], set()).add(con[2])
                pred.setdefault(con[2], set()).add(con[1])
        while True:
            reach = set(keep)
            stack = list(keep)
            while stack:
                n = stack.pop()
                for p in pred.get(n, ()):
                    if p not in reach:
                        reach.add(p)
                        stack.append(p)
            extra = []
            for ctx, con in conditional:
                kind = con[0]
                if kind == EQ and (con[1] in reach or con[2] in reach):
                    extra.extend(con[1:3])
                elif kind == ARC:
                    if con[3] in reach or (con[1] in reach
                                           and con[1] not in keep):
                        extra.extend((con[1], con[3]))
            extra = [n for n in extra if n not in keep]
            if not extra:
                break
            close(extra, keep)

    dropped = [(ctx, con) for ctx, con in cons
               if any(n not in keep for n in _nodes_of(con))]
    cons = [(ctx, con) for ctx, con in cons
            if all(n in keep for n in _nodes_of(con))]
    if any(ctx and con[0] != EXP for ctx, con in dropped):
        cons += _nogoods(solver, cons, dropped, groups, registry)

    if project:
        used = sorted({g for ctx, con in cons for g, _ in ctx
                       if con[0] != EXP})
    else:
        used = sorted(groups)
    gmap = {g: k for k, g in enumerate(used)}
    new_groups = {gmap[g]: groups[g] for g in used}

    # renumber nodes: root first, then depth-first by feature order
    fkey = _feature_key(lat)
    order = {}
    stack = [root]

    def visit(start):
        stack = [start]
        while stack:
            n = stack.pop()
            if n in order:
                continue
            order[n] = len(order)
            d = solver.arcs.get(n)
            if d:
                kids = [find(d[f]) for f in sorted(d, key=fkey)
                        if not (n == root and f in skip)]
                stack.extend(reversed(kids))

    visit(root)
    for n in sorted(keep):
        visit(n)

    types, arcs = {}, {}
    for n, k in order.items():
        if n not in keep:
            continue
        (t,) = solver.types[n]
        types[k] = t
        d = solver.arcs.get(n)
        if d:
            out = {f: order[find(d[f])] for f in sorted(d, key=fkey)
                   if not (n == root and f in skip)}
            if out:
                arcs[k] = out
    onode = order.__getitem__
    new_cons = set()
    for ctx, con in cons:
        if con[0] == EXP and any(n not in keep for n in _nodes_of(con)):
            continue
        ctx = frozenset((gmap[g], i) for g, i in ctx) if ctx else EMPTY
        new_cons.add((ctx, _map_con(con, onode)))
    new_depth = {}
    for n, v in depth.items():
        r = find(n) if n in solver.parent else None
        if r in order and r in keep:
            k = order[r]
            new_depth[k] = max(new_depth.get(k, 0), v)
    new_blocked = frozenset(order[find(n)] for n in blocked
                            if n in solver.parent and find(n) in keep)
    return FeatureStructure(lat, 0, types, arcs, sorted(new_cons, key=_con_key),
                            new_groups, new_depth, new_blocked)


def _con_key(item):
    ctx, con = item
    return (_ctx_key(ctx), con[0], tuple(str(x) for x in con[1:]))


def _nogoods(solver, kept, dropped, groups, registry):
    """FALSE constraints for choice tuples only the dropped part rules out."""
    full = kept + dropped
    negs = [c for ctx, c in full if not ctx and c[0] in (NTYPE, NEQ)]
    funcs = [c for ctx, c in full if not ctx and c[0] == FUNC]
    search = _Search(solver, full, negs, funcs, registry)
    in_play = search.groups_in_play()
    kept_groups = sorted({g for ctx, c in kept for g, _ in ctx
                          if c[0] != EXP and g in in_play})
    if not kept_groups:
        return []
    domains = {g: sorted(groups[g][1]) for g in in_play}
    allowed = set()
    for a in search.leaves(in_play, domains):
        allowed.add(tuple(a[g] for g in kept_groups))
    kept_search = _Search(solver, kept,
                          [c for ctx, c in kept if not ctx and c[0] in (NTYPE, NEQ)],
                          [c for ctx, c in kept if not ctx and c[0] == FUNC],
                          registry)
    out = []
    kept_in_play = [g for g in kept_search.groups_in_play()]
    for combo in product(*(domains[g] for g in kept_groups)):
        if combo in allowed:
            continue
        ctx = frozenset(zip(kept_groups, combo))
        # skip tuples the kept part already rules out on its own
        sub = {g: [i] for g, i in zip(kept_groups, combo)}
        doms = {g: sub.get(g, sorted(groups[g][1])) for g in kept_in_play}
        if kept_in_play and kept_search.first(kept_in_play, doms) is None:
            continue
        out.append((ctx, (FALSE,)))
    return out


# -- construction -------------------------------------------------------------------


class _Builder:
    def __init__(self, lat, functions):
        self.lat = lat
        self.functions = functions
        self.count = 0
        self.cons = []
        self.groups = {}
        self.named = {}
        self.tags = {}

    def node(self):
        self.count += 1
        return self.count - 1

    def group(self, arity):
        g = len(self.groups)
        self.groups[g] = (arity, frozenset(range(arity)))
        return g

    def type_id(self, name):
        try:
            return self.lat.id(name)
        except Exception:
            raise BuildError(f"unknown type {name!r}") from None

    def tag(self, name):
        n = self.tags.get(name)
        if n is None:
            n = self.tags[name] = self.node()
        return n

    def named_group(self, name, arity):
        g = self.named.get(name)
        if g is None:
            g = self.named[name] = self.group(arity)
        elif self.groups[g][0] != arity:
            raise BuildError(
                f"group %{name} used with arity {arity} and "
                f"{self.groups[g][0]}")
        return g

    def alt(self, ctx, g, i):
        for h, j in ctx:
            if h == g:
                return ctx if j == i else None
        return ctx | {(g, i)}

    def compile(self, e, n, ctx):
        add = self.cons.append
        if isinstance(e, dsl.TypeRef):
            add((ctx, (TYPE, n, self.type_id(e.name))))
        elif isinstance(e, dsl.Atom):
            add((ctx, (TYPE, n, self.lat.intern_atom(e.value))))
        elif isinstance(e, dsl.Avm):
            for f, v in e.pairs:
                self.lat.register_feature(f)
                m = self.node()
                add((ctx, (ARC, n, f, m)))
                self.compile(v, m, ctx)
        elif isinstance(e, dsl.Coref):
            add((ctx, (EQ, n, self.tag(e.tag))))
        elif isinstance(e, dsl.Conj):
            for x in e.items:
                self.compile(x, n, ctx)
        elif isinstance(e, dsl.Disj):
            g = self.group(len(e.items))
            for i, x in enumerate(e.items):
                self.compile(x, n, ctx | {(g, i)})
        elif isinstance(e, dsl.DistDisj):
            g = self.named_group(e.group, len(e.alts))
            for i, x in enumerate(e.alts):
                sub = self.alt(ctx, g, i)
                if sub is not None:
                    self.compile(x, n, sub)
        elif isinstance(e, dsl.Neg):
            self.negate(e.expr, n, ctx)
        elif isinstance(e, dsl.Call):
            if e.name not in self.functions:
                raise BuildError(f"unknown function or template {e.name!r}")
            args = []
            for a in e.args:
                m = self.node()
                self.compile(a, m, ctx)
                args.append(m)
            add((ctx, (FUNC, n, e.name, tuple(args))))
        else:
            raise BuildError(f"cannot compile {e!r}")

    def negate(self, e, n, ctx):
        add = self.cons.append
        if isinstance(e, dsl.TypeRef):
            add((ctx, (NTYPE, n, self.type_id(e.name))))
        elif isinstance(e, dsl.Atom):
            add((ctx, (NTYPE, n, self.lat.intern_atom(e.value))))
        elif isinstance(e, dsl.Coref):
            add((ctx, (NEQ, n, self.tag(e.tag))))
        elif isinstance(e, dsl.Neg):
            self.compile(e.expr, n, ctx)
        elif isinstance(e, dsl.Disj):
            for x in e.items:
                self.negate(x, n, ctx)
        elif isinstance(e, dsl.Conj):
            g = self.group(len(e.items))
            for i, x in enumerate(e.items):
                self.negate(x, n, ctx | {(g, i)})
        elif isinstance(e, dsl.DistDisj):
            g = self.named_group(e.group, len(e.alts))
            for i, x in enumerate(e.alts):
                sub = self.alt(ctx, g, i)
                if sub is not None:
                    self.negate(x, n, sub)
        elif isinstance(e, dsl.Avm) and not e.pairs:
            add((ctx, (NTYPE, n, TOP)))
        else:
            raise UnsupportedNegation(
                "negation is only supported over types, atoms and "
                f"coreference tags, not {dsl.format_expr(e)}")


def build(expr, lattice, functions=dsl.FUNCTION_NAMES):
    """Compile a template-free description; None if it is inconsistent."""
    lattice._enc()
    b = _Builder(lattice, functions)
    root = b.node()
    b.compile(expr, root, EMPTY)
    solver = _Solver(lattice)
    for n in range(b.count):
        solver.parent[n] = n
        solver.types[n] = TOPSET
    return _normalize(lattice, root, solver, b.cons, b.groups)


def top(lattice):
    """The empty structure: a single node of type top."""
    return FeatureStructure(lattice, 0, {0: TOP}, {})


def of_type(lattice, tid):
    return FeatureStructure(lattice, 0, {0: tid}, {})


# -- unification ------------------------------------------------------------------


def _shifted(fs, node_shift, group_shift):
    cons = []
    for ctx, con in fs.cons:
        if ctx:
            ctx = frozenset((g + group_shift, i) for g, i in ctx)
        cons.append((ctx, _map_con(con, lambda n: n + node_shift)))
    groups = {g + group_shift: v for g, v in fs.groups.items()}
    depth = {n + node_shift: v for n, v in fs.depth.items()}
    blocked = {n + node_shift for n in fs.blocked}
    return cons, groups, depth, blocked


def _combine(a, b, registry=None):
    """Solver with both base graphs loaded, b shifted past a."""
    lat = a.lattice
    if b.lattice is not lat:
        raise ContractError("structures belong to different lattices")
    _check_generation(a, b)
    shift = a.max_node + 1
    gshift = a.max_group + 1
    solver = _Solver(lat)
    solver.load(a)
    solver.load(b, shift)
    cons_b, groups_b, depth_b, blocked_b = _shifted(b, shift, gshift)
    cons = list(a.cons) + cons_b
    groups = dict(a.groups)
    groups.update(groups_b)
    depth = dict(a.depth)
    for n, v in depth_b.items():
        depth[n] = v
    return solver, shift, cons, groups, depth, set(a.blocked) | blocked_b


def unify(a, b, registry=None):
    """Most general structure satisfying both, or None on failure."""
    solver, shift, cons, groups, depth, blocked = _combine(a, b)
    if not solver.union(a.root, b.root + shift):
        return None
    return _normalize(a.lattice, a.root, solver, cons, groups, depth,
                      blocked, registry)


def _walk(solver, start, path, fresh):
    n = start
    for f in path:
        r = solver.find(n)
        d = solver.arcs.get(r)
        if d and f in d:
            n = d[f]
        else:
            m = fresh()
            solver.node(m)
            if not solver.arc(r, f, m):
                return None
            n = m
    return n


def unify_at(a, path, b, registry=None):
    """Unify ``b`` into ``a`` at ``path`` (created if missing)."""
    solver, shift, cons, groups, depth, blocked = _combine(a, b)
    counter = [shift + b.max_node + 1]

    def fresh():
        counter[0] += 1
        return counter[0] - 1

    n = _walk(solver, a.root, path, fresh)
    if n is None or not solver.union(n, b.root + shift):
        return None
    return _normalize(a.lattice, a.root, solver, cons, groups, depth,
                      blocked, registry)


def unify_paths(fs, p, q):
    """Make the values at paths ``p`` and ``q`` token-identical."""
    _check_generation(fs)
    solver = _Solver(fs.lattice)
    solver.load(fs)
    counter = [fs.max_node + 1]

    def fresh():
        counter[0] += 1
        return counter[0] - 1

    x = _walk(solver, fs.root, p, fresh)
    y = _walk(solver, fs.root, q, fresh) if x is not None else None
    if y is None or not solver.union(x, y):
        return None
    return _normalize(fs.lattice, fs.root, solver, fs.cons, fs.groups,
                      fs.depth, fs.blocked)


def add_constraints(fs, cons, groups=None, depth=None, registry=None):
    """Re-normalize ``fs`` with extra contexted constraints."""
    _check_generation(fs)
    solver = _Solver(fs.lattice)
    solver.load(fs)
    all_groups = dict(fs.groups)
    if groups:
        all_groups.update(groups)
    all_depth = dict(fs.depth)
    if depth:
        all_depth.update(depth)
    return _normalize(fs.lattice, fs.root, solver, list(fs.cons) + list(cons),
                      all_groups, all_depth, fs.blocked, registry)


def rename_apart(fs, node_shift=None, group_shift=None):
    """Isomorphic copy with fresh node and group identities."""
    ns = fs.max_node + 1 if node_shift is None else node_shift
    gs = fs.max_group + 1 if group_shift is None else group_shift
    cons, groups, depth, blocked = _shifted(fs, ns, gs)
    types = {n + ns: t for n, t in fs.types.items()}
    arcs = {n + ns: {f: m + ns for f, m in d.items()}
            for n, d in fs.arcs.items()}
    return FeatureStructure(fs.lattice, fs.root + ns, types, arcs, cons,
                            groups, depth, blocked, fs.generation)


def eval_functional(fs, registry=None):
    """Fire every ground functional constraint using ``registry``."""
    registry = BUILTIN_FUNCTIONS if registry is None else registry
    for _, con in fs.functionals():
        if con[2] not in registry:
            raise FunctionError(f"unknown function {con[2]!r}")
    return add_constraints(fs, (), registry=registry)


# -- disjunctive normal form ----------------------------------------------------------


def _leaf_structure(lat, solver, root, negs, funcs, generation):
    find = solver.find
    fkey = _feature_key(lat)
    order = {}
    stack = [find(root)]
    while stack:
        n = stack.pop()
        if n in order:
            continue
        order[n] = len(order)
        d = solver.arcs.get(n)
        if d:
            stack.extend(reversed([find(d[f]) for f in sorted(d, key=fkey)]))
    types, arcs = {}, {}
    for n, k in order.items():
        (t,) = solver.types[n]
        types[k] = t
        d = solver.arcs.get(n)
        if d:
            arcs[k] = {f: order[find(d[f])] for f in sorted(d, key=fkey)}
    cons = set()
    for con in negs:
        if solver.discharged(con):
            continue
        mapped = _map_con(con, find)
        if all(x in order for x in _nodes_of(mapped)):
            cons.add((EMPTY, _map_con(mapped, order.__getitem__)))
    for con in funcs:
        mapped = _map_con(con, find)
        if solver.atom_of(mapped[1]) is not None and all(
                solver.atom_of(x) is not None for x in mapped[3]):
            continue
        if all(x in order for x in _nodes_of(mapped)):
            cons.add((EMPTY, _map_con(mapped, order.__getitem__)))
    return FeatureStructure(lat, 0, types, arcs, sorted(cons, key=_con_key),
                            generation=generation)


def _solver_and_search(fs, registry=None):
    solver = _Solver(fs.lattice)
    solver.load(fs)
    negs = [c for ctx, c in fs.cons if not ctx and c[0] in (NTYPE, NEQ)]
    funcs = [c for ctx, c in fs.cons if not ctx and c[0] == FUNC]
    return solver, _Search(solver, fs.cons, negs, funcs, registry)


def iter_dnf(fs, domains=None):
    """Yield (assignment, disjunction-free structure) pairs in order.

    ``domains`` narrows the alternatives tried per group.
    """
    _check_generation(fs)
    solver, search = _solver_and_search(fs)
    order = sorted(fs.groups)
    if domains is None:
        domains = {g: sorted(fs.groups[g][1]) for g in order}
    # constraints active at a leaf depend on the assignment
    for a in search.leaves(order, domains):
        negs = list(search.negs)
        funcs = list(search.funcs)
        for ctx, con in search.cond:
            if con[0] in (NTYPE, NEQ, FUNC) and all(a.get(g) == i for g, i in ctx):
                (funcs if con[0] == FUNC else negs).append(con)
        yield a, _leaf_structure(fs.lattice, solver, fs.root, negs, funcs,
                                 fs.generation)


def dnf(fs):
    """Every consistent disjunction-free alternative, lexicographically."""
    if fs is None:
        return []
    if fs._dnf is None:
        fs._dnf = tuple(x for _, x in iter_dnf(fs))
    return list(fs._dnf)


def canonical(fs):
    """Isomorphism-invariant string for a disjunction-free structure."""
    if fs.groups:
        raise ContractError("canonical() needs a disjunction-free structure")
    lat = fs.lattice
    fkey = _feature_key(lat)
    seen = {}
    out = []

    def walk(n):
        if n in seen:
            out.append(f"#{seen[n]}")
            return
        seen[n] = len(seen)
        out.append(f"{lat.name(fs.types[n])}")
        d = fs.arcs.get(n)
        if d:
            out.append("[")
            for f in sorted(d, key=fkey):
                out.append(f"{f}:")
                walk(d[f])
                out.append(",")
            out.append("]")

    walk(fs.root)
    extra = []
    for ctx, con in fs.cons:
        if con[0] == EXP:
            continue
        parts = [con[0]]
        for x in con[1:]:
            if isinstance(x, int) and con[0] != FUNC:
                parts.append(str(seen.get(x, "?")))
            else:
                parts.append(str(x))
        if con[0] == FUNC:
            parts = [FUNC, str(seen.get(con[1], "?")), con[2],
                     ",".join(str(seen.get(a, "?")) for a in con[3])]
        if con[0] in (NTYPE,):
            parts[2] = lat.name(con[2])
        extra.append(" ".join(parts))
    return "".join(out) + ("|" + ";".join(sorted(extra)) if extra else "")


def dnf_key(fs):
    """Set of canonical alternatives; equal keys mean equal DNF sets."""
    if fs is None:
        return frozenset()
    if fs._key is None:
        fs._key = frozenset(canonical(x) for x in dnf(fs))
    return fs._key


def dnf_multiset(fs):
    from collections import Counter
    return Counter(canonical(x) for x in dnf(fs))


# -- simplification and projection ------------------------------------------------------


def _local_signature(fs, g, i, local):
    items = []
    for ctx, con in fs.cons:
        if (g, i) in ctx and con[0] != EXP:
            items.append((ctx - {(g, i)}, con))
    rename = {}

    def name(n):
        if n in local:
            return ("L", rename.setdefault(n, len(rename)))
        return ("N", n)

    def sort_key(item):
        ctx, con = item
        return (_ctx_key(ctx), con[0],
                tuple("L" if isinstance(x, int) and x in local else str(x)
                      for x in con[1:]))

    out = []
    for ctx, con in sorted(items, key=sort_key):
        out.append((_ctx_key(ctx), _map_con(con, name) if con[0] != FALSE else con))
    return tuple(out)


def simplify(fs):
    """Remove dead and duplicate alternatives; inline decided groups."""
    if fs is None:
        return None
    _check_generation(fs)
    cur = add_constraints(fs, ())
    while cur is not None and cur.groups:
        mentions = {}
        for ctx, con in cur.cons:
            for n in _nodes_of(con):
                mentions.setdefault(n, []).append(ctx)
        base_nodes = set(cur.arcs) | {m for d in cur.arcs.values()
                                      for m in d.values()} | {cur.root}
        drop = set()
        for g in sorted(cur.groups):
            live = sorted(cur.groups[g][1])
            sigs = {}
            for i in live:
                local = {n for n, ctxs in mentions.items()
                         if n not in base_nodes and cur.types[n] == TOP
                         and all((g, i) in c for c in ctxs)}
                sig = _local_signature(cur, g, i, local)
                if sig in sigs:
                    drop.add((g, i))
                else:
                    sigs[sig] = i
        if not drop:
            break
        groups = {g: (a, frozenset(x for x in live if (g, x) not in drop))
                  for g, (a, live) in cur.groups.items()}
        cons = [(ctx, con) for ctx, con in cur.cons
                if not any(p in drop for p in ctx)]
        solver = _Solver(cur.lattice)
        solver.load(cur)
        cur = _normalize(cur.lattice, cur.root, solver, cons, groups,
                         cur.depth, cur.blocked)
    return cur


def restrict(fs, features):
    """Cut the named root features (and whatever hangs only from them)."""
    if fs is None:
        return None
    _check_generation(fs)
    solver = _Solver(fs.lattice)
    solver.load(fs)
    return _normalize(fs.lattice, fs.root, solver, fs.cons, fs.groups,
                      fs.depth, fs.blocked, skip=tuple(features), project=True)


def extract_subterm(fs, path):
    """Sub-structure at ``path``; None if the path is defined nowhere."""
    if fs is None:
        return None
    path = tuple(path)
    if not path:
        return fs
    _check_generation(fs)
    n = fs.follow(path)
    extra = []
    if n is None:
        solver, search = _solver_and_search(fs)
        order = search.groups_in_play()
        domains = {g: sorted(fs.groups[g][1]) for g in order}
        defined, undefined = set(), set()
        for a in search.leaves(order, domains):
            key = tuple(sorted(a.items()))
            if _defined(solver, fs.root, path):
                defined.add(key)
            else:
                undefined.add(key)
        if not defined:
            return None
        extra = [(frozenset(k), (FALSE,)) for k in sorted(undefined - defined)]
        counter = [fs.max_node + 1]
        prev = fs.root
        for f in path:
            extra.append((EMPTY, (ARC, prev, f, counter[0])))
            prev = counter[0]
            counter[0] += 1
        fixed = add_constraints(fs, extra)
        if fixed is None:
            return None
        fs = fixed
        n = fs.follow(path)
    solver = _Solver(fs.lattice)
    solver.load(fs)
    return _normalize(fs.lattice, n, solver, fs.cons, fs.groups, fs.depth,
                      fs.blocked, project=True)


def _defined(solver, root, path):
    n = solver.find(root)
    for f in path:
        d = solver.arcs.get(n)
        if not d or f not in d:
            return False
        n = solver.find(d[f])
    return True


# -- subsumption ----------------------------------------------------------------------


def subsumes_fs(a, b):
    """True iff ``a`` is at least as general as ``b`` (no disjunctions)."""
    if a.groups or b.groups:
        raise ContractError("subsumes_fs needs disjunction-free structures")
    lat = a.lattice
    h = {}
    stack = [(a.root, b.root)]
    while stack:
        x, y = stack.pop()
        if x in h:
            if h[x] != y:
                return False
            continue
        h[x] = y
        if not lat.subsumes(a.types[x], b.types[y]):
            return False
        da = a.arcs.get(x)
        if da:
            db = b.arcs.get(y, {})
            for f, m in da.items():
                if f not in db:
                    return False
                stack.append((m, db[f]))
    return True
