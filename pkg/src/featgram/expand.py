"""Lazy, memoized expansion of type constraints into feature structures.

A type's *skeleton* is the description attached to its definition.
Expanding a node of type ``t`` conjoins the skeletons of ``t`` and all
of its supertypes at that node.  Each application leaves an ``EXP``
record so it is never repeated, and nodes created by a recursive type's
skeleton sit one level deeper; nodes at the depth budget are left
unexpanded and reported as the frontier.
"""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass

from . import dsl
from . import fs as F
from .errors import BuildError

DEFAULT_BUDGET = 8

SATISFIABLE = "satisfiable"
UNSATISFIABLE = "unsatisfiable"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Prototype:
    type: int
    fs: object
    generation: int
    complete: bool
    frontier: tuple = ()


class Expander:
    """Per-lattice caches of skeleton structures and prototypes."""

    def __init__(self, lattice, budget=DEFAULT_BUDGET):
        self.lattice = lattice
        self.budget = budget
        self._generation = None
        self._skeletons = {}
        self._recursive = None
        self._protos = {}
        self._lock = threading.RLock()

    def _check(self):
        lat = self.lattice
        lat._enc()
        if self._generation != lat.generation:
            with self._lock:
                self._skeletons = {}
                self._recursive = None
                self._protos = {}
                self._generation = lat.generation

    def skeleton(self, tid):
        """Built skeleton of ``tid`` alone (None if it has none)."""
        self._check()
        if tid in self._skeletons:
            return self._skeletons[tid]
        entry = self.lattice.entries[tid]
        sk = None
        if entry.skeleton is not None:
            sk = F.build(entry.skeleton, self.lattice)
            if sk is None:
                sk = False
            elif len(sk.types) == 1 and not sk.cons and sk.types[sk.root] == 0:
                sk = None
        self._skeletons[tid] = sk
        return sk

    def recursive_types(self):
        """Types whose expansion can reintroduce themselves."""
        self._check()
        if self._recursive is not None:
            return self._recursive
        lat = self.lattice
        mentions = {}
        for e in lat.entries:
            refs = set()
            if e.skeleton is not None:
                def visit(node):
                    if isinstance(node, dsl.TypeRef) and node.name in lat.by_name:
                        refs.add(lat.by_name[node.name])
                    return node
                dsl.map_expr(e.skeleton, visit)
            mentions[e.id] = refs
        # t -> u if some ancestor of t mentions u, or u is below such a type
        edges = {}
        for e in lat.entries:
            if e.synthetic:
                continue
            out = set()
            for a in lat.ancestors(e.id):
                out |= mentions.get(a, set())
            edges[e.id] = out
        rec = set()
        for t in edges:
            stack, seen = list(edges[t]), set()
            while stack:
                u = stack.pop()
                if u == t:
                    rec.add(t)
                    break
                if u in seen or u not in edges:
                    continue
                seen.add(u)
                stack.extend(edges[u])
        self._recursive = frozenset(rec)
        return self._recursive

    def is_recursive(self, tid):
        lat = self.lattice
        rec = self.recursive_types()
        return any(a in rec for a in lat.ancestors(tid))

    def pending(self, fs, tid, node, ctx=F.EMPTY):
        """Ancestors of ``tid`` whose skeleton is not yet applied at node."""
        done = {con[2] for c, con in fs.cons
                if con[0] == F.EXP and con[1] == node and c <= ctx}
        out = []
        for a in _parent_first(self.lattice, tid):
            if a in done:
                continue
            if self.skeleton(a) is not None:
                out.append(a)
        return out

    def _work(self, fs, budget, only=None):
        """Constraints applying every pending skeleton (one round)."""
        lat = self.lattice
        cons, groups, depth = [], {}, {}
        blocked = set()
        next_node = fs.max_node + 1
        next_group = fs.max_group + 1
        failed = False
        targets = [(n, F.EMPTY, t) for n, t in sorted(fs.types.items())]
        targets += [(con[1], ctx, con[2]) for ctx, con in fs.cons
                    if ctx and con[0] == F.TYPE]
        for n, ctx, t in targets:
            if only is not None and n != only:
                continue
            if n in fs.blocked:
                continue
            todo = self.pending(fs, t, n, ctx)
            if ctx:
                # already covered by the unconditional type
                base = set(self.pending(fs, fs.types[n], n))
                have = set(lat.ancestors(fs.types[n])) - base
                todo = [a for a in todo if a not in have]
            if not todo:
                continue
            d = fs.depth.get(n, 0)
            if budget is not None and d >= budget and any(
                    self.is_recursive(a) for a in todo):
                blocked.add(n)
                continue
            for a in todo:
                sk = self.skeleton(a)
                if sk is False:
                    failed = True
                    cons.append((ctx, (F.FALSE,)))
                    continue
                step = 1 if a in self.recursive_types() else 0
                more, g2, d2 = _embed(sk, n, ctx, next_node, next_group,
                                      d + step)
                cons.extend(more)
                groups.update(g2)
                depth.update(d2)
                next_node += sk.max_node + 1
                next_group += sk.max_group + 1
                cons.append((ctx, (F.EXP, n, a)))
        return cons, groups, depth, blocked, failed

    def expand_node(self, fs, node, budget=None):
        """Apply the node's own and inherited skeletons; None on failure."""
        budget = self.budget if budget is None else budget
        cons, groups, depth, blocked, _ = self._work(fs, budget, only=node)
        if blocked:
            return _with_blocked(fs, blocked)
        if not cons:
            return fs
        return F.add_constraints(fs, cons, groups, depth)

    def expand_fully(self, fs, budget=None):
        """Expand until nothing is pending; returns (fs, verdict)."""
        budget = self.budget if budget is None else budget
        if fs is None:
            return None, UNSATISFIABLE
        while True:
            cons, groups, depth, blocked, _ = self._work(fs, budget)
            if blocked:
                fs = _with_blocked(fs, blocked)
            if not cons:
                break
            fs = F.add_constraints(fs, cons, groups, depth)
            if fs is None:
                return None, UNSATISFIABLE
        return fs, (UNKNOWN if fs.blocked else SATISFIABLE)

    def prototype(self, tid):
        """Memoized expansion of a bare node of type ``tid``."""
        self._check()
        hit = self._protos.get(tid)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._protos.get(tid)
            if hit is not None:
                return hit
            budget = 1 if self.is_recursive(tid) else self.budget
            x, verdict = self.expand_fully(F.of_type(self.lattice, tid), budget)
            frontier = tuple(sorted(x.blocked)) if x is not None else ()
            proto = Prototype(tid, x, self.lattice.generation,
                              verdict == SATISFIABLE, frontier)
            self._protos[tid] = proto
            return proto


def _parent_first(lat, tid):
    anc = set(lat.ancestors(tid))
    order = []
    seen = set()

    def visit(t):
        if t in seen:
            return
        seen.add(t)
        for p in sorted(lat.entries[t].parents):
            if p in anc:
                visit(p)
        order.append(t)

    visit(tid)
    return order


def _embed(sk, node, ctx, node_shift, group_shift, depth):
    """Constraints placing skeleton ``sk`` at ``node`` under ``ctx``."""
    cons = []
    for n, t in sk.types.items():
        if t != 0:
            cons.append((ctx, (F.TYPE, n + node_shift, t)))
    for n, d in sk.arcs.items():
        for f, m in d.items():
            cons.append((ctx, (F.ARC, n + node_shift, f, m + node_shift)))
    for c, con in sk.cons:
        c2 = frozenset((g + group_shift, i) for g, i in c) | ctx
        cons.append((c2, F._map_con(con, lambda x: x + node_shift)))
    cons.append((ctx, (F.EQ, node, sk.root + node_shift)))
    groups = {g + group_shift: v for g, v in sk.groups.items()}
    depths = {n + node_shift: depth for n in sk.types if n != sk.root}
    return cons, groups, depths


def _with_blocked(fs, blocked):
    return F.FeatureStructure(fs.lattice, fs.root, fs.types, fs.arcs, fs.cons,
                              fs.groups, fs.depth, fs.blocked | blocked,
                              fs.generation)


_EXPANDERS = weakref.WeakKeyDictionary()
_EXPANDERS_LOCK = threading.Lock()


def expander(lattice):
    with _EXPANDERS_LOCK:
        ex = _EXPANDERS.get(lattice)
        if ex is None:
            ex = _EXPANDERS[lattice] = Expander(lattice)
        return ex


def expand_node(fs, node, budget=DEFAULT_BUDGET):
    return expander(fs.lattice).expand_node(fs, node, budget)


def expand_fully(fs, budget=DEFAULT_BUDGET):
    return expander(fs.lattice).expand_fully(fs, budget)


def prototype(lattice, tid):
    return expander(lattice).prototype(tid)
