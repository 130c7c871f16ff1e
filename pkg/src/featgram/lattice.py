"""Type hierarchy with bit-vector subsumption.

Each type owns a Python ``int`` used as a bitset of its ancestors
(itself included), so ``subsumes(a, b)`` is a single bit test.
Conjunction follows the kind of the operands: two ``avm`` types meet
open-world (a synthetic conjunctive type is created when no declared
common subtype exists), everything else meets closed-world.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .errors import LatticeError, StaleEncodingError

TOP = 0
ATOM = 1
BOTTOM = -1

KINDS = ("avm", "sort", "builtin", "atom")


@dataclass
class TypeEntry:
    id: int
    name: str
    kind: str
    parents: set = field(default_factory=set)
    skeleton: object = None
    defined: bool = False
    synthetic: bool = False
    # implicit children of a partition take the parent's kind at finalize
    implicit: bool = False


@dataclass
class Encoding:
    generation: int
    ancestors: list

    def subsumes(self, a, b):
        return bool((self.ancestors[b] >> a) & 1)


def _bits(x):
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


class Lattice:
    def __init__(self):
        self.entries: list[TypeEntry] = []
        self.by_name: dict[str, int] = {}
        self.generation = 0
        self.encoding: Encoding | None = None
        self.incompatible: list[frozenset] = []
        self.partitions: list[tuple[int, tuple]] = []
        self.features: dict[str, int] = {}
        self._glb_memo: dict = {}
        self._desc: dict[int, int] = {}
        self._synthetic: dict[frozenset, int] = {}
        self._components: dict[int, frozenset] = {}
        self._by_component: dict[int, set] = {}
        self._lock = threading.RLock()
        self._new_entry("top", "builtin", set(), defined=True)
        self._new_entry("atom", "builtin", {TOP}, defined=True)

    # -- definition ---------------------------------------------------

    def _new_entry(self, name, kind, parents, defined=False):
        entry = TypeEntry(len(self.entries), name, kind, set(parents),
                          defined=defined)
        self.entries.append(entry)
        self.by_name[name] = entry.id
        return entry

    def _placeholder(self, name):
        if name in self.by_name:
            return self.by_name[name]
        self.generation += 1
        return self._new_entry(name, "avm", set()).id

    def define_type(self, name, kind="avm", parents=(), skeleton=None):
        """Define or redefine ``name``; unknown parents become placeholders."""
        if kind not in KINDS or kind == "builtin":
            raise LatticeError(f"cannot define type {name!r} of kind {kind!r}")
        if not name:
            raise LatticeError("empty type name")
        with self._lock:
            parent_ids = set()
            for p in parents:
                pid = self._placeholder(p)
                pentry = self.entries[pid]
                if pentry.kind == "atom":
                    raise LatticeError(
                        f"atom {p!r} cannot have subtype {name!r}")
                parent_ids.add(pid)
            if kind == "atom" and not parent_ids:
                parent_ids = {ATOM}
            if not parent_ids:
                parent_ids = {TOP}
            tid = self.by_name.get(name)
            if tid is None:
                entry = self._new_entry(name, kind, parent_ids, defined=True)
                entry.skeleton = skeleton
            else:
                entry = self.entries[tid]
                if entry.kind == "builtin":
                    raise LatticeError(f"cannot redefine built-in {name!r}")
                if entry.defined and not entry.implicit and entry.kind != kind:
                    raise LatticeError(
                        f"kind conflict redefining {name!r}: "
                        f"{entry.kind} -> {kind}")
                if kind == "atom" or entry.kind == "atom":
                    for child in self.entries:
                        if tid in child.parents:
                            raise LatticeError(
                                f"atom {name!r} cannot have subtype "
                                f"{child.name!r}")
                # keep parents contributed by partition declarations
                inherited = {p for p in entry.parents
                             if any(p == par and tid in ch
                                    for par, ch in self.partitions)}
                entry.kind = kind
                entry.parents = parent_ids | inherited
                if inherited:
                    entry.parents.discard(TOP)
                entry.skeleton = skeleton
                entry.defined = True
                entry.implicit = False
            self.generation += 1
            return entry.id

    def declare_incompatible(self, names):
        names = list(names)
        if len(set(names)) < 2:
            raise LatticeError("incompatibility needs at least two types")
        with self._lock:
            ids = frozenset(self._placeholder(n) for n in names)
            self.incompatible.append(ids)
            self.generation += 1

    def declare_partition(self, parent, children):
        children = list(children)
        if len(set(children)) != len(children):
            dup = sorted({c for c in children if children.count(c) > 1})
            raise LatticeError(
                f"partition {parent!r} lists duplicate children: {dup}")
        if not children:
            raise LatticeError(f"partition {parent!r} is empty")
        with self._lock:
            pid = self._placeholder(parent)
            cids = []
            for c in children:
                cid = self.by_name.get(c)
                if cid is None:
                    entry = self._new_entry(c, "sort", {pid})
                    entry.implicit = True
                    cid = entry.id
                else:
                    entry = self.entries[cid]
                    entry.parents.discard(TOP)
                    entry.parents.add(pid)
                cids.append(cid)
            self.partitions.append((pid, tuple(cids)))
            if len(cids) > 1:
                self.incompatible.append(frozenset(cids))
            self.generation += 1

    def register_feature(self, feat):
        if feat not in self.features:
            self.features[feat] = len(self.features)

    # -- encoding -----------------------------------------------------

    def finalize(self) -> Encoding:
        with self._lock:
            for pid, cids in self.partitions:
                pkind = self.entries[pid].kind
                for cid in cids:
                    child = self.entries[cid]
                    if child.implicit and not child.defined:
                        child.kind = pkind if pkind != "builtin" else "sort"
                        child.defined = True
            undefined = sorted(e.name for e in self.entries if not e.defined)
            if undefined:
                raise LatticeError(
                    "undefined types: " + ", ".join(undefined))
            for e in self.entries:
                for p in e.parents:
                    if self.entries[p].kind == "atom":
                        raise LatticeError(
                            f"atom {self.entries[p].name!r} cannot have "
                            f"subtype {e.name!r}")
            order = self._topological_order()
            anc = [0] * len(self.entries)
            for tid in order:
                bits = 1 << tid
                for p in self.entries[tid].parents:
                    bits |= anc[p]
                anc[tid] = bits
            for group in self.incompatible:
                mask = 0
                for t in group:
                    mask |= 1 << t
                for e in self.entries:
                    if bin(anc[e.id] & mask).count("1") >= 2:
                        names = sorted(self.entries[t].name for t in group)
                        raise LatticeError(
                            f"type {e.name!r} lies below incompatible "
                            f"types {names}")
            self.encoding = Encoding(self.generation, anc)
            self._glb_memo.clear()
            self._desc.clear()
            self._synthetic.clear()
            self._components.clear()
            self._by_component.clear()
            return self.encoding

    def _topological_order(self):
        WHITE, GREY, BLACK = 0, 1, 2
        state = [WHITE] * len(self.entries)
        order = []
        for start in range(len(self.entries)):
            if state[start] != WHITE:
                continue
            stack = [(start, iter(sorted(self.entries[start].parents)))]
            state[start] = GREY
            path = [start]
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    stack.pop()
                    path.pop()
                    state[node] = BLACK
                    order.append(node)
                elif state[nxt] == GREY:
                    cyc = path[path.index(nxt):] + [nxt]
                    raise LatticeError(
                        "cyclic type hierarchy: "
                        + " < ".join(self.entries[c].name for c in cyc))
                elif state[nxt] == WHITE:
                    state[nxt] = GREY
                    path.append(nxt)
                    stack.append((nxt, iter(sorted(self.entries[nxt].parents))))
        return order

    def _enc(self) -> Encoding:
        enc = self.encoding
        if enc is None or enc.generation != self.generation:
            raise StaleEncodingError(
                "type encoding is stale; call finalize() after changes")
        return enc

    @property
    def is_current(self):
        return self.encoding is not None and \
            self.encoding.generation == self.generation

    # -- queries ------------------------------------------------------

    def id(self, name):
        try:
            return self.by_name[name]
        except KeyError:
            raise LatticeError(f"unknown type {name!r}") from None

    def name(self, tid):
        return self.entries[tid].name if tid >= 0 else "bottom"

    def kind(self, tid):
        return self.entries[tid].kind

    def is_atom(self, tid):
        return tid >= 0 and self.entries[tid].kind == "atom"

    def atom_value(self, tid):
        """Python value of an atom type: ``str`` for symbols, numbers else."""
        name = self.entries[tid].name
        if name.startswith("'"):
            return name[1:]
        try:
            return int(name)
        except ValueError:
            return float(name)

    def intern_atom(self, value):
        """Id of the atom type for ``value``, created below ``atom`` if new.

        Adding a leaf leaves every existing ancestor set untouched, so it
        does not bump the generation.
        """
        if isinstance(value, bool):
            value = "true" if value else "false"
        if isinstance(value, str):
            name = value if value.startswith("'") else "'" + value
        elif isinstance(value, float) and value.is_integer():
            name = str(int(value))
        else:
            name = str(value)
        tid = self.by_name.get(name)
        if tid is not None:
            return tid
        with self._lock:
            tid = self.by_name.get(name)
            if tid is not None:
                return tid
            entry = self._new_entry(name, "atom", {ATOM}, defined=True)
            if self.is_current:
                self.encoding.ancestors.append(
                    (1 << entry.id) | self.encoding.ancestors[ATOM])
                self._desc.clear()
            else:
                self.generation += 1
            return entry.id

    def ancestors(self, tid):
        return list(_bits(self._enc().ancestors[tid]))

    def subsumes(self, a, b):
        """True iff ``a`` is at least as general as ``b``."""
        if b == BOTTOM:
            return True
        if a == BOTTOM:
            return False
        return self._enc().subsumes(a, b)

    def descendants_bits(self, tid):
        d = self._desc.get(tid)
        if d is None:
            anc = self._enc().ancestors
            d = 0
            for x, bits in enumerate(anc):
                if (bits >> tid) & 1:
                    d |= 1 << x
            self._desc[tid] = d
        return d

    def children(self, tid):
        return sorted(e.id for e in self.entries if tid in e.parents)

    def _covered(self, a, b):
        anc = self._enc().ancestors
        for group in self.incompatible:
            mask = 0
            for t in group:
                mask |= 1 << t
            x, y = anc[a] & mask, anc[b] & mask
            if x and y and bin(x | y).count("1") >= 2:
                return True
        return False

    def maximal_common_descendants(self, a, b):
        anc = self._enc().ancestors
        common = self.descendants_bits(a) & self.descendants_bits(b)
        return [x for x in _bits(common) if anc[x] & common == 1 << x]

    def glb(self, a, b):
        """Meet of two types.

        Returns a type id, ``BOTTOM``, or a tuple of type ids standing for
        a closed-world disjunction of maximal common subtypes.
        """
        if a == b:
            return a
        if a == BOTTOM or b == BOTTOM:
            return BOTTOM
        enc = self._enc()
        if enc.subsumes(a, b):
            return b
        if enc.subsumes(b, a):
            return a
        key = (a, b) if a < b else (b, a)
        hit = self._glb_memo.get(key)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._glb_memo.get(key)
            if hit is not None:
                return hit
            result = self._glb_uncached(a, b)
            self._glb_memo[key] = result
            return result

    def _glb_uncached(self, a, b):
        if self._covered(a, b):
            return BOTTOM
        common = self.maximal_common_descendants(a, b)
        open_world = self.kind(a) == "avm" and self.kind(b) == "avm"
        if len(common) == 1:
            return common[0]
        if not open_world:
            return tuple(common) if common else BOTTOM
        return self._conjoin(a, b)

    def _comp(self, t):
        return self._components.get(t, frozenset((t,)))

    def _conjoin(self, a, b):
        enc = self.encoding
        comps = set(self._comp(a) | self._comp(b))
        for c in list(comps):
            if any(d != c and enc.subsumes(c, d) for d in comps):
                comps.discard(c)
        comps = frozenset(comps)
        if len(comps) == 1:
            return next(iter(comps))
        tid = self._synthetic.get(comps)
        if tid is not None:
            return tid
        name = "&".join(sorted(self.entries[c].name for c in comps))
        entry = self._new_entry(name, "avm", set(comps), defined=True)
        entry.synthetic = True
        # synthetic types sharing a component with this one are the only
        # candidates for being above or below it
        near = set().union(*(self._by_component.get(c, ()) for c in comps))
        subsets = [sid for sid in near if self._components[sid] < comps]
        supersets = [sid for sid in near if comps < self._components[sid]]
        bits = 1 << entry.id
        for c in comps:
            bits |= enc.ancestors[c]
        for sid in subsets:
            bits |= enc.ancestors[sid]
        enc.ancestors.append(bits)
        below = 1 << entry.id
        for sid in supersets:
            enc.ancestors[sid] |= 1 << entry.id
            below |= 1 << sid
        # keep cached descendant sets current rather than recomputing them
        for x in _bits(bits & ~(1 << entry.id)):
            if x in self._desc:
                self._desc[x] |= 1 << entry.id
        self._desc[entry.id] = below
        self._synthetic[comps] = entry.id
        self._components[entry.id] = comps
        for c in comps:
            self._by_component.setdefault(c, set()).add(entry.id)
        return entry.id

    def lub(self, a, b):
        """Least common supertype; ties go to the smaller id."""
        if a == BOTTOM:
            return b
        if b == BOTTOM:
            return a
        if a == b:
            return a
        common = self._enc().ancestors[a] & self._enc().ancestors[b]
        minimal = [x for x in _bits(common)
                   if self.descendants_bits(x) & common == 1 << x]
        return min(minimal)

    def meet_sets(self, xs, ys):
        """Meet of two antichains (frozensets of type ids); empty = bottom."""
        if xs == ys:
            return xs
        if len(xs) == 1 and len(ys) == 1:
            r = self.glb(next(iter(xs)), next(iter(ys)))
            if r == BOTTOM:
                return frozenset()
            if isinstance(r, tuple):
                return frozenset(r)
            return frozenset((r,))
        out = set()
        for x in xs:
            for y in ys:
                r = self.glb(x, y)
                if r == BOTTOM:
                    continue
                if isinstance(r, tuple):
                    out.update(r)
                else:
                    out.add(r)
        return frozenset(x for x in out
                         if not any(y != x and self.subsumes(x, y)
                                    for y in out))

    def describe(self, name):
        """Summary used by the ``show-type`` command."""
        tid = self.id(name)
        e = self.entries[tid]
        bits = self._enc().ancestors[tid]
        return {
            "name": e.name,
            "kind": e.kind,
            "parents": sorted(self.entries[p].name for p in e.parents),
            "children": [self.entries[c].name for c in self.children(tid)
                         if not self.entries[c].synthetic],
            "ancestors": bin(bits).count("1"),
        }
