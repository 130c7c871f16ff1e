"""Grammar loading: type files, rules, lexicon, and lookup indices."""

from __future__ import annotations

import hashlib
import sys
import threading
from dataclasses import dataclass
from pathlib import Path

from . import dsl
from . import fs as F
from .errors import ContractError, GrammarError, LatticeError
from .expand import expander
from .lattice import Lattice

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def lattice_from_definitions(defs, lattice=None):
    """Enter expanded definitions into a lattice and finalize it."""
    lat = Lattice() if lattice is None else lattice
    for d in defs:
        if d.kind == "avm-type":
            lat.define_type(d.name, "avm", d.parents, d.body)
            _register_features(lat, d.body)
        elif d.kind == "sort-type":
            lat.define_type(d.name, "sort", d.parents)
        elif d.kind == "incompatibility-decl":
            lat.declare_incompatible(d.parents)
        elif d.kind == "partition-decl":
            lat.declare_partition(d.name, d.parents)
        else:
            raise GrammarError(f"unexpected definition kind {d.kind!r}")
    lat.finalize()
    return lat


def _register_features(lat, expr):
    if expr is None:
        return

    def visit(node):
        if isinstance(node, dsl.Avm):
            for f, _ in node.pairs:
                lat.register_feature(f)
        return node
    dsl.map_expr(expr, visit)


def lattice_from_text(text):
    return lattice_from_definitions(dsl.expand_templates(dsl.parse_text(text)))


# -- runtime objects ------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    name: str
    fs: object
    daughters: tuple  # one feature path per slot
    key: int
    categories: tuple  # (mother, slot 0, slot 1, ...)
    mother: object  # fs with the daughter features cut away

    @property
    def arity(self):
        return len(self.daughters)

    @property
    def category(self):
        return self.categories[0]

    def slot_category(self, d):
        return self.categories[d + 1]


@dataclass(frozen=True)
class LexEntry:
    """A word, a multi-word lexeme, or the output of lexical rules.

    ``name`` labels the leaf in derivation trees; for derived entries it
    wraps the base name in the rule names (``bare-plural(dogs-n)``), and
    ``lexical_type`` is wrapped the same way.
    """

    name: str
    forms: tuple
    fs: object
    lexical_type: str
    category: str
    predicates: frozenset = frozenset()
    lexrules: tuple = ()

    @property
    def lemma(self):
        return " ".join(self.forms)

    @property
    def multiword(self):
        return len(self.forms) > 1

    @property
    def span(self):
        return len(self.forms)


@dataclass(frozen=True)
class LexRule:
    name: str
    fs: object
    input_path: tuple
    output_path: tuple


def _path(text):
    return tuple(p for p in text.split(".") if p) if isinstance(text, str) \
        else tuple(text)


@dataclass(frozen=True)
class Manifest:
    sources: tuple = ()
    rule_type: str = "rule"
    entry_type: str = "lex-entry"
    lexrule_type: str = "lex-rule"
    sem_path: tuple = ("SEM",)
    orth_path: tuple = ("ORTH",)
    cat_path: tuple = ("CAT",)
    key_feature: str = "KEY"
    daughter_features: tuple = ("DTR1", "DTR2", "DTR3", "DTR4")
    input_path: tuple = ("IN",)
    output_path: tuple = ("OUT",)
    start: str = "s"
    lexrule_depth: int = 2
    veto: tuple = ()
    base_dir: str = "."

    @classmethod
    def from_dict(cls, data, base_dir="."):
        des = data.get("designated", {})
        paths = data.get("paths", {})
        parsing = data.get("parsing", {})
        kw = dict(base_dir=str(base_dir),
                  sources=tuple(data.get("sources", ())))
        for k, f in (("rule", "rule_type"), ("lex-entry", "entry_type"),
                     ("lex-rule", "lexrule_type")):
            if k in des:
                kw[f] = des[k]
        for k, f in (("semantics", "sem_path"), ("orth", "orth_path"),
                     ("category", "cat_path"), ("lexrule-input", "input_path"),
                     ("lexrule-output", "output_path")):
            if k in paths:
                kw[f] = _path(paths[k])
        if "key" in paths:
            kw["key_feature"] = paths["key"]
        if "daughters" in paths:
            kw["daughter_features"] = tuple(paths["daughters"])
        if "start" in parsing:
            kw["start"] = parsing["start"]
        if "lexrule-depth" in parsing:
            kw["lexrule_depth"] = int(parsing["lexrule-depth"])
        kw["veto"] = tuple(tuple(v) for v in parsing.get("veto", ()))
        return cls(**kw)


# -- the grammar ---------------------------------------------------------------


class Grammar:
    """Immutable after construction; share freely between parsers."""

    def __init__(self, lattice, manifest, rules, entries, lexrules,
                 digest=""):
        self.lattice = lattice
        self.manifest = manifest
        self.rules = tuple(rules)
        self.entries = tuple(entries)
        self.lexrules = tuple(lexrules)
        self.digest = digest
        self._rules_by_name = {r.name: r for r in self.rules}
        self._forms = {}
        for e in self.entries:
            self._forms.setdefault(e.forms[0], []).append(e)
        self._closure = {}
        self._items = None
        self._index = None
        self._lock = threading.Lock()

    def rule(self, name):
        try:
            return self._rules_by_name[name]
        except KeyError:
            raise GrammarError(f"unknown rule {name!r}") from None

    @property
    def start(self):
        return self.manifest.start

    def category(self, fs, path=()):
        return backbone_category(fs, tuple(path) + self.manifest.cat_path)

    def lookup(self, tokens, position):
        """Entries whose forms match ``tokens`` starting at ``position``."""
        tokens = [t.lower() for t in tokens]
        if not 0 <= position < len(tokens):
            return []
        out = []
        for e in self._forms.get(tokens[position], ()):
            if tuple(tokens[position:position + e.span]) == e.forms:
                out.append(e)
        return out

    def apply_lex_rules(self, entry, depth=None):
        """Entry plus everything lexical rules derive from it."""
        depth = self.manifest.lexrule_depth if depth is None else depth
        if depth < 0:
            raise ContractError("closure depth must be >= 0")
        if entry.multiword:
            return [entry]
        key = (entry.name, depth)
        hit = self._closure.get(key)
        if hit is not None:
            return list(hit)
        out, frontier = [entry], [entry]
        for _ in range(depth):
            nxt = []
            for e in frontier:
                for r in self.lexrules:
                    d = self._apply(r, e)
                    if d is not None:
                        nxt.append(d)
            out.extend(nxt)
            frontier = nxt
        self._closure[key] = tuple(out)
        return out

    def _apply(self, rule, entry):
        inst = F.unify_at(rule.fs, rule.input_path, entry.fs)
        if inst is None:
            return None
        out = F.extract_subterm(inst, rule.output_path)
        if out is None:
            return None
        return LexEntry(f"{rule.name}({entry.name})", entry.forms, out,
                        f"{rule.name}({entry.lexical_type})",
                        self.category(out),
                        _predicates(out, self.manifest.sem_path),
                        entry.lexrules + (rule.name,))

    def items(self):
        """Every entry together with its lexical-rule closure."""
        if self._items is None:
            out = []
            for e in self.entries:
                out.extend(self.apply_lex_rules(e))
            self._items = tuple(out)
        return self._items

    def semantic_index(self):
        """Predicate -> entries; predicate-less entries sit under ``""``."""
        if self._index is None:
            index = {}
            for e in self.items():
                for p in sorted(e.predicates) or [""]:
                    index.setdefault(p, []).append(e)
            self._index = {k: tuple(v) for k, v in index.items()}
        return self._index

    def lexical_categories(self):
        return sorted({e.category for e in self.items()})

    def __repr__(self):
        return (f"<Grammar rules={len(self.rules)} entries={len(self.entries)}"
                f" lexrules={len(self.lexrules)}>")


def backbone_category(fs, cat_path):
    """The atom at ``cat_path``; otherwise the type name there."""
    n = fs.follow(cat_path)
    if n is None:
        n = fs.follow(cat_path[:-1])
        return fs.lattice.name(fs.types[n]) if n is not None else "top"
    t = fs.types[n]
    lat = fs.lattice
    if lat.is_atom(t):
        return str(lat.atom_value(t))
    n = fs.follow(cat_path[:-1])
    return lat.name(fs.types[n])


def _atoms_below(fs, start):
    lat = fs.lattice
    seen, stack, out = set(), [start], set()
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        t = fs.types[n]
        if lat.is_atom(t):
            out.add(lat.atom_value(t))
        stack.extend(fs.arcs.get(n, {}).values())
    return out


def _predicates(fs, sem_path):
    n = fs.follow(sem_path)
    if n is None:
        return frozenset()
    return frozenset(str(a) for a in _atoms_below(fs, n))


def _forms(fs, orth_path):
    """Surface forms from an atom or a FIRST/REST list; None if absent."""
    n = fs.follow(orth_path)
    if n is None:
        return None
    lat = fs.lattice
    if lat.is_atom(fs.types[n]):
        return (str(lat.atom_value(fs.types[n])),)
    forms = []
    while True:
        d = fs.arcs.get(n, {})
        if "FIRST" not in d:
            break
        t = fs.types[d["FIRST"]]
        if not lat.is_atom(t):
            return None
        forms.append(str(lat.atom_value(t)).lower())
        if "REST" not in d:
            break
        n = d["REST"]
    return tuple(forms) or None


def _leaf_subtypes(lat, root_name, defined):
    if root_name not in lat.by_name:
        return []
    root = lat.id(root_name)
    out = []
    for name in defined:
        tid = lat.id(name)
        if tid != root and lat.subsumes(root, tid) and not lat.children(tid):
            out.append(name)
    return out


def load_grammar(defs, lattice, manifest=None, digest=""):
    """Build rules, entries and lexical rules from finalized definitions.

    Leaf subtypes of the designated rule, entry and lexical-rule types
    become runtime objects; intermediate types are treated as classes.
    An entry's lexical type is its first declared supertype.
    """
    m = manifest or Manifest()
    lat = lattice
    exp = expander(lat)
    order = [d.name for d in defs if d.kind == "avm-type"]
    parents = {d.name: d.parents for d in defs if d.kind == "avm-type"}

    def proto(name):
        p = exp.prototype(lat.id(name))
        if p.fs is None:
            raise GrammarError(f"{name}: expansion failed (unsatisfiable)")
        return p.fs

    rules = []
    for name in _leaf_subtypes(lat, m.rule_type, order):
        fs = proto(name)
        dtrs = [f for f in m.daughter_features if fs.follow((f,)) is not None]
        if not dtrs:
            raise GrammarError(f"rule {name}: no daughter paths")
        key = fs.atom_at((m.key_feature,))
        key = 0 if key is None else key
        if not isinstance(key, int) or not 0 <= key < len(dtrs):
            raise GrammarError(f"rule {name}: bad key daughter {key!r}")
        mother = F.restrict(fs, tuple(dtrs) + (m.key_feature,))
        cats = (backbone_category(fs, m.cat_path),) + tuple(
            backbone_category(fs, (f,) + m.cat_path) for f in dtrs)
        rules.append(Rule(name, fs, tuple((f,) for f in dtrs), key, cats,
                          mother))

    entries = []
    for name in _leaf_subtypes(lat, m.entry_type, order):
        fs = proto(name)
        forms = _forms(fs, m.orth_path)
        if not forms:
            raise GrammarError(f"entry {name}: no surface form")
        ltype = parents[name][0] if parents.get(name) else m.entry_type
        entries.append(LexEntry(name, tuple(f.lower() for f in forms), fs,
                                ltype, backbone_category(fs, m.cat_path),
                                _predicates(fs, m.sem_path)))

    lexrules = []
    for name in _leaf_subtypes(lat, m.lexrule_type, order):
        fs = proto(name)
        for p in (m.input_path, m.output_path):
            if fs.follow(p) is None:
                raise GrammarError(f"lexical rule {name}: missing path "
                                   + ".".join(p))
        lexrules.append(LexRule(name, fs, m.input_path, m.output_path))
    return Grammar(lat, m, rules, entries, lexrules, digest)


def load_manifest(path):
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise GrammarError(f"cannot read manifest {path}: {e}") from None
    return Manifest.from_dict(data, path.parent)


def load_grammar_file(path):
    """Load a grammar from its manifest file."""
    m = load_manifest(path)
    base = Path(m.base_dir)
    h = hashlib.sha256(Path(path).read_bytes())
    defs = []
    for src in m.sources:
        p = base / src
        try:
            text = p.read_text()
        except OSError as e:
            raise GrammarError(f"cannot read source {p}: {e}") from None
        h.update(b"\0" + src.encode() + b"\0" + text.encode())
        defs.extend(dsl.parse_text(text, filename=str(p)))
    defs = dsl.expand_templates(defs)
    try:
        lat = lattice_from_definitions(defs)
    except LatticeError as e:
        raise GrammarError(str(e)) from None
    return load_grammar(defs, lat, m, h.hexdigest())


def toy_manifest():
    """Path of the grammar shipped with the package."""
    return Path(__file__).parent / "data" / "toy" / "grammar.toml"
