"""Explanation-based learning of parse templates.

A template is a derivation whose lexical leaves were replaced by the
prototypes of their lexical types and whose unifications were replayed:
the result keeps every daughter level (nothing is projected away), so a
new input with the same sequence of lexical types is analysed by
unifying its actual entries into the leaf paths, without any rule
invocation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from . import fs as F
from .errors import StoreError
from .expand import expander
from .harness import deserialize, serialize
from .parse import Parser, tree_string

STORE_HEADER = "featgram-templates 1"


@dataclass(frozen=True)
class Template:
    id: str
    category: str
    signature: tuple  # lexical type names, one per leaf
    skeleton: tuple  # (rule, (child, ...)); leaves are slot indices
    fs: object  # generalized, with all daughter levels in place
    slots: tuple  # one path per signature position

    @property
    def skeleton_text(self):
        return _skeleton_text(self.skeleton)

    def mother(self, grammar):
        return _project(grammar, self.fs)


def _project(grammar, fs):
    m = grammar.manifest
    return F.restrict(fs, tuple(m.daughter_features) + (m.key_feature,))


def _skeleton_text(sk):
    if isinstance(sk, int):
        return f"${sk}"
    name, kids = sk
    return f"{name}({','.join(_skeleton_text(k) for k in kids)})"


def _parse_skeleton(text):
    pos = 0

    def node():
        nonlocal pos
        if text[pos] == "$":
            end = pos + 1
            while end < len(text) and text[end].isdigit():
                end += 1
            val = int(text[pos + 1:end])
            pos = end
            return val
        end = text.index("(", pos)
        name = text[pos:end]
        pos = end + 1
        kids = [node()]
        while text[pos] == ",":
            pos += 1
            kids.append(node())
        if text[pos] != ")":
            raise StoreError(f"bad skeleton {text!r}")
        pos += 1
        return (name, tuple(kids))

    try:
        sk = node()
    except (ValueError, IndexError):
        raise StoreError(f"bad skeleton {text!r}") from None
    if pos != len(text):
        raise StoreError(f"bad skeleton {text!r}")
    return sk


def _template_id(signature, skeleton):
    h = hashlib.sha256((" ".join(signature) + "|" +
                        _skeleton_text(skeleton)).encode())
    return h.hexdigest()[:12]


# -- generalization ---------------------------------------------------------


def _leaf_prototype(grammar, entry):
    """Prototype of the entry's lexical type, pushed through the same
    lexical rules."""
    base = entry.lexical_type
    for _ in entry.lexrules:
        base = base[base.index("(") + 1:-1]
    fs = expander(grammar.lattice).prototype(grammar.lattice.id(base)).fs
    for name in entry.lexrules:
        r = next(r for r in grammar.lexrules if r.name == name)
        inst = F.unify_at(r.fs, r.input_path, fs)
        fs = F.extract_subterm(inst, r.output_path) if inst else None
        if fs is None:
            return None
    return fs


def generalize(grammar, deriv):
    """Template for a derivation (nested ``(rule, kids)`` with entry leaves)."""
    leaves = []

    def walk(d):
        if not isinstance(d, tuple):
            leaves.append(d)
            fs = _leaf_prototype(grammar, d)
            return fs, len(leaves) - 1, [()]
        name, kids = d
        r = grammar.rule(name)
        fs = r.fs
        sks, paths = [], []
        for path, k in zip(r.daughters, kids):
            kfs, ksk, kpaths = walk(k)
            if kfs is None or fs is None:
                fs = None
                sks.append(ksk)
                continue
            fs = F.unify_at(fs, path, kfs)
            sks.append(ksk)
            paths += [path + p for p in kpaths]
        return fs, (name, tuple(sks)), paths

    fs, sk, paths = walk(deriv)
    if fs is None or not isinstance(sk, tuple):
        return None
    sig = tuple(e.lexical_type for e in leaves)
    cat = grammar.category(_project(grammar, fs))
    return Template(_template_id(sig, sk), cat, sig, sk, fs, tuple(paths))


def _constituents(deriv):
    """Every rule node of a derivation, outermost first."""
    out = []
    if isinstance(deriv, tuple):
        out.append(deriv)
        for k in deriv[1]:
            out.extend(_constituents(k))
    return out


def _leaf_count(deriv):
    if isinstance(deriv, tuple):
        return sum(_leaf_count(k) for k in deriv[1])
    return 1


# -- matching -----------------------------------------------------------------


@dataclass
class Match:
    template: Template
    entries: tuple
    grammar: object

    def instantiate(self):
        fs = self.template.fs
        for path, e in zip(self.template.slots, self.entries):
            fs = F.unify_at(fs, path, e.fs)
            if fs is None:
                return None
        return _project(self.grammar, fs)

    @property
    def deriv(self):
        def fill(sk):
            if isinstance(sk, int):
                return self.entries[sk]
            return (sk[0], tuple(fill(k) for k in sk[1]))
        return fill(self.template.skeleton)

    @property
    def tree(self):
        return tree_string(self.deriv)


class TemplateStore:
    def __init__(self, grammar, templates=()):
        self.grammar = grammar
        self._by_key = {}
        self._trie = {}
        for t in templates:
            self.add(t)

    def __len__(self):
        return len(self._by_key)

    def __iter__(self):
        return iter(sorted(self._by_key.values(),
                           key=lambda t: (t.signature, t.skeleton_text)))

    def add(self, t):
        key = (t.signature, t.skeleton_text)
        if key in self._by_key:
            return False
        self._by_key[key] = t
        node = self._trie
        for s in t.signature:
            node = node.setdefault(s, {})
        node.setdefault(None, []).append(t)
        return True

    def match(self, tokens, span, lexical=None):
        """Templates whose signature some covering of ``span`` matches."""
        i, j = span
        if lexical is None:
            lexical = {}
            for k in range(len(tokens)):
                for e in self.grammar.lookup(tokens, k):
                    lexical.setdefault(k, []).extend(
                        self.grammar.apply_lex_rules(e))
        out = []

        def walk(pos, node, chosen):
            if pos == j:
                for t in node.get(None, ()):
                    out.append(Match(t, tuple(chosen), self.grammar))
                return
            for e in lexical.get(pos, ()):
                nxt = node.get(e.lexical_type)
                if nxt is not None and pos + e.span <= j:
                    walk(pos + e.span, nxt, chosen + [e])

        walk(i, self._trie, [])
        out.sort(key=lambda m: (m.template.id, m.tree))
        return out

    # -- persistence

    def to_text(self):
        body = []
        for t in self:
            body.append(f"template {t.id}\t{t.category}\t"
                        f"{' '.join(t.signature)}\t{t.skeleton_text}")
            for p in t.slots:
                body.append("slot " + (".".join(p) or "."))
            for ln in serialize(t.fs).splitlines():
                body.append("| " + ln)
            body.append("end")
        text = "\n".join(body) + ("\n" if body else "")
        digest = hashlib.sha256(text.encode()).hexdigest()
        return (f"{STORE_HEADER}\ngrammar {self.grammar.digest}\n"
                f"checksum {digest}\n" + text)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text, grammar):
        lines = text.split("\n")
        if len(lines) < 3 or lines[0] != STORE_HEADER:
            raise StoreError("not a template store or unsupported version")
        if lines[1] != f"grammar {grammar.digest}":
            raise StoreError("template store was trained on another grammar")
        if not lines[2].startswith("checksum "):
            raise StoreError("missing checksum")
        body = "\n".join(lines[3:])
        if hashlib.sha256(body.encode()).hexdigest() != lines[2][9:]:
            raise StoreError("checksum mismatch: template store is corrupted")
        store = cls(grammar)
        cur, slots, fs_lines = None, [], []
        for ln in lines[3:]:
            if ln.startswith("template "):
                cur = ln[9:].split("\t")
                slots, fs_lines = [], []
            elif ln.startswith("slot "):
                p = ln[5:]
                slots.append(() if p == "." else tuple(p.split(".")))
            elif ln.startswith("| "):
                fs_lines.append(ln[2:])
            elif ln == "end":
                if cur is None or len(cur) != 4:
                    raise StoreError("malformed template record")
                tid, cat, sig, sk = cur
                fs = deserialize("\n".join(fs_lines) + "\n", grammar.lattice)
                store.add(Template(tid, cat, tuple(sig.split()),
                                   _parse_skeleton(sk), fs, tuple(slots)))
                cur = None
            elif ln.strip():
                raise StoreError(f"unexpected line {ln!r}")
        return store

    @classmethod
    def load(cls, path, grammar):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise StoreError(f"cannot read {path}: {e}") from None
        return cls.from_text(text, grammar)


# -- training -----------------------------------------------------------------


def templates_for(grammar, deriv):
    """Sentential template plus one per constituent with >= 2 leaves."""
    out = []
    for c in _constituents(deriv):
        if _leaf_count(c) >= 2:
            t = generalize(grammar, c)
            if t is not None:
                out.append(t)
    return out


def train(tokens, grammar, parser=None, store=None):
    """Parse ``tokens`` and add templates for every reading to ``store``.

    Returns ``(store, new_templates)``; an unparsable sentence adds
    nothing.
    """
    parser = parser or Parser(grammar)
    store = store if store is not None else TemplateStore(grammar)
    res = parser.parse(tokens)
    new = []
    for r in res.readings:
        for t in templates_for(grammar, r.deriv):
            if store.add(t):
                new.append(t)
    return store, new
