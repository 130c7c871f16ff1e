"""Front end for the type-description language.

Surface syntax (one definition per ``.``)::

    agr := [PERS: person, NUM: num].
    np := sign & [CAT: 'np, AGR: #a, HEAD: [AGR: #a]].
    sort sg < num.
    incompatible {a, b, c}.
    partition num {sg, pl}.
    pair(X, Y) := [FIRST: X, REST: [FIRST: Y]].

``~`` binds tighter than ``&``, which binds tighter than ``|``.
``%g(e1, ..., ek)`` is a named disjunction whose alternatives covary with
every other ``%g`` occurrence in the same definition.  Comments run from
``;`` to end of line.  The token stream is parsed by a Lark LALR(1)
table so the grammar is checked for determinism when the module loads.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedToken
from lark.lexer import Lexer

from .errors import LexicalError, SyntaxError_, TemplateError

KEYWORDS = {"sort": "SORT", "incompatible": "INCOMPATIBLE",
            "partition": "PARTITION"}

# functional constraints; calls to these survive template expansion
FUNCTION_NAMES = frozenset({"concat", "add", "eq"})

_PUNCT = {
    ":=": "DEFINE", ":": "COLON", "[": "LBRACKET", "]": "RBRACKET",
    "(": "LPAREN", ")": "RPAREN", "{": "LBRACE", "}": "RBRACE",
    ",": "COMMA", ".": "DOT", "&": "AMP", "|": "BAR", "~": "TILDE",
    "#": "HASH", "%": "PERCENT", "<": "LT",
}

_IDENT = re.compile(r"[A-Za-z_*][A-Za-z0-9_*+\-]*")
_NUMBER = re.compile(r"\d+(?:\.\d+)?")
_SPACE = re.compile(r"\s+")


# -- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class Conj:
    items: tuple


@dataclass(frozen=True)
class Disj:
    items: tuple


@dataclass(frozen=True)
class DistDisj:
    group: str
    alts: tuple


@dataclass(frozen=True)
class Neg:
    expr: object


@dataclass(frozen=True)
class Avm:
    pairs: tuple  # ((feature, expr), ...) in source order


@dataclass(frozen=True)
class Coref:
    tag: str


@dataclass(frozen=True)
class Atom:
    value: object  # str symbol or number


@dataclass(frozen=True)
class TypeRef:
    name: str


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Definition:
    name: str
    kind: str  # avm-type | sort-type | template | incompatibility-decl | partition-decl
    parents: tuple = ()
    body: object = None
    params: tuple = ()
    loc: tuple = field(default=None, compare=False)


# -- tokenizer -----------------------------------------------------------


def tokenize(text):
    """Split ``text`` into Lark tokens carrying 1-based line/col."""
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        col = pos - line_start + 1
        if ch == ";":
            end = text.find("\n", pos)
            pos = n if end < 0 else end
            continue
        if ch.isspace():
            m = _SPACE.match(text, pos)
            chunk = m.group()
            nl = chunk.count("\n")
            if nl:
                line += nl
                line_start = pos + chunk.rindex("\n") + 1
            pos = m.end()
            continue
        if ch == "'":
            m = _IDENT.match(text, pos + 1) or _NUMBER.match(text, pos + 1)
            if not m:
                raise LexicalError("quote must be followed by a symbol",
                                   line, col)
            tokens.append(Token("SYMBOL", m.group(), start_pos=pos,
                                line=line, column=col))
            pos = m.end()
            continue
        if ch.isdigit():
            m = _NUMBER.match(text, pos)
            tokens.append(Token("NUMBER", m.group(), start_pos=pos,
                                line=line, column=col))
            pos = m.end()
            continue
        m = _IDENT.match(text, pos)
        if m:
            word = m.group()
            kind = KEYWORDS.get(word, "IDENT")
            if kind == "IDENT":
                k = m.end()
                while k < n and text[k] in " \t":
                    k += 1
                if k < n and text[k] == ":" and text[k + 1:k + 2] != "=":
                    kind = "FEAT"
            tokens.append(Token(kind, word, start_pos=pos, line=line,
                                column=col))
            pos = m.end()
            continue
        two = text[pos:pos + 2]
        if two in _PUNCT:
            tokens.append(Token(_PUNCT[two], two, start_pos=pos, line=line,
                                column=col))
            pos += 2
            continue
        if ch in _PUNCT:
            tokens.append(Token(_PUNCT[ch], ch, start_pos=pos, line=line,
                                column=col))
            pos += 1
            continue
        raise LexicalError(f"illegal character {ch!r}", line, col)
    return tokens


# -- parser --------------------------------------------------------------

_GRAMMAR = r"""
start: definition*

definition: IDENT params? DEFINE expr DOT                      -> typedef
          | SORT IDENT LT idlist DOT                           -> sortdef
          | INCOMPATIBLE LBRACE IDENT COMMA idlist RBRACE DOT  -> incompat
          | PARTITION IDENT LBRACE idlist RBRACE DOT           -> partition

params: LPAREN idlist RPAREN
idlist: IDENT (COMMA IDENT)*

expr: term (BAR term)*
term: factor (AMP factor)*
factor: TILDE factor                              -> neg
      | IDENT                                     -> typeref
      | SYMBOL                                    -> symbol
      | NUMBER                                    -> number
      | HASH tag                                  -> coref
      | PERCENT IDENT LPAREN exprlist RPAREN      -> distdisj
      | LBRACKET featlist? RBRACKET               -> avm
      | IDENT LPAREN exprlist RPAREN              -> call
      | LPAREN expr RPAREN                        -> paren
tag: IDENT | NUMBER
exprlist: expr (COMMA expr)*
featlist: featval (COMMA featval)*
featval: FEAT COLON expr

%declare IDENT FEAT SYMBOL NUMBER DEFINE COLON LBRACKET RBRACKET LPAREN RPAREN LBRACE RBRACE COMMA DOT AMP BAR TILDE HASH PERCENT LT SORT INCOMPATIBLE PARTITION
"""

_EXPR_START = {"TILDE", "IDENT", "SYMBOL", "NUMBER", "HASH", "PERCENT",
               "LBRACKET", "LPAREN"}


class _TokenFeed(Lexer):
    def __init__(self, conf):
        pass

    def lex(self, data, *args):
        yield from data


def _number(text):
    return float(text) if "." in text else int(text)


def _flatten(cls, items):
    out = []
    for it in items:
        if isinstance(it, cls):
            out.extend(it.items)
        else:
            out.append(it)
    return tuple(out)


@v_args(inline=True)
class _Build(Transformer):
    def start(self, *defs):
        return list(defs)

    def typedef(self, name, *rest):
        params = ()
        if isinstance(rest[0], tuple):
            params, rest = rest[0], rest[1:]
        body = rest[1]
        loc = (None, name.line, name.column)
        if params:
            dups = sorted({p for p in params if params.count(p) > 1})
            if dups:
                raise SyntaxError_(
                    f"duplicate template parameter {dups[0]!r}",
                    name.line, name.column)
            return Definition(str(name), "template", (), body, params, loc)
        parents, rest_body = split_parents(body)
        return Definition(str(name), "avm-type", parents, rest_body, (), loc)

    def sortdef(self, kw, name, lt, ids, dot):
        return Definition(str(name), "sort-type", ids, None, (),
                          (None, kw.line, kw.column))

    def incompat(self, kw, lb, first, comma, ids, rb, dot):
        return Definition("", "incompatibility-decl", (str(first),) + ids,
                          None, (), (None, kw.line, kw.column))

    def partition(self, kw, name, lb, ids, rb, dot):
        return Definition(str(name), "partition-decl", ids, None, (),
                          (None, kw.line, kw.column))

    def params(self, lp, ids, rp):
        return ids

    def idlist(self, *toks):
        return tuple(str(t) for t in toks if t.type == "IDENT")

    def expr(self, *items):
        terms = [t for t in items if not isinstance(t, Token)]
        return terms[0] if len(terms) == 1 else Disj(_flatten(Disj, terms))

    def term(self, *items):
        facs = [t for t in items if not isinstance(t, Token)]
        return facs[0] if len(facs) == 1 else Conj(_flatten(Conj, facs))

    def neg(self, tilde, f):
        return Neg(f)

    def typeref(self, tok):
        return TypeRef(str(tok))

    def symbol(self, tok):
        return Atom(str(tok))

    def number(self, tok):
        return Atom(_number(str(tok)))

    def coref(self, hash_, tag):
        return Coref(tag)

    def tag(self, tok):
        return str(tok)

    def distdisj(self, pct, name, lp, alts, rp):
        if len(alts) < 2:
            raise SyntaxError_(
                f"named disjunction %{name} needs at least two alternatives",
                name.line, name.column)
        return DistDisj(str(name), alts)

    def avm(self, lb, *rest):
        pairs = rest[0] if len(rest) == 2 else ()
        return Avm(pairs)

    def call(self, name, lp, args, rp):
        return Call(str(name), args)

    def paren(self, lp, e, rp):
        return e

    def exprlist(self, *items):
        return tuple(i for i in items if not isinstance(i, Token))

    def featlist(self, *items):
        return tuple(i for i in items if not isinstance(i, Token))

    def featval(self, feat, colon, e):
        return (str(feat), e)


_PARSER = Lark(_GRAMMAR, parser="lalr", lexer=_TokenFeed, transformer=_Build())


def split_parents(body):
    """Separate top-level type references (the supertypes) from the rest."""
    items = body.items if isinstance(body, Conj) else (body,)
    parents = tuple(i.name for i in items if isinstance(i, TypeRef))
    rest = tuple(i for i in items if not isinstance(i, TypeRef))
    if not rest:
        return parents, None
    return parents, rest[0] if len(rest) == 1 else Conj(rest)


def parse_definitions(tokens, filename=None):
    if not tokens:
        return []
    try:
        defs = _PARSER.parse(list(tokens))
    except UnexpectedToken as e:
        tok = e.token
        expected = {x for x in e.expected if not x.startswith("$")}
        if tok.type == "$END":
            raise SyntaxError_("unexpected end of input", expected=expected) \
                from None
        if expected and expected <= _EXPR_START | {"RBRACKET"} \
                and "IDENT" in expected:
            msg = "expected expression"
        else:
            msg = "expected one of " + ", ".join(sorted(expected))
        raise SyntaxError_(f"{msg}, got {tok.value!r}", tok.line, tok.column,
                           expected) from None
    except (UnexpectedEOF, UnexpectedCharacters) as e:  # pragma: no cover
        raise SyntaxError_(str(e)) from None
    except Exception as e:
        # lark wraps errors raised inside transformer callbacks
        inner = getattr(e, "orig_exc", None)
        if isinstance(inner, SyntaxError_):
            raise inner from None
        raise
    if filename is not None:
        defs = [Definition(d.name, d.kind, d.parents, d.body, d.params,
                           (filename,) + tuple(d.loc[1:])) for d in defs]
    return defs


def parse_text(text, filename=None):
    return parse_definitions(tokenize(text), filename)


# -- template expansion ----------------------------------------------------


def _calls(expr):
    if isinstance(expr, Call):
        yield expr
        for a in expr.args:
            yield from _calls(a)
    elif isinstance(expr, (Conj, Disj)):
        for i in expr.items:
            yield from _calls(i)
    elif isinstance(expr, DistDisj):
        for a in expr.alts:
            yield from _calls(a)
    elif isinstance(expr, Neg):
        yield from _calls(expr.expr)
    elif isinstance(expr, Avm):
        for _, v in expr.pairs:
            yield from _calls(v)


def map_expr(expr, fn):
    """Bottom-up rebuild of ``expr``; ``fn`` sees every rebuilt node."""
    if isinstance(expr, Conj):
        expr = Conj(tuple(map_expr(i, fn) for i in expr.items))
    elif isinstance(expr, Disj):
        expr = Disj(tuple(map_expr(i, fn) for i in expr.items))
    elif isinstance(expr, DistDisj):
        expr = DistDisj(expr.group, tuple(map_expr(a, fn) for a in expr.alts))
    elif isinstance(expr, Neg):
        expr = Neg(map_expr(expr.expr, fn))
    elif isinstance(expr, Avm):
        expr = Avm(tuple((f, map_expr(v, fn)) for f, v in expr.pairs))
    elif isinstance(expr, Call):
        expr = Call(expr.name, tuple(map_expr(a, fn) for a in expr.args))
    return fn(expr)


def _find_cycle(templates):
    graph = {name: sorted({c.name for c in _calls(d.body)
                           if c.name in templates})
             for name, d in templates.items()}
    state = {}

    def visit(node, path):
        state[node] = 1
        for nxt in graph[node]:
            if state.get(nxt) == 1:
                return path[path.index(nxt):] + [nxt]
            if nxt not in state:
                found = visit(nxt, path + [nxt])
                if found:
                    return found
        state[node] = 2
        return None

    for name in sorted(graph):
        if name not in state:
            cyc = visit(name, [name])
            if cyc:
                return cyc
    return None


def expand_templates(defs, functions=FUNCTION_NAMES):
    """Inline every template call; template definitions are dropped."""
    templates = {}
    for d in defs:
        if d.kind == "template":
            templates[d.name] = d
    cycle = _find_cycle(templates)
    if cycle:
        raise TemplateError("cyclic template reference: "
                            + " -> ".join(cycle))
    fresh = itertools.count(1)

    def expand(expr):
        def step(node):
            if not isinstance(node, Call):
                return node
            if node.name in templates:
                t = templates[node.name]
                if len(node.args) != len(t.params):
                    raise TemplateError(
                        f"template {node.name!r} expects {len(t.params)} "
                        f"argument(s), got {len(node.args)}")
                return instantiate(t, node.args)
            if node.name in functions:
                return node
            raise TemplateError(f"unknown template {node.name!r}")
        return map_expr(expr, step)

    def instantiate(t, args):
        n = next(fresh)
        binding = dict(zip(t.params, args))

        def subst(node):
            if isinstance(node, TypeRef) and node.name in binding:
                return binding[node.name]
            if isinstance(node, Coref):
                return Coref(f"_t{n}_{node.tag}")
            if isinstance(node, DistDisj):
                return DistDisj(f"_t{n}_{node.group}", node.alts)
            return node
        # substitute params after renaming so argument tags stay the caller's
        renamed = map_expr(t.body, lambda nd: subst(nd)
                           if not isinstance(nd, TypeRef) else nd)
        body = map_expr(renamed, lambda nd: binding.get(nd.name, nd)
                        if isinstance(nd, TypeRef) else nd)
        return expand(body)

    out = []
    for d in defs:
        if d.kind == "template":
            continue
        if d.body is None:
            out.append(d)
            continue
        body = expand(d.body)
        parents, rest = d.parents, body
        if d.kind == "avm-type":
            extra, rest = split_parents(body)
            parents = d.parents + tuple(p for p in extra
                                        if p not in d.parents)
        out.append(Definition(d.name, d.kind, parents, rest, d.params, d.loc))
    return out


# -- rendering ---------------------------------------------------------------


def format_expr(expr, prec=0):
    """Surface syntax for ``expr``; ``prec`` is the binding context."""
    if isinstance(expr, Disj):
        s = " | ".join(format_expr(i, 1) for i in expr.items)
        return f"({s})" if prec > 0 else s
    if isinstance(expr, Conj):
        s = " & ".join(format_expr(i, 2) for i in expr.items)
        return f"({s})" if prec > 1 else s
    if isinstance(expr, Neg):
        return "~" + format_expr(expr.expr, 3)
    if isinstance(expr, TypeRef):
        return expr.name
    if isinstance(expr, Atom):
        if isinstance(expr.value, str):
            return "'" + expr.value
        return str(expr.value)
    if isinstance(expr, Coref):
        return "#" + expr.tag
    if isinstance(expr, DistDisj):
        return f"%{expr.group}(" + ", ".join(format_expr(a) for a in expr.alts) + ")"
    if isinstance(expr, Call):
        return f"{expr.name}(" + ", ".join(format_expr(a) for a in expr.args) + ")"
    if isinstance(expr, Avm):
        return "[" + ", ".join(f"{f}: {format_expr(v)}"
                               for f, v in expr.pairs) + "]"
    raise TypeError(f"not an expression: {expr!r}")


def format_definition(d):
    if d.kind == "sort-type":
        return f"sort {d.name} < {', '.join(d.parents)}."
    if d.kind == "incompatibility-decl":
        return "incompatible {" + ", ".join(d.parents) + "}."
    if d.kind == "partition-decl":
        return f"partition {d.name} {{" + ", ".join(d.parents) + "}."
    head = d.name
    if d.kind == "template":
        head += "(" + ", ".join(d.params) + ")"
        return f"{head} := {format_expr(d.body)}."
    parts = list(d.parents)
    if d.body is not None:
        body = d.body
        if isinstance(body, Conj) and parts:
            parts.extend(format_expr(i, 2) for i in body.items)
        else:
            parts.append(format_expr(body, 2 if parts else 0))
    if not parts:
        parts = ["[]"]
    return f"{head} := {' & '.join(parts)}."


def parse_expression(text):
    """Parse a bare description such as ``[F: a] & %d(x, y)``."""
    d = parse_text(f"_expr := {text}.")[0]
    items = tuple(TypeRef(p) for p in d.parents)
    if d.body is not None:
        items += d.body.items if isinstance(d.body, Conj) else (d.body,)
    if not items:
        return Avm(())
    return items[0] if len(items) == 1 else Conj(items)
