"""Diagnostic suites, structure rendering and canonical serialization."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import fs as F
from .errors import SerializationError, SuiteError
from .lattice import BOTTOM
from .parse import Parser, Stats, stats_report

SERIAL_HEADER = "fs 1"
DEFAULT_WORKERS = 4


# -- serialization ------------------------------------------------------------


def _order_nodes(fs):
    """Nodes by DFS over sorted base features; nodes hanging off
    constraints follow, taking constraints in an order keyed on the
    numbers already assigned, so the result survives renumbering."""
    order = {}
    gmap = {g: k for k, g in enumerate(sorted(fs.groups))}
    unseen = len(fs.types) + 1

    def visit(n):
        stack = [n]
        while stack:
            x = stack.pop()
            if x in order:
                continue
            order[x] = len(order)
            d = fs.arcs.get(x, {})
            stack.extend(d[f] for f in sorted(d, reverse=True))

    def key(item):
        ctx, con = item
        mapped = F._map_con(con, lambda n: order.get(n, unseen))
        return (sorted((gmap[g], i) for g, i in ctx), repr(mapped))

    visit(fs.root)
    pending = list(fs.cons)
    while True:
        pending = [c for c in pending
                   if any(n not in order for n in F._nodes_of(c[1]))]
        if not pending:
            break
        _, con = min(pending, key=key)
        for n in F._nodes_of(con):
            visit(n)
    for n in sorted(fs.types):
        if n not in order:
            visit(n)
    return order


def _ctx_text(ctx):
    return ",".join(f"{g}={i}" for g, i in sorted(ctx)) or "-"


def serialize(fs):
    """Canonical line-oriented text for ``fs``."""
    if fs is None:
        raise SerializationError("cannot serialize a failed unification")
    lat = fs.lattice
    order = _order_nodes(fs)
    gmap = {g: k for k, g in enumerate(sorted(fs.groups))}
    lines = [SERIAL_HEADER]
    for n, k in sorted(order.items(), key=lambda x: x[1]):
        lines.append(f"node {k} {lat.name(fs.types[n])}")
    for n, k in sorted(order.items(), key=lambda x: x[1]):
        d = fs.arcs.get(n, {})
        for f in sorted(d):
            lines.append(f"arc {k} {f} {order[d[f]]}")
    for g in sorted(fs.groups):
        arity, live = fs.groups[g]
        lines.append(f"group {gmap[g]} {arity} "
                     + (",".join(map(str, sorted(live))) or "-"))
    cons = []
    for ctx, con in fs.cons:
        c = F._map_con(con, lambda x: order[x])
        ctx2 = frozenset((gmap[g], i) for g, i in ctx)
        k = c[0]
        if k == F.ARC:
            body = f"{c[1]} {c[2]} {c[3]}"
        elif k in (F.TYPE, F.NTYPE, F.EXP):
            body = f"{c[1]} {lat.name(c[2])}"
        elif k in (F.EQ, F.NEQ):
            body = f"{c[1]} {c[2]}"
        elif k == F.FUNC:
            body = f"{c[1]} {c[2]} " + (",".join(map(str, c[3])) or "-")
        else:
            body = ""
        cons.append(f"con {_ctx_text(ctx2)} {k} {body}".rstrip())
    lines.extend(sorted(cons))
    for n in sorted(order[x] for x in fs.blocked):
        lines.append(f"blocked {n}")
    for n, d in sorted((order[x], d) for x, d in fs.depth.items()
                       if x in order):
        lines.append(f"depth {n} {d}")
    lines.append(f"root {order[fs.root]}")
    return "\n".join(lines) + "\n"


def _type_id(lat, name, lineno):
    if name in lat.by_name:
        return lat.by_name[name]
    if name.startswith("'") or name[:1].isdigit() or name[:1] == "-":
        try:
            return lat.intern_atom(name if name.startswith("'")
                                   else float(name) if "." in name
                                   else int(name))
        except ValueError:
            pass
    if "&" in name:
        t = None
        for part in name.split("&"):
            p = _type_id(lat, part, lineno)
            t = p if t is None else lat.glb(t, p)
        if isinstance(t, int) and t != BOTTOM:
            return t
    raise SerializationError(f"unknown type {name!r}", lineno)


def deserialize(text, lattice):
    lines = text.splitlines()
    if not lines or lines[0].strip() != SERIAL_HEADER:
        raise SerializationError("missing header", 1)
    types, arcs, cons, groups, depth, blocked = {}, {}, [], {}, {}, set()
    root = None
    for no, ln in enumerate(lines[1:], 2):
        if not ln.strip():
            continue
        parts = ln.split()
        try:
            tag = parts[0]
            if tag == "node":
                types[int(parts[1])] = _type_id(lattice, parts[2], no)
            elif tag == "arc":
                arcs.setdefault(int(parts[1]), {})[parts[2]] = int(parts[3])
            elif tag == "group":
                live = frozenset() if parts[3] == "-" else frozenset(
                    int(x) for x in parts[3].split(","))
                groups[int(parts[1])] = (int(parts[2]), live)
            elif tag == "con":
                ctx = frozenset() if parts[1] == "-" else frozenset(
                    tuple(int(y) for y in x.split("="))
                    for x in parts[1].split(","))
                cons.append((ctx, _read_con(lattice, parts[2:], no)))
            elif tag == "blocked":
                blocked.add(int(parts[1]))
            elif tag == "depth":
                depth[int(parts[1])] = int(parts[2])
            elif tag == "root":
                root = int(parts[1])
            else:
                raise SerializationError(f"unknown record {tag!r}", no)
        except (IndexError, ValueError):
            raise SerializationError(f"malformed line {ln!r}", no) from None
    if root is None or root not in types:
        raise SerializationError("missing root", len(lines))
    for n, d in arcs.items():
        for m in [n, *d.values()]:
            if m not in types:
                raise SerializationError(f"dangling node {m}")
    return F.FeatureStructure(lattice, root, types, arcs, cons, groups, depth,
                              blocked)


def _read_con(lat, parts, no):
    k = parts[0]
    if k == F.ARC:
        return (k, int(parts[1]), parts[2], int(parts[3]))
    if k in (F.TYPE, F.NTYPE, F.EXP):
        return (k, int(parts[1]), _type_id(lat, parts[2], no))
    if k in (F.EQ, F.NEQ):
        return (k, int(parts[1]), int(parts[2]))
    if k == F.FUNC:
        args = () if parts[3] == "-" else tuple(int(x) for x in
                                                parts[3].split(","))
        return (k, int(parts[1]), parts[2], args)
    if k == F.FALSE:
        return (k,)
    raise SerializationError(f"unknown constraint kind {k!r}", no)


# -- rendering --------------------------------------------------------------


@dataclass
class RenderOptions:
    hidden: frozenset = frozenset()
    max_depth: int = 50
    feature_order: str = "declaration"  # or "alphabetic"
    show_contexts: bool = True


def render_fs(fs, options=None):
    """Indented rendering; shared nodes carry ``#n`` tags."""
    o = options or RenderOptions()
    lat = fs.lattice
    decl = lat.features

    def fkey(f):
        if o.feature_order == "alphabetic":
            return (0, f)
        return (decl.get(f, len(decl)), f)

    cond_arcs, cond_types, other = {}, {}, []
    for ctx, con in fs.cons:
        if con[0] == F.ARC:
            cond_arcs.setdefault(con[1], []).append((con[2], con[3], ctx))
        elif con[0] == F.TYPE:
            cond_types.setdefault(con[1], []).append((con[2], ctx))
        elif con[0] != F.EXP:
            other.append((ctx, con))
    incoming = {}
    for n, d in fs.arcs.items():
        for f, m in d.items():
            if f not in o.hidden:
                incoming[m] = incoming.get(m, 0) + 1
    for n, lst in cond_arcs.items():
        for f, m, _ in lst:
            incoming[m] = incoming.get(m, 0) + 1
    referenced = set()
    for _, con in other:
        referenced.update(F._nodes_of(con))
    tags = {}
    lines = []

    def ctxs(ctx):
        if not o.show_contexts or not ctx:
            return ""
        return "{" + ",".join(f"{g}={i}" for g, i in sorted(ctx)) + "}"

    def head(n):
        shared = incoming.get(n, 0) > 1 or n in referenced or n == fs.root \
            and incoming.get(n, 0) > 0
        label = lat.name(fs.types[n])
        if shared:
            tags[n] = len(tags) + 1
            return f"#{tags[n]} {label}"
        return label

    def walk(n, indent, depth):
        kids = [(f, m, frozenset()) for f, m in fs.arcs.get(n, {}).items()]
        kids += cond_arcs.get(n, [])
        kids = [k for k in kids if k[0] not in o.hidden]
        kids.sort(key=lambda k: (fkey(k[0]), sorted(k[2])))
        pad = " " * indent
        for t, ctx in sorted(cond_types.get(n, ()), key=lambda x: sorted(x[1])):
            if o.show_contexts:
                lines.append(f"{pad}= {lat.name(t)}{ctxs(ctx)}")
        for f, m, ctx in kids:
            label = f"{pad}{f}{ctxs(ctx)}: "
            if m in tags:
                lines.append(f"{label}#{tags[m]}")
                continue
            line = label + head(m)
            if depth >= o.max_depth:
                more = fs.arcs.get(m) or cond_arcs.get(m) or cond_types.get(m)
                lines.append(line + (" ..." if more else ""))
                continue
            lines.append(line)
            walk(m, indent + 2, depth + 1)

    lines.append(head(fs.root))
    walk(fs.root, 2, 1)
    for ctx, con in sorted(other, key=lambda c: (sorted(c[0]), repr(c[1]))):
        args = []
        for x in con[1:]:
            if isinstance(x, int) and x in fs.types and con[0] != F.NTYPE \
                    or (con[0] == F.NTYPE and x == con[1]):
                args.append(f"#{tags[x]}" if x in tags
                            else lat.name(fs.types[x]))
            elif isinstance(x, tuple):
                args.append("(" + " ".join(f"#{tags.get(a, a)}" for a in x)
                            + ")")
            elif con[0] == F.NTYPE:
                args.append(lat.name(x))
            else:
                args.append(str(x))
        lines.append(f"! {con[0]} {' '.join(args)}{ctxs(ctx)}".rstrip())
    return "\n".join(lines) + "\n"


# -- diagnostic suites ------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticItem:
    id: str
    sentence: str
    grammatical: bool
    tags: tuple = ()
    expected: int | None = None


def parse_suite(text):
    """Items from ``id<TAB>+|-<TAB>sentence<TAB>tags<TAB>[expected]``."""
    items, ids = [], set()
    for no, raw in enumerate(text.splitlines(), 1):
        ln = raw.rstrip("\r\n")
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        parts = ln.split("\t")
        if len(parts) < 3 or len(parts) > 5:
            raise SuiteError("expected 3 to 5 tab-separated fields", no)
        parts += [""] * (5 - len(parts))
        iid, flag, sent, tags, exp = (p.strip() for p in parts)
        if not iid or iid in ids:
            raise SuiteError(f"missing or duplicate id {iid!r}", no)
        if flag not in ("+", "-"):
            raise SuiteError(f"flag must be + or -, got {flag!r}", no)
        if not sent:
            raise SuiteError("empty sentence", no)
        expected = None
        if exp:
            try:
                expected = int(exp)
            except ValueError:
                raise SuiteError(f"bad expected count {exp!r}", no) from None
            if expected < 0:
                raise SuiteError("expected count must be >= 0", no)
        ids.add(iid)
        tag_list = tuple(sorted({t.strip() for t in tags.split(",")
                                 if t.strip()}))
        items.append(DiagnosticItem(iid, sent, flag == "+", tag_list,
                                    expected))
    return items


def load_suite(path):
    with open(path, encoding="utf-8") as fh:
        return parse_suite(fh.read())


def verdict(grammatical, readings, expected=None):
    """(passed, note) for one item."""
    if grammatical:
        if readings < 1:
            return False, "no reading"
        if expected is not None and readings != expected:
            return False, f"delta {readings - expected:+d}"
        return True, ""
    if readings == 0:
        return True, ""
    return False, "overgenerates"


@dataclass
class ItemResult:
    item: DiagnosticItem
    readings: int
    passed: bool
    note: str = ""
    flags: tuple = ()


@dataclass
class Report:
    results: list
    stats: Stats = field(default_factory=Stats)

    @property
    def grammatical(self):
        return [r for r in self.results if r.item.grammatical]

    @property
    def ungrammatical(self):
        return [r for r in self.results if not r.item.grammatical]

    @property
    def coverage(self):
        g = self.grammatical
        return 100.0 * sum(r.passed for r in g) / len(g) if g else 0.0

    @property
    def overgeneration(self):
        u = self.ungrammatical
        return 100.0 * sum(not r.passed for r in u) / len(u) if u else 0.0

    def phenomena(self):
        table = {}
        for r in self.results:
            for t in r.item.tags or ("(none)",):
                n, p = table.get(t, (0, 0))
                table[t] = (n + 1, p + r.passed)
        return dict(sorted(table.items()))

    def regressions(self, baseline):
        """Ids that pass in ``baseline`` but fail now."""
        now = {r.item.id: r.passed for r in self.results}
        return sorted(i for i, ok in baseline.items() if ok and not now.get(i))

    def text(self, timing=False):
        g, u = self.grammatical, self.ungrammatical
        lines = [f"items {len(self.results)}  grammatical {len(g)}  "
                 f"ungrammatical {len(u)}", ""]
        lines.append(f"{'id':<8}{'flag':<6}{'readings':>9}{'expected':>10}  "
                     f"{'verdict':<8}sentence")
        for r in self.results:
            exp = "" if r.item.expected is None else str(r.item.expected)
            v = "pass" if r.passed else "FAIL"
            note = f"  [{r.note}]" if r.note else ""
            flags = f"  <{' '.join(r.flags)}>" if r.flags else ""
            lines.append(f"{r.item.id:<8}{'+' if r.item.grammatical else '-':<6}"
                         f"{r.readings:>9}{exp:>10}  {v:<8}{r.item.sentence}"
                         f"{note}{flags}")
        gp = sum(r.passed for r in g)
        uf = sum(not r.passed for r in u)
        lines += ["", f"coverage        {gp}/{len(g)} ({self.coverage:.1f}%)",
                  f"overgeneration  {uf}/{len(u)} ({self.overgeneration:.1f}%)",
                  "", f"{'phenomenon':<24}{'items':>6}{'pass':>6}"]
        for t, (n, p) in self.phenomena().items():
            lines.append(f"{t:<24}{n:>6}{p:>6}")
        lines += ["", stats_report(self.stats, timing=timing).rstrip("\n")]
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "items": [{"id": r.item.id, "sentence": r.item.sentence,
                       "grammatical": r.item.grammatical,
                       "tags": list(r.item.tags),
                       "expected": r.item.expected, "readings": r.readings,
                       "pass": r.passed, "note": r.note,
                       "flags": list(r.flags)} for r in self.results],
            "coverage": round(self.coverage, 3),
            "overgeneration": round(self.overgeneration, 3),
            "phenomena": {t: {"items": n, "pass": p}
                          for t, (n, p) in self.phenomena().items()},
        }


def run_suite(items, grammar, parser=None, workers=DEFAULT_WORKERS):
    """Parse every item (in parallel); results keep suite order."""
    parser = parser or Parser(grammar)

    def one(item):
        res = parser.parse(item.sentence)
        n = len(res.readings)
        ok, note = verdict(item.grammatical, n, item.expected)
        return ItemResult(item, n, ok, note, tuple(res.flags)), res.stats

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        done = list(pool.map(one, items))
    stats = Stats()
    for _, s in done:
        stats.merge(s)
    return Report([r for r, _ in done], stats)


def baseline_text(report):
    return "".join(f"{r.item.id}\t{'pass' if r.passed else 'fail'}\t"
                   f"{r.readings}\n" for r in report.results)


def parse_baseline(text):
    out = {}
    for no, ln in enumerate(text.splitlines(), 1):
        if not ln.strip() or ln.startswith("#"):
            continue
        parts = ln.split("\t")
        if len(parts) < 2 or parts[1] not in ("pass", "fail"):
            raise SuiteError("malformed baseline line", no)
        out[parts[0]] = parts[1] == "pass"
    return out
