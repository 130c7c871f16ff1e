"""Command-line front end: ``featgram [--grammar M] <command> ...``.

Exit codes: 0 success, 1 user error, 2 regression against a baseline.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dsl, fs as F
from .ebl import TemplateStore, train
from .errors import FeatgramError
from .expand import expander
from .gen import Generator, semantics
from .grammar import load_grammar_file, toy_manifest
from .harness import (RenderOptions, baseline_text, load_suite,
                      parse_baseline, render_fs, run_suite)
from .parse import STRATEGY_NAMES, Parser, rule_filter, stats_report
from .pref import PreferenceWeights, best_contexts

GRAMMAR_ENV = "FEATGRAM_GRAMMAR"


class UsageError(Exception):
    pass


class _ArgParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for regressions
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    p = _ArgParser(prog="featgram",
                   description="Typed feature grammar engine.")
    p.add_argument("--grammar", metavar="MANIFEST",
                   help=f"grammar manifest (default: ${GRAMMAR_ENV} or the "
                        "shipped toy grammar)")
    sub = p.add_subparsers(dest="command", metavar="command",
                           parser_class=_ArgParser)

    c = sub.add_parser("compile", help="load and check a grammar")
    c.add_argument("--filter-out", metavar="FILE",
                   help="write the rule filter table")
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("show-type", help="describe a type")
    c.add_argument("name")
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("expand", help="print a type's expanded prototype")
    c.add_argument("name")
    c.add_argument("--depth", type=int, default=None,
                   help="unfolding budget for recursive types")
    _render_args(c)
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("parse", help="parse a sentence")
    c.add_argument("sentence")
    c.add_argument("--strategy", default="breadth-first",
                   choices=STRATEGY_NAMES)
    c.add_argument("--no-filter", action="store_true")
    c.add_argument("--stats", action="store_true")
    c.add_argument("--chart", action="store_true")
    c.add_argument("--fs", action="store_true",
                   help="render each reading's structure")
    c.add_argument("--templates", metavar="FILE")
    c.add_argument("--templates-only", action="store_true")
    c.add_argument("--prefer", metavar="WEIGHTS")
    c.add_argument("--best", type=int, default=1, metavar="K")
    c.add_argument("--max-edges", type=int, default=None)
    _render_args(c)
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("generate", help="realize a semantic term")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--sem", metavar="TERM")
    src.add_argument("--from-sentence", metavar="SENTENCE")
    c.add_argument("--derivations", action="store_true")
    c.add_argument("--depth", type=int, default=None)
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("learn", help="train parse templates")
    c.add_argument("--corpus", required=True,
                   help="suite file; grammatical items are used")
    c.add_argument("--tag", help="only items carrying this tag")
    c.add_argument("--out", required=True)
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("test", help="run a diagnostic suite")
    c.add_argument("--suite", default=None,
                   help="suite file (default: the grammar's corpus.dito)")
    c.add_argument("--baseline", help="fail with exit 2 on regressions")
    c.add_argument("--write-baseline", metavar="FILE")
    c.add_argument("--strategy", default="breadth-first",
                   choices=STRATEGY_NAMES)
    c.add_argument("--no-filter", action="store_true")
    c.add_argument("--templates", metavar="FILE")
    c.add_argument("--workers", type=int, default=4)
    c.add_argument("--stats", action="store_true",
                   help="include timing")
    c.add_argument("--json", action="store_true")

    c = sub.add_parser("dnf", help="disjunctive normal form of a description")
    c.add_argument("description", nargs="?",
                   help="description text (or use --file)")
    c.add_argument("--file")
    _render_args(c)
    c.add_argument("--json", action="store_true")
    return p


def _render_args(c):
    c.add_argument("--hide", action="append", default=[], metavar="FEAT")
    c.add_argument("--max-depth", type=int, default=50)
    c.add_argument("--alphabetic", action="store_true")
    c.add_argument("--no-contexts", action="store_true")


def _render_options(a):
    return RenderOptions(frozenset(a.hide), a.max_depth,
                         "alphabetic" if a.alphabetic else "declaration",
                         not a.no_contexts)


def _manifest(a):
    return a.grammar or os.environ.get(GRAMMAR_ENV) or str(toy_manifest())


def _emit(out, obj):
    out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------


def cmd_compile(a, g, out):
    table = rule_filter(g)
    if a.filter_out:
        Path(a.filter_out).write_text(table.to_text())
    lat = g.lattice
    info = {"digest": g.digest, "types": len(lat.entries),
            "rules": [r.name for r in g.rules],
            "entries": len(g.entries), "lexical_rules": [r.name for r in g.lexrules],
            "items": len(g.items()),
            "filter_pairs": len(table.table),
            "filter_blocked": sum(not ok for ok in table.table.values())}
    if a.json:
        _emit(out, info)
        return 0
    out.write(f"grammar {g.digest}\n"
              f"types          {info['types']}\n"
              f"rules          {len(g.rules)}\n"
              f"entries        {info['entries']}\n"
              f"lexical rules  {len(g.lexrules)}\n"
              f"lexical items  {info['items']}\n"
              f"filter pairs   {info['filter_pairs']}"
              f" ({info['filter_blocked']} blocked)\n")
    return 0


def cmd_show_type(a, g, out):
    try:
        d = g.lattice.describe(a.name)
    except (KeyError, FeatgramError):
        raise UsageError(f"unknown type {a.name!r}") from None
    if a.json:
        _emit(out, d)
        return 0
    out.write(f"name      {d['name']}\n"
              f"kind      {d['kind']}\n"
              f"parents   {' '.join(d['parents']) or '-'}\n"
              f"children  {' '.join(d['children']) or '-'}\n"
              f"ancestors {d['ancestors']}\n")
    return 0


def cmd_expand(a, g, out):
    lat = g.lattice
    try:
        tid = lat.id(a.name)
    except (KeyError, FeatgramError):
        raise UsageError(f"unknown type {a.name!r}") from None
    ex = expander(lat)
    x, verdict = ex.expand_fully(F.of_type(lat, tid), a.depth)
    text = render_fs(x, _render_options(a)) if x is not None else ""
    if a.json:
        _emit(out, {"type": a.name, "verdict": verdict, "fs": text})
        return 0
    out.write(f"verdict {verdict}\n{text}")
    return 0


def _load_store(path, g):
    return TemplateStore.load(path, g) if path else None


def cmd_parse(a, g, out):
    store = _load_store(a.templates, g)
    if a.templates_only and store is None:
        raise UsageError("--templates-only needs --templates")
    kw = {}
    if a.max_edges is not None:
        kw["max_edges"] = a.max_edges
    parser = Parser(g, a.strategy, use_filter=not a.no_filter,
                    templates=store, templates_only=a.templates_only, **kw)
    res = parser.parse(a.sentence)
    weights = PreferenceWeights.load(a.prefer) if a.prefer else None
    opts = _render_options(a)
    readings = []
    for r in res.readings:
        item = {"tree": r.tree, "template": r.template}
        if a.fs:
            item["fs"] = render_fs(r.fs, opts)
        if weights is not None:
            item["best"] = [
                {"score": s, "context": {str(k): v for k, v in c.items()}}
                for s, c in best_contexts(r.fs, weights, a.best)]
        readings.append(item)
    if a.json:
        obj = {"tokens": list(res.tokens), "readings": readings,
               "flags": res.flags}
        if a.stats:
            obj["stats"] = _stats_dict(res.stats)
        if a.chart:
            obj["chart"] = res.chart_text().splitlines()
        _emit(out, obj)
        return 0
    out.write(f"sentence  {' '.join(res.tokens)}\n"
              f"readings  {len(readings)}\n")
    if res.flags:
        out.write(f"flags     {' '.join(res.flags)}\n")
    for k, item in enumerate(readings, 1):
        mark = "  [template]" if item["template"] else ""
        out.write(f"\nreading {k}: {item['tree']}{mark}\n")
        for b in item.get("best", ()):
            ctx = " ".join(f"{g_}={i}" for g_, i in sorted(
                b["context"].items(), key=lambda kv: int(kv[0])))
            out.write(f"  score {b['score']:g}  {ctx or '(no choices)'}\n")
        if "fs" in item:
            out.write(item["fs"])
    if a.chart:
        out.write("\nchart\n" + res.chart_text())
    if a.stats:
        out.write("\n" + stats_report(res.stats, timing=True))
    return 0


def _stats_dict(s):
    return {"tasks_created": s.tasks_created,
            "tasks_executed": s.tasks_executed,
            "tasks_filtered": s.tasks_filtered,
            "unifications": s.unifications,
            "unification_failures": s.unification_failures,
            "edges_passive": s.edges_passive,
            "edges_active": s.edges_active,
            "template_hits": s.template_hits,
            "rule_attempts": dict(sorted(s.rule_attempts.items())),
            "rule_successes": dict(sorted(s.rule_successes.items()))}


def cmd_generate(a, g, out):
    gen = Generator(g) if a.depth is None else Generator(g, a.depth)
    if a.sem:
        terms = [a.sem]
    else:
        res = Parser(g).parse(a.from_sentence)
        if not res.readings:
            raise UsageError(f"no parse for {a.from_sentence!r}")
        seen = []
        for r in res.readings:
            for t in semantics(r.fs, g.manifest.sem_path):
                if str(t) not in seen:
                    seen.append(str(t))
        terms = seen
    results = []
    for t in terms:
        r = gen.generate(t)
        results.append({
            "sem": t, "strings": r.strings, "partial": r.partial,
            "derivations": [{"string": x.text, "tree": x.tree}
                            for x in r.realizations]})
    if a.json:
        _emit(out, results)
        return 0
    for k, r in enumerate(results):
        if k:
            out.write("\n")
        out.write(f"sem  {r['sem']}\n")
        for s in r["strings"]:
            out.write(f"  {s}\n")
        if not r["strings"]:
            out.write("  (no realization)\n")
        if r["partial"]:
            out.write("  (depth limit reached; output may be partial)\n")
        if a.derivations:
            for d in r["derivations"]:
                out.write(f"    {d['string']}  <=  {d['tree']}\n")
    return 0


def cmd_learn(a, g, out, err):
    items = [i for i in load_suite(a.corpus) if i.grammatical
             and (a.tag is None or a.tag in i.tags)]
    store = TemplateStore(g)
    parser = Parser(g)
    skipped = []
    for it in items:
        _, new = train(it.sentence, g, parser, store)
        if not parser.parse(it.sentence).readings:
            skipped.append(it.id)
            err.write(f"skipping {it.id}: no parse\n")
    store.save(a.out)
    if a.json:
        _emit(out, {"sentences": len(items), "skipped": skipped,
                    "templates": len(store)})
    else:
        out.write(f"trained on {len(items) - len(skipped)} sentences, "
                  f"{len(store)} templates -> {a.out}\n")
    return 0


def cmd_test(a, g, out):
    suite = a.suite or str(Path(g.manifest.base_dir) / "corpus.dito")
    items = load_suite(suite)
    store = _load_store(a.templates, g)
    parser = Parser(g, a.strategy, use_filter=not a.no_filter,
                    templates=store)
    report = run_suite(items, g, parser, workers=a.workers)
    regressions = []
    if a.baseline:
        try:
            base = parse_baseline(Path(a.baseline).read_text())
        except OSError as e:
            raise UsageError(f"cannot read baseline: {e}") from None
        regressions = report.regressions(base)
    if a.write_baseline:
        Path(a.write_baseline).write_text(baseline_text(report))
    if a.json:
        obj = report.to_dict()
        obj["regressions"] = regressions
        if a.stats:
            obj["stats"] = _stats_dict(report.stats)
        _emit(out, obj)
    else:
        out.write(report.text(timing=a.stats))
        if a.baseline:
            out.write(f"\nregressions {len(regressions)}"
                      + (": " + " ".join(regressions) if regressions else "")
                      + "\n")
    return 2 if regressions else 0


def cmd_dnf(a, g, out):
    if a.file:
        text = Path(a.file).read_text()
    elif a.description is not None:
        text = a.description
    else:
        raise UsageError("dnf needs a description or --file")
    x = F.build(dsl.parse_expression(text.strip().rstrip(".")), g.lattice)
    alts = F.dnf(x)
    opts = _render_options(a)
    blocks = [render_fs(y, opts) for y in alts]
    if a.json:
        _emit(out, {"alternatives": blocks})
        return 0
    if not blocks:
        out.write("inconsistent\n")
    for k, b in enumerate(blocks, 1):
        if k > 1:
            out.write("\n")
        out.write(f"alternative {k}\n{b}")
    return 0


COMMANDS = {"compile": cmd_compile, "show-type": cmd_show_type,
            "expand": cmd_expand, "parse": cmd_parse,
            "generate": cmd_generate, "test": cmd_test, "dnf": cmd_dnf}


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    p = build_parser()
    try:
        a = p.parse_args(argv)
        if a.command is None:
            p.print_usage(err)
            return 1
        g = load_grammar_file(_manifest(a))
        if a.command == "learn":
            return cmd_learn(a, g, out, err)
        return COMMANDS[a.command](a, g, out)
    except UsageError as e:
        err.write(f"{e}\n")
        return 1
    except FeatgramError as e:
        err.write(f"featgram: {e}\n")
        return 1
    except OSError as e:
        err.write(f"featgram: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
