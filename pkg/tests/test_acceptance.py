"""End-to-end acceptance checks.

Each test records one PASS/FAIL line, printed in the terminal summary
(see conftest.py), before asserting.
"""

import random
import subprocess
import sys
import time
from collections import Counter

from featgram import fs as F
from featgram.ebl import TemplateStore, train
from featgram.gen import generate, semantics
from featgram.grammar import lattice_from_text
from featgram.lattice import BOTTOM
from featgram.parse import STRATEGY_NAMES, Parser
from featgram.pref import best_contexts

import oracle
import randgen
from conftest import TYPES
from oracle_parser import OracleParser
from test_lattice import lattice_from_dag
from test_parse import reading_map
from test_pref import consistent_contexts, random_weights

RESULTS = []


def record(number, name, ok, detail):
    RESULTS.append(f"criterion {number} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def _alternatives(x):
    return Counter(oracle.fs_alternatives(x)) if x is not None else Counter()


def _cross(a, b):
    out = Counter()
    for xa in F.dnf(a):
        for xb in F.dnf(b):
            out.update(oracle.resolve(oracle.unify_graphs(
                oracle.graph_of_fs(xa), oracle.graph_of_fs(xb))))
    return out


def test_dnf_oracle():
    lat = lattice_from_text(TYPES)
    rng = random.Random(2024)
    cases, agree = 5000, 0
    t0 = time.perf_counter()
    for _ in range(cases):
        (_, a), (_, b) = randgen.sized_pair(rng, lat, F.build)
        agree += _alternatives(F.unify(a, b)) == _cross(a, b)
    took = time.perf_counter() - t0
    ok = agree == cases and took < 60
    assert record(1, "dnf oracle", ok,
                  f"{agree}/{cases} agree in {took:.1f}s (limit 60s)")


def _check_lattice(rng, n, kind):
    parents, pairs, kind = oracle.random_dag(rng, n, kind)
    lat = lattice_from_dag(parents, pairs, kind)
    ups = oracle.reach_up(parents)
    ids = {i: (lat.id(f"t{i}") if i else 0) for i in parents}
    back = {v: k for k, v in ids.items()}
    checked = bad = 0
    for a in parents:
        for b in parents:
            checked += 1
            ok = lat.subsumes(ids[a], ids[b]) == (a in ups[b])
            want = oracle.brute_glb(ups, pairs, kind, a, b)
            got = lat.glb(ids[a], ids[b])
            if want[0] == "type":
                ok = ok and got == ids[want[1]]
            elif want[0] == "bottom":
                ok = ok and got == BOTTOM
            elif want[0] == "disj":
                ok = ok and isinstance(got, tuple) and \
                    sorted(back[t] for t in got) == want[1]
            else:
                ok = ok and lat.entries[got].synthetic and \
                    lat.subsumes(ids[a], got) and lat.subsumes(ids[b], got)
            ok = ok and lat.lub(ids[a], ids[b]) == ids[oracle.brute_lub(ups, a, b)]
            bad += not ok
    return checked, bad


def test_lattice_oracle():
    rng = random.Random(99)
    checked = bad = 0
    t0 = time.perf_counter()
    for kind in ("sort", "avm"):
        for n in (50, 120, 200):
            c, b = _check_lattice(rng, n, kind)
            checked += c
            bad += b
    took = time.perf_counter() - t0
    ok = bad == 0 and took < 30
    assert record(2, "lattice oracle", ok,
                  f"{checked - bad}/{checked} pairs agree on DAGs up to 200 "
                  f"types in {took:.1f}s (limit 30s)")


def test_filter_and_strategy_transparency(toy, suite):
    on, off = Parser(toy), Parser(toy, use_filter=False)
    others = [Parser(toy, s) for s in STRATEGY_NAMES]
    same = cheaper_or_equal = fewer = 0
    grammatical = [i for i in suite if i.grammatical]
    for item in suite:
        a, b = on.parse(item.sentence), off.parse(item.sentence)
        keys = {frozenset(p.parse(item.sentence).reading_keys()) for p in others}
        same += a.reading_keys() == b.reading_keys() and \
            keys == {frozenset(a.reading_keys())}
        cheaper_or_equal += a.stats.tasks_executed <= b.stats.tasks_executed
        fewer += item.grammatical and \
            a.stats.tasks_executed < b.stats.tasks_executed
    share = fewer / len(grammatical)
    ok = same == len(suite) and cheaper_or_equal == len(suite) and share >= 0.8
    assert record(3, "filter/strategy transparency", ok,
                  f"readings equal on {same}/{len(suite)} across filter and "
                  f"{len(STRATEGY_NAMES)} strategies; tasks <= on "
                  f"{cheaper_or_equal}/{len(suite)}; strictly fewer on "
                  f"{share:.0%} of grammatical (need 80%)")


def test_parser_ground_truth(toy, suite):
    parser, naive = Parser(toy), OracleParser(toy)
    t0 = time.perf_counter()
    agree = sum(reading_map(parser.parse(i.sentence)) ==
                naive.parse(i.sentence.split()) for i in suite)
    took = time.perf_counter() - t0
    ok = agree == len(suite) and took < 120
    assert record(4, "parser vs oracle parser", ok,
                  f"{agree}/{len(suite)} agree in {took:.1f}s (limit 120s)")


def test_round_trip(toy, suite):
    parser = Parser(toy)
    grammatical = [i for i in suite if i.grammatical]
    found = 0
    for item in grammatical:
        sems = {str(t): t for r in parser.parse(item.sentence).readings
                for t in semantics(r.fs)}
        found += any(item.sentence in generate(t, toy) for t in sems.values())
    ok = found == len(grammatical)
    assert record(5, "round trip", ok,
                  f"{found}/{len(grammatical)} sentences regenerated")


def test_ebl(toy, suite, variants):
    full = Parser(toy)
    store = TemplateStore(toy)
    training = [i for i in suite if "ebl-train" in i.tags]
    for item in training:
        train(item.sentence, toy, full, store)
    only = Parser(toy, templates=store, templates_only=True)
    mixed = Parser(toy, templates=store)
    sentences = [i.sentence for i in training] + variants
    same = fewer = 0
    for s in sentences:
        a, b = full.parse(s), only.parse(s)
        same += a.reading_keys() == b.reading_keys()
        fewer += b.stats.tasks_executed < a.stats.tasks_executed
    stray = 0
    for item in suite:
        if "ebl-train" in item.tags:
            continue
        keys = full.parse(item.sentence).reading_keys()
        stray += len(only.parse(item.sentence).reading_keys() - keys)
        stray += sum(r.key not in keys
                     for r in mixed.parse(item.sentence).readings if r.template)
    n = len(sentences)
    ok = len(training) == 20 and n == 30 and same == n and fewer == n and stray == 0
    assert record(6, "explanation-based templates", ok,
                  f"{len(store)} templates from {len(training)} sentences; "
                  f"readings equal on {same}/{n}; fewer tasks on {fewer}/{n}; "
                  f"{stray} template readings missing from full parses")


def test_preference_argmax(lat):
    rng = random.Random(7)
    cases = agree = 0
    while cases < 1000:
        x = F.build(randgen.random_expr(rng, depth=4), lat)
        if x is None:
            continue
        cases += 1
        w = random_weights(rng, x)
        brute = max(w.score(dict(c)) for c in consistent_contexts(x))
        agree += best_contexts(x, w, 1)[0][0] == brute
    ok = agree == cases
    assert record(7, "preference argmax", ok,
                  f"{agree}/{cases} first contexts score the brute-force max")


def _cli_test():
    return subprocess.run([sys.executable, "-m", "featgram.cli", "test"],
                          capture_output=True, check=False).stdout


def test_determinism():
    first, second = _cli_test(), _cli_test()
    ok = first == second and len(first) > 0
    assert record(8, "determinism", ok,
                  f"two test reports of {len(first)} bytes "
                  f"{'identical' if first == second else 'differ'}")
