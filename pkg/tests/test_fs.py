import random
from collections import Counter
from itertools import product

import pytest

from featgram import dsl, fs
from featgram.errors import (BuildError, ContractError, FunctionError,
                             StaleEncodingError, UnsupportedNegation)
from featgram.grammar import lattice_from_text

import oracle
import randgen


def alts(x):
    return Counter(oracle.fs_alternatives(x)) if x is not None else Counter()


def test_coref_shares_node(B):
    x = B("[F: a, G: #1, H: #1]")
    assert x.follow(["G"]) == x.follow(["H"])
    assert x.follow(["F"]) != x.follow(["G"])
    # root, F's value and the shared value
    assert x.node_count() == 3


def test_named_disjunction_covaries(B, lat):
    x = B("%d(x,y) & [F: %d('1,'2)]")
    assert len(x.groups) == 1
    (arity, live), = x.groups.values()
    assert arity == 2 and live == {0, 1}
    first, second = fs.dnf(x)
    assert first.type_name_at() == "x" and first.atom_at(["F"]) == "1"
    assert second.type_name_at() == "y" and second.atom_at(["F"]) == "2"


def test_negated_avm_rejected(B):
    with pytest.raises(UnsupportedNegation):
        B("[F: ~[G: a]]")


def test_group_arity_mismatch(B):
    with pytest.raises(BuildError):
        B("[F: %d(a, b), G: %d(a, b, c)]")


def test_unknown_type(B):
    with pytest.raises(BuildError):
        B("[F: nosuchtype]")


def test_unify_unit(B, lat):
    x = B("[F: %d(a, b), G: #1, H: #1]")
    assert alts(fs.unify(x, fs.top(lat))) == alts(x)
    assert alts(fs.unify(fs.top(lat), x)) == alts(x)


def test_unify_partition_clash(B):
    assert fs.unify(B("[F: sg]"), B("[F: pl]")) is None


def test_unify_one_clashing_pair(B):
    # of the four pairs only (sg, pl) clashes
    u = fs.unify(B("[F: %d(sg, num)]"), B("[F: %e(pl, num)]"))
    assert len(fs.dnf(u)) == 3
    assert alts(u) == _cross(B("[F: %d(sg, num)]"), B("[F: %e(pl, num)]"))


def test_unify_failure_when_every_pair_clashes(B):
    assert fs.unify(B("[F: %d(sg, a)]"), B("[F: %e(pl, b)]")) is None


def test_dnf_group_free_singleton(B):
    assert len(fs.dnf(B("[F: a, G: [H: b]]"))) == 1


def test_dnf_independent_groups_product(B):
    assert len(fs.dnf(B("[F: %d(a, b), G: %e(x, y, c)]"))) == 6


def test_dnf_lexicographic_order(B):
    out = [(d.type_name_at(["F"]), d.type_name_at(["G"]))
           for d in fs.dnf(B("[F: %d(a, b), G: %e(x, y)]"))]
    assert out == [("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")]


def test_dnf_path_inequation_removes_one(B):
    x = B("[F: %d('p, 'q) & ~#1, G: %e('p, 'q) & #1]")
    assert len(fs.dnf(x)) == 2
    x = B("[F: %d('p, 'q, 'r) & #1, G: %e('p, 'q) & ~#1]")
    # three by two minus the two assignments that make F and G equal
    assert len(fs.dnf(x)) == 4


def test_negated_type_semantics(B):
    # violated when subsumed, discharged when disjoint, else suspended
    assert B("sg & ~num") is None
    x = B("sg & ~pl")
    assert not x.negatives()
    x = B("num & ~sg")
    assert len(x.negatives()) == 1
    assert fs.unify(x, B("sg")) is None
    assert fs.unify(x, B("pl")).negatives() == []


def test_simplify_single_live(B, lat):
    x = B("[F: %d(a, sg)]")
    # kill index 0 by hand, leaving a one-element live set
    g, (arity, live) = next(iter(x.groups.items()))
    manual = fs.FeatureStructure(lat, x.root, x.types, x.arcs, x.cons,
                                 {g: (arity, frozenset({1}))})
    s = fs.simplify(manual)
    assert not s.groups
    assert s.type_name_at(["F"]) == "sg"


def test_simplify_merges_duplicates(B):
    s = fs.simplify(B("%d(a, a)"))
    assert not s.groups and s.type_name_at() == "a"
    s = fs.simplify(B("[F: %d([G: a], [G: a])]"))
    assert not s.groups and s.type_name_at(["F", "G"]) == "a"


def test_extract_subterm(B):
    x = B("[F: a]")
    assert fs.extract_subterm(x, []) is x
    assert fs.extract_subterm(x, ["F"]).type_name_at() == "a"
    assert fs.extract_subterm(x, ["G"]) is None


def test_extract_conditional_path(B):
    x = B("[F: %d(a, [H: b]), G: %e(x, y)]")
    sub = fs.extract_subterm(x, ["F", "H"])
    assert not sub.groups
    assert sub.type_name_at() == "b"
    sub = fs.extract_subterm(x, ["F"])
    assert sorted(oracle.fs_alternatives(sub)) == ["a", "top(H=b;)"]


def test_functional_constraints(B):
    x = B("[X: add(1, 2)]")
    assert x.atom_at(["X"]) == 3
    assert B("[X: add(1, 2) & 4]") is None
    x = B("[A: #1, B: #2, C: concat(#1, #2)]")
    assert len(x.functionals()) == 1
    y = fs.unify(x, B("[A: 'foo]"))
    assert len(y.functionals()) == 1
    z = fs.unify(y, B("[B: 'bar]"))
    assert z.atom_at(["C"]) == "foobar" and not z.functionals()
    assert fs.unify(y, B("[B: 'bar, C: 'nope]")) is None


def test_functional_registry(B):
    x = B("[A: #1, B: concat(#1, 'x)]")
    x = fs.unify(x, B("[A: 'y]"))
    assert x.atom_at(["B"]) == "yx"
    with pytest.raises(FunctionError):
        fs.eval_functional(B("[A: #1, B: concat(#1, 'x)]"), {"add": lambda a, b: a})


def test_functional_inside_disjunction(B):
    x = B("[A: %d(1, 2), B: add(#1, 10), A: #1]")
    assert sorted(d.atom_at(["B"]) for d in fs.dnf(x)) == [11, 12]


def test_subsumes_basic(B, lat):
    assert fs.subsumes_fs(fs.top(lat), B("[F: a, G: [H: b]]"))
    assert not fs.subsumes_fs(B("[F: #1, G: #1]"), B("[F: 'p, G: 'p]"))
    assert fs.subsumes_fs(B("[F: 'p, G: 'p]"), B("[F: #1 & 'p, G: #1]"))
    assert fs.subsumes_fs(B("[F: num]"), B("[F: sg]"))
    assert not fs.subsumes_fs(B("[F: sg]"), B("[F: num]"))
    with pytest.raises(ContractError):
        fs.subsumes_fs(B("%d(a, b)"), B("a"))


def brute_subsumes(a, b):
    lat = a.lattice
    an = sorted(a.types)
    bn = sorted(b.types)
    edges = [(x, f, m) for x, d in a.arcs.items() for f, m in d.items()]

    def ok(h):
        for x, f, m in edges:
            if x in h and m in h:
                if b.arcs.get(h[x], {}).get(f) != h[m]:
                    return False
            elif x in h and f not in b.arcs.get(h[x], {}):
                return False
        return True

    def search(i, h):
        if i == len(an):
            return h.get(a.root) == b.root
        x = an[i]
        for y in bn:
            if x == a.root and y != b.root:
                continue
            if not lat.subsumes(a.types[x], b.types[y]):
                continue
            h[x] = y
            if ok(h) and search(i + 1, h):
                return True
            del h[x]
        return False

    return search(0, {})


def test_subsumes_random(lat):
    rng = random.Random(7)
    checked = 0
    while checked < 300:
        ea = randgen.random_expr(rng, depth=2, negation=False, disjunction=False)
        eb = randgen.random_expr(rng, depth=3, negation=False, disjunction=False)
        a, b = fs.build(ea, lat), fs.build(eb, lat)
        if a is None or b is None or a.node_count() > 8 or b.node_count() > 8:
            continue
        # make positive cases common
        if rng.random() < 0.5:
            b2 = fs.unify(a, b)
            if b2 is not None and b2.node_count() <= 8:
                b = b2
        assert fs.subsumes_fs(a, b) == brute_subsumes(a, b)
        checked += 1


def test_build_matches_syntactic_dnf(lat):
    rng = random.Random(11)
    for _ in range(400):
        e = randgen.random_expr(rng)
        assert set(alts(fs.build(e, lat))) == \
            set(oracle.expr_alternatives(e, lat)), dsl.format_expr(e)


def _cross(a, b):
    out = Counter()
    for xa in fs.dnf(a):
        for xb in fs.dnf(b):
            out.update(oracle.resolve(oracle.unify_graphs(
                oracle.graph_of_fs(xa), oracle.graph_of_fs(xb))))
    return out


def test_unify_matches_cross_product(lat):
    rng = random.Random(3)
    for _ in range(400):
        (_, a), (_, b) = randgen.sized_pair(rng, lat, fs.build)
        assert alts(fs.unify(a, b)) == _cross(a, b)


def test_unify_commutative_associative(lat):
    rng = random.Random(5)
    for _ in range(150):
        (_, a), (_, b) = randgen.sized_pair(rng, lat, fs.build)
        (_, c), _ = randgen.sized_pair(rng, lat, fs.build)
        assert set(alts(fs.unify(a, b))) == set(alts(fs.unify(b, a)))
        ab = fs.unify(a, b)
        bc = fs.unify(b, c)
        left = fs.unify(ab, c) if ab is not None else None
        right = fs.unify(a, bc) if bc is not None else None
        assert set(alts(left)) == set(alts(right))


def test_unify_idempotent(lat):
    rng = random.Random(9)
    seen = 0
    while seen < 150:
        x = fs.build(randgen.random_expr(rng, disjunction=False), lat)
        if x is None:
            continue
        seen += 1
        assert alts(fs.unify(x, fs.rename_apart(x))) == alts(x)


def test_simplify_preserves_dnf(lat):
    rng = random.Random(13)
    for _ in range(300):
        x = fs.build(randgen.random_expr(rng), lat)
        if x is None:
            continue
        s = fs.simplify(x)
        assert set(alts(s)) == set(alts(x))
        assert len(s.groups) <= len(x.groups)


def test_extract_commutes_with_dnf(lat):
    rng = random.Random(17)
    for _ in range(300):
        x = fs.build(randgen.random_expr(rng), lat)
        if x is None:
            continue
        path = rng.choice([["F"], ["G"], ["F", "G"], ["H", "F"]])
        sub = fs.extract_subterm(x, path)
        want = set()
        for d in fs.dnf(x):
            p = fs.extract_subterm(d, path)
            if p is not None:
                want.update(oracle.fs_alternatives(p))
        assert set(alts(sub)) == want


def test_rename_apart(B):
    x = B("[F: %d(a, b), G: #1, H: #1 & %e(x, y)]")
    y = fs.rename_apart(x)
    assert len(y.groups) == len(x.groups)
    assert set(y.types).isdisjoint(x.types)
    assert set(y.groups).isdisjoint(x.groups)
    assert alts(y) == alts(x)


def test_stale_encoding(B):
    lat2 = lattice_from_text("a := []. b := [].")
    x = fs.build(dsl.parse_expression("[F: a]"), lat2)
    lat2.define_type("c", "avm", ["a"])
    with pytest.raises(StaleEncodingError):
        fs.unify(x, x)


def test_closed_world_glb_splits(B):
    x = B("[F: u & w]")
    assert sorted(d.type_name_at(["F"]) for d in fs.dnf(x)) == ["uw1", "uw2"]
