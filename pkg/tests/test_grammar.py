import pytest

from featgram import dsl, fs as F
from featgram.errors import ContractError, GrammarError
from featgram.grammar import (Manifest, backbone_category, lattice_from_definitions,
                              load_grammar, load_grammar_file, toy_manifest)


def small(text, **manifest):
    defs = dsl.expand_templates(dsl.parse_text(text))
    return load_grammar(defs, lattice_from_definitions(defs), Manifest(**manifest))


BASE = """
sign := [CAT: top].
rule := sign & [KEY: top].
lex-entry := sign & [ORTH: top].
lex-rule := [IN: lex-entry, OUT: sign].
"""


def test_toy_counts(toy):
    assert len(toy.rules) == 9
    assert len(toy.entries) >= 60
    assert len(toy.lexrules) == 2


def test_empty_grammar():
    g = small("")
    assert (g.rules, g.entries, g.lexrules) == ((), (), ())
    assert g.semantic_index() == {}


def test_unsatisfiable_rule_rejected():
    with pytest.raises(GrammarError, match="bad-rule"):
        small(BASE + "bad-rule := rule & [DTR1: sign, CAT: 'a & 'b].")


def test_rule_without_daughters_rejected():
    with pytest.raises(GrammarError, match="no daughter"):
        small(BASE + "lonely := rule & [CAT: 'a].")


def test_entry_without_form_rejected():
    with pytest.raises(GrammarError, match="no surface form"):
        small(BASE + "mute := lex-entry & [CAT: 'a].")


def test_lookup_multiword_keeps_both(toy):
    names = sorted(e.name for e in toy.lookup("kick the bucket".split(), 0))
    assert names == ["kick-the-bucket", "kick-v"]
    idiom = next(e for e in toy.lookup("kick the bucket".split(), 0)
                 if e.multiword)
    assert idiom.span == 3


def test_lookup_unknown_and_case(toy):
    assert toy.lookup(["zebra"], 0) == []
    assert [e.name for e in toy.lookup(["The", "DOG"], 1)] == ["dog-n"]
    assert toy.lookup(["dog"], 5) == []


def test_lex_rule_closure_depths(toy):
    dogs = toy.lookup(["dogs"], 0)[0]
    assert [e.name for e in toy.apply_lex_rules(dogs, 0)] == ["dogs-n"]
    names = [e.name for e in toy.apply_lex_rules(dogs, 1)]
    assert names == ["dogs-n", "bare-plural(dogs-n)"]
    with pytest.raises(ContractError):
        toy.apply_lex_rules(dogs, -1)


def test_multiword_entries_skip_lex_rules(toy):
    idiom = next(e for e in toy.entries if e.multiword)
    assert toy.apply_lex_rules(idiom) == [idiom]


PRODUCTIVE = BASE + """
word := lex-entry.
w1 := word & [ORTH: 'w, CAT: 'x, LVL: 'a].
grow := lex-rule & [IN: [CAT: 'x], OUT: [CAT: 'x, ORTH: #o], IN: [ORTH: #o]].
"""


def test_productive_rule_depth_two():
    g = small(PRODUCTIVE)
    w = g.entries[0]
    counts = [len(g.apply_lex_rules(w, d)) for d in range(4)]
    assert counts[:3] == [1, 2, 3]
    assert counts == sorted(counts)
    assert g.apply_lex_rules(w, 2)[2].name == "grow(grow(w1))"


def test_semantic_index(toy):
    idx = toy.semantic_index()
    assert "dog-n" in {e.name for e in idx["dog"]}
    sees = {e.name for e in idx["see"]}
    assert {"sees-v", "see-v"} <= sees
    listed = {e.name for es in idx.values() for e in es}
    assert listed == {e.name for e in toy.items()}
    assert "that-c" in {e.name for e in idx[""]}


def test_rule_backbone_consistent(toy):
    cat = toy.manifest.cat_path
    for r in toy.rules:
        assert r.category == backbone_category(r.fs, cat)
        for k, p in enumerate(r.daughters):
            assert r.slot_category(k) == backbone_category(r.fs, p + cat)
        assert 0 <= r.key < r.arity


def test_reload_is_deterministic(toy):
    again = load_grammar_file(toy_manifest())
    assert again.digest == toy.digest
    assert [r.name for r in again.rules] == [r.name for r in toy.rules]
    for a, b in zip(again.rules, toy.rules):
        assert F.dnf_key(a.fs) == F.dnf_key(b.fs)
    assert [e.name for e in again.items()] == [e.name for e in toy.items()]
