import pytest

from featgram import dsl, fs
from featgram.grammar import lattice_from_text

TYPES = """
sign := [].
noun := sign & [AGR: agr].
verb := sign.
agr := [].
sort num < top.
sort per < top.
partition num {sg, pl}.
partition per {first, second, third}.
sort u < top.
sort w < top.
sort uw1 < u, w.
sort uw2 < u, w.
sort a < top. sort b < top. sort c < top.
sort x < top. sort y < top.
incompatible {a, b}.
"""


@pytest.fixture(scope="session")
def lat():
    return lattice_from_text(TYPES)


@pytest.fixture
def B(lat):
    def make(text):
        return fs.build(dsl.parse_expression(text), lat)
    return make


@pytest.fixture(scope="session")
def toy():
    from featgram.grammar import load_grammar_file, toy_manifest
    return load_grammar_file(toy_manifest())


@pytest.fixture(scope="session")
def suite():
    from featgram.grammar import toy_manifest
    from featgram.harness import load_suite
    return load_suite(toy_manifest().parent / "corpus.dito")


@pytest.fixture(scope="session")
def variants():
    from featgram.grammar import toy_manifest
    text = (toy_manifest().parent / "ebl-variants.txt").read_text()
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance")
        for line in RESULTS:
            terminalreporter.write_line(line)
