import random
from fractions import Fraction

import pytest

from weakparse.arith import (
    DivisionByZero,
    GrammarMode,
    Leaf,
    Node,
    Op,
    evaluate,
    evaluate_flat,
    leaf_count,
    parse_logical_form,
    precedence_parse,
)
from weakparse.index import (
    CandidateIndex,
    IndexFormatError,
    IndexMissing,
    all_flats,
    all_trees,
    brute_force_candidates,
    build_table,
    candidate_key,
    enumerate_candidates,
    lookup,
    persist_index,
)

WB, NB = GrammarMode.WITH_BRACKETS, GrammarMode.NO_BRACKETS
ADD, SUB, MUL, DIV = Op.ADD, Op.SUB, Op.MUL, Op.DIV


@pytest.fixture(scope="module")
def table():
    return build_table(4)


def keys(cands, mode):
    return [candidate_key(c, mode) for c in cands]


def test_leaves_only():
    t = build_table(1)
    assert t.reachable[1] == frozenset(Fraction(v) for v in range(1, 6))


def test_size_two_denotations_match_brute_force():
    values = set()
    count = 0
    for a in range(1, 6):
        for op in Op:
            for b in range(1, 6):
                count += 1
                values.add(op.apply(Fraction(a), Fraction(b)))
    assert count == 100
    assert build_table(2).reachable[2] == values
    assert len(values) == 34


def test_growth(table):
    # distinct values stay far below the number of expressions
    assert len(all_trees(4)) == 200000
    assert len(table.reachable[4]) == 1394
    assert [len(table.reachable[n]) for n in (1, 2, 3)] == [5, 34, 204]


def test_example_d3_size2(table):
    omega = enumerate_candidates(3, 2, WB, table)
    assert sorted(keys(omega, WB)) == sorted([
        "Go [ 1 + 2 ] End", "Go [ 2 + 1 ] End", "Go ( 3 * 1 ) End", "Go ( 1 * 3 ) End",
        "Go ( 3 / 1 ) End", "Go [ 4 - 1 ] End", "Go [ 5 - 2 ] End",
    ])


def test_example_d11_size3(table):
    omega = enumerate_candidates(11, 3, WB, table)
    members = set(omega)
    for expected in (
        Node(ADD, Leaf(5), Node(MUL, Leaf(3), Leaf(2))),
        Node(ADD, Node(MUL, Leaf(3), Leaf(2)), Leaf(5)),
        Node(ADD, Leaf(3), Node(MUL, Leaf(4), Leaf(2))),
        Node(SUB, Node(MUL, Leaf(4), Leaf(3)), Leaf(1)),
    ):
        assert expected in members
    assert len(omega) == len(brute_force_candidates(11, 3, WB)) == 49


def test_unreachable_is_empty(table):
    assert enumerate_candidates(100, 2, WB, table) == ()
    assert enumerate_candidates(100, 2, NB, table) == ()


@pytest.mark.parametrize("mode", [WB, NB])
@pytest.mark.parametrize("size", [2, 3])
def test_dp_equals_brute_force_exhaustive(table, mode, size):
    values = table.reachable[size] if mode is WB else table.flat_reachable(size)
    for d in values:
        assert enumerate_candidates(d, size, mode, table) == brute_force_candidates(d, size, mode)


@pytest.mark.parametrize("mode", [WB, NB])
def test_dp_equals_brute_force_size4_sample(table, mode):
    values = sorted(table.reachable[4] if mode is WB else table.flat_reachable(4))
    for d in random.Random(7).sample(values, 50):
        assert enumerate_candidates(d, 4, mode, table) == brute_force_candidates(d, 4, mode)


def test_dp_is_complete_on_values(table):
    # every value of every size-3 tree is reachable in the table and vice versa
    seen = set()
    for t in all_trees(3):
        try:
            seen.add(evaluate(t))
        except DivisionByZero:
            pass
    assert seen == table.reachable[3]
    flat_seen = set()
    for f in all_flats(3):
        try:
            flat_seen.add(evaluate_flat(f))
        except DivisionByZero:
            pass
    assert flat_seen == table.flat_reachable(3)


@pytest.mark.parametrize("mode", [WB, NB])
def test_soundness(table, mode):
    rng = random.Random(3)
    for size in (2, 3, 4):
        values = sorted(table.reachable[size] if mode is WB else table.flat_reachable(size))
        for d in rng.sample(values, 20):
            for c in enumerate_candidates(d, size, mode, table):
                tree = c if mode is WB else precedence_parse(c)
                assert evaluate(tree) == d
                assert leaf_count(tree) == size


def test_division_by_zero_never_indexed(table):
    bad = "Go ( 4 / [ 3 - [ 1 + 2 ] ] ) End"
    for d in table.reachable[4]:
        assert bad not in keys(enumerate_candidates(d, 4, WB, table), WB)


def test_canonical_order_and_no_duplicates(table):
    ks = keys(enumerate_candidates(Fraction(5, 2), 3, WB, table), WB)
    assert ks == sorted(set(ks))


@pytest.fixture(scope="module")
def persisted(tmp_path_factory, table):
    d = tmp_path_factory.mktemp("idx")
    paths = {}
    for mode in (WB, NB):
        p = d / f"index.{mode.value}.tsv"
        persist_index(table, [2, 3, 4], p, mode)
        paths[mode] = p
    return paths


@pytest.mark.parametrize("mode", [WB, NB])
def test_persistence_round_trip(table, persisted, mode):
    idx = CandidateIndex.load(persisted[mode])
    assert lookup(idx, 3, 2, mode) == enumerate_candidates(3, 2, mode, table)
    assert len(lookup(idx, 11, 3)) == len(brute_force_candidates(11, 3, mode))
    assert idx.lookup(100, 2) == ()


def test_unpersisted_size(persisted):
    idx = CandidateIndex.load(persisted[WB])
    with pytest.raises(IndexMissing):
        idx.lookup(3, 5)
    with pytest.raises(IndexMissing):
        lookup(idx, 3, 2, NB)


def test_rebuild_is_byte_identical(tmp_path, table, persisted):
    p = tmp_path / "again.tsv"
    persist_index(build_table(4), [2, 3, 4], p, WB)
    assert p.read_bytes() == persisted[WB].read_bytes()


@pytest.mark.parametrize("content", [
    "2\t3\tGo [ 1 + 2 ] End\n",                                  # no header
    "# grammar=brackets sizes=2\n2\t3\n",                        # missing field
    "# grammar=brackets sizes=2\n3\t3/1\tGo [ 1 + 2 ] End\n",      # undeclared size
    "# grammar=brackets sizes=2\n2\t6/4\tGo [ 1 + 2 ] End\n",    # not in lowest terms
    "# grammar=brackets sizes=2\n2\t3/1\tGo [ 2 + 1 ] End ; Go [ 1 + 2 ] End\n",
    "# grammar=nope sizes=2\n",
])
def test_load_rejects_bad_files(tmp_path, content):
    p = tmp_path / "bad.tsv"
    p.write_text(content)
    with pytest.raises(IndexFormatError):
        CandidateIndex.load(p)


def test_malformed_candidate_detected_on_lookup(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("# grammar=brackets sizes=2\n2\t3/1\tGo [ 1 + 2 End\n")
    idx = CandidateIndex.load(p)
    with pytest.raises(IndexFormatError):
        idx.lookup(3, 2)


def test_index_forms_parse_in_their_mode(persisted):
    idx = CandidateIndex.load(persisted[WB])
    for text in idx.lookup_strings(Fraction(-9, 4), 4):
        assert evaluate(parse_logical_form(text, WB)) == Fraction(-9, 4)
