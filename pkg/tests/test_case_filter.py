from collections import Counter

import pytest
from hypothesis import given, strategies as st

from weakparse.arith import GrammarMode, Leaf, Node, Op, Utterance
from weakparse.case_filter import (
    features,
    filter_candidates,
    load_base_cases,
    select_base_case,
    similarity,
)
from weakparse.index import build_table, candidate_tokens, enumerate_candidates

WB, NB = GrammarMode.WITH_BRACKETS, GrammarMode.NO_BRACKETS


@pytest.fixture(scope="module")
def cases():
    return load_base_cases()


def shared_tokens(a, b):
    # oracle: walk one list, strike matches from a copy of the other
    pool = [t for t in b if t not in ("Go", "End", "<eos>", "PAD")]
    n = 0
    for t in a:
        if t in ("Go", "End", "<eos>", "PAD"):
            continue
        if t in pool:
            pool.remove(t)
            n += 1
    return n


def test_features_examples():
    assert features("one plus two <eos>") == Counter({"one": 1, "plus": 1, "two": 1})
    assert features("Go [ 1 + 2 ] End") == Counter({"[": 1, "]": 1, "1": 1, "+": 1, "2": 1})
    bag = features("five divide one times two plus three <eos>")
    assert len(bag) == 7 and set(bag.values()) == {1}


def test_similarity_examples():
    assert similarity(Counter("one plus two".split()), Counter("one plus three".split())) == 2
    assert similarity(Counter("one plus two".split()), Counter("three minus four times five".split())) == 0


@given(st.lists(st.sampled_from(["1", "2", "+", "(", "[", "one"]), max_size=12))
def test_self_similarity(tokens):
    bag = features(tokens)
    assert similarity(bag, bag) == sum(bag.values())


@given(st.lists(st.sampled_from(["1", "2", "+", "*", "("]), max_size=10),
       st.lists(st.sampled_from(["1", "2", "+", "*", "("]), max_size=10))
def test_similarity_matches_oracle(a, b):
    assert similarity(features(a), features(b)) == shared_tokens(a, b) == similarity(features(b), features(a))


def test_base_cases_load(cases):
    assert len(cases) == 7
    assert str(cases[0].utterance) == "one plus two <eos>"
    assert " ".join(cases[1].logical_form(WB)) == "Go [ 3 - ( 4 * 5 ) ] End"
    assert " ".join(cases[1].logical_form(NB)) == "Go 3 - 4 * 5 End"


def test_base_case_file_validated(tmp_path):
    p = tmp_path / "b.tsv"
    p.write_text("one plus two <eos>\tGo [ 1 + 2 ] End\t4.0\n")
    with pytest.raises(ValueError):
        load_base_cases(p)


def test_self_retrieval(cases):
    assert select_base_case(Utterance.parse("one plus two"), cases) is cases[0]


def test_select_for_running_example(cases):
    utt = Utterance.parse("five plus three times two")
    scores = [shared_tokens(utt.tokens, c.utterance.tokens) for c in cases]
    assert scores == [2, 3, 3, 3, 5, 4, 4]
    assert select_base_case(utt, cases) is cases[4]


def test_tie_break_prefers_first(cases):
    # no shared words with any row cannot happen in this vocabulary, so tie on equal scores instead
    reordered = (cases[2], cases[3]) + cases
    utt = Utterance.parse("one plus two")
    assert select_base_case(utt, reordered) is cases[0]
    utt = Utterance.parse("four times four")
    scores = [shared_tokens(utt.tokens, c.utterance.tokens) for c in cases]
    first = scores.index(max(scores))
    assert select_base_case(utt, cases) is cases[first]


def test_filter_keeps_base_form():
    base = Node(Op.ADD, Leaf(1), Leaf(2))
    omega = (Node(Op.MUL, Leaf(3), Leaf(1)), base, Node(Op.SUB, Leaf(5), Leaf(2)))
    gamma = filter_candidates(omega, candidate_tokens(base, WB), WB)
    assert base in gamma


def test_filter_empty():
    assert filter_candidates((), ("Go", "1", "End"), WB) == ()


@pytest.mark.parametrize("mode", [WB, NB])
def test_filter_running_example(cases, mode):
    table = build_table(3)
    omega = enumerate_candidates(11, 3, mode, table)
    base = cases[4].logical_form(mode)
    scores = [shared_tokens(candidate_tokens(c, mode), base) for c in omega]
    expected = tuple(c for c, s in zip(omega, scores) if s == max(scores))
    gamma = filter_candidates(omega, base, mode)
    assert gamma == expected
    assert gamma and set(gamma) <= set(omega)
