"""Base-case retrieval and bag-of-words filtering of candidate logical forms."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources

from .arith import (
    END,
    EOS,
    GO,
    PAD,
    GrammarMode,
    Malformed,
    Utterance,
    evaluate,
    flatten,
    format_denotation,
    linearize,
    linearize_flat,
    parse_logical_form,
)
from .index import candidate_tokens

FRAMING = frozenset({GO, END, EOS, PAD})


@dataclass(frozen=True)
class BaseCase:
    utterance: Utterance
    tree: object  # gold expression tree
    denotation: Fraction

    def logical_form(self, mode: GrammarMode) -> tuple:
        if GrammarMode.from_flag(mode) is GrammarMode.WITH_BRACKETS:
            return linearize(self.tree, mode)
        return linearize_flat(flatten(self.tree))


def features(seq) -> Counter:
    """Bag of content tokens; framing tokens are dropped."""
    tokens = seq.split() if isinstance(seq, str) else seq
    return Counter(t for t in tokens if t not in FRAMING)


def similarity(a: Counter, b: Counter) -> int:
    """Number of shared tokens, counted with multiplicity."""
    return sum((a & b).values())


def select_base_case(utterance: Utterance, cases) -> BaseCase:
    if not cases:
        raise ValueError("empty base case set")
    target = features(utterance.tokens)
    best, best_score = None, -1
    for case in cases:
        score = similarity(features(case.utterance.tokens), target)
        if score > best_score:  # strict: earliest case wins ties
            best, best_score = case, score
    return best


def filter_candidates(omega, base_form, mode: GrammarMode) -> tuple:
    """Members of ``omega`` sharing the most tokens with ``base_form``.

    All maximizers are kept, in their input order.
    """
    if not omega:
        return ()
    ref = features(base_form)
    scores = [similarity(ref, features(candidate_tokens(c, mode))) for c in omega]
    top = max(scores)
    return tuple(c for c, s in zip(omega, scores) if s == top)


def load_base_cases(path=None) -> tuple:
    """Read ``utterance<TAB>logical form<TAB>denotation`` lines.

    The logical form is the bracketed one.  Each row is checked by executing
    it against the recorded denotation at display precision.
    """
    if path is None:
        text = resources.files("weakparse").joinpath("resources/base_cases.tsv").read_text(encoding="utf-8")
        source = "base_cases.tsv"
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        source = str(path)
    cases = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{source}:{lineno}: expected 3 tab-separated fields")
        utt_text, form, shown = parts
        try:
            utterance = Utterance.parse(utt_text)
            tree = parse_logical_form(form, GrammarMode.WITH_BRACKETS)
        except Malformed as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from exc
        if tuple(utterance.flat()) != flatten(tree):
            raise ValueError(f"{source}:{lineno}: utterance and logical form disagree")
        value = evaluate(tree)
        if float(format_denotation(value)) != float(shown):
            raise ValueError(f"{source}:{lineno}: form evaluates to {format_denotation(value)}, file says {shown}")
        cases.append(BaseCase(utterance, tree, value))
    if {len(c.utterance.words) for c in cases} != {3, 5, 7}:
        raise ValueError(f"{source}: base cases must cover utterance lengths 3, 5 and 7")
    return tuple(cases)
