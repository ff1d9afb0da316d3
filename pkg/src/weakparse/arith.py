"""Arithmetic utterances, logical forms and exact evaluation.

Three representations of the same expression live here:

* a *flat* expression, an alternating tuple ``(2, Op.DIV, 4, Op.ADD, 5)``;
* an :class:`Utterance`, the English rendering ``two divide four plus five <eos>``;
* an expression tree (:class:`Leaf` / :class:`Node`), the logical form, which
  linearizes either with brackets (``Go [ ( 2 / 4 ) + 5 ] End``) or without
  (``Go 2 / 4 + 5 End``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

EOS = "<eos>"
PAD = "PAD"
GO = "Go"
END = "End"

NUMBER_WORDS = ("one", "two", "three", "four", "five")
OPERATOR_WORDS = ("plus", "minus", "times", "divide")

# PAD sits at id 0 on both sides.
SOURCE_TOKENS = (PAD, EOS) + NUMBER_WORDS + OPERATOR_WORDS
TARGET_TOKENS = (PAD, GO, END, "[", "]", "(", ")", "1", "2", "3", "4", "5", "+", "-", "*", "/")

MAX_SOURCE_LEN = 8
MAX_TARGET_LEN = 16
MIN_OPERANDS = 2
MAX_OPERANDS = 4
MAX_VALUE = 5


class Malformed(ValueError):
    """A token sequence that is not a derivable logical form or utterance."""


class DivisionByZero(ZeroDivisionError):
    pass


class GrammarMode(enum.Enum):
    WITH_BRACKETS = "brackets"
    NO_BRACKETS = "flat"

    @classmethod
    def from_flag(cls, flag: Union[str, bool, "GrammarMode"]) -> "GrammarMode":
        if isinstance(flag, cls):
            return flag
        if flag in (True, "on", "brackets", "with"):
            return cls.WITH_BRACKETS
        if flag in (False, "off", "flat", "without"):
            return cls.NO_BRACKETS
        raise ValueError(f"unknown grammar mode {flag!r}")


class Op(enum.Enum):
    ADD = ("+", "plus", 1, "[", "]")
    SUB = ("-", "minus", 1, "[", "]")
    MUL = ("*", "times", 2, "(", ")")
    DIV = ("/", "divide", 2, "(", ")")

    def __init__(self, symbol, word, precedence, open_bracket, close_bracket):
        self.symbol = symbol
        self.word = word
        self.precedence = precedence
        self.open_bracket = open_bracket
        self.close_bracket = close_bracket

    def __repr__(self):
        return self.symbol

    def apply(self, a: Fraction, b: Fraction) -> Fraction:
        if self is Op.ADD:
            return a + b
        if self is Op.SUB:
            return a - b
        if self is Op.MUL:
            return a * b
        if b == 0:
            raise DivisionByZero(f"{a} / 0")
        return a / b

    @classmethod
    def from_symbol(cls, symbol: str) -> "Op":
        try:
            return _OP_BY_SYMBOL[symbol]
        except KeyError:
            raise Malformed(f"not an operator: {symbol!r}") from None

    @classmethod
    def from_word(cls, word: str) -> "Op":
        try:
            return _OP_BY_WORD[word]
        except KeyError:
            raise Malformed(f"not an operator word: {word!r}") from None


OPS = tuple(Op)
_OP_BY_SYMBOL = {op.symbol: op for op in Op}
_OP_BY_WORD = {op.word: op for op in Op}
_OPEN_TO_CLASS = {"[": 1, "(": 2}
_CLOSE_FOR = {"[": "]", "(": ")"}


@dataclass(frozen=True)
class Leaf:
    value: int

    def __post_init__(self):
        if not (isinstance(self.value, int) and 1 <= self.value <= MAX_VALUE):
            raise Malformed(f"operand out of range: {self.value!r}")

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class Node:
    op: Op
    left: "Tree"
    right: "Tree"

    def __str__(self):
        return f"{self.op.open_bracket}{self.left} {self.op.symbol} {self.right}{self.op.close_bracket}"


Tree = Union[Leaf, Node]
Flat = tuple  # alternating (int, Op, int, ..., int)


def leaf_count(tree: Tree) -> int:
    if isinstance(tree, Leaf):
        return 1
    return leaf_count(tree.left) + leaf_count(tree.right)


def evaluate(tree: Tree) -> Fraction:
    """Exact value of ``tree``.

    Raises :class:`DivisionByZero` when any division has a zero divisor,
    including divisors that only become zero through composition.
    """
    if isinstance(tree, Leaf):
        return Fraction(tree.value)
    return tree.op.apply(evaluate(tree.left), evaluate(tree.right))


def flatten(tree: Tree) -> Flat:
    """In-order operand/operator sequence, brackets dropped."""
    if isinstance(tree, Leaf):
        return (tree.value,)
    return flatten(tree.left) + (tree.op,) + flatten(tree.right)


def check_flat(flat: Sequence) -> Flat:
    flat = tuple(flat)
    if len(flat) % 2 == 0 or not flat:
        raise Malformed(f"flat expression must have odd length: {flat!r}")
    for i, item in enumerate(flat):
        if i % 2 == 0:
            if isinstance(item, Op) or not isinstance(item, int) or not 1 <= item <= MAX_VALUE:
                raise Malformed(f"expected operand 1..{MAX_VALUE} at position {i}: {item!r}")
        elif not isinstance(item, Op):
            raise Malformed(f"expected operator at position {i}: {item!r}")
    return flat


def precedence_parse(flat: Sequence) -> Tree:
    """Tree for a flat expression: ``*``/``/`` bind tighter, left associative.

    >>> str(precedence_parse((3, Op.DIV, 4, Op.SUB, 5, Op.ADD, 2)))
    '[[(3 / 4) - 5] + 2]'
    """
    flat = check_flat(flat)
    operands = [Leaf(v) for v in flat[0::2]]
    ops = list(flat[1::2])
    # Two passes of left folds, one per precedence level.
    for level in (2, 1):
        merged_operands = [operands[0]]
        merged_ops = []
        for op, right in zip(ops, operands[1:]):
            if op.precedence == level:
                merged_operands[-1] = Node(op, merged_operands[-1], right)
            else:
                merged_ops.append(op)
                merged_operands.append(right)
        operands, ops = merged_operands, merged_ops
    return operands[0]


def evaluate_flat(flat: Sequence) -> Fraction:
    return evaluate(precedence_parse(flat))


def linearize(tree: Tree, mode: GrammarMode) -> tuple:
    """Framed logical-form tokens for ``tree``.

    With brackets, every ``+``/``-`` node is wrapped in ``[ ]`` and every
    ``*``/``/`` node in ``( )``.
    """
    out = [GO]
    _emit(tree, GrammarMode.from_flag(mode) is GrammarMode.WITH_BRACKETS, out)
    out.append(END)
    return tuple(out)


def _emit(tree, brackets, out):
    if isinstance(tree, Leaf):
        out.append(str(tree.value))
        return
    if brackets:
        out.append(tree.op.open_bracket)
    _emit(tree.left, brackets, out)
    out.append(tree.op.symbol)
    _emit(tree.right, brackets, out)
    if brackets:
        out.append(tree.op.close_bracket)


def linearize_flat(flat: Sequence) -> tuple:
    flat = check_flat(flat)
    return (GO,) + tuple(x.symbol if isinstance(x, Op) else str(x) for x in flat) + (END,)


def _strip_frame(seq: Iterable[str]) -> list:
    tokens = list(seq.split() if isinstance(seq, str) else seq)
    # Trailing padding after End is tolerated; anything else is not.
    while tokens and tokens[-1] == PAD:
        tokens.pop()
    if len(tokens) < 2 or tokens[0] != GO or tokens[-1] != END:
        raise Malformed(f"missing Go/End framing: {' '.join(tokens)!r}")
    body = tokens[1:-1]
    if GO in body or END in body or PAD in body:
        raise Malformed("framing or padding token inside logical form")
    return body


def parse_flat_form(seq) -> Flat:
    """Flat expression from a bracket-free logical form."""
    body = _strip_frame(seq)
    flat = []
    for i, tok in enumerate(body):
        if i % 2 == 0:
            if not (len(tok) == 1 and tok.isdigit() and 1 <= int(tok) <= MAX_VALUE):
                raise Malformed(f"expected operand, got {tok!r}")
            flat.append(int(tok))
        else:
            flat.append(Op.from_symbol(tok))
    flat = check_flat(flat)
    n = (len(flat) + 1) // 2
    if not MIN_OPERANDS <= n <= MAX_OPERANDS:
        raise Malformed(f"{n} operands outside {MIN_OPERANDS}..{MAX_OPERANDS}")
    return flat


def parse_logical_form(seq, mode: GrammarMode) -> Tree:
    """Inverse of :func:`linearize`.

    Accepts arbitrary decoder output and raises :class:`Malformed` for anything
    the grammar cannot derive.  Without brackets the tree is the precedence
    reading of the flat sequence.
    """
    mode = GrammarMode.from_flag(mode)
    if mode is GrammarMode.NO_BRACKETS:
        return precedence_parse(parse_flat_form(seq))
    body = _strip_frame(seq)
    tree, pos = _parse_bracketed(body, 0)
    if pos != len(body):
        raise Malformed(f"trailing tokens after expression: {body[pos:]!r}")
    n = leaf_count(tree)
    if not MIN_OPERANDS <= n <= MAX_OPERANDS:
        raise Malformed(f"{n} operands outside {MIN_OPERANDS}..{MAX_OPERANDS}")
    return tree


def _parse_bracketed(body, pos):
    if pos >= len(body):
        raise Malformed("unexpected end of logical form")
    tok = body[pos]
    if tok in _OPEN_TO_CLASS:
        left, pos = _parse_bracketed(body, pos + 1)
        if pos >= len(body):
            raise Malformed("unexpected end of logical form")
        op = Op.from_symbol(body[pos])
        if op.precedence != _OPEN_TO_CLASS[tok]:
            raise Malformed(f"operator {op.symbol} inside {tok} brackets")
        right, pos = _parse_bracketed(body, pos + 1)
        if pos >= len(body) or body[pos] != _CLOSE_FOR[tok]:
            raise Malformed(f"unmatched {tok}")
        return Node(op, left, right), pos + 1
    if len(tok) == 1 and tok.isdigit() and 1 <= int(tok) <= MAX_VALUE:
        return Leaf(int(tok)), pos + 1
    raise Malformed(f"unexpected token {tok!r}")


@dataclass(frozen=True)
class Utterance:
    """Content words of an utterance; ``<eos>`` and padding are implied."""

    words: tuple

    def __post_init__(self):
        words = tuple(self.words)
        object.__setattr__(self, "words", words)
        if len(words) not in (3, 5, 7):
            raise Malformed(f"utterance must have 3, 5 or 7 words: {words!r}")
        for i, w in enumerate(words):
            expected = NUMBER_WORDS if i % 2 == 0 else OPERATOR_WORDS
            if w not in expected:
                raise Malformed(f"unexpected word {w!r} at position {i}")

    @classmethod
    def parse(cls, text: str) -> "Utterance":
        tokens = text.split()
        while tokens and tokens[-1] == PAD:
            tokens.pop()
        if tokens and tokens[-1] == EOS:
            tokens.pop()
        for t in tokens:
            if t not in SOURCE_TOKENS:
                raise Malformed(f"word outside vocabulary: {t!r}")
        return cls(tuple(tokens))

    @property
    def tokens(self) -> tuple:
        return self.words + (EOS,)

    def padded(self, length: int = MAX_SOURCE_LEN) -> tuple:
        return self.tokens + (PAD,) * (length - len(self.tokens))

    @property
    def operand_count(self) -> int:
        return (len(self.words) + 1) // 2

    def flat(self) -> Flat:
        return tuple(
            NUMBER_WORDS.index(w) + 1 if i % 2 == 0 else Op.from_word(w)
            for i, w in enumerate(self.words)
        )

    def __str__(self):
        return " ".join(self.tokens)


def render_utterance(flat: Sequence) -> Utterance:
    flat = check_flat(flat)
    return Utterance(tuple(
        NUMBER_WORDS[x - 1] if i % 2 == 0 else x.word for i, x in enumerate(flat)
    ))


def format_denotation(d: Fraction) -> str:
    """Three-decimal display form; ``-2.25`` for -9/4."""
    text = f"{float(d):.3f}".rstrip("0")
    if text.endswith("."):
        text += "0"
    return "0.0" if text == "-0.0" else text


def denotation_to_str(d: Fraction) -> str:
    return f"{d.numerator}/{d.denominator}"


def denotation_from_str(text: str) -> Fraction:
    num, sep, den = text.strip().partition("/")
    if not sep:
        raise ValueError(f"expected numerator/denominator, got {text!r}")
    d = Fraction(int(num), int(den))
    if d.numerator != int(num) or d.denominator != int(den):
        raise ValueError(f"denotation not in lowest terms: {text!r}")
    return d
