"""Dynamic programming on denotations.

Logical forms with equal denotations are collapsed while the table is built,
so the table grows with the number of distinct values rather than the number
of expressions.  Candidates for a target value are recovered afterwards by
walking the recorded derivations backwards.

Bracketed forms are trees: ``D[n]`` combines ``D[i]`` and ``D[n - i]`` under
every operator.  Bracket-free forms are flat sequences read with operator
precedence, so they get their own pair of tables: multiplicative *terms*
(left folds of ``*``/``/`` over operands) and additive *sums* (left folds of
``+``/``-`` over terms).  Both folds only depend on the value of the prefix,
which is what makes the collapse valid.
"""

from __future__ import annotations

import itertools
import os
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

from .arith import (
    MAX_OPERANDS,
    MAX_VALUE,
    OPS,
    DivisionByZero,
    GrammarMode,
    Leaf,
    Malformed,
    Node,
    Op,
    denotation_from_str,
    denotation_to_str,
    evaluate,
    evaluate_flat,
    leaf_count,
    linearize,
    linearize_flat,
    parse_flat_form,
    parse_logical_form,
)

LEAF_VALUES = tuple(Fraction(v) for v in range(1, MAX_VALUE + 1))


class IndexMissing(KeyError):
    pass


class IndexFormatError(ValueError):
    pass


def candidate_tokens(candidate, mode: GrammarMode) -> tuple:
    """Framed token sequence of a tree (with brackets) or flat tuple (without)."""
    if GrammarMode.from_flag(mode) is GrammarMode.WITH_BRACKETS:
        return linearize(candidate, mode)
    return linearize_flat(candidate)


def candidate_key(candidate, mode: GrammarMode) -> str:
    return " ".join(candidate_tokens(candidate, mode))


def canonical(candidates, mode: GrammarMode) -> tuple:
    """Deduplicate by serialized form and sort lexicographically by it."""
    by_key = {candidate_key(c, mode): c for c in candidates}
    return tuple(by_key[k] for k in sorted(by_key))


@dataclass
class DenotationTable:
    max_operands: int
    reachable: dict = field(default_factory=dict)
    # (size, d) -> [(op, (size1, d1), (size2, d2))]; size 1 maps to its leaf value
    derivations: dict = field(default_factory=dict)
    # flat-form tables: (n, v) -> [(prev_value, op, leaf)] and [(k, v1, op, v2)] / "term"
    term_derivations: dict = field(default_factory=dict)
    sum_derivations: dict = field(default_factory=dict)

    def flat_reachable(self, size: int) -> frozenset:
        return frozenset(v for (n, v) in self.sum_derivations if n == size)


def build_table(max_operands: int = MAX_OPERANDS) -> DenotationTable:
    if not 1 <= max_operands <= MAX_OPERANDS:
        raise ValueError(f"max_operands must be in 1..{MAX_OPERANDS}")
    table = DenotationTable(max_operands)
    derivs = defaultdict(list)
    for v in LEAF_VALUES:
        derivs[(1, v)].append(int(v))
    table.reachable[1] = frozenset(LEAF_VALUES)
    for n in range(2, max_operands + 1):
        values = set()
        for i in range(1, n):
            for d1 in sorted(table.reachable[i]):
                for d2 in sorted(table.reachable[n - i]):
                    for op in OPS:
                        if op is Op.DIV and d2 == 0:
                            continue
                        d = op.apply(d1, d2)
                        values.add(d)
                        derivs[(n, d)].append((op, (i, d1), (n - i, d2)))
        table.reachable[n] = frozenset(values)
    table.derivations = dict(derivs)
    _build_flat(table)
    return table


def _build_flat(table: DenotationTable) -> None:
    terms = defaultdict(list)
    for v in LEAF_VALUES:
        terms[(1, v)].append(None)
    term_values = {1: set(LEAF_VALUES)}
    for n in range(2, table.max_operands + 1):
        term_values[n] = set()
        for prev in sorted(term_values[n - 1]):
            for op in (Op.MUL, Op.DIV):
                for leaf in LEAF_VALUES:
                    v = op.apply(prev, leaf)
                    term_values[n].add(v)
                    terms[(n, v)].append((prev, op, int(leaf)))
    sums = defaultdict(list)
    sum_values = {}
    for n in range(1, table.max_operands + 1):
        sum_values[n] = set(term_values[n])
        for v in term_values[n]:
            sums[(n, v)].append("term")
        for k in range(1, n):
            for v1 in sorted(sum_values[k]):
                for v2 in sorted(term_values[n - k]):
                    for op in (Op.ADD, Op.SUB):
                        v = op.apply(v1, v2)
                        sum_values[n].add(v)
                        sums[(n, v)].append((k, v1, op, v2))
    table.term_derivations = dict(terms)
    table.sum_derivations = dict(sums)


def enumerate_candidates(d, size: int, mode: GrammarMode, table: DenotationTable) -> tuple:
    """Every logical form with ``size`` operands whose denotation is ``d``.

    Returned in canonical order.  An unreachable ``d`` gives an empty tuple.
    """
    if size > table.max_operands:
        raise ValueError(f"table only covers {table.max_operands} operands")
    d = Fraction(d)
    mode = GrammarMode.from_flag(mode)
    if mode is GrammarMode.WITH_BRACKETS:
        found = _trees(table, size, d, {})
    else:
        found = _sums(table, size, d, {}, {})
    return canonical(found, mode)


def _trees(table, size, d, memo):
    key = (size, d)
    if key in memo:
        return memo[key]
    out = []
    for deriv in table.derivations.get(key, ()):
        if size == 1:
            out.append(Leaf(deriv))
            continue
        op, left, right = deriv
        for a in _trees(table, *left, memo):
            for b in _trees(table, *right, memo):
                out.append(Node(op, a, b))
    memo[key] = out
    return out


def _terms(table, n, v, memo):
    key = (n, v)
    if key in memo:
        return memo[key]
    out = []
    for deriv in table.term_derivations.get(key, ()):
        if deriv is None:
            out.append((int(v),))
            continue
        prev, op, leaf = deriv
        out.extend(t + (op, leaf) for t in _terms(table, n - 1, prev, memo))
    memo[key] = out
    return out


def _sums(table, n, v, memo, term_memo):
    key = (n, v)
    if key in memo:
        return memo[key]
    out = []
    for deriv in table.sum_derivations.get(key, ()):
        if deriv == "term":
            out.extend(_terms(table, n, v, term_memo))
            continue
        k, v1, op, v2 = deriv
        heads = _sums(table, k, v1, memo, term_memo)
        tails = _terms(table, n - k, v2, term_memo)
        out.extend(h + (op,) + t for h in heads for t in tails)
    memo[key] = out
    return out


@lru_cache(maxsize=None)
def all_trees(size: int) -> tuple:
    """Every binary tree over operands 1..5 with ``size`` leaves (no evaluation)."""
    if size == 1:
        return tuple(Leaf(v) for v in range(1, MAX_VALUE + 1))
    out = []
    for i in range(1, size):
        for a in all_trees(i):
            for b in all_trees(size - i):
                out.extend(Node(op, a, b) for op in OPS)
    return tuple(out)


def all_flats(size: int):
    for values in itertools.product(range(1, MAX_VALUE + 1), repeat=size):
        for ops in itertools.product(OPS, repeat=size - 1):
            flat = [values[0]]
            for op, v in zip(ops, values[1:]):
                flat += [op, v]
            yield tuple(flat)


def brute_force_candidates(d, size: int, mode: GrammarMode) -> tuple:
    """Reference answer: enumerate everything of ``size`` and filter by value."""
    return canonical(_brute_groups(size, GrammarMode.from_flag(mode)).get(Fraction(d), ()), mode)


@lru_cache(maxsize=None)
def _brute_groups(size, mode):
    if mode is GrammarMode.WITH_BRACKETS:
        pool, value = all_trees(size), evaluate
    else:
        pool, value = all_flats(size), evaluate_flat
    groups = defaultdict(list)
    for c in pool:
        try:
            groups[value(c)].append(c)
        except DivisionByZero:
            continue
    return dict(groups)


def index_lines(table: DenotationTable, sizes, mode: GrammarMode):
    mode = GrammarMode.from_flag(mode)
    yield f"# grammar={mode.value} sizes={','.join(str(s) for s in sorted(sizes))}\n"
    for size in sorted(sizes):
        if size > table.max_operands:
            raise ValueError(f"size {size} beyond table bound {table.max_operands}")
        values = table.reachable[size] if mode is GrammarMode.WITH_BRACKETS else table.flat_reachable(size)
        for d in sorted(values):
            cands = enumerate_candidates(d, size, mode, table)
            body = " ; ".join(candidate_key(c, mode) for c in cands)
            yield f"{size}\t{denotation_to_str(d)}\t{body}\n"


def persist_index(table: DenotationTable, sizes, path, mode: GrammarMode) -> None:
    """Write the ``(size, d) -> candidates`` map as tab-separated text."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(index_lines(table, sizes, mode))
    os.replace(tmp, path)


class CandidateIndex:
    """Loaded index file.  Candidate strings are parsed lazily per lookup."""

    def __init__(self, mode: GrammarMode, sizes, raw: dict):
        self.mode = GrammarMode.from_flag(mode)
        self.sizes = frozenset(sizes)
        self._raw = raw
        self._parsed = {}

    @classmethod
    def load(cls, path) -> "CandidateIndex":
        mode = None
        sizes = None
        raw = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if line.startswith("#"):
                    fields = dict(f.split("=", 1) for f in line[1:].split() if "=" in f)
                    try:
                        mode = GrammarMode(fields["grammar"])
                        sizes = {int(s) for s in fields["sizes"].split(",") if s}
                    except (KeyError, ValueError) as exc:
                        raise IndexFormatError(f"{path}:{lineno}: bad header {line!r}") from exc
                    continue
                if mode is None:
                    raise IndexFormatError(f"{path}:{lineno}: record before header")
                parts = line.split("\t")
                if len(parts) != 3:
                    raise IndexFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
                try:
                    size = int(parts[0])
                    d = denotation_from_str(parts[1])
                except ValueError as exc:
                    raise IndexFormatError(f"{path}:{lineno}: {exc}") from exc
                if size not in sizes:
                    raise IndexFormatError(f"{path}:{lineno}: size {size} not declared in header")
                cands = [c.strip() for c in parts[2].split(";")]
                if not all(cands) or cands != sorted(cands):
                    raise IndexFormatError(f"{path}:{lineno}: candidates empty or out of order")
                if (size, d) in raw:
                    raise IndexFormatError(f"{path}:{lineno}: duplicate key")
                raw[(size, d)] = cands
        if mode is None:
            raise IndexFormatError(f"{path}: missing header")
        return cls(mode, sizes, raw)

    def lookup(self, d, size: int) -> tuple:
        if size not in self.sizes:
            raise IndexMissing(f"operand count {size} not in index")
        key = (size, Fraction(d))
        if key not in self._parsed:
            parsed = []
            for text in self._raw.get(key, ()):
                try:
                    if self.mode is GrammarMode.NO_BRACKETS:
                        c = parse_flat_form(text)
                    else:
                        c = parse_logical_form(text, self.mode)
                except Malformed as exc:
                    raise IndexFormatError(f"bad candidate {text!r}: {exc}") from exc
                if self.mode is GrammarMode.WITH_BRACKETS and leaf_count(c) != size:
                    raise IndexFormatError(f"candidate {text!r} has wrong size")
                parsed.append(c)
            self._parsed[key] = tuple(parsed)
        return self._parsed[key]

    def lookup_strings(self, d, size: int) -> tuple:
        """Serialized candidates without parsing them."""
        if size not in self.sizes:
            raise IndexMissing(f"operand count {size} not in index")
        return tuple(self._raw.get((size, Fraction(d)), ()))

    def __len__(self):
        return len(self._raw)


def lookup(index: CandidateIndex, d, size: int, mode: GrammarMode | None = None) -> tuple:
    if mode is not None and GrammarMode.from_flag(mode) is not index.mode:
        raise IndexMissing(f"index holds {index.mode.value} forms, asked for {GrammarMode.from_flag(mode).value}")
    return index.lookup(d, size)
