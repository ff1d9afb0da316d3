"""Dataset generation and the tab-separated dataset format."""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .arith import (
    MAX_OPERANDS,
    MIN_OPERANDS,
    GrammarMode,
    Malformed,
    Utterance,
    denotation_from_str,
    denotation_to_str,
    evaluate,
    flatten,
    linearize,
    linearize_flat,
    parse_flat_form,
    parse_logical_form,
    precedence_parse,
    render_utterance,
)
from .index import all_flats


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    utterance: Utterance
    flat: tuple
    denotation: Fraction

    @property
    def tree(self):
        return precedence_parse(self.flat)

    def gold_form(self, mode: GrammarMode) -> tuple:
        if GrammarMode.from_flag(mode) is GrammarMode.WITH_BRACKETS:
            return linearize(self.tree, mode)
        return linearize_flat(self.flat)

    @classmethod
    def from_flat(cls, flat) -> "DatasetRecord":
        return cls(render_utterance(flat), tuple(flat), evaluate(precedence_parse(flat)))

    def to_line(self) -> str:
        return "\t".join((
            str(self.utterance),
            " ".join(self.gold_form(GrammarMode.WITH_BRACKETS)),
            " ".join(self.gold_form(GrammarMode.NO_BRACKETS)),
            denotation_to_str(self.denotation),
        )) + "\n"

    @classmethod
    def from_line(cls, line: str) -> "DatasetRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise DatasetError("expected 4 tab-separated fields")
        try:
            utterance = Utterance.parse(parts[0])
            tree = parse_logical_form(parts[1], GrammarMode.WITH_BRACKETS)
            flat = parse_flat_form(parts[2])
            d = denotation_from_str(parts[3])
        except (Malformed, ValueError) as exc:
            raise DatasetError(str(exc)) from exc
        if utterance.flat() != flat or flatten(tree) != flat:
            raise DatasetError("utterance and logical forms describe different expressions")
        if tree != precedence_parse(flat):
            raise DatasetError("bracketed form does not follow operator precedence")
        if evaluate(tree) != d:
            raise DatasetError(f"logical form evaluates to {evaluate(tree)}, record says {d}")
        return cls(utterance, flat, d)


def legal_space() -> list:
    """Every flat expression with 2..4 operands, shortest first."""
    space = []
    for n in range(MIN_OPERANDS, MAX_OPERANDS + 1):
        space.extend(all_flats(n))
    return space


def generate(seed: int, total: int = 8000, train: int = 6000):
    """Sample ``total`` distinct expressions; split into train and test.

    Sampling is uniform without replacement over the whole legal space, so
    the split is disjoint as a set of utterances.
    """
    space = legal_space()
    if total > len(space):
        raise DatasetError(f"total {total} exceeds the {len(space)} distinct expressions")
    if not 0 <= train <= total:
        raise DatasetError("train size must lie in 0..total")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(space), size=total, replace=False)
    records = [DatasetRecord.from_flat(space[i]) for i in picks]
    return records[:train], records[train:]


def write_dataset(path, records) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(r.to_line() for r in records)
    os.replace(tmp, path)


def read_dataset(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(DatasetRecord.from_line(line))
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return records
