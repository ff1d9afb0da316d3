"""Weakly supervised training loop: infer, filter, score, train.

In denotation mode each example only carries its utterance and value.  The
training target is chosen per step from the consistent logical forms:
candidates come from the index, are narrowed to those most similar to the
nearest base case, and the current model picks the one it finds likeliest.
Gold mode trains directly on the generator's logical form and serves as the
fully supervised baseline.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import seq2seq as s2s
from .arith import (
    MAX_SOURCE_LEN,
    MAX_TARGET_LEN,
    DivisionByZero,
    GrammarMode,
    Malformed,
    Utterance,
    evaluate,
    evaluate_flat,
    parse_logical_form,
)
from .case_filter import filter_candidates, select_base_case
from .index import CandidateIndex, candidate_tokens

log = logging.getLogger(__name__)

DEFAULT_CURRICULUM = ((3, 20), (5, 20), (7, 160))
METRICS_NAME = "metrics.tsv"
CHECKPOINT_NAME = "model.ckpt"
SUMMARY_NAME = "summary.json"


class NoCandidates(LookupError):
    pass


class ConfigError(ValueError):
    pass


def parse_curriculum(text: str) -> tuple:
    """``"3:20,5:20,7:160"`` -> ((3, 20), (5, 20), (7, 160))."""
    stages = []
    try:
        for part in text.split(","):
            length, epochs = part.split(":")
            stages.append((int(length), int(epochs)))
    except ValueError:
        raise ConfigError(f"bad curriculum {text!r}; expected LEN:EPOCHS,...") from None
    return tuple(stages)


@dataclass
class TrainConfig:
    supervision: str = "denotation"
    grammar: GrammarMode = GrammarMode.WITH_BRACKETS
    epochs: int = 200
    seed: int = 0
    curriculum: tuple = DEFAULT_CURRICULUM
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    model: s2s.ModelConfig = field(default_factory=s2s.ModelConfig)

    def validate(self) -> None:
        if self.supervision not in ("gold", "denotation"):
            raise ConfigError(f"supervision must be gold or denotation, not {self.supervision!r}")
        self.grammar = GrammarMode.from_flag(self.grammar)
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if not self.curriculum:
            raise ConfigError("curriculum needs at least one stage")
        lengths = [n for n, _ in self.curriculum]
        if any(n not in (3, 5, 7) for n in lengths):
            raise ConfigError("curriculum lengths must be 3, 5 or 7")
        if lengths != sorted(lengths):
            raise ConfigError("curriculum lengths must be non-decreasing")
        if any(e < 0 for _, e in self.curriculum):
            raise ConfigError("curriculum stage lengths must be non-negative")
        if sum(e for _, e in self.curriculum) > self.epochs:
            raise ConfigError("curriculum stages exceed the epoch budget")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grammar"] = self.grammar.value
        d["curriculum"] = [list(s) for s in self.curriculum]
        return d


def curriculum_stage(epoch: int, config: TrainConfig) -> int:
    """Longest utterance (in words) admitted at ``epoch``."""
    boundary = 0
    for length, span in config.curriculum:
        boundary += span
        if epoch < boundary:
            return length
    return config.curriculum[-1][0]


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    returned_correct_fraction: float
    denotation_accuracy: float
    skipped: int
    trained: int = 0
    consistent: int = 0

    def to_line(self) -> str:
        return (f"{self.epoch}\t{self.mean_loss:.6f}\t{self.returned_correct_fraction:.6f}"
                f"\t{self.denotation_accuracy:.6f}\t{self.skipped}\n")

    @classmethod
    def from_line(cls, line: str) -> "EpochMetrics":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 5:
            raise ValueError(f"metrics line needs 5 fields: {line!r}")
        return cls(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]), int(parts[4]))


def read_metrics(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [EpochMetrics.from_line(line) for line in fh if line.strip()]


class Example:
    """A training or test item with everything the loop needs precomputed."""

    __slots__ = ("record", "words", "source", "gold_key", "gold_ids", "gamma", "gamma_ids", "gamma_keys")

    def __init__(self, record, mode: GrammarMode):
        self.record = record
        self.words = len(record.utterance.words)
        self.source = s2s.SOURCE_VOCAB.encode(record.utterance.padded(), MAX_SOURCE_LEN)
        gold = record.gold_form(mode)
        self.gold_key = " ".join(gold)
        self.gold_ids = s2s.TARGET_VOCAB.encode(gold, MAX_TARGET_LEN)
        self.gamma = None
        self.gamma_ids = None
        self.gamma_keys = None


def candidate_pool(utterance: Utterance, denotation, index: CandidateIndex, base_cases, mode):
    """The filtered set for one example (model independent)."""
    omega = index.lookup(denotation, utterance.operand_count)
    if not omega:
        raise NoCandidates(f"no logical form of size {utterance.operand_count} has value {denotation}")
    base = select_base_case(utterance, base_cases)
    return filter_candidates(omega, base.logical_form(mode), mode)


def infer_training_form(utterance: Utterance, denotation, index: CandidateIndex, base_cases, params):
    """Pick the training target for ``(utterance, denotation)``.

    The result always executes to ``denotation``.
    """
    mode = index.mode
    gamma = candidate_pool(utterance, denotation, index, base_cases, mode)
    forms = [candidate_tokens(c, mode) for c in gamma]
    best = s2s.score_candidates(utterance.padded(), forms, params)
    return gamma[best]


def _candidate_value(candidate, mode):
    if mode is GrammarMode.WITH_BRACKETS:
        return evaluate(candidate)
    return evaluate_flat(candidate)


def prepare_examples(records, mode, index=None, base_cases=None) -> list:
    """Wrap records; with an index, attach each example's filtered candidates."""
    examples = [Example(r, mode) for r in records]
    if index is None:
        return examples
    cache = {}
    for ex in examples:
        utt = ex.record.utterance
        base = select_base_case(utt, base_cases)
        key = (utt.operand_count, ex.record.denotation, base.utterance)
        if key not in cache:
            try:
                gamma = candidate_pool(utt, ex.record.denotation, index, base_cases, mode)
            except NoCandidates:
                gamma = ()
            forms = [candidate_tokens(c, mode) for c in gamma]
            width = max((len(f) for f in forms), default=0)
            ids = np.zeros((len(forms), width), dtype=np.int64)
            for n, f in enumerate(forms):
                ids[n, :len(f)] = s2s.TARGET_VOCAB.encode(f)
            cache[key] = (gamma, ids, [" ".join(f) for f in forms])
        ex.gamma, ex.gamma_ids, ex.gamma_keys = cache[key]
    return examples


class Trainer:
    def __init__(self, config: TrainConfig, train_examples, test_examples=()):
        config.validate()
        self.config = config
        self.mode = config.grammar
        self.train_examples = list(train_examples)
        self.test_examples = list(test_examples)
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.params = s2s.Params.init(config.model, np.random.default_rng(seeds[0]))
        self.shuffle_rng = np.random.default_rng(seeds[1])
        self.dropout_rng = np.random.default_rng(seeds[2])
        self.optimizer = s2s.RMSProp(config.lr, config.rho, config.eps)
        self.grads = self.params.zeros_like()
        self.history = []

    def train_step(self, source, target) -> float:
        T, S = s2s.source_length(source), s2s.target_steps(target)
        masks = s2s.dropout_masks(self.config.model, T, S, self.dropout_rng)
        loss, trace = s2s.nll_with_masks(source, target, self.params, masks)
        self.grads.flat[:] = 0.0
        s2s.backprop(trace, self.params, out=self.grads)
        s2s.rmsprop_step(self.params, self.grads, self.optimizer)
        return loss

    def pick_target(self, ex: Example) -> int:
        ids = ex.gamma_ids
        if len(ids) == 1:
            return 0
        T = s2s.source_length(ex.source)
        masks = s2s.dropout_masks(self.config.model, T, ids.shape[1], None)
        lengths = np.array([s2s.target_steps(r) + 1 for r in ids], dtype=np.int64)
        losses = s2s.kernels.score_many(self.params.as_tuple, ex.source, T, ids, lengths, *masks)
        return int(np.argmin(losses))

    def train_epoch(self, epoch: int) -> EpochMetrics:
        max_words = curriculum_stage(epoch, self.config)
        pool = [ex for ex in self.train_examples if ex.words <= max_words]
        order = self.shuffle_rng.permutation(len(pool))
        total_loss = 0.0
        trained = correct = skipped = consistent = 0
        for i in order:
            ex = pool[i]
            if self.config.supervision == "gold":
                target = ex.gold_ids
                correct += 1
                consistent += 1
            else:
                if ex.gamma is None:
                    raise ConfigError("denotation supervision needs prepared candidates")
                if len(ex.gamma) == 0:
                    skipped += 1
                    continue
                pick = self.pick_target(ex)
                if _candidate_value(ex.gamma[pick], self.mode) == ex.record.denotation:
                    consistent += 1
                correct += ex.gamma_keys[pick] == ex.gold_key
                target = ex.gamma_ids[pick]
            total_loss += self.train_step(ex.source, target)
            trained += 1
        accuracy = evaluate_accuracy(self.test_examples, self.params, self.mode) if self.test_examples else 0.0
        metrics = EpochMetrics(
            epoch=epoch,
            mean_loss=total_loss / trained if trained else 0.0,
            returned_correct_fraction=correct / trained if trained else 0.0,
            denotation_accuracy=accuracy,
            skipped=skipped,
            trained=trained,
            consistent=consistent,
        )
        self.history.append(metrics)
        return metrics


def decode_denotation(source, params, mode):
    """Value of the greedy decode, or None when it is malformed or undefined."""
    tokens = s2s.greedy_decode(source, params)
    try:
        return evaluate(parse_logical_form(tokens, mode))
    except (Malformed, DivisionByZero):
        return None


def evaluate_accuracy(examples, params, mode) -> float:
    """Share of examples whose decoded logical form executes to the gold value."""
    if not examples:
        return 0.0
    mode = GrammarMode.from_flag(mode)
    hits = sum(decode_denotation(ex.source, params, mode) == ex.record.denotation for ex in examples)
    return hits / len(examples)


def run_training(config: TrainConfig, train_records, test_records, out_dir,
                 index: CandidateIndex | None = None, base_cases=None, progress=None):
    """Train, streaming one metrics line per epoch; writes the final checkpoint.

    Returns the list of :class:`EpochMetrics`.
    """
    config.validate()
    if config.supervision == "denotation":
        if index is None or base_cases is None:
            raise ConfigError("denotation supervision needs an index and base cases")
        if index.mode is not config.grammar:
            raise ConfigError(f"index holds {index.mode.value} forms but grammar is {config.grammar.value}")
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    train = prepare_examples(train_records, config.grammar,
                             index if config.supervision == "denotation" else None, base_cases)
    test = prepare_examples(test_records, config.grammar)
    trainer = Trainer(config, train, test)
    metrics_path = os.path.join(out_dir, METRICS_NAME)
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        for epoch in range(config.epochs):
            m = trainer.train_epoch(epoch)
            fh.write(m.to_line())
            fh.flush()
            log.info("epoch %d loss %.4f returned %.3f accuracy %.4f", epoch, m.mean_loss,
                     m.returned_correct_fraction, m.denotation_accuracy)
            if progress is not None:
                progress(m)
    s2s.save_checkpoint(os.path.join(out_dir, CHECKPOINT_NAME), trainer.params, seed=config.seed,
                        extra={"grammar": config.grammar.value, "supervision": config.supervision})
    summary = {
        "config": config.to_dict(),
        "train_size": len(train),
        "test_size": len(test),
        "final_accuracy": trainer.history[-1].denotation_accuracy if trainer.history else None,
        "consistency": [[m.trained, m.consistent] for m in trainer.history],
        "seconds": round(time.time() - started, 1),
    }
    # Wall-clock time lives in the summary only, so metrics stay byte-reproducible.
    with open(os.path.join(out_dir, SUMMARY_NAME), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return trainer.history

