"""Scoring deterministic parts, per-length generalization tables, entropy and traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .memory import action_names
from .model import Model, run_stream
from .tasks import (
    COUNTING,
    LabeledSequence,
    TaskSpec,
    TokenStream,
    gen_binary_addition,
    gen_counting,
    gen_memorization,
    sample_sequence,
)

CHANCE_THRESHOLD = 100.0 / 3.0
LN2 = math.log(2.0)


class VocabularyMismatch(ValueError):
    pass


def check_vocab(model: Model, task: TaskSpec) -> None:
    if tuple(model.vocab) != tuple(task.vocab):
        raise VocabularyMismatch(f"model vocabulary {model.vocab} != task vocabulary {task.vocab}")


def deterministic_part_correct(pred: Sequence[int], tokens: Sequence[int], det_mask: Sequence[bool]) -> bool:
    """``pred[t]`` is the prediction for ``tokens[t+1]``; every position with
    ``det_mask[t+1]`` must be right."""
    tokens = np.asarray(tokens)
    det = np.asarray(det_mask, dtype=bool)[1:]
    pred = np.asarray(pred)[: len(tokens) - 1]
    return bool(np.all(pred[det] == tokens[1:][det]))


def default_mode(task: TaskSpec) -> str:
    # training never starts from an empty memory, so neither does scoring
    return "stream"


def primer(task: TaskSpec) -> LabeledSequence:
    """The smallest fixed instance of ``task``, run before a scored sequence."""
    if task.name in COUNTING:
        return gen_counting(task.name, 1, 1 if task.name == "anbmcnm" else None)
    if task.name == "memorization":
        return gen_memorization(1, len(task.vocab) - 1, word=[1])
    if task.name == "binary_addition":
        return gen_binary_addition(2, operands=(1, 1))
    raise ValueError(f"no primer for task {task.name!r}")


def _context(task: TaskSpec, seq: LabeledSequence, mode: str):
    """Tokens to run, their det mask, and the slice that must be judged."""
    if mode == "reset":
        return list(seq.tokens), list(seq.det_mask), 0
    if mode != "stream":
        raise ValueError(f"mode must be 'stream' or 'reset', got {mode!r}")
    # a short primer leaves the model in a post-sequence state, as in training;
    # the following boundary token is scored when it is predictable
    pre = primer(task)
    tokens = list(pre.tokens) + list(seq.tokens)
    det = [False] * len(pre) + list(seq.det_mask)
    if seq.next_token_deterministic:
        tokens.append(task.index("a"))
        det.append(True)
    return tokens, det, len(pre)


def eval_sequence(model: Model, seq: LabeledSequence, discretize: bool, task: TaskSpec | None = None,
                  mode: str = "reset") -> bool:
    """Run from a fresh state; in ``stream`` mode the sequence follows a
    primer and its boundary token is judged too."""
    if task is not None:
        check_vocab(model, task)
    elif mode != "reset":
        raise ValueError("stream mode needs the task")
    tokens, det, _ = _context(task, seq, mode) if task is not None else (seq.tokens, seq.det_mask, 0)
    res = run_stream(model.params, model.config, tokens, discretize=discretize)
    return deterministic_part_correct(res.pred, tokens, det)


@dataclass
class LengthRow:
    n: int
    trials: int
    correct_trials: int

    @property
    def n_correct(self) -> bool:
        return self.correct_trials == self.trials

    @property
    def accuracy(self) -> float:
        return self.correct_trials / self.trials


@dataclass
class EvalReport:
    task: str
    rows: list[LengthRow] = field(default_factory=list)
    discretized: bool = False

    @property
    def percent(self) -> float:
        if not self.rows:
            return 0.0
        return 100.0 * sum(r.n_correct for r in self.rows) / len(self.rows)

    @property
    def generalizes(self) -> bool:
        return self.percent > CHANCE_THRESHOLD

    def accuracy(self, n: int) -> float:
        for r in self.rows:
            if r.n == n:
                return r.accuracy
        raise KeyError(n)

    def to_csv(self) -> str:
        lines = ["n,trials,correct_trials,n_correct"]
        lines += [f"{r.n},{r.trials},{r.correct_trials},{int(r.n_correct)}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        head = f"{'n':>4} {'trials':>6} {'correct':>7} {'ok':>3}"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r.n:>4} {r.trials:>6} {r.correct_trials:>7} {'Y' if r.n_correct else '.':>3}")
        lines.append(
            f"task={self.task} rounding={'on' if self.discretized else 'off'} "
            f"percent={self.percent:.1f}"
        )
        return "\n".join(lines) + "\n"


def _trials_for(task: TaskSpec, trials_per_n: int) -> int:
    # pure counting patterns have exactly one sequence per n
    if task.name in COUNTING and task.name != "anbmcnm":
        return 1
    return trials_per_n


def sequences_for_length(task: TaskSpec, n: int, trials: int, seed: int) -> list[LabeledSequence]:
    rng = np.random.default_rng([seed, n])
    return [sample_sequence(task, n, rng) for _ in range(trials)]


def eval_per_length(
    model: Model,
    task: TaskSpec,
    n_test_max: int = 60,
    trials_per_n: int = 10,
    discretize: bool = True,
    seed: int = 0,
    mode: str | None = None,
    n_min: int | None = None,
) -> EvalReport:
    """Score every size ``n`` in ``[n_min, n_test_max]``; ``n`` counts as
    correct only if all of its trials are. Sizes the task cannot produce
    (n=1 for anbmcnm and addition) are skipped."""
    if trials_per_n < 1:
        raise ValueError("trials_per_n must be >= 1")
    check_vocab(model, task)
    mode = mode or default_mode(task)
    trials = _trials_for(task, trials_per_n)
    report = EvalReport(task.name, discretized=discretize)
    for n in range(max(task.min_n, n_min or 1), n_test_max + 1):
        seqs = sequences_for_length(task, n, trials, seed)
        good = sum(eval_sequence(model, s, discretize, task, mode) for s in seqs)
        report.rows.append(LengthRow(n, trials, good))
    return report


def sequence_accuracy(model: Model, task: TaskSpec, n_max: int, trials_per_n: int,
                      discretize: bool, seed: int) -> float:
    """Fraction of correctly predicted sequences over sizes up to ``n_max``."""
    mode = default_mode(task)
    trials = _trials_for(task, trials_per_n)
    total = good = 0
    for n in range(task.min_n, n_max + 1):
        for s in sequences_for_length(task, n, trials, seed):
            good += eval_sequence(model, s, discretize, task, mode)
            total += 1
    return good / total


def entropy(model: Model, stream: TokenStream) -> tuple[float, float]:
    """Mean bits per loss-masked token and the matching perplexity."""
    if len(stream) < 2:
        raise ValueError("entropy needs at least 2 tokens")
    mask = np.asarray(stream.loss_mask, dtype=bool)[1:]
    if not mask.any():
        raise ValueError("no loss-masked positions")
    res = run_stream(model.params, model.config, stream.tokens)
    bits = float(-np.mean(res.logp[:-1][mask]) / LN2)
    return bits, 2.0**bits


@dataclass
class TraceRow:
    current: str
    next: str
    prediction: str
    proba_next: float
    actions: tuple[str, ...]
    tops: tuple[float, ...]


@dataclass
class StepTrace:
    rows: list[TraceRow]
    units: int

    def __len__(self):
        return len(self.rows)

    def render(self) -> str:
        head = ["current", "next", "prediction", "proba(next)"]
        head += [f"action{j + 1}" for j in range(self.units)]
        head += [f"stack{j + 1}[top]" for j in range(self.units)]
        table = [head]
        for r in self.rows:
            proba = "-" if math.isnan(r.proba_next) else f"{r.proba_next:.2f}"
            tops = ["-1" if t == -1.0 else f"{t:.2f}" for t in r.tops]
            table.append([r.current, r.next or "-", r.prediction, proba, *r.actions, *tops])
        widths = [max(len(row[c]) for row in table) for c in range(len(head))]
        return "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table
        ) + "\n"


def trace(model: Model, tokens: Sequence[int], discretize: bool = True) -> StepTrace:
    """Per-step predictions, actions and top-of-memory values, from a fresh state."""
    cfg = model.config
    if cfg.units < 1:
        raise ValueError("tracing needs a model with memory units")
    res = run_stream(model.params, cfg, tokens, discretize=discretize)
    names = action_names(cfg.kind, cfg.use_noop)
    rows = []
    for t, x in enumerate(tokens):
        has_next = t + 1 < len(tokens)
        rows.append(
            TraceRow(
                current=model.vocab[x],
                next=model.vocab[tokens[t + 1]] if has_next else "",
                prediction=model.vocab[res.pred[t]],
                proba_next=math.exp(res.logp[t]) if has_next else math.nan,
                actions=tuple(names[i] for i in res.actions[t]),
                tops=tuple(float(v) for v in np.round(res.tops[t], 2)),
            )
        )
    return StepTrace(rows, cfg.units)
