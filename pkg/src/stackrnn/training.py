"""SGD with truncated BPTT, hard clipping, entropy-driven lr halving,
a length curriculum, and random restarts."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .evaluation import entropy, sequence_accuracy
from .memory import MemoryOverflowError
from .model import Model, ModelConfig, Parameters, StepState, backward, init_params, window_loss
from .numerics import NonFiniteError
from .tasks import TaskSpec, TokenStream, make_stream_tokens

log = logging.getLogger(__name__)

VAL_SEED = 7919


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    clip: float = 15.0
    bptt_window: int = 50
    epoch_tokens: int = 10_000
    max_epochs: int = 100
    curriculum_start: int = 2
    curriculum_epochs: int = 2
    curriculum_max: int = 19
    restarts: int = 10
    lr_halt: float = 1e-5
    seed: int = 0
    val_tokens: int = 2_000
    val_trials: int = 10
    # restart selection scores the validation set with rounded controllers
    select_discretize: bool = True
    min_delta: float = 1e-4
    # lr halving only starts once the curriculum reached curriculum_max
    anneal_after_curriculum: bool = True
    # skip the remaining restarts once one reaches this validation accuracy
    stop_at_accuracy: float | None = None

    def __post_init__(self):
        if self.bptt_window < 2:
            raise ValueError("bptt_window must be >= 2")
        for name in ("lr0", "clip", "epoch_tokens", "max_epochs", "restarts", "curriculum_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class EpochRecord:
    epoch: int
    n_max: int
    lr: float
    train_nll: float
    val_entropy_bits: float

    def log_line(self) -> str:
        return (
            f"epoch={self.epoch} nmax={self.n_max} lr={self.lr:.6g} "
            f"train_nll={self.train_nll:.6f} val_entropy_bits={self.val_entropy_bits:.6f}"
        )


@dataclass
class RunRecord:
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    params: Parameters | None = None
    val_accuracy: float = 0.0
    val_entropy_bits: float = float("inf")
    status: str = "ok"

    @property
    def diverged(self) -> bool:
        return self.status != "ok"

    def log_text(self) -> str:
        lines = [e.log_line() for e in self.epochs]
        lines.append(
            f"final seed={self.seed} status={self.status} val_accuracy={self.val_accuracy:.6f} "
            f"val_entropy_bits={self.val_entropy_bits:.6f}"
        )
        return "\n".join(lines) + "\n"


def clip_gradients(g, c: float):
    """Element-wise clamp to [-c, c]; accepts an array or :class:`Parameters`."""
    if c <= 0:
        raise ValueError("clip value must be positive")
    if isinstance(g, Parameters):
        return Parameters(*(np.clip(a, -c, c) for a in g.arrays()))
    return np.clip(np.asarray(g, dtype=np.float64), -c, c)


def sgd_step(params: Parameters, grads: Parameters, lr: float, clip: float) -> None:
    for p, g in zip(params.arrays(), grads.arrays()):
        np.clip(g, -clip, clip, out=g)
        p -= lr * g


def lr_schedule_step(prev_val_entropy: float, new_val_entropy: float, lr: float,
                     min_delta: float = 1e-4) -> float:
    if not new_val_entropy < prev_val_entropy - min_delta:
        return lr / 2.0
    return lr


def curriculum_n(epoch: int, config: TrainConfig) -> int:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return min(config.curriculum_start + epoch // config.curriculum_epochs, config.curriculum_max)


def windows(n_tokens: int, bptt: int):
    """Start/stop of non-overlapping windows; each spans ``bptt`` inputs
    plus the following target token."""
    start = 0
    while start + 1 < n_tokens:
        stop = min(start + bptt + 1, n_tokens)
        yield start, stop
        start = stop - 1


def train_epoch(
    params: Parameters,
    config: ModelConfig,
    stream: TokenStream,
    lr: float,
    bptt_window: int = 50,
    clip: float = 15.0,
    state: StepState | None = None,
) -> tuple[Parameters, float, StepState]:
    """One pass of truncated BPTT over ``stream``; updates ``params`` in place.

    Returns the parameters, the mean NLL (nats) per trained prediction, and
    the carried state at the end of the stream.
    """
    if len(stream) < 2:
        raise ValueError("stream too short")
    state = state or StepState.fresh(config)
    total = 0.0
    count = 0
    for start, stop in windows(len(stream), bptt_window):
        mask = stream.loss_mask[start + 1 : stop]
        loss, cache = window_loss(params, config, state, stream.tokens[start:stop], mask)
        if mask.any() and lr != 0.0:
            sgd_step(params, backward(cache), lr, clip)
        if not params.all_finite():
            raise NonFiniteError("parameters became non-finite")
        state = cache.final_state
        total += loss
        count += int(mask.sum())
    return params, total / max(count, 1), state


def _validation_entropy(model: Model, stream: TokenStream) -> float:
    return entropy(model, stream)[0]


def train_run(
    model_config: ModelConfig,
    task: TaskSpec,
    train_config: TrainConfig,
    seed: int,
    progress: Callable[[int, EpochRecord], None] | None = None,
) -> RunRecord:
    """A single training run from a fresh initialization."""
    tc = train_config
    rec = RunRecord(seed)
    params = init_params(model_config, seed)
    model = Model(model_config, params, task.vocab)
    val_stream = make_stream_tokens(task, tc.curriculum_max, tc.val_tokens,
                                    np.random.default_rng([tc.seed, VAL_SEED]))
    lr = tc.lr0
    prev = float("inf")
    try:
        for epoch in range(tc.max_epochs):
            n_max = curriculum_n(epoch, tc)
            rng = np.random.default_rng([seed, epoch])
            stream = make_stream_tokens(task, n_max, tc.epoch_tokens, rng)
            _, train_nll, _ = train_epoch(params, model_config, stream, lr, tc.bptt_window, tc.clip)
            val = _validation_entropy(model, val_stream)
            if not np.isfinite(val):
                raise NonFiniteError("non-finite validation entropy")
            er = EpochRecord(epoch, n_max, lr, train_nll, val)
            rec.epochs.append(er)
            log.debug("seed=%d %s", seed, er.log_line())
            if progress:
                progress(seed, er)
            annealing = not tc.anneal_after_curriculum or n_max == tc.curriculum_max
            if annealing and np.isfinite(prev):
                lr = lr_schedule_step(prev, val, lr, tc.min_delta)
            if annealing:
                prev = val
            if lr < tc.lr_halt:
                break
    except (NonFiniteError, MemoryOverflowError, FloatingPointError) as exc:
        rec.status = f"diverged:{type(exc).__name__}"
        rec.params = params
        return rec
    rec.params = params
    rec.val_entropy_bits = rec.epochs[-1].val_entropy_bits
    rec.val_accuracy = sequence_accuracy(
        model, task, tc.curriculum_max, tc.val_trials, tc.select_discretize,
        seed=int(np.random.default_rng([tc.seed, VAL_SEED, 1]).integers(2**31)),
    )
    return rec


def select_best(records: list[RunRecord]) -> RunRecord:
    """Highest validation accuracy, then lowest entropy, then lowest seed."""
    ok = [r for r in records if not r.diverged]
    if not ok:
        raise TrainingError("all restarts diverged")
    return min(ok, key=lambda r: (-r.val_accuracy, r.val_entropy_bits, r.seed))


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("STACKRNN_THREADS", "1")))
    except ValueError:
        return 1


def train_with_restarts(
    model_config: ModelConfig,
    task: TaskSpec,
    train_config: TrainConfig,
    progress: Callable[[int, EpochRecord], None] | None = None,
    threads: int | None = None,
) -> tuple[Model, list[RunRecord]]:
    """Independent runs with seeds ``seed, seed+1, ...``; returns the best
    model and every run's record (in seed order)."""
    if train_config.restarts < 1:
        raise ValueError("restarts must be >= 1")
    seeds = [train_config.seed + r for r in range(train_config.restarts)]
    threads = threads or thread_count()

    def run(s):
        return train_run(model_config, task, train_config, s, progress)

    target = train_config.stop_at_accuracy
    records: list[RunRecord] = []
    # batches of ``threads`` seeds keep the set of runs independent of timing
    for i in range(0, len(seeds), threads):
        batch = seeds[i : i + threads]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                records += list(pool.map(run, batch))
        else:
            records += [run(s) for s in batch]
        if target is not None and any(not r.diverged and r.val_accuracy >= target for r in records):
            break
    best = select_best(records)
    return Model(model_config, best.params, task.vocab), records


def train_lm(
    model_config: ModelConfig,
    train_stream: TokenStream,
    val_stream: TokenStream,
    train_config: TrainConfig,
    seed: int | None = None,
    progress: Callable[[int, EpochRecord], None] | None = None,
) -> tuple[RunRecord, float]:
    """Language modelling on a fixed text stream (no curriculum).

    An epoch is one pass over ``train_stream``. Returns the run record and
    the validation entropy of the untrained model.
    """
    tc = train_config
    seed = tc.seed if seed is None else seed
    vocab = tuple(train_stream.vocab)
    params = init_params(model_config, seed)
    model = Model(model_config, params, vocab)
    rec = RunRecord(seed)
    initial = lm_entropy = _validation_entropy(model, val_stream)
    prev = initial
    lr = tc.lr0
    try:
        for epoch in range(tc.max_epochs):
            _, train_nll, _ = train_epoch(params, model_config, train_stream, lr,
                                          tc.bptt_window, tc.clip)
            lm_entropy = _validation_entropy(model, val_stream)
            er = EpochRecord(epoch, 0, lr, train_nll, lm_entropy)
            rec.epochs.append(er)
            if progress:
                progress(seed, er)
            lr = lr_schedule_step(prev, lm_entropy, lr, tc.min_delta)
            prev = lm_entropy
            if lr < tc.lr_halt:
                break
    except (NonFiniteError, MemoryOverflowError, FloatingPointError) as exc:
        rec.status = f"diverged:{type(exc).__name__}"
    rec.params = params
    rec.val_entropy_bits = lm_entropy
    return rec, initial
