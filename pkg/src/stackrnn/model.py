"""Simple RNN, Stack RNN and List RNN predictors.

One step of a memory-augmented model, from token ``x`` and state
``(h, memories)``::

    reads  = top-k cells of every memory unit (previous state)
    h'     = sigmoid(U[x] + R h + P reads)
    a_j    = softmax(A_j h')            # action distribution of unit j
    v_j    = sigmoid(D_j . h')          # value pushed / inserted by unit j
    mem_j' = update(mem_j, a_j, v_j)
    y      = softmax(V^T h')            # next-token distribution

:func:`forward_step` is the readable numpy version built on
:mod:`stackrnn.memory`; :func:`window_loss` / :func:`backward` run the fused
kernels used for training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .memory import (
    DEFAULT_CAP,
    ListState,
    MemoryOverflowError,
    StackState,
    list_read,
    list_update,
    n_actions,
    stack_read,
    stack_update,
)
from .numerics import NonFiniteError, matvec, sigmoid, softmax

KINDS = ("rnn", "stack", "list")
_KIND_CODE = {"rnn": K.KIND_RNN, "stack": K.KIND_STACK, "list": K.KIND_LIST}


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "stack"
    hidden: int = 40
    vocab_size: int = 2
    units: int = 10
    read_depth: int = 2
    use_noop: bool = False
    use_recurrent: bool = False
    cap: int = DEFAULT_CAP
    # "drop" discards cells pushed past the cap, "error" raises
    overflow: str = "drop"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.hidden < 1 or self.vocab_size < 2 or self.read_depth < 1 or self.cap < 1:
            raise ValueError(f"invalid model dimensions: {self}")
        if self.kind == "rnn" and self.units != 0:
            raise ValueError("a plain rnn has no memory units (units=0)")
        if self.kind != "rnn" and self.units < 1:
            raise ValueError("memory models need units >= 1")
        if self.overflow not in ("drop", "error"):
            raise ValueError(f"overflow must be 'drop' or 'error', got {self.overflow!r}")

    @property
    def n_actions(self) -> int:
        return n_actions(self.kind, self.use_noop)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        m, d, S = self.hidden, self.vocab_size, self.units
        return {
            "U": (d, m),
            "R": (m, m),
            "V": (m, d),
            "A": (S, self.n_actions, m),
            "D": (S, m),
            "P": (m, self.read_depth * S),
        }

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


@dataclass
class Parameters:
    """Trainable weights. ``A[j]`` and ``D[j]`` belong to memory unit ``j``;
    columns ``j*k : (j+1)*k`` of ``P`` read unit ``j``."""

    U: np.ndarray
    R: np.ndarray
    V: np.ndarray
    A: np.ndarray
    D: np.ndarray
    P: np.ndarray

    NAMES = ("U", "R", "V", "A", "D", "P")

    def arrays(self) -> Iterator[np.ndarray]:
        for name in self.NAMES:
            yield getattr(self, name)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, config: ModelConfig, vec: np.ndarray) -> "Parameters":
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = {}, 0
        for name, shape in config.shapes().items():
            n = int(np.prod(shape))
            out[name] = vec[pos : pos + n].reshape(shape).copy()
            pos += n
        if pos != vec.size:
            raise ValueError(f"expected {pos} parameters, got {vec.size}")
        return cls(**out)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "Parameters":
        return cls(**{n: np.zeros(s) for n, s in config.shapes().items()})

    def copy(self) -> "Parameters":
        return Parameters(*(a.copy() for a in self.arrays()))

    def named_matrices(self) -> Iterator[tuple[str, np.ndarray]]:
        """2-D views in checkpoint order: U, R, V, A0.., D0.., P."""
        yield "U", self.U
        yield "R", self.R
        yield "V", self.V
        for j in range(self.A.shape[0]):
            yield f"A{j}", self.A[j]
        for j in range(self.D.shape[0]):
            yield f"D{j}", self.D[j][None, :]
        yield "P", self.P

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def __eq__(self, other):
        return isinstance(other, Parameters) and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def init_params(config: ModelConfig, seed: int) -> Parameters:
    """Every trainable entry i.i.d. uniform on [-0.1, 0.1]; R stays 0 when unused."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in config.shapes().items():
        if name == "R" and not config.use_recurrent:
            out[name] = np.zeros(shape)
        else:
            out[name] = rng.uniform(-0.1, 0.1, size=shape)
    return Parameters(**out)


Memory = StackState | ListState


@dataclass(frozen=True)
class StepState:
    h: np.ndarray
    memories: tuple[Memory, ...] = field(default_factory=tuple)

    @classmethod
    def fresh(cls, config: ModelConfig) -> "StepState":
        empty = StackState if config.kind == "stack" else ListState
        return cls(np.zeros(config.hidden), tuple(empty() for _ in range(config.units)))

    def __eq__(self, other):
        return (
            isinstance(other, StepState)
            and np.array_equal(self.h, other.h)
            and self.memories == other.memories
        )


def _read(mem: Memory, k: int) -> np.ndarray:
    return stack_read(mem, k) if isinstance(mem, StackState) else list_read(mem, k)


def _discretize(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[int(np.argmax(a))] = 1.0  # argmax returns the lowest index on ties
    return out


def forward_step(
    params: Parameters,
    config: ModelConfig,
    state: StepState,
    x: int,
    discretize: bool = False,
) -> tuple[np.ndarray, list[np.ndarray], StepState]:
    """Returns ``(y, actions, new_state)``; reads use the previous memories."""
    if not 0 <= x < config.vocab_size:
        raise IndexError(f"token id {x} out of range")
    z = params.U[x].copy()
    if config.use_recurrent:
        z += matvec(params.R, state.h)
    if config.units:
        reads = np.concatenate([_read(mem, config.read_depth) for mem in state.memories])
        z += matvec(params.P, reads)
    h = sigmoid(z)

    update = stack_update if config.kind == "stack" else list_update
    actions, memories = [], []
    for j, mem in enumerate(state.memories):
        a = softmax(matvec(params.A[j], h))
        if discretize:
            a = _discretize(a)
        v = float(sigmoid(np.array([params.D[j] @ h]))[0])
        memories.append(update(mem, a, v, cap=config.cap, overflow=config.overflow))
        actions.append(a)
    y = softmax(matvec(np.ascontiguousarray(params.V.T), h))
    return y, actions, StepState(h, tuple(memories))


def forward_step_discrete(params, config, state, x):
    return forward_step(params, config, state, x, discretize=True)


# -- packed state for the kernels ---------------------------------------------


def _pack(state: StepState, config: ModelConfig):
    S = config.units
    bases = np.zeros(S, dtype=np.int64)
    los = np.zeros(S, dtype=np.int64)
    his = np.full(S, -1, dtype=np.int64)
    chunks, ptr = [], 0
    for j, mem in enumerate(state.memories):
        cells = mem.values if isinstance(mem, StackState) else mem.cells
        if len(cells):
            bases[j] = ptr
            los[j] = 0 if isinstance(mem, StackState) else mem.left
            his[j] = los[j] + len(cells) - 1
            chunks.append(cells)
            ptr += len(cells)
    buf = np.concatenate(chunks) if chunks else np.zeros(1)
    return buf, bases, los, his


def _unpack(config: ModelConfig, h, buf, bases, los, his) -> StepState:
    mems = []
    for j in range(config.units):
        lo, hi, b = int(los[j]), int(his[j]), int(bases[j])
        cells = buf[b : b + hi - lo + 1].copy() if hi >= lo else np.zeros(0)
        if config.kind == "stack":
            mems.append(StackState(cells))
        else:
            mems.append(ListState(cells, lo if hi >= lo else 0))
    return StepState(np.array(h, dtype=np.float64), tuple(mems))


def _max_cells(config: ModelConfig) -> int:
    return config.cap if config.kind == "stack" else 2 * config.cap + 1


def _store_size(config: ModelConfig, los: np.ndarray, his: np.ndarray, T: int) -> int:
    """Upper bound on the cells stored over ``T`` steps."""
    if config.kind == "stack":
        width, grow = his - los + 1, 1
    else:
        # a list update covers the old extent widened to include the head,
        # plus one cell either side; trimming never widens it again
        width = np.where(his < los, 1, np.maximum(his, 0) - np.minimum(los, 0) + 1)
        grow = 2
    t = np.arange(T + 1)[:, None]
    return int(np.minimum(width[None, :] + grow * t, _max_cells(config)).sum()) + 1


def _kargs(params: Parameters, config: ModelConfig):
    return (
        params.U, params.R, params.V, params.A, params.D, params.P,
        _KIND_CODE[config.kind], config.use_noop, config.use_recurrent,
        config.read_depth, config.cap, config.overflow == "drop",
    )


@dataclass
class WindowCache:
    params: Parameters
    config: ModelConfig
    tokens: np.ndarray
    mask: np.ndarray
    H: np.ndarray
    ACT: np.ndarray
    VALS: np.ndarray
    Y: np.ndarray
    RD: np.ndarray
    store: np.ndarray
    bases: np.ndarray
    los: np.ndarray
    his: np.ndarray
    final_state: StepState
    discretized: bool = False

    @property
    def predictions(self) -> np.ndarray:
        return self.Y


def window_loss(
    params: Parameters,
    config: ModelConfig,
    state0: StepState,
    tokens: Sequence[int],
    loss_mask: Sequence[bool] | None = None,
    discretize: bool = False,
) -> tuple[float, WindowCache]:
    """Summed natural-log NLL of predicting ``tokens[t+1]`` from the prefix.

    ``loss_mask[t]`` selects prediction ``t`` (of ``len(tokens) - 1``).
    The state after consuming ``tokens[:-1]`` is ``cache.final_state``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    T = len(tokens) - 1
    if T < 1:
        raise ValueError("a window needs at least 2 tokens")
    if loss_mask is None:
        loss_mask = np.ones(T, dtype=bool)
    mask = np.asarray(loss_mask, dtype=bool)
    if mask.shape != (T,):
        raise ValueError(f"loss mask of length {len(mask)} for {T} predictions")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise IndexError("token id out of range")
    m, S, na = config.hidden, config.units, config.n_actions
    buf0, bases0, los0, his0 = _pack(state0, config)
    H = np.empty((T + 1, m))
    ACT = np.zeros((T, S, na))
    VALS = np.zeros((T, S))
    Y = np.empty((T, config.vocab_size))
    RD = np.zeros((T, max(S * config.read_depth, 1)))
    store = np.empty(_store_size(config, los0, his0, T))
    bases = np.zeros((T + 1, S), dtype=np.int64)
    los = np.zeros((T + 1, S), dtype=np.int64)
    his = np.zeros((T + 1, S), dtype=np.int64)
    scratch = np.empty(K.scratch_width(config.cap))
    loss, status = K.forward_window(
        *_kargs(params, config), discretize,
        tokens, mask, np.asarray(state0.h, dtype=np.float64), buf0, bases0, los0, his0,
        H, ACT, VALS, Y, RD, store, bases, los, his, scratch,
    )
    if status == K.OVERFLOW:
        raise MemoryOverflowError(f"memory exceeded cap {config.cap}")
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite window loss")
    final = _unpack(config, H[T], store, bases[T], los[T], his[T])
    cache = WindowCache(params, config, tokens, mask, H, ACT, VALS, Y, RD, store,
                        bases, los, his, final, discretize)
    return float(loss), cache


def backward(cache: WindowCache) -> Parameters:
    """Exact gradient of the window loss; nothing flows into ``state0``."""
    if cache.discretized:
        raise ValueError("discretized forward passes are not differentiable")
    config = cache.config
    grads = Parameters.zeros(config)
    width = K.scratch_width(config.cap)
    gcur = np.zeros((config.units, width))
    gprev = np.zeros((config.units, width))
    p = cache.params
    K.backward_window(
        p.U, p.R, p.V, p.A, p.D, p.P,
        _KIND_CODE[config.kind], config.use_noop, config.use_recurrent, config.read_depth,
        cache.tokens, cache.mask, cache.H, cache.ACT, cache.VALS, cache.Y, cache.RD,
        cache.store, cache.bases, cache.los, cache.his,
        grads.U, grads.R, grads.V, grads.A, grads.D, grads.P, gcur, gprev,
    )
    return grads


# -- forward-only streaming ---------------------------------------------------


@dataclass
class StreamResult:
    """Per-position outputs of :func:`run_stream`.

    ``logp[t]`` is log p(tokens[t+1]) and ``pred[t]`` the argmax prediction
    after reading ``tokens[t]``; the last row has NaN / a dangling
    prediction. ``actions[t, j]`` is unit ``j``'s argmax action,
    ``action_probs`` its distribution and ``tops[t, j]`` its top cell after
    the update.
    """

    logp: np.ndarray
    pred: np.ndarray
    actions: np.ndarray
    action_probs: np.ndarray
    tops: np.ndarray
    final_state: StepState


def run_stream(
    params: Parameters,
    config: ModelConfig,
    tokens: Sequence[int],
    state: StepState | None = None,
    discretize: bool = False,
) -> StreamResult:
    tokens = np.asarray(tokens, dtype=np.int64)
    if len(tokens) == 0:
        raise ValueError("empty token stream")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise IndexError("token id out of range")
    state = state or StepState.fresh(config)
    S, na, T = config.units, config.n_actions, len(tokens)
    size = max(S * _max_cells(config), 1)
    buf = np.empty(size)
    b0, bases, los, his = _pack(state, config)
    buf[: len(b0)] = b0
    buf2 = np.empty(size)
    bases2 = np.zeros(S, dtype=np.int64)
    los2 = np.zeros(S, dtype=np.int64)
    his2 = np.zeros(S, dtype=np.int64)
    h = np.array(state.h, dtype=np.float64)
    logp = np.empty(T)
    pred = np.empty(T, dtype=np.int64)
    act_idx = np.zeros((T, S), dtype=np.int64)
    act_prob = np.zeros((T, S, na))
    tops = np.zeros((T, S))
    status, cur = K.run_stream(
        *_kargs(params, config), discretize,
        tokens, h, buf, bases, los, his, buf2, bases2, los2, his2,
        np.empty(K.scratch_width(config.cap)), logp, pred, act_idx, tops, act_prob,
    )
    if status == K.OVERFLOW:
        raise MemoryOverflowError(f"memory exceeded cap {config.cap}")
    final = _unpack(config, h, *((buf, bases, los, his) if cur == 0 else (buf2, bases2, los2, his2)))
    return StreamResult(logp, pred, act_idx, act_prob, tops, final)


@dataclass
class Model:
    """Weights plus the vocabulary they were trained on."""

    config: ModelConfig
    params: Parameters
    vocab: tuple[str, ...]

    def __post_init__(self):
        self.vocab = tuple(self.vocab)
        if len(self.vocab) != self.config.vocab_size:
            raise ValueError(
                f"vocabulary of {len(self.vocab)} symbols for a model with d={self.config.vocab_size}"
            )

    def with_params(self, params: Parameters) -> "Model":
        return replace(self, params=params)
