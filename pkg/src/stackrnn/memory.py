"""Continuous stack and head-relative doubly-linked list.

Both structures are logically infinite: any cell that was never written (or
has been popped off) reads as -1. Only the written extent is materialized,
and trailing cells that equal the -1 fill are trimmed after each update.

These are the reference (pure numpy) update rules. The fused training
kernels in :mod:`stackrnn._kernels` implement the same arithmetic and are
tested against this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

EMPTY = -1.0
DEFAULT_CAP = 512

# action indices; NO-OP is always last when enabled
PUSH, POP, STACK_NOOP = 0, 1, 2
INSERT, LEFT, RIGHT, LIST_NOOP = 0, 1, 2, 3

STACK_ACTIONS = ("PUSH", "POP", "NO-OP")
LIST_ACTIONS = ("INSERT", "LEFT", "RIGHT", "NO-OP")


class MemoryOverflowError(RuntimeError):
    """The memory grew past its hard cap, usually a runaway controller."""


def action_names(kind: str, use_noop: bool) -> tuple[str, ...]:
    names = STACK_ACTIONS if kind == "stack" else LIST_ACTIONS
    return names if use_noop else names[:-1]


def n_actions(kind: str, use_noop: bool) -> int:
    if kind == "rnn":
        return 0
    return len(action_names(kind, use_noop))


def _trim_right(cells: np.ndarray) -> np.ndarray:
    n = len(cells)
    while n and cells[n - 1] == EMPTY:
        n -= 1
    return cells[:n]


@dataclass(frozen=True)
class StackState:
    """Stack contents, index 0 is the top."""

    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    @property
    def depth(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        if i < 0:
            raise IndexError("stack index must be non-negative")
        return float(self.values[i]) if i < len(self.values) else EMPTY

    def __eq__(self, other):
        return isinstance(other, StackState) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class ListState:
    """List cells around the head; ``cells[j]`` sits at offset ``left + j``."""

    cells: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.float64))

    @property
    def left_extent(self) -> int:
        return self.left

    @property
    def right_extent(self) -> int:
        return self.left + len(self.cells) - 1

    def __getitem__(self, offset: int) -> float:
        j = offset - self.left
        return float(self.cells[j]) if 0 <= j < len(self.cells) else EMPTY

    def as_dict(self) -> dict[int, float]:
        return {self.left + j: float(c) for j, c in enumerate(self.cells)}

    @classmethod
    def from_dict(cls, cells: dict[int, float]) -> "ListState":
        if not cells:
            return cls()
        lo, hi = min(cells), max(cells)
        arr = np.full(hi - lo + 1, EMPTY)
        for off, val in cells.items():
            arr[off - lo] = val
        return cls._trimmed(arr, lo)

    @classmethod
    def _trimmed(cls, arr: np.ndarray, lo: int) -> "ListState":
        start, stop = 0, len(arr)
        while start < stop and arr[start] == EMPTY:
            start += 1
        while stop > start and arr[stop - 1] == EMPTY:
            stop -= 1
        if start == stop:
            return cls()
        return cls(arr[start:stop].copy(), lo + start)

    def __eq__(self, other):
        return (
            isinstance(other, ListState)
            and self.left == other.left
            and np.array_equal(self.cells, other.cells)
        )


def _check_dist(a: np.ndarray, allowed: Sequence[int]) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or len(a) not in allowed:
        raise ValueError(f"action distribution of length {len(a)}, expected one of {allowed}")
    return a


def stack_update(
    s_prev: StackState,
    a: np.ndarray,
    v_new: float,
    cap: int = DEFAULT_CAP,
    overflow: str = "error",
) -> StackState:
    """Blend PUSH / POP (/ NO-OP) of ``s_prev`` with weights ``a``.

    With ``overflow="drop"`` cells pushed below depth ``cap`` are discarded
    instead of raising :class:`MemoryOverflowError`.
    """
    a = _check_dist(a, (2, 3))
    sp = s_prev.values
    n = len(sp) + 1
    prev = np.full(n + 1, EMPTY)
    prev[: len(sp)] = sp
    # prev[i] is s_prev[i] for i < n + 1, with -1 fill
    new = np.empty(n)
    new[0] = a[PUSH] * v_new + a[POP] * prev[1]
    if n > 1:
        new[1:] = a[PUSH] * prev[: n - 1] + a[POP] * prev[2 : n + 1]
    if len(a) == 3:
        new += a[STACK_NOOP] * prev[:n]
    new = _trim_right(new)
    if len(new) > cap:
        if overflow != "drop":
            raise MemoryOverflowError(f"stack depth {len(new)} exceeds cap {cap}")
        new = _trim_right(new[:cap])
    return StackState(new)


def stack_read(s: StackState, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("read depth must be >= 1")
    return np.array([s[i] for i in range(k)])


def _list_window(L: ListState) -> tuple[int, int]:
    if len(L.cells) == 0:
        return -1, 1
    return min(L.left, 0) - 1, max(L.right_extent, 0) + 1


def list_update(
    L_prev: ListState,
    a: np.ndarray,
    v_new: float,
    cap: int = DEFAULT_CAP,
    overflow: str = "error",
) -> ListState:
    """Head-relative INSERT / LEFT / RIGHT (/ NO-OP) blend.

    LEFT brings the left neighbour under the head, RIGHT the right one, and
    INSERT writes ``v_new`` at the head while shifting the old head cell and
    everything left of it one place further left.
    """
    a = _check_dist(a, (3, 4))
    lo, hi = _list_window(L_prev)
    new = np.empty(hi - lo + 1)
    for j, i in enumerate(range(lo, hi + 1)):
        right, left = L_prev[i + 1], L_prev[i - 1]
        if i == 0:
            ins = v_new
        elif i < 0:
            ins = right
        else:
            ins = L_prev[i]
        x = a[RIGHT] * right + a[LEFT] * left + a[INSERT] * ins
        if len(a) == 4:
            x += a[LIST_NOOP] * L_prev[i]
        new[j] = x
    out = ListState._trimmed(new, lo)
    if len(out.cells) and (out.left < -cap or out.right_extent > cap):
        if overflow != "drop":
            raise MemoryOverflowError(
                f"list extent [{out.left}, {out.right_extent}] exceeds cap {cap}"
            )
        keep = {o: x for o, x in out.as_dict().items() if -cap <= o <= cap}
        out = ListState.from_dict(keep)
    return out


def list_read(L: ListState, k: int) -> np.ndarray:
    """Cells at offsets 0, +1, ..., +(k-1)."""
    if k < 1:
        raise ValueError("read depth must be >= 1")
    return np.array([L[i] for i in range(k)])


def stack_update_adjoint(
    s_prev: StackState, a: np.ndarray, v_new: float, grad_s_next: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Vector-Jacobian product of :func:`stack_update`.

    ``grad_s_next[i]`` is the gradient w.r.t. cell ``i`` of the updated
    stack (cells past its length are treated as constants). Returns the
    gradients w.r.t. the materialized cells of ``s_prev``, w.r.t. ``a`` and
    w.r.t. ``v_new``.
    """
    a = _check_dist(a, (2, 3))
    g = np.asarray(grad_s_next, dtype=np.float64)
    depth = s_prev.depth
    g_prev = np.zeros(depth)
    g_a = np.zeros(len(a))
    g_v = 0.0
    for i, gi in enumerate(g):
        if gi == 0.0:
            continue
        if i == 0:
            g_a[PUSH] += gi * v_new
            g_v += gi * a[PUSH]
        else:
            g_a[PUSH] += gi * s_prev[i - 1]
            if i - 1 < depth:
                g_prev[i - 1] += gi * a[PUSH]
        g_a[POP] += gi * s_prev[i + 1]
        if i + 1 < depth:
            g_prev[i + 1] += gi * a[POP]
        if len(a) == 3:
            g_a[STACK_NOOP] += gi * s_prev[i]
            if i < depth:
                g_prev[i] += gi * a[STACK_NOOP]
    return g_prev, g_a, g_v


def list_update_adjoint(
    L_prev: ListState, a: np.ndarray, v_new: float, grad_L_next: dict[int, float]
) -> tuple[dict[int, float], np.ndarray, float]:
    """Vector-Jacobian product of :func:`list_update`, keyed by head offset."""
    a = _check_dist(a, (3, 4))
    lo, hi = L_prev.left, L_prev.right_extent
    g_prev = {o: 0.0 for o in range(lo, hi + 1)}
    g_a = np.zeros(len(a))
    g_v = 0.0

    def acc(off, val):
        if off in g_prev:
            g_prev[off] += val

    for i, gi in grad_L_next.items():
        if gi == 0.0:
            continue
        g_a[RIGHT] += gi * L_prev[i + 1]
        acc(i + 1, gi * a[RIGHT])
        g_a[LEFT] += gi * L_prev[i - 1]
        acc(i - 1, gi * a[LEFT])
        if i == 0:
            g_a[INSERT] += gi * v_new
            g_v += gi * a[INSERT]
        elif i < 0:
            g_a[INSERT] += gi * L_prev[i + 1]
            acc(i + 1, gi * a[INSERT])
        else:
            g_a[INSERT] += gi * L_prev[i]
            acc(i, gi * a[INSERT])
        if len(a) == 4:
            g_a[LIST_NOOP] += gi * L_prev[i]
            acc(i, gi * a[LIST_NOOP])
    return g_prev, g_a, g_v


def discrete_memory_oracle(kind: str, ops: Sequence[tuple[str, float | None]]):
    """Classical stack / tape semantics, for tests.

    ``ops`` is a list of ``(action_name, value)``; the value is only used by
    PUSH and INSERT. Returns a :class:`StackState` or :class:`ListState`.
    """
    if kind == "stack":
        stack: list[float] = []
        for name, value in ops:
            if name == "PUSH":
                stack.insert(0, value)
            elif name == "POP":
                if stack:
                    stack.pop(0)
            elif name != "NO-OP":
                raise ValueError(f"unknown stack action {name!r}")
        return StackState(_trim_right(np.array(stack, dtype=np.float64)))
    if kind == "list":
        tape = {}  # absolute position -> value
        head = 0
        for name, value in ops:
            if name == "INSERT":
                # the old head cell and everything left of it move one step left
                tape = {(p - 1 if p <= head else p): x for p, x in tape.items()}
                tape[head] = value
            elif name == "LEFT":
                head -= 1
            elif name == "RIGHT":
                head += 1
            elif name != "NO-OP":
                raise ValueError(f"unknown list action {name!r}")
        return ListState.from_dict({p - head: x for p, x in tape.items()})
    raise ValueError(f"unknown memory kind {kind!r}")
