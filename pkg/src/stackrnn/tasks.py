"""Algorithmic pattern generators and boundary-free token streams.

Each generator returns a :class:`LabeledSequence` whose ``det_mask`` marks
the tokens that are uniquely determined by the prefix (the only ones scored
at test time). Streams concatenate sequences without separators.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

COUNTING = ("anbn", "anbncn", "anbncndn", "anb2n", "anbmcnm")
TASKS = COUNTING + ("memorization", "binary_addition", "text")
ALIASES = {"addition": "binary_addition", "add": "binary_addition", "memo": "memorization"}


@dataclass(frozen=True)
class TaskSpec:
    name: str
    vocab: tuple[str, ...]
    supervised: bool = False
    alphabet_size: int = 2

    @property
    def min_n(self) -> int:
        return 2 if self.name in ("binary_addition", "anbmcnm") else 1

    def index(self, symbol: str) -> int:
        try:
            return self.vocab.index(symbol)
        except ValueError:
            raise KeyError(f"symbol {symbol!r} not in vocabulary {self.vocab}") from None

    def encode(self, text: str | Sequence[str]) -> list[int]:
        return [self.index(c) for c in text]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.vocab[i] for i in ids)


def get_task(name: str, alphabet_size: int = 2) -> TaskSpec:
    name = ALIASES.get(name, name)
    if name in ("anbn", "anb2n"):
        return TaskSpec(name, ("a", "b"))
    if name in ("anbncn", "anbmcnm"):
        return TaskSpec(name, ("a", "b", "c"))
    if name == "anbncndn":
        return TaskSpec(name, ("a", "b", "c", "d"))
    if name == "memorization":
        if not 2 <= alphabet_size <= 9:
            raise ValueError("memorization alphabet size must be in [2, 9]")
        symbols = tuple(str(i) for i in range(1, alphabet_size + 1))
        return TaskSpec(name, symbols + ("=",), alphabet_size=alphabet_size)
    if name == "binary_addition":
        return TaskSpec(name, ("0", "1", "+", "=", "."), supervised=True)
    raise ValueError(f"unknown task {name!r}; expected one of {TASKS}")


@dataclass
class LabeledSequence:
    tokens: list[int]
    det_mask: list[bool]
    loss_mask: list[bool]
    next_token_deterministic: bool

    def __len__(self):
        return len(self.tokens)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_counting(kind: str, n: int, m: int | None = None, seed=None) -> LabeledSequence:
    """One counting sequence; ``m`` is only used by ``anbmcnm``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    task = get_task(kind)
    if kind == "anbmcnm":
        if m is None or m < 1:
            raise ValueError("anbmcnm needs m >= 1")
        text = "a" * n + "b" * m + "c" * (n + m)
        first_det = n + m + 1  # second c
    else:
        if m is not None:
            raise ValueError(f"{kind} takes no m")
        counts = {"anbn": "ab", "anbncn": "abc", "anbncndn": "abcd"}
        if kind == "anb2n":
            text = "a" * n + "b" * (2 * n)
        else:
            text = "".join(c * n for c in counts[kind])
        # once the first b closes the a-run, the count is known
        first_det = n + 1
    det = [i >= first_det for i in range(len(text))]
    return LabeledSequence(task.encode(text), det, [True] * len(text), True)


def gen_memorization(n: int, alphabet_size: int = 2, seed=None, word: Sequence[int] | None = None):
    """``w = reverse(w)`` with ``w`` uniform over the alphabet; pass ``word``
    (symbols 1..k) to fix it."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    task = get_task("memorization", alphabet_size)
    if word is None:
        word = _rng(seed).integers(1, alphabet_size + 1, size=n).tolist()
    elif len(word) != n:
        raise ValueError("word length must equal n")
    text = [str(s) for s in word]
    seq = text + ["="] + text[::-1]
    det = [False] * (n + 1) + [True] * n
    return LabeledSequence(task.encode(seq), det, [True] * len(seq), False)


def _binary(x: int) -> str:
    return format(x, "b")


def addition_string(x: int, y: int) -> str:
    return f"{_binary(x)}+{_binary(y)}={_binary(x + y)[::-1]}."


def gen_binary_addition(n: int, seed=None, operands: tuple[int, int] | None = None):
    """``x+y=`` followed by the reversed binary sum and ``.``.

    The operand lengths add up to ``n`` and each operand has its most
    significant bit set. Only the answer (including the ``.``) is scored
    and trained on.
    """
    if n < 2:
        raise ValueError(f"binary addition needs n >= 2, got {n}")
    if operands is None:
        rng = _rng(seed)
        l1 = int(rng.integers(1, n))
        lens = (l1, n - l1)
        x, y = (
            int("1" + "".join(map(str, rng.integers(0, 2, size=length - 1))), 2)
            for length in lens
        )
    else:
        x, y = operands
        if len(_binary(x)) + len(_binary(y)) != n:
            raise ValueError("operand lengths must add up to n")
    text = addition_string(x, y)
    eq = text.index("=")
    det = [i > eq for i in range(len(text))]
    task = get_task("binary_addition")
    return LabeledSequence(task.encode(text), det, list(det), False)


def parse_addition(text: str) -> tuple[int, int, int]:
    """Inverse of :func:`addition_string`: returns (x, y, claimed sum)."""
    if not text.endswith("."):
        raise ValueError(f"malformed addition {text!r}")
    lhs, rhs = text[:-1].split("=")
    a, b = lhs.split("+")
    return int(a, 2), int(b, 2), int(rhs[::-1], 2)


def sample_sequence(task: TaskSpec, n: int, rng: np.random.Generator, m: int | None = None):
    """One sequence of size ``n``. For ``anbmcnm`` ``n`` is the total n+m,
    split uniformly unless ``m`` is given."""
    if task.name == "anbmcnm":
        if m is None:
            if n < 2:
                raise ValueError("anbmcnm needs n + m >= 2")
            a = int(rng.integers(1, n))
            return gen_counting("anbmcnm", a, n - a)
        return gen_counting("anbmcnm", n, m)
    if task.name in COUNTING:
        return gen_counting(task.name, n)
    if task.name == "memorization":
        return gen_memorization(n, task.alphabet_size, rng)
    if task.name == "binary_addition":
        return gen_binary_addition(n, rng)
    raise ValueError(f"cannot sample sequences for task {task.name!r}")


@dataclass
class TokenStream:
    tokens: np.ndarray
    det_mask: np.ndarray
    loss_mask: np.ndarray
    vocab: tuple[str, ...]

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.det_mask = np.asarray(self.det_mask, dtype=bool)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if not (len(self.tokens) == len(self.det_mask) == len(self.loss_mask)):
            raise ValueError("tokens and masks must have the same length")

    def __len__(self):
        return len(self.tokens)

    @property
    def separator(self) -> str:
        return "" if all(len(s) == 1 for s in self.vocab) else " "

    def text(self) -> str:
        return self.separator.join(self.vocab[i] for i in self.tokens)

    def mask_text(self, which: str = "det") -> str:
        mask = self.det_mask if which == "det" else self.loss_mask
        return "".join("1" if b else "0" for b in mask)

    def save(self, path: str | Path, mask_path: str | Path | None = None) -> None:
        path = Path(path)
        mask_path = Path(mask_path) if mask_path else path.with_name(path.name + ".mask")
        path.write_text(self.text() + "\n")
        mask_path.write_text(self.mask_text() + "\n")


def _draw_size(task: TaskSpec, n_max: int, rng: np.random.Generator) -> tuple[int, int | None]:
    if task.name == "anbmcnm":
        # uniform over {(n, m): n, m >= 1, n + m <= n_max}
        pairs = (n_max - 1) * n_max // 2
        idx = int(rng.integers(pairs))
        total = 2
        while idx >= total - 1:
            idx -= total - 1
            total += 1
        n = idx + 1
        return n, total - n
    return int(rng.integers(task.min_n, n_max + 1)), None


def make_stream(task: TaskSpec, n_max: int, count: int, seed=None) -> TokenStream:
    """Concatenate ``count`` sequences with sizes drawn uniformly up to ``n_max``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if n_max < task.min_n:
        raise ValueError(f"n_max={n_max} below the minimum {task.min_n} for {task.name}")
    rng = _rng(seed)
    toks, det, loss = [], [], []
    carry = False
    for _ in range(count):
        n, m = _draw_size(task, n_max, rng)
        seq = sample_sequence(task, n, rng, m)
        d = list(seq.det_mask)
        if carry:
            d[0] = True
        toks += seq.tokens
        det += d
        loss += seq.loss_mask if task.supervised else [True] * len(seq)
        carry = seq.next_token_deterministic
    return TokenStream(np.array(toks), np.array(det), np.array(loss), task.vocab)


def make_stream_tokens(task: TaskSpec, n_max: int, n_tokens: int, seed=None) -> TokenStream:
    """Stream of at least ``n_tokens`` tokens (whole sequences only)."""
    rng = _rng(seed)
    parts = []
    total = 0
    while total < n_tokens:
        s = make_stream(task, n_max, 64, rng)
        parts.append(s)
        total += len(s)
    return TokenStream(
        np.concatenate([p.tokens for p in parts]),
        _join_det(parts, task),
        np.concatenate([p.loss_mask for p in parts]),
        task.vocab,
    )


def _join_det(parts: list[TokenStream], task: TaskSpec) -> np.ndarray:
    det = [p.det_mask.copy() for p in parts]
    if task.name in COUNTING:
        for d in det[1:]:
            d[0] = True
    return np.concatenate(det)


def text_stream(data: bytes | str, mode: str = "word") -> TokenStream:
    """Tokenize free text at word (whitespace) or character level."""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    if mode == "word":
        symbols = data.split()
    elif mode == "char":
        symbols = list(data)
    else:
        raise ValueError(f"mode must be 'word' or 'char', got {mode!r}")
    if not symbols:
        raise ValueError("empty text")
    index: dict[str, int] = {}
    ids = [index.setdefault(s, len(index)) for s in symbols]
    n = len(ids)
    return TokenStream(np.array(ids), np.zeros(n, bool), np.ones(n, bool), tuple(index))


def detokenize(stream: TokenStream) -> str:
    return stream.text()
