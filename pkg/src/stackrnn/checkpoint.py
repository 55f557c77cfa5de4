"""Plain-text checkpoints.

::

    stackrnn-ckpt v1
    kind=stack m=40 d=2 S=10 k=2 noop=0 useR=0
    vocab=a b
    matrix U 2 40
    <row of 40 numbers>
    ...

Numbers are written with 17 significant digits so float64 values survive a
round trip exactly. Vocabulary symbols escape backslash, space, tab and
newline as ``\\\\``, ``\\s``, ``\\t`` and ``\\n``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .memory import DEFAULT_CAP
from .model import Model, ModelConfig, Parameters

MAGIC = "stackrnn-ckpt"
VERSION = "v1"

_ESC = {"\\": "\\\\", " ": "\\s", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESC = {v[1]: k for k, v in _ESC.items()}


class CheckpointError(ValueError):
    pass


def _escape(sym: str) -> str:
    if sym == "":
        raise CheckpointError("empty vocabulary symbol")
    return "".join(_ESC.get(c, c) for c in sym)


def _unescape(tok: str) -> str:
    out, i = [], 0
    while i < len(tok):
        c = tok[i]
        if c == "\\":
            if i + 1 >= len(tok) or tok[i + 1] not in _UNESC:
                raise CheckpointError(f"bad escape in vocabulary symbol {tok!r}")
            out.append(_UNESC[tok[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _header(config: ModelConfig) -> str:
    line = (
        f"kind={config.kind} m={config.hidden} d={config.vocab_size} S={config.units} "
        f"k={config.read_depth} noop={int(config.use_noop)} useR={int(config.use_recurrent)}"
    )
    if config.cap != DEFAULT_CAP:
        line += f" cap={config.cap}"
    if config.overflow != "drop":
        line += f" overflow={config.overflow}"
    return line


def dumps(model: Model) -> str:
    if not model.params.all_finite():
        raise CheckpointError("refusing to save non-finite parameters")
    lines = [f"{MAGIC} {VERSION}", _header(model.config),
             "vocab=" + " ".join(_escape(s) for s in model.vocab)]
    for name, mat in model.params.named_matrices():
        rows, cols = mat.shape
        lines.append(f"matrix {name} {rows} {cols}")
        lines.extend(" ".join(f"{x:.17g}" for x in row) for row in mat)
    return "\n".join(lines) + "\n"


def save_checkpoint(path: str | Path, model: Model) -> None:
    Path(path).write_text(dumps(model))


def _parse_header(line: str) -> ModelConfig:
    try:
        fields = dict(item.split("=", 1) for item in line.split())
        kw = dict(
            kind=fields["kind"],
            hidden=int(fields["m"]),
            vocab_size=int(fields["d"]),
            units=int(fields["S"]),
            read_depth=int(fields["k"]),
            use_noop=fields["noop"] == "1",
            use_recurrent=fields["useR"] == "1",
        )
        if "cap" in fields:
            kw["cap"] = int(fields["cap"])
        if "overflow" in fields:
            kw["overflow"] = fields["overflow"]
        return ModelConfig(**kw)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad model header {line!r}: {exc}") from None


def loads(text: str) -> Model:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 3:
        raise CheckpointError("truncated checkpoint: missing header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise CheckpointError(f"not a checkpoint (first line {lines[0]!r})")
    if magic[1] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {magic[1]!r}, expected {VERSION}")
    config = _parse_header(lines[1])
    if not lines[2].startswith("vocab="):
        raise CheckpointError("missing vocab line")
    vocab = tuple(_unescape(t) for t in lines[2][len("vocab="):].split(" ") if t)

    expected = list(Parameters.zeros(config).named_matrices())
    mats: dict[str, np.ndarray] = {}
    pos = 3
    for name, ref in expected:
        if pos >= len(lines):
            raise CheckpointError(f"truncated checkpoint: matrix {name} missing")
        head = lines[pos].split()
        if len(head) != 4 or head[0] != "matrix":
            raise CheckpointError(f"expected 'matrix {name} ...' at line {pos + 1}")
        if head[1] != name:
            raise CheckpointError(f"expected matrix {name}, found {head[1]}")
        try:
            rows, cols = int(head[2]), int(head[3])
        except ValueError:
            raise CheckpointError(f"shape mismatch for matrix {name}: bad dimensions") from None
        if (rows, cols) != ref.shape:
            raise CheckpointError(
                f"shape mismatch for matrix {name}: file says {rows}x{cols}, "
                f"model needs {ref.shape[0]}x{ref.shape[1]}"
            )
        body = lines[pos + 1 : pos + 1 + rows]
        if len(body) != rows:
            raise CheckpointError(f"truncated checkpoint: matrix {name} has {len(body)}/{rows} rows")
        try:
            data = np.array([[float(x) for x in row.split()] for row in body], dtype=np.float64)
        except ValueError:
            raise CheckpointError(f"unparsable number in matrix {name}") from None
        data = data.reshape(rows, cols) if data.size == rows * cols else None
        if data is None:
            raise CheckpointError(f"shape mismatch for matrix {name}: wrong number of columns")
        if not np.isfinite(data).all():
            raise CheckpointError(f"non-finite value in matrix {name}")
        mats[name] = data
        pos += 1 + rows
    if pos != len(lines):
        raise CheckpointError(f"trailing data after last matrix at line {pos + 1}")

    S = config.units
    params = Parameters(
        U=mats["U"], R=mats["R"], V=mats["V"],
        A=np.stack([mats[f"A{j}"] for j in range(S)]) if S else np.zeros((0, 0, config.hidden)),
        D=np.concatenate([mats[f"D{j}"] for j in range(S)]) if S else np.zeros((0, config.hidden)),
        P=mats["P"],
    )
    try:
        return Model(config, params, vocab)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None


def load_checkpoint(path: str | Path) -> Model:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(text)
