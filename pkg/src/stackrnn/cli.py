"""Command-line entry points: train, eval, trace, generate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import VocabularyMismatch, entropy, eval_per_length, trace
from .memory import MemoryOverflowError
from .model import ModelConfig
from .tasks import (
    TaskSpec,
    gen_counting,
    get_task,
    make_stream,
    sample_sequence,
    text_stream,
    TokenStream,
)
from .training import TrainConfig, TrainingError, train_lm, train_with_restarts


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(f"usage: {message}")


def _task(args) -> TaskSpec:
    try:
        return get_task(args.task, getattr(args, "alphabet", 2))
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def _split_text(path: str, mode: str, val_fraction: float) -> tuple[TokenStream, TokenStream]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}") from None
    full = text_stream(data, mode)
    cut = int(len(full) * (1.0 - val_fraction))
    if cut < 2 or len(full) - cut < 2:
        raise CLIError("text too short to split into train and validation")
    train = TokenStream(full.tokens[:cut], full.det_mask[:cut], full.loss_mask[:cut], full.vocab)
    val = TokenStream(full.tokens[cut:], full.det_mask[cut:], full.loss_mask[cut:], full.vocab)
    return train, val


def cmd_train(args) -> int:
    tc = TrainConfig(
        lr0=args.lr, clip=args.clip, bptt_window=args.bptt, epoch_tokens=args.epoch_tokens,
        max_epochs=args.epochs, curriculum_epochs=args.curriculum_epochs,
        curriculum_max=args.n_train_max, restarts=args.restarts, seed=args.seed,
    )
    out = Path(args.out)
    log_dir = Path(args.log_dir) if args.log_dir else out.parent

    if args.task == "text":
        if not args.text:
            raise CLIError("--task text needs --text FILE")
        train, val = _split_text(args.text, args.text_mode, 0.1)
        vocab_size = len(train.vocab)
    else:
        task = _task(args)
        vocab_size = len(task.vocab)
    units = 0 if args.kind == "rnn" else args.units
    # without R a plain RNN has no memory at all
    recurrent = args.recurrent or args.kind == "rnn"
    config = ModelConfig(
        kind=args.kind, hidden=args.hidden, vocab_size=vocab_size, units=units,
        read_depth=args.depth, use_noop=args.noop, use_recurrent=recurrent, cap=args.cap,
    )

    if args.task == "text":
        from .model import Model

        records = []
        for r in range(tc.restarts):
            rec, initial = train_lm(config, train, val, tc, seed=tc.seed + r)
            records.append(rec)
            print(f"seed={rec.seed} initial_val_entropy_bits={initial:.6f}")
        ok = [r for r in records if not r.diverged]
        if not ok:
            raise TrainingError("all restarts diverged")
        best = min(ok, key=lambda r: (r.val_entropy_bits, r.seed))
        model = Model(config, best.params, train.vocab)
    else:
        model, records = train_with_restarts(config, task, tc)
        best = min(
            (r for r in records if not r.diverged),
            key=lambda r: (-r.val_accuracy, r.val_entropy_bits, r.seed),
        )

    log_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (log_dir / f"{out.name}.restart{rec.seed}.log").write_text(rec.log_text())
        last = rec.epochs[-1].log_line() if rec.epochs else "no epochs"
        print(f"restart seed={rec.seed} status={rec.status} "
              f"val_accuracy={rec.val_accuracy:.6f} {last}")
    save_checkpoint(out, model)
    print(f"best seed={best.seed} val_accuracy={best.val_accuracy:.6f} "
          f"val_entropy_bits={best.val_entropy_bits:.6f} checkpoint={out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    if args.task == "text":
        if not args.text:
            raise CLIError("--task text needs --text FILE")
        data = Path(args.text).read_bytes()
        stream = text_stream(data, args.text_mode)
        if stream.vocab != model.vocab:
            index = {s: i for i, s in enumerate(model.vocab)}
            missing = [s for s in stream.vocab if s not in index]
            if missing:
                raise VocabularyMismatch(f"{len(missing)} symbols not in the model vocabulary")
            ids = np.array([index[stream.vocab[i]] for i in stream.tokens])
            stream = TokenStream(ids, stream.det_mask, stream.loss_mask, model.vocab)
        bits, ppl = entropy(model, stream)
        text = f"entropy_bits={bits:.6f} perplexity={ppl:.6f}\n"
        sys.stdout.write(text)
        if args.report:
            Path(args.report).write_text(text)
        return 0
    task = _task(args)
    report = eval_per_length(
        model, task, n_test_max=args.max_n, trials_per_n=args.trials,
        discretize=args.rounding, seed=args.seed, mode=args.mode,
    )
    sys.stdout.write(report.to_table())
    report_path = Path(args.report) if args.report else Path(f"{args.model}.{task.name}.eval.csv")
    report_path.write_text(report.to_csv())
    return 0


def _encode_input(model, text: str) -> list[int]:
    index = {s: i for i, s in enumerate(model.vocab)}
    symbols = text.split() if any(len(s) > 1 for s in model.vocab) else list(text)
    bad = [s for s in symbols if s not in index]
    if bad:
        raise VocabularyMismatch(f"input symbol {bad[0]!r} not in vocabulary {model.vocab}")
    return [index[s] for s in symbols]


def cmd_trace(args) -> int:
    model = load_checkpoint(args.model)
    if model.config.units < 1:
        raise CLIError("trace needs a model with memory units")
    if args.input is not None:
        tokens = _encode_input(model, args.input)
    elif args.task and args.n:
        task = _task(args)
        if task.vocab != model.vocab:
            raise VocabularyMismatch(f"model vocabulary {model.vocab} != task vocabulary {task.vocab}")
        rng = np.random.default_rng(args.seed)
        if task.name == "anbmcnm" and args.m:
            seq = gen_counting("anbmcnm", args.n, args.m)
        else:
            seq = sample_sequence(task, args.n, rng)
        tokens = seq.tokens
    else:
        raise CLIError("trace needs --input or --task with --n")
    if not tokens:
        raise CLIError("empty input")
    sys.stdout.write(trace(model, tokens, discretize=not args.no_rounding).render())
    return 0


def cmd_generate(args) -> int:
    task = _task(args)
    if args.n is not None:
        if args.n < task.min_n:
            raise CLIError(f"invalid n={args.n} for {task.name}")
        rng = np.random.default_rng(args.seed)
        seqs = []
        for _ in range(args.count):
            if task.name == "anbmcnm" and args.m is not None:
                seqs.append(gen_counting("anbmcnm", args.n, args.m))
            else:
                seqs.append(sample_sequence(task, args.n, rng))
        toks, det = [], []
        for i, s in enumerate(seqs):
            d = list(s.det_mask)
            if i and seqs[i - 1].next_token_deterministic:
                d[0] = True
            toks += s.tokens
            det += d
        loss = det if task.supervised else [True] * len(toks)
        stream = TokenStream(np.array(toks), np.array(det), np.array(loss), task.vocab)
    else:
        n_max = args.n_max if args.n_max is not None else 19
        if n_max < task.min_n:
            raise CLIError(f"invalid n-max={n_max} for {task.name}")
        stream = make_stream(task, n_max, args.count, args.seed)
    if args.out:
        stream.save(args.out, args.mask_out)
    else:
        sys.stdout.write(stream.text() + "\n" + stream.mask_text() + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stackrnn", description="Stack / List RNNs on algorithmic patterns")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--alphabet", type=int, default=2, help="memorization alphabet size")

    t = sub.add_parser("train", help="train with random restarts")
    common(t)
    t.add_argument("--task", required=True)
    t.add_argument("--kind", choices=("rnn", "stack", "list"), default="stack")
    t.add_argument("--hidden", type=int, default=40)
    t.add_argument("--units", type=int, default=10, help="number of stacks or lists")
    t.add_argument("--depth", type=int, default=2, help="cells read from each memory")
    t.add_argument("--noop", action="store_true")
    t.add_argument("--recurrent", action="store_true",
                   help="train the recurrent matrix R (always on for --kind rnn)")
    t.add_argument("--cap", type=int, default=512)
    t.add_argument("--restarts", type=int, default=10)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--epoch-tokens", type=int, default=10_000)
    t.add_argument("--bptt", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--clip", type=float, default=15.0)
    t.add_argument("--curriculum-epochs", type=int, default=2)
    t.add_argument("--n-train-max", type=int, default=19)
    t.add_argument("--text", help="text file for --task text")
    t.add_argument("--text-mode", choices=("word", "char"), default="word")
    t.add_argument("--out", required=True)
    t.add_argument("--log-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-length generalization report")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--task", required=True)
    e.add_argument("--max-n", type=int, default=60)
    e.add_argument("--trials", type=int, default=10)
    e.add_argument("--rounding", action="store_true")
    e.add_argument("--mode", choices=("stream", "reset"),
                   help="stream (default): after a short primer, as in training; reset: from empty memories")
    e.add_argument("--report", help="CSV output path")
    e.add_argument("--text")
    e.add_argument("--text-mode", choices=("word", "char"), default="word")
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("trace", help="step-by-step action table")
    common(tr)
    tr.add_argument("--model", required=True)
    tr.add_argument("--input")
    tr.add_argument("--task")
    tr.add_argument("--n", type=int)
    tr.add_argument("--m", type=int)
    tr.add_argument("--no-rounding", action="store_true")
    tr.set_defaults(func=cmd_trace)

    g = sub.add_parser("generate", help="write a task stream and its mask")
    common(g)
    g.add_argument("--task", required=True)
    g.add_argument("--n", type=int, help="fixed sequence size")
    g.add_argument("--m", type=int, help="fixed m for anbmcnm")
    g.add_argument("--n-max", type=int, help="sample sizes uniformly up to this")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out")
    g.add_argument("--mask-out")
    g.set_defaults(func=cmd_generate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CLIError as exc:
        kind = "usage"
        msg = str(exc)
    except CheckpointError as exc:
        kind, msg = "checkpoint", str(exc)
    except VocabularyMismatch as exc:
        kind, msg = "vocabulary", str(exc)
    except TrainingError as exc:
        kind, msg = "training", str(exc)
    except MemoryOverflowError as exc:
        kind, msg = "memory", str(exc)
    except (ValueError, OSError) as exc:
        kind, msg = "invalid", str(exc)
    msg = msg.removeprefix("usage: ").replace("\n", " ")
    sys.stderr.write(f"error: {kind}: {msg}\n")
    return 2 if kind == "usage" else 1


if __name__ == "__main__":
    sys.exit(main())
