"""Train single runs over a list of seeds and score each one with and without rounding.

    python scripts/sweep_seeds.py anb2n 0 1 2 3 --curriculum-epochs 4
    python scripts/sweep_seeds.py memorization 0 --hidden 100 --noop

One line per seed goes to stdout; useful for judging how often a setting succeeds.
"""

import argparse
import time

from stackrnn.evaluation import eval_per_length
from stackrnn.model import Model, ModelConfig
from stackrnn.tasks import get_task
from stackrnn.training import TrainConfig, train_run


def main():
    p = argparse.ArgumentParser()
    p.add_argument("task")
    p.add_argument("seeds", type=int, nargs="+")
    p.add_argument("--kind", default="stack")
    p.add_argument("--hidden", type=int, default=40)
    p.add_argument("--units", type=int, default=10)
    p.add_argument("--noop", action="store_true")
    p.add_argument("--curriculum-epochs", type=int, default=2)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--max-n", type=int, default=60)
    args = p.parse_args()

    task = get_task(args.task)
    units = 0 if args.kind == "rnn" else args.units
    cfg = ModelConfig(kind=args.kind, hidden=args.hidden, vocab_size=len(task.vocab),
                      units=units, use_noop=args.noop, use_recurrent=args.kind == "rnn")
    tc = TrainConfig(curriculum_epochs=args.curriculum_epochs, max_epochs=args.max_epochs)
    for seed in args.seeds:
        t0 = time.time()
        rec = train_run(cfg, task, tc, seed)
        model = Model(cfg, rec.params, task.vocab)
        scores = [eval_per_length(model, task, args.max_n, 10, d).percent for d in (True, False)]
        print(f"task={task.name} seed={seed} status={rec.status} val_acc={rec.val_accuracy:.3f} "
              f"val_bits={rec.val_entropy_bits:.4f} epochs={len(rec.epochs)} "
              f"rounded={scores[0]:.1f} continuous={scores[1]:.1f} time={time.time() - t0:.0f}s",
              flush=True)


if __name__ == "__main__":
    main()
