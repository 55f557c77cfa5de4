from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stackrnn.model import ModelConfig, Parameters, StepState, backward, init_params, window_loss
from stackrnn.tasks import TokenStream, get_task, make_stream_tokens
from stackrnn.training import (
    RunRecord,
    TrainConfig,
    TrainingError,
    clip_gradients,
    curriculum_n,
    lr_schedule_step,
    select_best,
    sgd_step,
    train_epoch,
    train_run,
    train_with_restarts,
    windows,
)

TINY = ModelConfig(kind="stack", hidden=10, vocab_size=2, units=2)


def test_clip_examples():
    assert clip_gradients([20.0, -20.0, 3.0], 15).tolist() == [15, -15, 3]
    assert clip_gradients([1.0, -2.0], 15).tolist() == [1, -2]
    assert clip_gradients([1.0, -1.0], 0.5).tolist() == [0.5, -0.5]
    with pytest.raises(ValueError):
        clip_gradients([1.0], 0)


def test_clip_parameters():
    g = Parameters.from_flat(TINY, np.linspace(-30, 30, TINY.n_params()))
    assert np.abs(clip_gradients(g, 15).flat()).max() == 15


def test_lr_schedule_examples():
    assert lr_schedule_step(2.0, 1.5, 0.1) == 0.1
    assert lr_schedule_step(1.5, 1.5, 0.1) == 0.05
    assert lr_schedule_step(1.5, 1.6, 0.05) == 0.025
    # improvements smaller than the tolerance count as "not decreasing"
    assert lr_schedule_step(1.5, 1.5 - 5e-5, 0.1) == 0.05


def test_curriculum_examples():
    tc = TrainConfig()
    assert curriculum_n(0, tc) == 2
    assert curriculum_n(1, tc) == 2
    assert curriculum_n(4, tc) == 4
    assert curriculum_n(1000, tc) == 19
    with pytest.raises(ValueError):
        curriculum_n(-1, tc)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(bptt_window=1)
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(restarts=0)


def test_windows_are_consecutive():
    assert list(windows(10, 4)) == [(0, 5), (4, 9), (8, 10)]
    assert list(windows(5, 4)) == [(0, 5)]
    spans = list(windows(1001, 50))
    # every target position 1..n-1 is predicted exactly once
    targets = [t for a, b in spans for t in range(a + 1, b)]
    assert targets == list(range(1, 1001))


def _stream(n_tokens=400, seed=0):
    s = make_stream_tokens(get_task("anbn"), 6, n_tokens, np.random.default_rng(seed))
    cut = slice(0, n_tokens)
    return TokenStream(s.tokens[cut], s.det_mask[cut], s.loss_mask[cut], s.vocab)


def test_lr_zero_leaves_params_unchanged():
    p = init_params(TINY, 0)
    before = p.copy()
    train_epoch(p, TINY, _stream(), 0.0)
    assert p == before


def test_single_window_is_one_sgd_step():
    p = init_params(TINY, 1)
    stream = _stream(30)
    _, cache = window_loss(p, TINY, StepState.fresh(TINY), stream.tokens, stream.loss_mask[1:])
    g = backward(cache)
    expected = p.flat() - 0.1 * np.clip(g.flat(), -15, 15)
    train_epoch(p, TINY, stream, 0.1, bptt_window=50)
    assert np.array_equal(p.flat(), expected)


def test_state_is_carried_across_windows():
    p = init_params(TINY, 2)
    stream = _stream(101)
    _, _, end = train_epoch(p.copy(), TINY, stream, 0.0, bptt_window=25)
    _, cache = window_loss(p, TINY, StepState.fresh(TINY), stream.tokens, stream.loss_mask[1:])
    np.testing.assert_allclose(end.h, cache.final_state.h, atol=1e-12)


@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.floats(0.5, 20.0))
def test_update_is_bounded(seed, lr, clip):
    p = init_params(TINY, seed)
    before = p.flat()
    train_epoch(p, TINY, _stream(121, seed), lr, bptt_window=40, clip=clip)
    # three windows, each moving a coordinate by at most lr * clip
    assert np.abs(p.flat() - before).max() <= 3 * lr * clip * (1 + 1e-12)


def test_single_update_respects_clip():
    p = init_params(TINY, 3)
    g = Parameters.from_flat(TINY, np.full(TINY.n_params(), 100.0))
    before = p.flat()
    sgd_step(p, g, 0.1, 15)
    assert np.allclose(before - p.flat(), 1.5)


def test_loss_decreases_on_anbn():
    cfg = ModelConfig(kind="stack", hidden=10, vocab_size=2, units=2)
    p = init_params(cfg, 0)
    stream = _stream(2000)
    losses = [train_epoch(p, cfg, stream, 0.1)[1] for _ in range(5)]
    assert losses[-1] < losses[0]


def test_short_stream_rejected():
    s = TokenStream(np.array([0]), np.array([False]), np.array([True]), ("a", "b"))
    with pytest.raises(ValueError):
        train_epoch(init_params(TINY, 0), TINY, s, 0.1)


def _rec(seed, acc, ent, status="ok"):
    return RunRecord(seed, val_accuracy=acc, val_entropy_bits=ent, status=status)


def test_selection_rules():
    assert select_best([_rec(0, 0.4, 1.0), _rec(1, 0.9, 2.0)]).seed == 1
    assert select_best([_rec(0, 0.5, 1.2), _rec(1, 0.5, 1.1)]).seed == 1
    assert select_best([_rec(3, 0.5, 1.1), _rec(2, 0.5, 1.1)]).seed == 2
    assert select_best([_rec(0, 1.0, 0.1, "diverged:NonFiniteError"), _rec(1, 0.1, 1.0)]).seed == 1
    with pytest.raises(TrainingError):
        select_best([_rec(0, 1.0, 0.1, "diverged:x")])


FAST = TrainConfig(epoch_tokens=600, max_epochs=4, curriculum_epochs=1, curriculum_max=5,
                   val_tokens=300, val_trials=2, restarts=2)


def test_train_run_records_and_lr_monotone():
    rec = train_run(TINY, get_task("anbn"), FAST, seed=0)
    assert rec.status == "ok" and len(rec.epochs) == 4
    assert [e.n_max for e in rec.epochs] == [2, 3, 4, 5]
    lrs = [e.lr for e in rec.epochs]
    assert lrs == sorted(lrs, reverse=True)
    assert all(np.log2(FAST.lr0 / lr) == int(np.log2(FAST.lr0 / lr)) for lr in lrs)
    assert rec.log_text().splitlines()[0].startswith("epoch=0 nmax=2 lr=0.1 train_nll=")


def test_lr_halves_after_each_non_improving_epoch():
    tc = TrainConfig(epoch_tokens=500, max_epochs=8, curriculum_epochs=1, curriculum_max=2,
                     val_tokens=300, val_trials=1, lr0=0.5)
    rec = train_run(TINY, get_task("anbn"), tc, seed=1)
    ents = [e.val_entropy_bits for e in rec.epochs]
    halvings = 0
    for i, e in enumerate(rec.epochs):
        assert e.lr == tc.lr0 / 2**halvings
        if i and not ents[i] < ents[i - 1] - tc.min_delta:
            halvings += 1


def test_training_is_deterministic():
    a = train_run(TINY, get_task("anbn"), FAST, seed=4)
    b = train_run(TINY, get_task("anbn"), FAST, seed=4)
    assert a.log_text() == b.log_text()
    assert a.params == b.params
    assert a.params != train_run(TINY, get_task("anbn"), FAST, seed=5).params


def test_restarts_and_threads_agree():
    m1, r1 = train_with_restarts(TINY, get_task("anbn"), FAST, threads=1)
    m2, r2 = train_with_restarts(TINY, get_task("anbn"), FAST, threads=2)
    assert [r.seed for r in r1] == [0, 1]
    assert [r.log_text() for r in r1] == [r.log_text() for r in r2]
    assert m1.params == m2.params
    best = select_best(r1)
    assert m1.params == best.params


def test_stop_at_accuracy_skips_later_restarts():
    tc = replace(FAST, restarts=3, stop_at_accuracy=0.0)
    _, records = train_with_restarts(TINY, get_task("anbn"), tc, threads=1)
    assert [r.seed for r in records] == [0]


def test_divergence_is_reported():
    tc = replace(FAST, lr0=1e300, clip=1e300)
    rec = train_run(TINY, get_task("anbn"), tc, seed=0)
    assert rec.diverged and rec.status.startswith("diverged:")
