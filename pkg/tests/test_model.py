import math

import numpy as np
import pytest

from ctc_seq.ctc import ctc_loss
from ctc_seq.errors import ContractViolation, CorruptFileError, DataError, InfeasibleTargetError
from ctc_seq.model import (Adam, Example, ModelParams, PlateauSchedule, TrainConfig,
                           clip_global_norm, decode_model, encode_model, evaluate, forward,
                           load_model, loss_and_grads, save_model, train, utterance_loss)
from helpers import central_diff, rel_err, toy_detokenize, toy_examples

HASH = "ab" * 32


@pytest.fixture(scope="module")
def toy():
    return toy_examples(10, seed=0), toy_examples(4, seed=1, prefix="dev")


def swapped(params):
    """Exchange forward and backward parameter sets (and the matching input halves)."""
    H = params.H
    t = {k: v.copy() for k, v in params}
    for layer in range(params.L):
        for part in ("W", "U", "b"):
            t[f"{layer}.fwd.{part}"], t[f"{layer}.bwd.{part}"] = (
                params[f"{layer}.bwd.{part}"].copy(), params[f"{layer}.fwd.{part}"].copy())
        if layer > 0:
            for d in ("fwd", "bwd"):
                W = t[f"{layer}.{d}.W"]
                t[f"{layer}.{d}.W"] = np.concatenate([W[H:], W[:H]])
    W = t["out.W"]
    t["out.W"] = np.concatenate([W[H:], W[:H]])
    return ModelParams(params.F, params.H, params.L, params.C, t)


# -- forward ------------------------------------------------------------------

def test_shapes_and_order():
    p = ModelParams(5, 3, 2, 4)
    assert list(p.tensors) == ["in.W", "in.b",
                               "0.fwd.W", "0.fwd.U", "0.fwd.b", "0.bwd.W", "0.bwd.U", "0.bwd.b",
                               "1.fwd.W", "1.fwd.U", "1.fwd.b", "1.bwd.W", "1.bwd.U", "1.bwd.b",
                               "out.W", "out.b"]
    assert p["1.fwd.W"].shape == (6, 3)
    assert p["out.W"].shape == (6, 4)
    with pytest.raises(ValueError):
        ModelParams(5, 3, 7, 4)
    with pytest.raises(ValueError):
        ModelParams(5, 3, 0, 4)


def test_zero_params_give_uniform_rows(rng):
    lp = forward(ModelParams(6, 4, 2, 5), rng.standard_normal((7, 6)))
    np.testing.assert_allclose(lp, -math.log(5), atol=1e-15)


def test_rows_are_log_distributions(rng):
    p = ModelParams.init(6, 4, 3, 5, seed=3, scale=1.0)
    lp = forward(p, 3 * rng.standard_normal((9, 6)))
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-5)
    assert lp.shape == (9, 5) and np.all(lp <= 0)


def test_single_frame_has_no_context(rng):
    # with T=1 each direction sees only its own frame, so the order of the
    # directions cannot matter
    p = ModelParams.init(4, 3, 2, 3, seed=1, scale=0.7)
    x = rng.standard_normal((1, 4))
    np.testing.assert_allclose(forward(p, x), forward(swapped(p), x), atol=1e-14)


def test_time_reversal_symmetry(rng):
    p = ModelParams.init(4, 3, 3, 4, seed=2, scale=0.6)
    x = rng.standard_normal((8, 4))
    np.testing.assert_allclose(forward(swapped(p), x[::-1]), forward(p, x)[::-1], atol=1e-12)


def test_feature_width_mismatch(rng):
    with pytest.raises(ContractViolation):
        forward(ModelParams(4, 2, 1, 3), rng.standard_normal((5, 3)))


# -- gradients ----------------------------------------------------------------

@pytest.mark.parametrize("layers", [1, 2, 3])
def test_gradients_match_finite_differences(rng, layers):
    p = ModelParams.init(3, 4, layers, 4, seed=layers, scale=0.5)
    x = rng.standard_normal((6, 3))
    labels = [0, 2, 2]
    loss, grads = loss_and_grads(p, x, labels)
    for name, arr in p:
        num = central_diff(lambda: utterance_loss(p, x, labels), arr)
        assert rel_err(grads[name], num) < 1e-3, name


def test_backward_loss_equals_forward_ctc_loss(rng):
    p = ModelParams.init(3, 4, 2, 4, seed=0, scale=0.5)
    x = rng.standard_normal((6, 3))
    loss, _ = loss_and_grads(p, x, [1, 0])
    assert loss == ctc_loss(forward(p, x), [1, 0]).loss


def test_empty_target_on_blank_favouring_params(rng):
    p = ModelParams(3, 2, 1, 3)
    p["out.b"][:] = [-5.0, -5.0, 5.0]
    loss, grads = loss_and_grads(p, rng.standard_normal((4, 3)), [])
    assert math.isfinite(loss) and loss < 0.01
    assert all(np.all(np.isfinite(g)) for _, g in grads)


def test_infeasible_pair():
    with pytest.raises(InfeasibleTargetError) as info:
        loss_and_grads(ModelParams(2, 2, 1, 3), np.zeros((2, 2)), [0, 0])
    assert info.value.min_frames == 3


# -- optimisation -------------------------------------------------------------

def test_adam_zero_gradient_is_a_no_op():
    p = ModelParams.init(3, 2, 1, 3, seed=0)
    before = p.copy()
    Adam(p).step(p, p.zeros_like(), lr=1e-3)
    for name, arr in p:
        np.testing.assert_array_equal(arr, before[name])


def test_adam_first_step_is_lr_times_sign():
    p = ModelParams(2, 2, 1, 3)
    g = p.zeros_like()
    g["out.b"][:] = [2.0, -0.5, 0.0]
    Adam(p).step(p, g, lr=0.01)
    np.testing.assert_allclose(p["out.b"], [-0.01, 0.01, 0.0], rtol=1e-6)


def test_clip_global_norm():
    g = ModelParams(2, 2, 1, 3)
    g["out.b"][:] = [3.0, 4.0, 0.0]
    assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
    np.testing.assert_allclose(g["out.b"], [0.6, 0.8, 0.0])
    assert clip_global_norm(g, 5.0) == pytest.approx(1.0)


def test_plateau_schedule_arithmetic():
    s = PlateauSchedule(1e-4, 0.2, patience=3, stop_patience=8)
    assert s.update(1.0)
    for _ in range(6):
        assert not s.update(2.0)
    assert s.lr == pytest.approx(1e-4 * 0.2 ** 2) == pytest.approx(4e-6)
    assert not s.should_stop
    s.update(2.0)
    s.update(2.0)
    assert s.should_stop
    assert s.update(0.5) and s.since_best == 0


def test_train_config_validation():
    assert TrainConfig().learning_rate == 1e-4
    for bad in (dict(lr_reduce_factor=1.0), dict(lr_reduce_factor=0.0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# -- training -----------------------------------------------------------------

def test_train_loss_decreases_over_first_epochs(toy):
    train_set, dev_set = toy
    state = train(train_set, dev_set, 5, TrainConfig(max_epochs=5))
    losses = [r.train_loss for r in state.history]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_is_deterministic(toy):
    train_set, dev_set = toy
    cfg = TrainConfig(max_epochs=3, learning_rate=1e-3)
    a = train(train_set, dev_set, 5, cfg, detokenize=toy_detokenize)
    b = train(train_set, dev_set, 5, cfg, detokenize=toy_detokenize)
    assert a.history == b.history
    for name, arr in a.params:
        np.testing.assert_array_equal(arr, b.params[name])


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_depth_sweep(toy, layers):
    train_set, dev_set = toy
    state = train(train_set, dev_set, 5, TrainConfig(max_epochs=2, layers=layers))
    assert state.params.L == layers
    assert len(state.history) == 2
    assert all(math.isfinite(r.dev_loss) for r in state.history)


def test_history_logs_lr_schedule(toy):
    train_set, dev_set = toy
    # a huge rate makes dev loss worse every epoch, so the schedule fires
    cfg = TrainConfig(max_epochs=12, learning_rate=5.0, lr_patience_epochs=1,
                      early_stop_patience=4, restore_best=True)
    state = train(train_set, dev_set, 5, cfg)
    lrs = [r.lr for r in state.history]
    assert lrs[0] == 5.0
    assert all(b in (a, a * 0.2) for a, b in zip(lrs, lrs[1:]))
    assert len(state.history) < 12


def test_infeasible_pairs_are_skipped(toy):
    train_set, dev_set = toy
    bad = Example("bad", train_set[0].frames[:2], [0, 1, 2], "x")
    state = train(list(train_set) + [bad], dev_set, 5, TrainConfig(max_epochs=1))
    assert state.skipped == ["bad"]
    with pytest.raises(DataError, match="smaller than the length"):
        train([bad], dev_set, 5, TrainConfig(max_epochs=1))
    with pytest.raises(DataError):
        train(train_set, [], 5)


def test_toy_converges_with_larger_learning_rate(toy):
    # the same model and data fit once Adam may move further per step; some
    # other init seeds stall on the all-blank plateau, so the seed is pinned
    train_set, dev_set = toy
    cfg = TrainConfig(learning_rate=1e-2, lr_patience_epochs=200, early_stop_patience=200,
                      max_epochs=200, seed=0)
    state = train(train_set, dev_set, 5, cfg, detokenize=toy_detokenize)
    _, train_cer = evaluate(state.params, train_set, toy_detokenize)
    assert train_cer == 0.0
    assert state.best_dev_loss < 0.1


# -- persistence --------------------------------------------------------------

def test_save_load_bit_exact(tmp_path, rng):
    p = ModelParams.init(5, 3, 2, 4, seed=9)
    save_model(tmp_path / "m.ctcm", p, "bpe:100", HASH)
    loaded = load_model(tmp_path / "m.ctcm")
    assert loaded.tokenizer == "bpe:100" and loaded.vocab_hash == HASH
    assert (loaded.params.F, loaded.params.H, loaded.params.L, loaded.params.C) == (5, 3, 2, 4)
    for name, arr in p:
        assert loaded.params[name].tobytes() == arr.tobytes()
    x = rng.standard_normal((4, 5))
    assert forward(loaded.params, x).tobytes() == forward(p, x).tobytes()


def test_model_file_header():
    data = encode_model(ModelParams(5, 3, 2, 4), "char", HASH)
    assert data[:4] == b"CTCM" and data[4] == 1
    assert data[5:21] == bytes([3, 0, 0, 0, 2, 0, 0, 0, 5, 0, 0, 0, 3, 0, 0, 0])


@pytest.mark.parametrize("offset", [0, 6, 30, -40, -1])
def test_tampered_file_rejected(offset):
    data = bytearray(encode_model(ModelParams.init(5, 3, 2, 4), "char", HASH))
    data[offset] ^= 0xFF
    with pytest.raises(CorruptFileError):
        decode_model(bytes(data))


def test_truncated_file_rejected():
    data = encode_model(ModelParams(5, 3, 2, 4), "char", HASH)
    with pytest.raises(CorruptFileError):
        decode_model(data[:-100])


def test_vocab_hash_mismatch_refused():
    data = encode_model(ModelParams(5, 3, 2, 4), "char", HASH)
    assert decode_model(data, vocab_hash=HASH).vocab_hash == HASH
    with pytest.raises(ContractViolation):
        decode_model(data, vocab_hash="cd" * 32)
