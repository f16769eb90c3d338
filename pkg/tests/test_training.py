"""Loss, optimizer, and the end-to-end training loop on the synthetic
corpus."""

import os

import numpy as np
import pytest

from stscnet.autodiff import Parameter, Tape, Value
from stscnet.checkpoint import load_checkpoint
from stscnet.config import apply_overrides, default_config
from stscnet.datasets import load_dataset
from stscnet.errors import InvalidArgument, NumericError, SpecError
from stscnet.network import VotingLayer
from stscnet.training import (
    ABLATE_CSV_HEADER,
    CSV_HEADER,
    Metrics,
    OptimState,
    ablate,
    adam_step,
    build_network,
    evaluate,
    metrics_to_csv,
    predict,
    train,
    voting_mse_loss,
)

from oracles import adam_trace_oracle, voting_loss_oracle


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_loss_hand_trace():
    # O = [1, 0, 1, 1] at T=1, two classes, target class 1:
    # scores (0.5, 1.0), loss = 0.25 + 0 = 0.25
    o = Value(np.array([1.0, 0.0, 1.0, 1.0]).reshape(1, 1, 4))
    loss, scores = voting_mse_loss(o, np.array([1]), VotingLayer(4, 2))
    assert np.array_equal(scores, np.array([[0.5, 1.0]]))
    assert float(loss.data) == 0.25


def test_loss_zero_iff_scores_hit_the_target_exactly():
    v = VotingLayer(4, 2)
    perfect = Value(np.array([0.0, 0.0, 1.0, 1.0]).reshape(1, 1, 4))
    loss, _ = voting_mse_loss(perfect, np.array([1]), v)
    assert float(loss.data) == 0.0
    off = Value(np.array([0.0, 0.0, 1.0, 0.5]).reshape(1, 1, 4))
    loss2, _ = voting_mse_loss(off, np.array([1]), v)
    assert float(loss2.data) > 0.0


def test_loss_matches_the_reference_sum():
    rng = np.random.default_rng(90)
    v = VotingLayer(12, 4, dtype=np.float64)
    for _ in range(6):
        o = rng.standard_normal((5, 3, 12))
        labels = rng.integers(0, 4, 3)
        loss, _ = voting_mse_loss(Value(o), labels, v)
        assert abs(float(loss.data) - voting_loss_oracle(o, labels, 4)) < 1e-12


def test_loss_averages_over_time_before_voting():
    v = VotingLayer(2, 2)
    o = np.zeros((4, 1, 2))
    o[:, 0, 0] = [1.0, 0.0, 1.0, 0.0]  # mean 0.5
    loss, scores = voting_mse_loss(Value(o), np.array([0]), v)
    assert np.array_equal(scores, np.array([[0.5, 0.0]]))
    assert float(loss.data) == 0.25


def test_loss_gradient_reaches_the_outputs():
    rng = np.random.default_rng(91)
    v = VotingLayer(6, 3, dtype=np.float64)
    o = Parameter(rng.standard_normal((4, 2, 6)))
    with Tape() as tape:
        loss, _ = voting_mse_loss(o, np.array([0, 2]), v)
    tape.backward(loss)
    assert np.abs(o.grad).max() > 0
    assert o.grad.shape == (4, 2, 6)


def test_loss_validation():
    v = VotingLayer(4, 2)
    with pytest.raises(InvalidArgument):
        voting_mse_loss(Value(np.zeros((2, 4))), np.array([0]), v)
    with pytest.raises(InvalidArgument):
        voting_mse_loss(Value(np.zeros((1, 2, 4))), np.array([0]), v)
    with pytest.raises(InvalidArgument):
        voting_mse_loss(Value(np.zeros((1, 1, 6))), np.array([0]), v)
    with pytest.raises(InvalidArgument):
        voting_mse_loss(Value(np.zeros((1, 1, 4))), np.array([2]), v)


def test_predict_breaks_ties_toward_the_lowest_class():
    scores = np.array([[0.5, 0.5, 0.2], [0.1, 0.4, 0.4]])
    assert predict(scores).tolist() == [0, 1]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adam_matches_the_scalar_reference():
    g_seq = [0.3, -0.1, 0.05, 0.2, -0.4]
    lr = 0.1
    p = Parameter(np.zeros(1), name="w")
    params = {"w": p}
    state = OptimState.for_params(params)
    trace = []
    for g in g_seq:
        p.grad[...] = g
        adam_step(params, state, lr)
        trace.append(float(p.data[0]))
    ref = adam_trace_oracle(g_seq, lr)
    assert np.allclose(trace, ref, atol=1e-12)
    assert state.step == 5


def test_adam_first_step_moves_by_about_lr():
    # bias correction makes the first update lr * sign(g) up to eps
    for g in (0.5, -2.0, 1e-3):
        p = Parameter(np.zeros(1), name="w")
        state = OptimState.for_params({"w": p})
        p.grad[...] = g
        adam_step({"w": p}, state, lr=0.01)
        assert abs(float(p.data[0]) + 0.01 * np.sign(g)) < 1e-5


def test_adam_zero_gradient_is_a_fixed_point():
    p = Parameter(np.array([1.0, -2.0]), name="w")
    state = OptimState.for_params({"w": p})
    adam_step({"w": p}, state, lr=0.1)
    assert np.array_equal(p.data, np.array([1.0, -2.0]))


def test_adam_rejects_non_finite_gradients():
    p = Parameter(np.zeros(3), name="fc.1.W")
    state = OptimState.for_params({"fc.1.W": p})
    p.grad[1] = np.nan
    with pytest.raises(NumericError, match="fc.1.W"):
        adam_step({"fc.1.W": p}, state, lr=0.1)
    p.grad[1] = np.inf
    with pytest.raises(NumericError):
        adam_step({"fc.1.W": p}, state, lr=0.1)


def test_adam_state_tracks_each_parameter():
    a = Parameter(np.zeros(2), name="a")
    b = Parameter(np.zeros(3), name="b")
    state = OptimState.for_params({"a": a, "b": b})
    assert set(state.m) == {"a", "b"}
    assert state.v["b"].shape == (3,)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def test_metrics_csv_format():
    history = [
        Metrics(epoch=1, train_loss=0.5, train_acc=0.25, test_acc=0.3, seconds=1.23456, seed=0),
        Metrics(epoch=2, train_loss=0.25, train_acc=0.5, test_acc=0.6, seconds=0.0, seed=0),
    ]
    text = metrics_to_csv(history)
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == "1,0.5,0.25,0.3,1.235"
    assert lines[2] == "2,0.25,0.5,0.6,0.000"
    assert text.endswith("\n")


def test_metrics_csv_floats_survive_a_parse_round_trip():
    m = Metrics(epoch=1, train_loss=1 / 3, train_acc=2 / 7, test_acc=0.1, seconds=0.0, seed=0)
    row = metrics_to_csv([m]).splitlines()[1].split(",")
    assert float(row[1]) == m.train_loss
    assert float(row[2]) == m.train_acc
    assert float(row[3]) == m.test_acc


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


def _synth_cfg(**over):
    pairs = {k: str(v) for k, v in over.items()}
    return apply_overrides(default_config("synth"), pairs)


def test_training_learns_the_synthetic_corpus(tmp_path):
    cfg = _synth_cfg(epochs=6)
    out = os.path.join(tmp_path, "run")
    result = train(cfg, out_dir=out)
    assert len(result.history) == 6
    assert result.final_acc >= 0.95
    losses = [m.train_loss for m in result.history]
    drops = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
    assert drops >= 4

    text = open(os.path.join(out, "metrics.csv"), encoding="utf-8").read()
    lines = text.splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 7


def test_final_checkpoint_reproduces_the_final_accuracy(tmp_path):
    cfg = _synth_cfg(epochs=3, train_limit=80, test_limit=40)
    out = os.path.join(tmp_path, "run")
    result = train(cfg, out_dir=out)
    bundle = load_dataset(cfg)
    net = build_network(cfg, bundle.input_shape)
    net.load_state(load_checkpoint(os.path.join(out, "final.ckpt")))
    acc = evaluate(net, bundle.test.frames, bundle.test.labels, cfg.batch_size)
    assert acc == result.final_acc


def test_best_checkpoint_tracks_the_best_epoch(tmp_path):
    cfg = _synth_cfg(epochs=4, train_limit=80, test_limit=40)
    out = os.path.join(tmp_path, "run")
    result = train(cfg, out_dir=out)
    assert result.best_acc == max(m.test_acc for m in result.history)
    assert result.best_epoch == min(
        m.epoch for m in result.history if m.test_acc == result.best_acc
    )
    bundle = load_dataset(cfg)
    net = build_network(cfg, bundle.input_shape)
    net.load_state(load_checkpoint(os.path.join(out, "best.ckpt")))
    acc = evaluate(net, bundle.test.frames, bundle.test.labels, cfg.batch_size)
    assert acc == result.best_acc


def test_training_is_deterministic_without_wall_clock():
    cfg = _synth_cfg(epochs=3, train_limit=64, test_limit=32,
                     precision="float64", wall_clock="false")
    a = train(cfg)
    b = train(cfg)
    assert metrics_to_csv(a.history) == metrics_to_csv(b.history)
    for k, v in a.net.state_dict().items():
        assert np.array_equal(v, b.net.state_dict()[k]), k


def test_training_seed_changes_the_trajectory():
    cfg = _synth_cfg(epochs=2, train_limit=64, test_limit=32)
    a = train(cfg)
    b = train(apply_overrides(cfg, {"seed": "1"}))
    assert metrics_to_csv(a.history) != metrics_to_csv(b.history)


def test_every_parameter_receives_gradient_signal():
    # one gated step in 64-bit: no layer may be cut off from the loss
    cfg = _synth_cfg(policy="P123", precision="float64", train_limit=16, test_limit=8)
    bundle = load_dataset(cfg)
    net = build_network(cfg, bundle.input_shape)
    xb = np.ascontiguousarray(
        np.moveaxis(bundle.train.frames[:8], 0, 1), dtype=np.float64
    )
    with Tape() as tape:
        o = net.forward(xb, train=True)
        loss, _ = voting_mse_loss(o, bundle.train.labels[:8], net.voting)
    net.zero_grad()
    tape.backward(loss)
    for name, p in net.parameters().items():
        assert np.abs(p.grad).max() > 0, name


def test_gated_and_plain_networks_share_base_initialization():
    # the gate draws its parameters after the site is placed, so the FC
    # weights of a gated run start from different draws; both must still
    # train end to end
    cfg = _synth_cfg(epochs=1, train_limit=32, test_limit=16)
    plain = train(cfg)
    gated = train(apply_overrides(cfg, {"policy": "P1"}))
    assert len(plain.history) == len(gated.history) == 1


def test_evaluate_counts_correct_predictions():
    cfg = _synth_cfg(epochs=2, train_limit=64, test_limit=32)
    result = train(cfg)
    bundle = load_dataset(cfg)
    acc = evaluate(result.net, bundle.test.frames, bundle.test.labels, batch_size=7)
    # odd batch size exercises the remainder batch; same model, same data
    assert acc == result.history[-1].test_acc


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def test_ablate_policies_grid(tmp_path):
    cfg = _synth_cfg(epochs=1, train_limit=24, test_limit=12)
    rows = ablate(cfg, "policies", out_dir=str(tmp_path))
    assert [r["policy"] for r in rows] == ["P1", "P2", "P3", "P12", "P13", "P23", "P123"]
    path = os.path.join(tmp_path, "ablate_policies.csv")
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == ABLATE_CSV_HEADER
    assert len(lines) == 8


def test_ablate_kernels_grid():
    cfg = _synth_cfg(epochs=1, train_limit=24, test_limit=12, policy="P1")
    rows = ablate(cfg, "kernels")
    assert [r["K_F"] for r in rows[:4]] == [1, 3, 5, 7]
    assert [r["K_G"] for r in rows[4:]] == [1, 3, 5, 7]
    assert len(rows) == 8


def test_ablate_variants_grid():
    cfg = _synth_cfg(epochs=1, train_limit=24, test_limit=12)
    rows = ablate(cfg, "variants")
    assert [r["variant"] for r in rows] == [
        "FCs-Non", "FCs-Non", "FCs-ReLU", "FCs-ReLU", "SNN", "SNN",
    ]
    # each variant runs plain and gated; the gate defaults to the first site
    assert [r["policy"] for r in rows] == ["none", "P1"] * 3


def test_ablate_rejects_unknown_grid():
    with pytest.raises(SpecError):
        ablate(_synth_cfg(), "optimizers")
