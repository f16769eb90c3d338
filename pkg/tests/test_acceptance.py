"""Acceptance gate: one test per published criterion, in order.

Each test prints a single verdict line (visible under ``pytest -s`` or in
captured output). Criteria that need a real corpus skip with an explicit
reason when it is absent; a skip is a gap to close, never a pass.
"""

import os

import numpy as np
import pytest

from stscnet.autodiff import Parameter, Value
from stscnet.config import apply_overrides, default_config
from stscnet.gradcheck import run_suite
from stscnet.network import Network, VotingLayer, parse_spec
from stscnet.neuron import LIFCell, LIFConfig
from stscnet.ops import depthwise_tconv1d, depthwise_tconv3d, tconv1d_mix
from stscnet.synapse import (
    FLIParams,
    STSCConfig,
    TRFParams,
    fli_forward,
    make_stsc_params,
    make_trf_params,
    stsc_forward,
    trf_forward,
)
from stscnet.training import metrics_to_csv, train, voting_mse_loss

from conftest import data_root, have_nmnist, have_shd
from oracles import tconv1d_oracle, tconv3d_oracle, tconv_mix_oracle

FULL_ENV = "STSC_ACCEPT_FULL"


def _verdict(n: int, ok: bool, detail: str) -> None:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")


# ---------------------------------------------------------------------------
# 1. every backward rule against central finite differences
# ---------------------------------------------------------------------------


def test_criterion_1_gradients_match_finite_differences():
    results = run_suite(seeds=20, tol=1e-5)
    worst = max(r.max_rel_err for r in results)
    ok = all(r.passed for r in results) and worst < 1e-5
    _verdict(1, ok, f"{len(results)} checks, worst residual {worst:.3e}, tol 1e-05")
    assert ok


# ---------------------------------------------------------------------------
# 2. temporal convolutions against nested-loop references
# ---------------------------------------------------------------------------


def test_criterion_2_temporal_convolutions_match_oracles():
    rng = np.random.default_rng(20260818)
    worst = 0.0
    for i in range(50):
        t = int(rng.integers(3, 9))
        n = int(rng.integers(1, 6))
        k = int(rng.choice([1, 3, 5]))
        causal = bool(i % 2)
        if i % 3 == 0:
            x = rng.uniform(-1, 1, (t, n))
            w = rng.uniform(-1, 1, (k, n))
            got = depthwise_tconv1d(Value(x), Value(w), causal=causal).data
            ref = tconv1d_oracle(x, w, causal=causal)
        elif i % 3 == 1:
            c = int(rng.integers(1, 4))
            h = int(rng.integers(2, 5))
            wd = int(rng.integers(2, 5))
            x = rng.uniform(-1, 1, (t, c, h, wd))
            w = rng.uniform(-1, 1, (k, c))
            got = depthwise_tconv3d(Value(x), Value(w), causal=causal).data
            ref = tconv3d_oracle(x, w, causal=causal)
        else:
            m = int(rng.integers(1, 5))
            x = rng.uniform(-1, 1, (t, n))
            w = rng.uniform(-1, 1, (k, n, m))
            got = tconv1d_mix(Value(x), Value(w), causal=causal).data
            ref = tconv_mix_oracle(x, w, causal=causal)
        worst = max(worst, float(np.abs(got - ref).max()))
    ok = worst <= 1e-12
    _verdict(2, ok, f"50 shapes, worst |diff| {worst:.3e}, tol 1e-12")
    assert ok


# ---------------------------------------------------------------------------
# 3. frozen hand traces of the core update rules
# ---------------------------------------------------------------------------


def test_criterion_3_equation_unit_values():
    # spiking recurrence: tau=2, threshold 1, constant drive 0.6
    cell = LIFCell(LIFConfig(tau=2.0, v_th=1.0))
    spikes = cell.forward(np.full((3, 1), 0.6))
    lif_ok = (
        np.array_equal(spikes.ravel(), np.array([0.0, 0.0, 1.0]))
        and abs(float(cell.state.V.ravel()[0]) - 1.05) <= 1e-9
    )

    # filtering path on [1, 0, 2, 0]
    x = Value(np.array([1.0, 0.0, 2.0, 0.0]).reshape(4, 1))
    p = TRFParams(W_F=Parameter(np.array([0.5, 1.0, 0.25]).reshape(3, 1)))
    trf_ok = bool(
        np.abs(trf_forward(x, p).data.ravel() - np.array([1.0, 1.25, 2.0, 0.5])).max()
        <= 1e-9
    )

    # gating path: one channel, unit mixing, doubling squeeze
    g = fli_forward(
        Value(np.array([1.0, 0.0]).reshape(2, 1)),
        FLIParams(W_G1=Parameter(np.ones((1, 1, 1))), W_G2=Parameter(np.full((1, 1), 2.0))),
    ).data.ravel()
    fli_ok = abs(g[0] - 0.8807970779778823) <= 1e-9 and abs(g[1] - 0.5) <= 1e-9

    # readout loss: scores (0.5, 1.0) against class 1
    o = Value(np.array([1.0, 0.0, 1.0, 1.0]).reshape(1, 1, 4))
    loss, _ = voting_mse_loss(o, np.array([1]), VotingLayer(4, 2))
    loss_ok = abs(float(loss.data) - 0.25) <= 1e-9

    ok = lif_ok and trf_ok and fli_ok and loss_ok
    _verdict(3, ok, f"lif={lif_ok} trf={trf_ok} fli={fli_ok} loss={loss_ok}")
    assert ok


# ---------------------------------------------------------------------------
# 4. structural invariants
# ---------------------------------------------------------------------------


def test_criterion_4_structural_invariants():
    rng = np.random.default_rng(404)
    checks = {}

    # gate factors strictly inside (0, 1), both variants
    p1 = FLIParams(
        W_G1=Parameter(rng.uniform(-2, 2, (3, 6, 3))),
        W_G2=Parameter(rng.uniform(-2, 2, (3, 6))),
    )
    d = fli_forward(Value(rng.standard_normal((7, 2, 6))), p1).data
    pc = FLIParams(
        W_G1=Parameter(rng.uniform(-2, 2, (3, 4, 2))),
        W_G2=Parameter(rng.uniform(-2, 2, (2, 4))),
    )
    dc = fli_forward(
        Value(rng.standard_normal((5, 2, 4, 3, 3))), pc, variant="conv-3D"
    ).data
    checks["gate_open_interval"] = bool((d > 0).all() and (d < 1).all()
                                        and (dc > 0).all() and (dc < 1).all())

    # the spatial gate never varies over (h, w)
    checks["gate_spatially_constant"] = bool(
        np.array_equal(dc, np.broadcast_to(dc[..., :1, :1], dc.shape))
    )

    # default filter init is a bit-exact no-op
    xf = Value(rng.standard_normal((15, 700)).astype(np.float32))
    checks["filter_identity_init"] = bool(
        np.array_equal(trf_forward(xf, make_trf_params(700, 5, dtype=np.float32)).data,
                       xf.data)
    )

    # with the gate disabled the block output IS the filtered signal
    cfg = STSCConfig(k_f=5, k_g=3, r=2, enable_fli=False)
    params = make_stsc_params(6, cfg, dtype=np.float64, rng=rng)
    xs = Value(rng.standard_normal((9, 3, 6)))
    checks["block_without_gate"] = bool(
        np.array_equal(stsc_forward(xs, cfg, params).data,
                       trf_forward(xs, params.trf).data)
    )

    # network outputs are binary spike tensors
    net = Network(parse_spec("Input-32FC-16FC-Voting-4", input_shape=(8,)), (8,), seed=2)
    xin = (rng.random((5, 3, 8)) < 0.3).astype(np.float32)
    out = net.forward(xin, train=False).data
    checks["spikes_binary"] = bool(np.isin(out, (0.0, 1.0)).all())

    # the readout averages: every row of the voting matrix sums to 1
    v = VotingLayer(100, 20)
    checks["voting_rows_sum_1"] = bool(
        np.abs(v.matrix.sum(axis=1) - 1.0).max() <= 1e-12
    )

    ok = all(checks.values())
    _verdict(4, ok, ", ".join(f"{k}={v}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------------------
# 5. spoken-digit desk-scale reproduction (needs the real corpus)
# ---------------------------------------------------------------------------


def _shd_cfg(epochs: int, **over):
    pairs = {"epochs": str(epochs)}
    pairs.update({k: str(v) for k, v in over.items()})
    return apply_overrides(default_config("shd"), pairs)


def test_criterion_5_shd_desk_scale():
    if not have_shd():
        msg = ("criterion 5: SKIP - shd_train.h5/shd_test.h5 not found under "
               "$STSC_DATA_DIR, so the desk-scale run cannot execute here")
        print(msg)
        pytest.skip(msg)
    full = bool(os.environ.get(FULL_ENV))
    epochs = 200 if full else 50
    vanilla = train(_shd_cfg(epochs))
    gated = train(_shd_cfg(epochs, policy="P1"))
    margin = gated.best_acc - vanilla.best_acc
    if full:
        ok = vanilla.best_acc >= 0.70 and gated.best_acc >= 0.85 and margin >= 0.05
    else:
        ok = vanilla.best_acc >= 0.60 and margin >= 0.04
    _verdict(
        5,
        ok,
        f"{'full' if full else 'short'} mode {epochs} epochs: "
        f"vanilla {vanilla.best_acc:.4f}, gated {gated.best_acc:.4f}, "
        f"margin {margin:+.4f}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 6. ablation directions (needs the real corpus)
# ---------------------------------------------------------------------------


def test_criterion_6_ablation_directions():
    if not have_shd():
        msg = ("criterion 6: SKIP - shd_train.h5/shd_test.h5 not found under "
               "$STSC_DATA_DIR, so the ablation runs cannot execute here")
        print(msg)
        pytest.skip(msg)
    epochs = 50
    fli_only = train(_shd_cfg(epochs, policy="P1", enable_trf="false"))
    trf_only = train(_shd_cfg(epochs, policy="P1", enable_fli="false"))
    shallow = train(_shd_cfg(epochs, policy="P1"))
    deep = train(_shd_cfg(epochs, policy="P3"))
    snn = train(_shd_cfg(epochs, variant="SNN"))
    relu = train(_shd_cfg(epochs, variant="FCs-ReLU"))

    checks = {
        "fli_beats_trf": fli_only.best_acc > trf_only.best_acc,
        "shallow_beats_deep": shallow.best_acc > deep.best_acc,
        "gated_beats_snn": shallow.best_acc > snn.best_acc,
        "snn_beats_relu": snn.best_acc > relu.best_acc,
    }
    ok = all(checks.values())
    _verdict(6, ok, ", ".join(f"{k}={v}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------------------
# 7. event-camera conv pipeline end to end (needs the real corpus)
# ---------------------------------------------------------------------------


def test_criterion_7_nmnist_smoke():
    if not have_nmnist():
        msg = ("criterion 7: SKIP - train/<digit>/ and test/<digit>/ event "
               "trees not found under $STSC_DATA_DIR, so the conv-pipeline "
               "run cannot execute here")
        print(msg)
        pytest.skip(msg)
    cfg = apply_overrides(
        default_config("nmnist"),
        {"epochs": "20", "train_limit": "5000", "test_limit": "1000"},
    )
    result = train(cfg)
    ok = result.best_acc >= 0.90
    _verdict(7, ok, f"best test accuracy {result.best_acc:.4f} over 20 epochs")
    assert ok


# ---------------------------------------------------------------------------
# 8. bitwise-reproducible metric logs
# ---------------------------------------------------------------------------


def test_criterion_8_deterministic_metrics():
    cfg = apply_overrides(
        default_config("synth"),
        {
            "epochs": "3",
            "train_limit": "96",
            "test_limit": "48",
            "precision": "float64",
            "wall_clock": "false",
        },
    )
    a = metrics_to_csv(train(cfg).history)
    b = metrics_to_csv(train(cfg).history)
    ok = a == b
    _verdict(8, ok, f"two runs, {len(a.splitlines()) - 1} epochs logged, "
                    f"CSVs {'identical' if ok else 'differ'}")
    assert ok
