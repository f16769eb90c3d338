"""Finite-difference verification of every backward rule.

``grad_check`` compares tape gradients against central differences in
64-bit precision. The reported figure for each input is the largest
absolute gradient discrepancy scaled by the largest gradient magnitude of
that input (a scaled max-norm residual): true errors in a vector-Jacobian
product show up on the same scale as the gradients themselves, while
cancellation noise in near-zero entries does not trigger false alarms.

``run_suite`` covers each differentiable operation plus the composite
paths that matter end to end: the relaxed spiking recurrence, both gate
block variants, a gate-into-neuron chain, and the readout loss. Check
inputs are drawn from fixed seeds through dedicated streams, so the suite
is exactly reproducible. ``fault_inject=True`` biases one matrix-product
partial on purpose and must make the suite report failures; it exists to
prove the detector can fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import (
    Tape,
    Value,
    add,
    add_bias,
    add_scalar,
    matmul,
    mean_time,
    mul,
    mul_const,
    relu,
    scale,
    sigmoid,
    sub,
    sum_all,
)
from .errors import InvalidArgument, NumericError
from .network import VotingLayer
from .neuron import LIFConfig, lif_forward
from .ops import (
    BatchNorm,
    broadcast_spatial,
    conv2d,
    depthwise_tconv1d,
    depthwise_tconv3d,
    dropout,
    feature_matmul,
    pool2d,
    spatial_avg,
    tconv1d_mix,
)
from .synapse import FLIParams, STSCConfig, STSCParams, TRFParams, stsc_forward
from .training import voting_mse_loss

__all__ = ["grad_check", "CheckResult", "run_suite", "summarize", "CHECK_NAMES"]

_SUITE_SEED = 7021


def grad_check(f, inputs, eps: float = 1e-6) -> float:
    """Largest scaled gradient discrepancy of ``f`` over its inputs.

    ``f`` maps Values to a Value; non-scalar outputs are summed. Inputs
    must be float64 arrays. Raises NumericError when either side of the
    comparison is not finite.
    """
    arrays = [np.asarray(x) for x in inputs]
    for i, x in enumerate(arrays):
        if x.dtype != np.float64:
            raise InvalidArgument(f"grad_check: input {i} must be float64, got {x.dtype}")
    vals = [Value(x.copy(), requires_grad=True) for x in arrays]
    with Tape() as tape:
        out = f(*vals)
        if out.data.ndim != 0:
            out = sum_all(out)
    if not np.isfinite(out.data):
        raise NumericError("grad_check: forward value is not finite")
    tape.backward(out)

    def forward_sum(work) -> float:
        res = f(*[Value(a) for a in work])
        return float(res.data.sum())

    worst = 0.0
    work = [a.copy() for a in arrays]
    for i, base in enumerate(arrays):
        analytic = vals[i].grad
        numeric = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"]) if base.size else None
        if it is not None:
            for _ in it:
                mi = it.multi_index
                orig = work[i][mi]
                work[i][mi] = orig + eps
                fp = forward_sum(work)
                work[i][mi] = orig - eps
                fm = forward_sum(work)
                work[i][mi] = orig
                numeric[mi] = (fp - fm) / (2.0 * eps)
        if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
            raise NumericError(f"grad_check: non-finite gradient for input {i}")
        scale_i = max(float(np.abs(analytic).max(initial=0.0)),
                      float(np.abs(numeric).max(initial=0.0)), 1e-8)
        worst = max(worst, float(np.abs(analytic - numeric).max(initial=0.0)) / scale_i)
    return worst


# ---------------------------------------------------------------------------
# the check catalogue
# ---------------------------------------------------------------------------


def _chk_matmul(rng):
    a = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, (4, 2))
    return lambda x, y: matmul(x, y), [a, b]


def _chk_linear_bias(rng):
    x = rng.uniform(-1, 1, (3, 4))
    w = rng.uniform(-1, 1, (4, 3))
    b = rng.uniform(-1, 1, 3)
    return lambda xv, wv, bv: add_bias(matmul(xv, wv), bv), [x, w, b]


def _chk_elementwise(rng):
    a = rng.uniform(-1, 1, (3, 4))
    b = rng.uniform(-1, 1, (3, 4))
    c = rng.uniform(-1, 1, (3, 4))

    def f(av, bv):
        return mul_const(add_scalar(sub(add(scale(av, 1.5), bv), mul(av, bv)), 0.3), c)

    return f, [a, b]


def _chk_sigmoid(rng):
    x = rng.uniform(-3, 3, (3, 4))
    return lambda v: sigmoid(v), [x]


def _chk_relu(rng):
    # keep pre-activations away from the kink so FD never crosses it
    x = rng.uniform(-1, 1, (3, 4))
    x = x + np.where(x >= 0, 0.1, -0.1)
    return lambda v: relu(v), [x]


def _chk_mean_time(rng):
    x = rng.uniform(-1, 1, (5, 3, 2))
    return lambda v: mean_time(v), [x]


def _chk_tconv1d_sym(rng):
    x = rng.uniform(-1, 1, (6, 2, 4))
    w = rng.uniform(-0.8, 0.8, (3, 4))
    return lambda xv, wv: depthwise_tconv1d(xv, wv), [x, w]


def _chk_tconv1d_causal(rng):
    x = rng.uniform(-1, 1, (6, 2, 4))
    w = rng.uniform(-0.8, 0.8, (5, 4))
    return lambda xv, wv: depthwise_tconv1d(xv, wv, causal=True), [x, w]


def _chk_tconv3d(rng):
    x = rng.uniform(-1, 1, (5, 2, 3, 3))
    w = rng.uniform(-0.8, 0.8, (3, 2))
    return lambda xv, wv: depthwise_tconv3d(xv, wv), [x, w]


def _chk_tconv_mix(rng):
    x = rng.uniform(-1, 1, (6, 4))
    w = rng.uniform(-0.8, 0.8, (3, 4, 2))
    return lambda xv, wv: tconv1d_mix(xv, wv), [x, w]


def _chk_tconv_mix_causal(rng):
    x = rng.uniform(-1, 1, (6, 4))
    w = rng.uniform(-0.8, 0.8, (3, 4, 2))
    return lambda xv, wv: tconv1d_mix(xv, wv, causal=True), [x, w]


def _chk_feature_matmul(rng):
    x = rng.uniform(-1, 1, (4, 2, 3))
    w = rng.uniform(-1, 1, (3, 5))
    return lambda xv, wv: feature_matmul(xv, wv), [x, w]


def _chk_conv2d(rng):
    x = rng.uniform(-1, 1, (2, 2, 5, 5))
    w = rng.uniform(-0.6, 0.6, (3, 2, 3, 3))
    b = rng.uniform(-0.5, 0.5, 3)
    return lambda xv, wv, bv: conv2d(xv, wv, bv), [x, w, b]


def _chk_conv2d_stride2(rng):
    x = rng.uniform(-1, 1, (2, 2, 5, 5))
    w = rng.uniform(-0.6, 0.6, (2, 2, 3, 3))
    return lambda xv, wv: conv2d(xv, wv, stride=2, padding=1), [x, w]


def _chk_pool_avg(rng):
    x = rng.uniform(-1, 1, (2, 2, 4, 4))
    return lambda v: pool2d(v, "avg"), [x]


def _chk_pool_avg_odd(rng):
    x = rng.uniform(-1, 1, (2, 1, 5, 5))
    return lambda v: pool2d(v, "avg"), [x]


def _chk_pool_max(rng):
    # distinct values with gaps far beyond eps so the argmax never moves
    n = 2 * 2 * 4 * 4
    x = rng.permutation(np.linspace(-1.0, 1.0, n)).reshape(2, 2, 4, 4)
    return lambda v: pool2d(v, "max"), [x]


def _chk_spatial_avg(rng):
    x = rng.uniform(-1, 1, (3, 2, 2, 3, 3))
    return lambda v: spatial_avg(v), [x]


def _chk_broadcast_spatial(rng):
    d = rng.uniform(-1, 1, (3, 2, 4))
    c = rng.uniform(-1, 1, (3, 2, 4, 2, 2))
    return lambda v: mul_const(broadcast_spatial(v, (2, 2)), c), [d]


def _chk_dropout(rng):
    x = rng.uniform(-1, 1, (4, 6))
    mask_seed = int(rng.integers(2**31))

    def f(v):
        return dropout(v, 0.4, np.random.default_rng(mask_seed), train=True)

    return f, [x]


def _chk_batchnorm_train(rng):
    # an unweighted output sum has an identically zero x-gradient (the sum
    # of normalized values is constant), so weight the output elementwise
    bn = BatchNorm(3, dtype=np.float64, name="chk")
    x = rng.uniform(-1, 1, (6, 3))
    g = rng.uniform(0.5, 1.5, 3)
    b = rng.uniform(-0.5, 0.5, 3)
    c = rng.uniform(-1, 1, (6, 3))

    def f(xv, gv, bv):
        bn.gamma = gv
        bn.beta = bv
        return mul_const(bn(xv, train=True), c)

    return f, [x, g, b]


_LIF_RELAXED = LIFConfig(tau=2.0, v_th=0.3, surrogate_alpha=2.0, relaxed_mode=True)


def _chk_lif_relaxed(rng):
    x = rng.uniform(-0.5, 1.0, (6, 8))
    return lambda v: lif_forward(v, _LIF_RELAXED), [x]


def _chk_lif_relaxed_leaky(rng):
    cfg = LIFConfig(tau=10.0, v_th=0.3, surrogate_alpha=2.0, relaxed_mode=True)
    x = rng.uniform(-0.5, 1.0, (6, 8))
    return lambda v: lif_forward(v, cfg), [x]


def _stsc_inputs(rng, n: int, k_f: int, k_g: int, m: int, lead: tuple):
    x = rng.uniform(-1, 1, lead + (n,))
    wf = rng.uniform(-0.8, 0.8, (k_f, n))
    wg1 = rng.uniform(-0.8, 0.8, (k_g, n, m))
    wg2 = rng.uniform(-0.8, 0.8, (m, n))
    return x, wf, wg1, wg2


def _params_of(wf, wg1, wg2) -> STSCParams:
    return STSCParams(trf=TRFParams(W_F=wf), fli=FLIParams(W_G1=wg1, W_G2=wg2))


def _chk_stsc_dense(rng):
    cfg = STSCConfig(k_f=5, k_g=3, r=2, variant="dense-1D")
    x, wf, wg1, wg2 = _stsc_inputs(rng, 4, 5, 3, 2, (6, 2))

    def f(xv, a, b, c):
        return stsc_forward(xv, cfg, _params_of(a, b, c))

    return f, [x, wf, wg1, wg2]


def _chk_stsc_conv(rng):
    cfg = STSCConfig(k_f=3, k_g=3, r=2, variant="conv-3D")
    x = rng.uniform(-1, 1, (5, 1, 2, 3, 3))
    wf = rng.uniform(-0.8, 0.8, (3, 2))
    wg1 = rng.uniform(-0.8, 0.8, (3, 2, 1))
    wg2 = rng.uniform(-0.8, 0.8, (1, 2))

    def f(xv, a, b, c):
        return stsc_forward(xv, cfg, _params_of(a, b, c))

    return f, [x, wf, wg1, wg2]


def _chk_stsc_lif_chain(rng):
    cfg = STSCConfig(k_f=5, k_g=3, r=2, variant="dense-1D")
    x, wf, wg1, wg2 = _stsc_inputs(rng, 4, 5, 3, 2, (6, 1))

    def f(xv, a, b, c):
        return lif_forward(stsc_forward(xv, cfg, _params_of(a, b, c)), _LIF_RELAXED)

    return f, [x, wf, wg1, wg2]


def _chk_voting_loss(rng):
    voting = VotingLayer(10, 5, dtype=np.float64)
    labels = rng.integers(0, 5, 3)
    o = rng.uniform(-1, 1, (4, 3, 10))

    def f(ov):
        return voting_mse_loss(ov, labels, voting)[0]

    return f, [o]


_CHECKS = (
    ("matmul", _chk_matmul),
    ("linear_bias", _chk_linear_bias),
    ("elementwise", _chk_elementwise),
    ("sigmoid", _chk_sigmoid),
    ("relu", _chk_relu),
    ("mean_time", _chk_mean_time),
    ("tconv1d_sym", _chk_tconv1d_sym),
    ("tconv1d_causal", _chk_tconv1d_causal),
    ("tconv3d", _chk_tconv3d),
    ("tconv_mix", _chk_tconv_mix),
    ("tconv_mix_causal", _chk_tconv_mix_causal),
    ("feature_matmul", _chk_feature_matmul),
    ("conv2d", _chk_conv2d),
    ("conv2d_stride2", _chk_conv2d_stride2),
    ("pool_avg", _chk_pool_avg),
    ("pool_avg_odd", _chk_pool_avg_odd),
    ("pool_max", _chk_pool_max),
    ("spatial_avg", _chk_spatial_avg),
    ("broadcast_spatial", _chk_broadcast_spatial),
    ("dropout", _chk_dropout),
    ("batchnorm_train", _chk_batchnorm_train),
    ("lif_relaxed", _chk_lif_relaxed),
    ("lif_relaxed_leaky", _chk_lif_relaxed_leaky),
    ("stsc_dense_1d", _chk_stsc_dense),
    ("stsc_conv_3d", _chk_stsc_conv),
    ("stsc_lif_chain", _chk_stsc_lif_chain),
    ("voting_loss", _chk_voting_loss),
)

CHECK_NAMES = tuple(name for name, _ in _CHECKS)


@dataclass(frozen=True)
class CheckResult:
    name: str
    seed: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def run_suite(seeds: int = 20, tol: float = 1e-5, fault_inject: bool = False,
              names: tuple[str, ...] | None = None, log=None) -> list[CheckResult]:
    """Every check across ``seeds`` independent input draws.

    ``names`` restricts the catalogue; ``fault_inject`` perturbs the
    matrix-product backward while the suite runs and narrows the run to
    checks that exercise it.
    """
    if seeds < 1:
        raise InvalidArgument(f"run_suite: seeds must be >= 1, got {seeds}")
    emit = log or (lambda s: None)
    selected = names
    if fault_inject and selected is None:
        selected = ("matmul", "linear_bias")
    checks = [
        (ci, name, builder)
        for ci, (name, builder) in enumerate(_CHECKS)
        if selected is None or name in selected
    ]
    if not checks:
        raise InvalidArgument(f"run_suite: no checks match {names!r}")

    results: list[CheckResult] = []
    original = autodiff._matmul_vjp
    if fault_inject:
        def biased(g, a_data, b_data):
            da, db = original(g, a_data, b_data)
            return da + 0.1, db

        autodiff._matmul_vjp = biased
    try:
        for ci, name, builder in checks:
            worst = 0.0
            for seed in range(seeds):
                rng = np.random.default_rng([_SUITE_SEED, ci, seed])
                f, inputs = builder(rng)
                err = grad_check(f, [np.asarray(x, dtype=np.float64) for x in inputs])
                results.append(CheckResult(name=name, seed=seed, max_rel_err=err, tol=tol))
                worst = max(worst, err)
            emit(f"{name}: max_rel_err={worst:.3e} over {seeds} seeds")
    finally:
        if fault_inject:
            autodiff._matmul_vjp = original
    return results


def summarize(results: list[CheckResult]) -> str:
    """One line per check name: worst error across seeds and a verdict."""
    worst: dict[str, float] = {}
    tol = results[0].tol if results else 0.0
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_err)
    lines = []
    for name, err in worst.items():
        verdict = "ok" if err < tol else "FAIL"
        lines.append(f"{name:<20} {err:.3e}  {verdict}")
    n_fail = sum(1 for r in results if not r.passed)
    lines.append(f"checks: {len(results)}, failures: {n_fail}, tolerance: {tol:g}")
    return "\n".join(lines)
