"""Training and evaluation: group-average MSE loss, Adam with bias
correction, the backpropagation-through-time loop, and ablation sweeps.

The loss consumes the network's raw time-resolved output O of shape
[T, B, L_out]: scores are the time average of O pushed through the
constant voting matrix, the objective is the mean over the batch of the
squared distance to the one-hot target, and the prediction is the argmax
score (ties resolve to the lowest class index).

Determinism: with a fixed seed, single process, and 64-bit precision, two
runs produce identical metric histories. Wall time is the one quantity
no seed controls, so `wall_clock=false` zeroes the seconds column when
logs must be comparable byte for byte.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Parameter, Tape, Value, matmul, mean_time, mul, scale, sub_const, sum_all
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .datasets import DatasetBundle, load_dataset
from .errors import InvalidArgument, NumericError, SpecError
from .network import (
    POLICIES,
    Network,
    VotingLayer,
    ablation_variant,
    parse_spec,
)
from .neuron import LIFConfig
from .synapse import STSCConfig

__all__ = [
    "OptimState",
    "Metrics",
    "TrainResult",
    "voting_mse_loss",
    "predict",
    "adam_step",
    "evaluate",
    "train",
    "ablate",
    "metrics_to_csv",
    "CSV_HEADER",
    "build_network",
]

CSV_HEADER = "epoch,train_loss,train_acc,test_acc,seconds"


# ---------------------------------------------------------------------------
# loss and prediction
# ---------------------------------------------------------------------------


def voting_mse_loss(o: Value, labels, voting: VotingLayer) -> tuple[Value, np.ndarray]:
    """Mean over the batch of sum_i (onehot_i - score_i)^2.

    Returns the scalar loss node and the detached [B, classes] scores.
    """
    if o.data.ndim != 3:
        raise InvalidArgument(f"voting_mse_loss: expected [T, B, L], got {o.data.shape}")
    t, b, l = o.data.shape
    if l != voting.l_out:
        raise InvalidArgument(f"voting_mse_loss: {l} outputs, voting expects {voting.l_out}")
    y = np.asarray(labels)
    if y.shape != (b,):
        raise InvalidArgument(f"voting_mse_loss: {b} samples but {y.shape} labels")
    if y.size and (y.min() < 0 or y.max() >= voting.classes):
        raise InvalidArgument(
            f"voting_mse_loss: label outside [0, {voting.classes})"
        )
    dtype = o.data.dtype
    o_mean = mean_time(o)  # [B, L]
    scores = matmul(o_mean, Value(np.ascontiguousarray(voting.matrix.T, dtype=dtype)))
    onehot = np.zeros((b, voting.classes), dtype=dtype)
    onehot[np.arange(b), y] = 1
    diff = sub_const(scores, onehot)
    loss = scale(sum_all(mul(diff, diff)), 1.0 / b)
    return loss, scores.data.copy()


def predict(scores: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties break toward the lowest index."""
    return scores.argmax(axis=-1)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Parameter]) -> "OptimState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Parameter],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update from the accumulated .grad fields."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class Metrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    seconds: float
    seed: int


def metrics_to_csv(history: list[Metrics]) -> str:
    rows = [CSV_HEADER]
    for m in history:
        rows.append(
            f"{m.epoch},{float(m.train_loss)!r},{float(m.train_acc)!r},"
            f"{float(m.test_acc)!r},{m.seconds:.3f}"
        )
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# building and running
# ---------------------------------------------------------------------------


def build_network(cfg: TrainConfig, input_shape: tuple[int, ...]) -> Network:
    stsc = STSCConfig(
        k_f=cfg.K_F,
        k_g=cfg.K_G,
        r=cfg.r,
        enable_trf=cfg.enable_trf,
        enable_fli=cfg.enable_fli,
        causal=cfg.causal_padding,
    )
    spec = parse_spec(cfg.spec, policy=cfg.policy, stsc=stsc, input_shape=input_shape)
    if cfg.variant:
        spec = ablation_variant(spec, cfg.variant)
    lif = LIFConfig(
        tau=cfg.tau,
        v_th=cfg.v_th,
        surrogate_alpha=cfg.surrogate_alpha,
        fire_at_threshold=cfg.fire_at_threshold,
        detach_reset=cfg.detach_reset,
    )
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    return Network(
        spec,
        input_shape,
        lif=lif,
        dtype=dtype,
        use_bias=cfg.use_bias,
        seed=cfg.seed,
    )


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = order if order is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def _time_major(frames: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(frames, 0, 1), dtype=dtype)


def evaluate(net: Network, frames: np.ndarray, labels: np.ndarray,
             batch_size: int) -> float:
    """Accuracy over a [S, T, ...] frame tensor in eval mode."""
    correct = 0
    for idx in _batches(len(labels), batch_size):
        xb = _time_major(frames[idx], net.dtype)
        o = net.forward(xb, train=False)
        scores = net.voting.scores(o.data.mean(axis=0))
        correct += int((predict(scores) == labels[idx]).sum())
    return correct / max(len(labels), 1)


@dataclass
class TrainResult:
    history: list[Metrics]
    net: Network
    best_acc: float
    best_epoch: int
    final_acc: float


def train(cfg: TrainConfig, out_dir: str | None = None,
          data: DatasetBundle | None = None, log=None) -> TrainResult:
    """Seeded mini-batch training with per-epoch evaluation.

    Keeps the best-test-accuracy checkpoint plus the final one, and
    rewrites metrics.csv every epoch when ``out_dir`` is given. ``data``
    lets sweeps share one loaded dataset.
    """
    emit = log or (lambda s: None)
    bundle = data if data is not None else load_dataset(cfg)
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    net = build_network(cfg, bundle.input_shape)
    if bundle.classes > net.classes:
        raise InvalidArgument(
            f"dataset has {bundle.classes} classes, network outputs {net.classes}"
        )
    params = net.parameters()
    state = OptimState.for_params(params)
    shuffle_rng = np.random.default_rng([cfg.seed, 17])
    n_train = len(bundle.train)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    history: list[Metrics] = []
    best_acc, best_epoch = -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        tic = time.perf_counter()
        order = shuffle_rng.permutation(n_train)
        loss_sum = 0.0
        correct = 0
        for idx in _batches(n_train, cfg.batch_size, order):
            xb = _time_major(bundle.train.frames[idx], dtype)
            yb = bundle.train.labels[idx]
            with Tape() as tape:
                o = net.forward(xb, train=True)
                loss, scores = voting_mse_loss(o, yb, net.voting)
            net.zero_grad()
            tape.backward(loss)
            adam_step(params, state, cfg.learning_rate)
            loss_sum += float(loss.data) * len(idx)
            correct += int((predict(scores) == yb).sum())
        test_acc = evaluate(net, bundle.test.frames, bundle.test.labels, cfg.batch_size)
        seconds = time.perf_counter() - tic if cfg.wall_clock else 0.0
        row = Metrics(
            epoch=epoch,
            train_loss=loss_sum / max(n_train, 1),
            train_acc=correct / max(n_train, 1),
            test_acc=test_acc,
            seconds=seconds,
            seed=cfg.seed,
        )
        history.append(row)
        emit(
            f"epoch {epoch}/{cfg.epochs}: loss={row.train_loss:.5f} "
            f"train={row.train_acc:.4f} test={row.test_acc:.4f}"
        )
        improved = test_acc > best_acc
        if improved:
            best_acc, best_epoch = test_acc, epoch
        if out_dir:
            with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as f:
                f.write(metrics_to_csv(history))
            if improved:
                save_checkpoint(os.path.join(out_dir, "best.ckpt"), net.state_dict())
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "final.ckpt"), net.state_dict())
    final_acc = history[-1].test_acc if history else 0.0
    return TrainResult(
        history=history,
        net=net,
        best_acc=best_acc,
        best_epoch=best_epoch,
        final_acc=final_acc,
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("FCs-Non", "FCs-ReLU", "SNN")
KERNEL_SWEEP = (1, 3, 5, 7)

ABLATE_CSV_HEADER = "policy,K_F,K_G,variant,final_acc,best_acc"


def _grid(cfg: TrainConfig, grid: str) -> list[TrainConfig]:
    if grid == "policies":
        return [replace(cfg, policy=p) for p in POLICIES]
    if grid == "kernels":
        runs = [replace(cfg, K_F=k) for k in KERNEL_SWEEP]
        runs += [replace(cfg, K_G=k) for k in KERNEL_SWEEP]
        return runs
    if grid == "variants":
        stsc_policy = cfg.policy if cfg.policy != "none" else "P1"
        runs = []
        for variant in ABLATION_VARIANTS:
            runs.append(replace(cfg, variant=variant, policy="none"))
            runs.append(replace(cfg, variant=variant, policy=stsc_policy))
        return runs
    raise SpecError(f"unknown ablation grid {grid!r}; know policies, kernels, variants")


def ablate(cfg: TrainConfig, grid: str, out_dir: str | None = None,
           log=None) -> list[dict]:
    """One training run per grid point over a shared dataset; returns (and
    optionally writes) a results table."""
    emit = log or (lambda s: None)
    bundle = load_dataset(cfg)
    rows: list[dict] = []
    for run_cfg in _grid(cfg, grid):
        tag = (
            f"policy={run_cfg.policy} K_F={run_cfg.K_F} K_G={run_cfg.K_G} "
            f"variant={run_cfg.variant or 'default'}"
        )
        emit(f"[{grid}] {tag}")
        result = train(run_cfg, data=bundle)
        rows.append(
            {
                "policy": run_cfg.policy,
                "K_F": run_cfg.K_F,
                "K_G": run_cfg.K_G,
                "variant": run_cfg.variant or "default",
                "final_acc": result.final_acc,
                "best_acc": result.best_acc,
            }
        )
        emit(f"[{grid}] {tag} -> final={result.final_acc:.4f} best={result.best_acc:.4f}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"ablate_{grid}.csv")
        with open(path, "w", encoding="utf-8") as f:
            f.write(ABLATE_CSV_HEADER + "\n")
            for r in rows:
                f.write(
                    f"{r['policy']},{r['K_F']},{r['K_G']},{r['variant']},"
                    f"{float(r['final_acc'])!r},{float(r['best_acc'])!r}\n"
                )
    return rows
