"""Iterative leaky integrate-and-fire dynamics with a surrogate-gradient
backward pass through the full time recurrence.

Forward, for t = 1..T over an input current I of shape [T, ...]:

    V(t) = (1 - 1/tau) * V(t-1) * (1 - S(t-1)) + I(t)
    S(t) = step(V(t) - V_th)            spiking mode, step(0) = 1
    S(t) = sigma_alpha(V(t) - V_th)     relaxed mode (smooth everywhere)

with V(0) = 0 and S(0) = 0. The backward recurrence is shared by both
modes and substitutes the ATan pseudo-derivative for the step; in relaxed
mode it is the exact gradient, which is what makes finite-difference
checking of the recurrence possible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Value, _record
from .errors import InvalidArgument, StateError

__all__ = [
    "LIFConfig",
    "LIFState",
    "LIFCell",
    "lif_forward",
    "atan_surrogate",
    "atan_surrogate_grad",
]


def atan_surrogate(x: np.ndarray, alpha: float) -> np.ndarray:
    """sigma_alpha(x) = 1/2 + arctan(pi * alpha * x / 2) / pi."""
    return 0.5 + np.arctan(np.pi * alpha * x / 2.0) / np.pi


def atan_surrogate_grad(x: np.ndarray, alpha: float) -> np.ndarray:
    """d sigma_alpha / dx = (alpha/2) / (1 + (pi * alpha * x / 2)^2)."""
    return (alpha / 2.0) / (1.0 + np.square(np.pi * alpha * x / 2.0))


@dataclass(frozen=True)
class LIFConfig:
    """Neuron constants. tau >= 1 keeps the decay factor 1 - 1/tau in [0, 1)."""

    tau: float = 2.0
    v_th: float = 1.0
    surrogate_alpha: float = 2.0
    relaxed_mode: bool = False
    fire_at_threshold: bool = True
    detach_reset: bool = False

    def __post_init__(self):
        if self.tau < 1.0:
            raise InvalidArgument(f"lif: tau must be >= 1, got {self.tau}")
        if self.v_th <= 0.0:
            raise InvalidArgument(f"lif: v_th must be > 0, got {self.v_th}")
        if self.surrogate_alpha <= 0.0:
            raise InvalidArgument(f"lif: surrogate_alpha must be > 0, got {self.surrogate_alpha}")

    @property
    def decay(self) -> float:
        return 1.0 - 1.0 / self.tau


@dataclass
class LIFState:
    """Membrane potential and previous spikes after the last forward step."""

    V: np.ndarray
    S_prev: np.ndarray


class LIFCell:
    """Runs the recurrence over a [T, ...] current tensor and replays it in
    reverse. ``backward`` needs the histories saved by ``forward``."""

    def __init__(self, cfg: LIFConfig):
        self.cfg = cfg
        self._v_hist: np.ndarray | None = None
        self._s_hist: np.ndarray | None = None

    def forward(self, current: np.ndarray) -> np.ndarray:
        if current.ndim < 1 or current.shape[0] < 1:
            raise InvalidArgument(f"lif: need a leading time axis, got shape {current.shape}")
        cfg = self.cfg
        lam = np.asarray(cfg.decay, dtype=current.dtype)
        t_steps = current.shape[0]
        v_hist = np.empty_like(current)
        s_hist = np.empty_like(current)
        v = np.zeros(current.shape[1:], dtype=current.dtype)
        s = np.zeros(current.shape[1:], dtype=current.dtype)
        for t in range(t_steps):
            v = lam * v * (1.0 - s) + current[t]
            x = v - cfg.v_th
            if cfg.relaxed_mode:
                s = atan_surrogate(x, cfg.surrogate_alpha)
            else:
                s = ((x >= 0) if cfg.fire_at_threshold else (x > 0)).astype(current.dtype)
            v_hist[t] = v
            s_hist[t] = s
        self._v_hist = v_hist
        self._s_hist = s_hist
        return s_hist.copy()

    def backward(self, grad_s: np.ndarray) -> np.ndarray:
        if self._v_hist is None:
            raise StateError("lif: backward called before forward")
        cfg = self.cfg
        v_hist, s_hist = self._v_hist, self._s_hist
        if grad_s.shape != v_hist.shape:
            raise InvalidArgument(
                f"lif: grad shape {grad_s.shape} != forward shape {v_hist.shape}"
            )
        lam = np.asarray(cfg.decay, dtype=v_hist.dtype)
        grad_i = np.empty_like(grad_s)
        v_bar = np.zeros(v_hist.shape[1:], dtype=v_hist.dtype)
        for t in range(v_hist.shape[0] - 1, -1, -1):
            s_bar = grad_s[t]
            if not cfg.detach_reset:
                s_bar = s_bar - v_bar * (lam * v_hist[t])
            sg = atan_surrogate_grad(v_hist[t] - cfg.v_th, cfg.surrogate_alpha)
            v_bar = s_bar * sg + v_bar * lam * (1.0 - s_hist[t])
            grad_i[t] = v_bar
        return grad_i

    @property
    def state(self) -> LIFState:
        if self._v_hist is None:
            raise StateError("lif: no forward pass recorded")
        return LIFState(V=self._v_hist[-1].copy(), S_prev=self._s_hist[-1].copy())


def lif_forward(x: Value, cfg: LIFConfig) -> Value:
    """Tape primitive wrapping one LIF layer over [T, ...] input current."""
    cell = LIFCell(cfg)
    out = Value(cell.forward(x.data))
    return _record(out, (x,), lambda g: (cell.backward(g),))
