"""Spatio-temporal synaptic connection blocks.

A block runs two parallel paths on the same input and multiplies the
results elementwise:

* TRF, the filtering path — a per-channel depthwise temporal convolution
  whose kernel plays the role of a learned synaptic impulse response.
* FLI, the gating path — a temporal convolution that mixes N channels down
  to M = ceil(N/r), a ReLU, and a linear map back to N under a sigmoid,
  yielding attenuation factors strictly inside (0, 1).

The dense-1D variant gates [T, ..., N] feature activations directly; the
conv-3D variant squeezes [T, ..., C, H, W] to per-channel signals by
spatial averaging, applies the 1-D machinery, and broadcasts the gate back
over the spatial grid. Disabled paths contribute identity factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Value, mul, relu, sigmoid
from .errors import InvalidArgument
from .ops import (
    broadcast_spatial,
    depthwise_tconv1d,
    depthwise_tconv3d,
    feature_matmul,
    spatial_avg,
    tconv1d_mix,
)

__all__ = [
    "TRFParams",
    "FLIParams",
    "STSCConfig",
    "STSCParams",
    "make_trf_params",
    "make_fli_params",
    "make_stsc_params",
    "trf_forward",
    "fli_forward",
    "stsc_forward",
    "stsc_param_count",
    "reduced_width",
]

VARIANTS = ("dense-1D", "conv-3D")


def reduced_width(n: int, r: int) -> int:
    """Gate bottleneck width M = ceil(N / r), never below 1."""
    if n < 1 or r < 1:
        raise InvalidArgument(f"reduction: need N >= 1 and r >= 1, got N={n}, r={r}")
    return -(-n // r)


@dataclass(frozen=True)
class STSCConfig:
    k_f: int = 5
    k_g: int = 3
    r: int = 1
    variant: str = "dense-1D"
    enable_trf: bool = True
    enable_fli: bool = True
    causal: bool = False

    def __post_init__(self):
        if self.k_f % 2 == 0 or self.k_f < 1:
            raise InvalidArgument(f"stsc: K_F must be odd and >= 1, got {self.k_f}")
        if self.k_g % 2 == 0 or self.k_g < 1:
            raise InvalidArgument(f"stsc: K_G must be odd and >= 1, got {self.k_g}")
        if self.r < 1:
            raise InvalidArgument(f"stsc: reduction ratio must be >= 1, got {self.r}")
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"stsc: variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.enable_trf or self.enable_fli):
            raise InvalidArgument("stsc: at least one of TRF/FLI must be enabled")


@dataclass
class TRFParams:
    """W_F[K_F, channels], one temporal kernel per channel."""

    W_F: Parameter

    def __post_init__(self):
        if self.W_F.data.ndim != 2 or self.W_F.data.shape[0] % 2 == 0:
            raise InvalidArgument(
                f"trf: W_F must be [odd K_F, channels], got {self.W_F.data.shape}"
            )


@dataclass
class FLIParams:
    """W_G1[K_G, N, M] mixes channels down; W_G2[M, N] maps gates back up."""

    W_G1: Parameter
    W_G2: Parameter

    def __post_init__(self):
        if self.W_G1.data.ndim != 3 or self.W_G1.data.shape[0] % 2 == 0:
            raise InvalidArgument(
                f"fli: W_G1 must be [odd K_G, N, M], got {self.W_G1.data.shape}"
            )
        k, n, m = self.W_G1.data.shape
        if m < 1:
            raise InvalidArgument("fli: bottleneck width M must be >= 1")
        if self.W_G2.data.shape != (m, n):
            raise InvalidArgument(
                f"fli: W_G2 must be [{m}, {n}] to match W_G1 {self.W_G1.data.shape}, "
                f"got {self.W_G2.data.shape}"
            )


@dataclass
class STSCParams:
    trf: TRFParams | None
    fli: FLIParams | None


def make_trf_params(channels: int, k_f: int, dtype=np.float32,
                    rng: np.random.Generator | None = None,
                    name: str = "trf") -> TRFParams:
    """Delta kernel plus small uniform noise: the block starts as a near
    no-op so a gated network begins close to its ungated baseline."""
    w = np.zeros((k_f, channels), dtype=dtype)
    w[(k_f - 1) // 2] = 1.0
    if rng is not None:
        w += rng.uniform(-0.01, 0.01, size=w.shape).astype(dtype)
    return TRFParams(W_F=Parameter(w, name=f"{name}.W_F"))


def make_fli_params(channels: int, k_g: int, r: int, dtype=np.float32,
                    rng: np.random.Generator | None = None,
                    name: str = "fli") -> FLIParams:
    m = reduced_width(channels, r)
    b1 = 1.0 / np.sqrt(k_g * channels)
    b2 = 1.0 / np.sqrt(m)
    if rng is None:
        w1 = np.zeros((k_g, channels, m), dtype=dtype)
        w2 = np.zeros((m, channels), dtype=dtype)
    else:
        w1 = rng.uniform(-b1, b1, size=(k_g, channels, m)).astype(dtype)
        w2 = rng.uniform(-b2, b2, size=(m, channels)).astype(dtype)
    return FLIParams(
        W_G1=Parameter(w1, name=f"{name}.W_G1"),
        W_G2=Parameter(w2, name=f"{name}.W_G2"),
    )


def make_stsc_params(channels: int, cfg: STSCConfig, dtype=np.float32,
                     rng: np.random.Generator | None = None,
                     name: str = "stsc") -> STSCParams:
    trf = (
        make_trf_params(channels, cfg.k_f, dtype, rng, name=f"{name}.trf")
        if cfg.enable_trf
        else None
    )
    fli = (
        make_fli_params(channels, cfg.k_g, cfg.r, dtype, rng, name=f"{name}.fli")
        if cfg.enable_fli
        else None
    )
    return STSCParams(trf=trf, fli=fli)


def stsc_param_count(channels: int, cfg: STSCConfig) -> int:
    count = 0
    if cfg.enable_trf:
        count += cfg.k_f * channels
    if cfg.enable_fli:
        m = reduced_width(channels, cfg.r)
        count += cfg.k_g * channels * m + m * channels
    return count


def _check_rank(x: Value, variant: str, op: str) -> None:
    if variant == "dense-1D" and x.data.ndim < 2:
        raise InvalidArgument(f"{op}: dense-1D needs [T, ..., N], got {x.data.shape}")
    if variant == "conv-3D" and x.data.ndim < 4:
        raise InvalidArgument(f"{op}: conv-3D needs [T, ..., C, H, W], got {x.data.shape}")


def trf_forward(x: Value, p: TRFParams, variant: str = "dense-1D",
                causal: bool = False) -> Value:
    """Filtering path: depthwise temporal convolution, shape preserved."""
    _check_rank(x, variant, "trf_forward")
    if variant == "conv-3D":
        return depthwise_tconv3d(x, p.W_F, causal=causal)
    return depthwise_tconv1d(x, p.W_F, causal=causal)


def _fli_gate_1d(x: Value, p: FLIParams, causal: bool) -> Value:
    s = tconv1d_mix(x, p.W_G1, causal=causal)
    return sigmoid(feature_matmul(relu(s), p.W_G2))


def fli_forward(x: Value, p: FLIParams, variant: str = "dense-1D",
                causal: bool = False) -> Value:
    """Gating path: per-element factors in (0, 1), shape preserved.
    In the conv-3D variant the gate is computed on spatially averaged
    channel signals and is therefore constant over (h, w)."""
    _check_rank(x, variant, "fli_forward")
    if variant == "conv-3D":
        squeezed = spatial_avg(x)
        gate = _fli_gate_1d(squeezed, p, causal)
        return broadcast_spatial(gate, x.data.shape[-2:])
    return _fli_gate_1d(x, p, causal)


def stsc_forward(x: Value, cfg: STSCConfig, params: STSCParams) -> Value:
    """Y = TRF(X) * FLI(X), both paths reading the same input. A disabled
    path becomes the identity factor: Y = X * D without TRF, Y = C without
    FLI."""
    filtered = (
        trf_forward(x, params.trf, cfg.variant, cfg.causal) if cfg.enable_trf else x
    )
    if not cfg.enable_fli:
        return filtered
    gate = fli_forward(x, params.fli, cfg.variant, cfg.causal)
    return mul(filtered, gate)
