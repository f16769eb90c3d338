"""Structured differentiable operations built on the autodiff tape.

Temporal convolutions take the time axis first and the channel axis last
(1-D) or third-from-last (3-D); any axes in between are treated as batch.
Kernel storage index j in 0..K-1 maps to temporal offset t_f = j-(K-1)/2,
so the first stored tap weights the future frame. All temporal convs are
shape-preserving: zero padding (K-1)/2 on both ends, or K-1 on the left
only when ``causal=True``.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Value, _record, matmul, reshape
from .errors import InvalidArgument

__all__ = [
    "depthwise_tconv1d",
    "depthwise_tconv3d",
    "tconv1d_mix",
    "feature_matmul",
    "conv2d",
    "pool2d",
    "spatial_avg",
    "broadcast_spatial",
    "dropout",
    "BatchNorm",
]


def _pad_time(a: np.ndarray, left: int, right: int) -> np.ndarray:
    width = [(left, right)] + [(0, 0)] * (a.ndim - 1)
    return np.pad(a, width)


def _temporal_pads(k: int, causal: bool, op: str) -> tuple[int, int]:
    if k % 2 == 0:
        raise InvalidArgument(f"{op}: kernel size must be odd, got {k}")
    if causal:
        return k - 1, 0
    return (k - 1) // 2, (k - 1) // 2


def depthwise_tconv1d(x: Value, w: Value, causal: bool = False) -> Value:
    """Per-channel temporal convolution: out(t,n) = sum_tf W[tf,n] x(t-tf,n).

    x: [T, ..., N]; w: [K, N]; output shape = input shape.
    """
    if w.data.ndim != 2:
        raise InvalidArgument(f"depthwise_tconv1d: kernel must be [K, N], got {w.data.shape}")
    k, n = w.data.shape
    if x.data.ndim < 2 or x.data.shape[-1] != n:
        raise InvalidArgument(
            f"depthwise_tconv1d: input {x.data.shape} does not end in {n} channels"
        )
    pl, pr = _temporal_pads(k, causal, "depthwise_tconv1d")
    t = x.data.shape[0]
    xd, wd = x.data, w.data
    xp = _pad_time(xd, pl, pr)
    out = np.zeros_like(xd)
    for j in range(k):
        out += wd[j] * xp[k - 1 - j : k - 1 - j + t]

    def vjp(g):
        gp = _pad_time(g, pr, pl)
        dx = np.zeros_like(xd)
        dw = np.empty_like(wd)
        axes = tuple(range(xd.ndim - 1))
        for j in range(k):
            dx += wd[j] * gp[j : j + t]
            dw[j] = (g * xp[k - 1 - j : k - 1 - j + t]).sum(axis=axes)
        return dx, dw

    return _record(Value(out), (x, w), vjp)


def depthwise_tconv3d(x: Value, w: Value, causal: bool = False) -> Value:
    """Temporal convolution per channel, kernel shared over all spatial
    positions of that channel.

    x: [T, ..., C, H, W]; w: [K, C]; output shape = input shape.
    """
    if w.data.ndim != 2:
        raise InvalidArgument(f"depthwise_tconv3d: kernel must be [K, C], got {w.data.shape}")
    k, c = w.data.shape
    if x.data.ndim < 4 or x.data.shape[-3] != c:
        raise InvalidArgument(
            f"depthwise_tconv3d: input {x.data.shape} does not carry {c} channels at axis -3"
        )
    pl, pr = _temporal_pads(k, causal, "depthwise_tconv3d")
    t = x.data.shape[0]
    xd, wd = x.data, w.data
    xp = _pad_time(xd, pl, pr)
    out = np.zeros_like(xd)
    for j in range(k):
        out += wd[j].reshape(-1, 1, 1) * xp[k - 1 - j : k - 1 - j + t]

    # sum over every axis except the channel axis
    ch_axis = xd.ndim - 3
    red = tuple(range(ch_axis)) + (xd.ndim - 2, xd.ndim - 1)

    def vjp(g):
        gp = _pad_time(g, pr, pl)
        dx = np.zeros_like(xd)
        dw = np.empty_like(wd)
        for j in range(k):
            dx += wd[j].reshape(-1, 1, 1) * gp[j : j + t]
            dw[j] = (g * xp[k - 1 - j : k - 1 - j + t]).sum(axis=red)
        return dx, dw

    return _record(Value(out), (x, w), vjp)


def tconv1d_mix(x: Value, w: Value, causal: bool = False) -> Value:
    """Temporal convolution that also mixes channels N -> M:
    out(t,m) = sum_tg sum_n W[tg,n,m] x(t-tg,n).

    x: [T, ..., N]; w: [K, N, M]; out: [T, ..., M].
    """
    if w.data.ndim != 3:
        raise InvalidArgument(f"tconv1d_mix: kernel must be [K, N, M], got {w.data.shape}")
    k, n, m = w.data.shape
    if x.data.ndim < 2 or x.data.shape[-1] != n:
        raise InvalidArgument(
            f"tconv1d_mix: input {x.data.shape} does not end in {n} channels"
        )
    pl, pr = _temporal_pads(k, causal, "tconv1d_mix")
    t = x.data.shape[0]
    xd, wd = x.data, w.data
    xp = _pad_time(xd, pl, pr)
    out = np.zeros(xd.shape[:-1] + (m,), dtype=xd.dtype)
    for j in range(k):
        out += xp[k - 1 - j : k - 1 - j + t] @ wd[j]

    def vjp(g):
        gp = _pad_time(g, pr, pl)
        dx = np.zeros_like(xd)
        dw = np.empty_like(wd)
        gm = g.reshape(-1, m)
        for j in range(k):
            dx += gp[j : j + t] @ wd[j].T
            dw[j] = xp[k - 1 - j : k - 1 - j + t].reshape(-1, n).T @ gm
        return dx, dw

    return _record(Value(out), (x, w), vjp)


def feature_matmul(x: Value, w: Value) -> Value:
    """Matrix product along the last axis: [..., M] x [M, N] -> [..., N]."""
    lead = x.data.shape[:-1]
    flat = reshape(x, (-1, x.data.shape[-1]))
    return reshape(matmul(flat, w), lead + (w.data.shape[-1],))


def conv2d(
    x: Value,
    w: Value,
    b: Value | None = None,
    stride: int = 1,
    padding: int = 1,
) -> Value:
    """2-D cross-correlation. x: [B, C_in, H, W]; w: [C_out, C_in, kh, kw]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise InvalidArgument(
            f"conv2d: expected 4-D input and kernel, got {x.data.shape} and {w.data.shape}"
        )
    bsz, cin, h, wid = x.data.shape
    cout, cin2, kh, kw = w.data.shape
    if cin != cin2:
        raise InvalidArgument(f"conv2d: input has {cin} channels, kernel expects {cin2}")
    if b is not None and b.data.shape != (cout,):
        raise InvalidArgument(f"conv2d: bias shape {b.data.shape} != ({cout},)")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wid + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise InvalidArgument(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wid}")
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    acc = np.zeros((bsz, ho, wo, cout), dtype=xd.dtype)
    for di in range(kh):
        for dj in range(kw):
            xs = xp[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            acc += np.tensordot(xs, wd[:, :, di, dj], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    if b is not None:
        out += b.data.reshape(1, -1, 1, 1)

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        dxp = np.zeros_like(xp)
        dw = np.empty_like(wd)
        for di in range(kh):
            for dj in range(kw):
                xs = xp[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
                dw[:, :, di, dj] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
                ds = np.tensordot(gt, wd[:, :, di, dj], axes=([3], [0]))
                dxp[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += (
                    ds.transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, padding : padding + h, padding : padding + wid] if padding else dxp
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(Value(out), inputs, vjp)


def pool2d(x: Value, kind: str, k: int = 2, stride: int = 2) -> Value:
    """Non-overlapping 2-D pooling over [B, C, H, W]; odd trailing rows and
    columns are dropped (floor division of the spatial dims)."""
    if kind not in ("max", "avg"):
        raise InvalidArgument(f"pool2d: unknown kind {kind!r}")
    if k != stride:
        raise InvalidArgument("pool2d: only non-overlapping pooling (k == stride) supported")
    if x.data.ndim != 4:
        raise InvalidArgument(f"pool2d: expected [B, C, H, W], got {x.data.shape}")
    bsz, c, h, wid = x.data.shape
    if h < k or wid < k:
        raise InvalidArgument(f"pool2d: window {k} exceeds spatial dims {h}x{wid}")
    ho, wo = h // k, wid // k
    xd = x.data
    xc = xd[:, :, : k * ho, : k * wo]
    xr = xc.reshape(bsz, c, ho, k, wo, k)

    if kind == "avg":
        out = xr.mean(axis=(3, 5))

        def vjp(g):
            dxc = np.broadcast_to(
                (g / (k * k))[:, :, :, None, :, None], (bsz, c, ho, k, wo, k)
            )
            dx = np.zeros_like(xd)
            dx[:, :, : k * ho, : k * wo] = dxc.reshape(bsz, c, k * ho, k * wo)
            return (dx,)

    else:
        xm = np.ascontiguousarray(xr.transpose(0, 1, 2, 4, 3, 5)).reshape(bsz, c, ho, wo, k * k)
        idx = xm.argmax(axis=-1)
        out = np.take_along_axis(xm, idx[..., None], axis=-1)[..., 0]

        def vjp(g):
            z = np.zeros((bsz, c, ho, wo, k * k), dtype=g.dtype)
            np.put_along_axis(z, idx[..., None], g[..., None], axis=-1)
            dxc = z.reshape(bsz, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
            dx = np.zeros_like(xd)
            dx[:, :, : k * ho, : k * wo] = dxc.reshape(bsz, c, k * ho, k * wo)
            return (dx,)

    return _record(Value(out), (x,), vjp)


def spatial_avg(x: Value) -> Value:
    """Mean over the two trailing spatial axes: [T, ..., C, H, W] -> [T, ..., C]."""
    if x.data.ndim < 3:
        raise InvalidArgument(f"spatial_avg: expected spatial trailing axes, got {x.data.shape}")
    h, w = x.data.shape[-2:]
    out = x.data.mean(axis=(-2, -1))
    shape = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g[..., None, None] / (h * w), shape).copy(),)

    return _record(Value(out), (x,), vjp)


def broadcast_spatial(d: Value, hw: tuple[int, int]) -> Value:
    """Replicate per-channel values over a spatial grid: [T, ..., C] -> [T, ..., C, H, W]."""
    h, w = hw
    if h < 1 or w < 1:
        raise InvalidArgument(f"broadcast_spatial: bad spatial shape {hw}")
    out = np.broadcast_to(d.data[..., None, None], d.data.shape + (h, w)).copy()
    return _record(Value(out), (d,), lambda g: (g.sum(axis=(-2, -1)),))


def dropout(x: Value, p: float, rng: np.random.Generator, train: bool) -> Value:
    """Inverted dropout; identity when evaluating or p == 0. The mask is
    sampled independently for every element (every timestep included)."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgument(f"dropout: probability {p} outside [0, 1)")
    if not train or p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    mask = keep / np.asarray(1.0 - p, dtype=x.data.dtype)
    out = Value(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


class BatchNorm:
    """Per-channel normalization with learned scale/shift and running
    statistics for evaluation. Statistics pool over every axis except the
    channel axis (axis 1), so folded time counts toward the batch."""

    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5,
                 momentum: float = 0.1, name: str = "bn"):
        if channels < 1:
            raise InvalidArgument(f"batchnorm: channels must be >= 1, got {channels}")
        self.gamma = Parameter(np.ones(channels, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Value, train: bool) -> Value:
        if x.data.ndim < 2 or x.data.shape[1] != self.gamma.data.shape[0]:
            raise InvalidArgument(
                f"batchnorm: input {x.data.shape} does not carry "
                f"{self.gamma.data.shape[0]} channels at axis 1"
            )
        axes = (0,) + tuple(range(2, x.data.ndim))
        n = x.data.size // x.data.shape[1]
        shape = (1, -1) + (1,) * (x.data.ndim - 2)
        xd = x.data
        gamma, beta = self.gamma, self.beta

        if train:
            if n < 2:
                raise InvalidArgument("batchnorm: need at least 2 samples per channel")
            mean = xd.mean(axis=axes)
            var = xd.var(axis=axes)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (xd - mean.reshape(shape)) * inv.reshape(shape)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(xd.dtype)
            self.running_var = (
                (1 - m) * self.running_var + m * var * (n / (n - 1))
            ).astype(xd.dtype)
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (xd - self.running_mean.reshape(shape)) * inv.reshape(shape)

        out = Value(gamma.data.reshape(shape) * xhat + beta.data.reshape(shape))

        def vjp(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            gscaled = g * gamma.data.reshape(shape)
            if train:
                dx = (
                    gscaled
                    - gscaled.mean(axis=axes, keepdims=True)
                    - xhat * (gscaled * xhat).mean(axis=axes, keepdims=True)
                ) * inv.reshape(shape)
            else:
                dx = gscaled * inv.reshape(shape)
            return dx, dgamma, dbeta

        return _record(out, (x, gamma, beta), vjp)

    def state(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_state(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.running_mean = np.asarray(mean, dtype=self.running_mean.dtype)
        self.running_var = np.asarray(var, dtype=self.running_var.dtype)
