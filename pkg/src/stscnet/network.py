"""Architecture strings, gate placement policies, and the forward pipeline.

A network is described by a dash-separated token string such as
``Input-128FC-128FC-100FC-Voting-20`` or
``Input-128C3-AP2-128C3-AP2-0.5DP-2048FC-0.5DP-100FC-Voting-10``:

* ``<n>FC``   fully connected layer with n outputs
* ``<x>C<y>`` 2-D convolution with x output channels and kernel y
              (stride 1, padding y//2, followed by batch normalization)
* ``MP2`` / ``AP2``  non-overlapping 2x2 max / average pooling
* ``<p>DP``   dropout with probability p (training only)
* ``Voting-<c>``  terminal group-average readout over c classes

A spiking neuron follows every FC and conv layer unless an ablation
variant replaces it. Synaptic connection blocks are inserted before
selected layers by a policy string: ``P1`` gates the first eligible layer,
``P13`` the first and third, ``all`` every one, ``none`` nothing. Eligible
layers are the convolutions when any exist, otherwise the FC layers; the
block's 1-D/3-D variant follows the rank of the activations at its site.

Activations flow as [T, batch, ...] with the time axis outermost; layer
parameters are shared across all timesteps. The forward pass returns the
pre-voting output O of shape [T, batch, L_out]; the voting matrix itself
is consumed by the loss and the prediction rule.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Parameter, Value, add_bias, matmul, relu, reshape
from .errors import CorruptInput, InvalidArgument, SpecError
from .neuron import LIFConfig, lif_forward
from .ops import BatchNorm, conv2d, dropout, pool2d
from .synapse import (
    STSCConfig,
    STSCParams,
    make_stsc_params,
    stsc_forward,
    stsc_param_count,
)

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "VotingLayer",
    "Network",
    "parse_spec",
    "resolve_policy",
    "ablation_variant",
    "POLICIES",
]

POLICIES = ("P1", "P2", "P3", "P12", "P13", "P23", "P123")

NEURON_MODES = ("lif", "relu", "none")

_FC_RE = re.compile(r"^(\d+)FC$")
_CONV_RE = re.compile(r"^(\d+)C(\d+)$")
_DP_RE = re.compile(r"^(\d*\.?\d+)DP$")
_POOL_TOKENS = {"MP2": "max", "AP2": "avg"}
_POLICY_RE = re.compile(r"^P([1-9]+)$")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # fc | conv | pool | dropout
    width: int = 0
    channels: int = 0
    kernel: int = 0
    pool: str = ""
    p: float = 0.0

    def token(self) -> str:
        if self.kind == "fc":
            return f"{self.width}FC"
        if self.kind == "conv":
            return f"{self.channels}C{self.kernel}"
        if self.kind == "pool":
            return "MP2" if self.pool == "max" else "AP2"
        return f"{self.p}DP"


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    classes: int
    policy: str
    stsc_sites: tuple[int, ...]  # indices into layers
    neuron_modes: tuple[str, ...]  # one per fc/conv layer, in order
    stsc: STSCConfig = field(default_factory=STSCConfig)

    @property
    def neuron_layers(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if l.kind in ("fc", "conv"))

    @property
    def has_conv(self) -> bool:
        return any(l.kind == "conv" for l in self.layers)


def _eligible_sites(layers: tuple[LayerSpec, ...]) -> list[int]:
    convs = [i for i, l in enumerate(layers) if l.kind == "conv"]
    if convs:
        return convs
    return [i for i, l in enumerate(layers) if l.kind == "fc"]


def resolve_policy(policy: str, layers: tuple[LayerSpec, ...]) -> tuple[int, ...]:
    """Map a policy name to the layer indices that receive a gate block."""
    name = (policy or "none").strip()
    if name == "none":
        return ()
    eligible = _eligible_sites(layers)
    if not eligible:
        raise SpecError(f"policy {name!r}: structure has no gateable layers")
    if name == "all":
        return tuple(eligible)
    m = _POLICY_RE.match(name)
    if not m:
        raise SpecError(f"unknown policy {name!r}")
    digits = [int(ch) for ch in m.group(1)]
    if len(set(digits)) != len(digits):
        raise SpecError(f"policy {name!r} repeats a position")
    if max(digits) > len(eligible):
        raise SpecError(
            f"policy {name!r} addresses position {max(digits)}, "
            f"but only {len(eligible)} layers are gateable"
        )
    return tuple(eligible[d - 1] for d in sorted(digits))


def parse_spec(
    s: str,
    policy: str = "none",
    stsc: STSCConfig | None = None,
    input_shape: tuple[int, ...] | None = None,
) -> NetworkSpec:
    """Parse an architecture string into an ordered layer list.

    The readout width must be divisible by the class count; that check runs
    here when the width is determined by the string itself (a terminal FC)
    and at build time otherwise (``input_shape`` makes it checkable early).
    """
    tokens = s.split("-")
    if not tokens or tokens[0] != "Input":
        raise SpecError(f"spec must start with 'Input': {s!r}")
    if len(tokens) < 3 or tokens[-2] != "Voting":
        raise SpecError(f"spec must end with 'Voting-<classes>': {s!r}")
    if "Voting" in tokens[:-2]:
        raise SpecError(f"spec has more than one Voting token: {s!r}")
    try:
        classes = int(tokens[-1])
    except ValueError:
        raise SpecError(f"class count {tokens[-1]!r} is not an integer") from None
    if classes < 1:
        raise SpecError(f"class count must be >= 1, got {classes}")

    layers: list[LayerSpec] = []
    for tok in tokens[1:-2]:
        if m := _FC_RE.match(tok):
            width = int(m.group(1))
            if width < 1:
                raise SpecError(f"FC width must be >= 1: {tok!r}")
            layers.append(LayerSpec(kind="fc", width=width))
        elif m := _CONV_RE.match(tok):
            channels, kernel = int(m.group(1)), int(m.group(2))
            if channels < 1 or kernel < 1:
                raise SpecError(f"bad conv token {tok!r}")
            layers.append(LayerSpec(kind="conv", channels=channels, kernel=kernel))
        elif tok in _POOL_TOKENS:
            layers.append(LayerSpec(kind="pool", pool=_POOL_TOKENS[tok]))
        elif m := _DP_RE.match(tok):
            p = float(m.group(1))
            if not 0.0 <= p < 1.0:
                raise SpecError(f"dropout probability {p} outside [0, 1)")
            layers.append(LayerSpec(kind="dropout", p=p))
        else:
            raise SpecError(f"unknown token {tok!r} in spec {s!r}")

    readout = None
    for layer in reversed(layers):
        if layer.kind == "fc":
            readout = layer.width
            break
        if layer.kind in ("conv", "pool"):
            break
    if readout is None and not layers and input_shape is not None and len(input_shape) == 1:
        readout = input_shape[0]
    if readout is not None and readout % classes:
        raise SpecError(f"readout width {readout} not divisible by {classes} classes")

    layer_tuple = tuple(layers)
    sites = resolve_policy(policy, layer_tuple)
    n_neuron = sum(1 for l in layers if l.kind in ("fc", "conv"))
    return NetworkSpec(
        layers=layer_tuple,
        classes=classes,
        policy=(policy or "none").strip(),
        stsc_sites=sites,
        neuron_modes=("lif",) * n_neuron,
        stsc=stsc if stsc is not None else STSCConfig(),
    )


def ablation_variant(spec: NetworkSpec, kind: str) -> NetworkSpec:
    """Swap the per-layer neuron modes of an FC-only structure.

    FCs-Non: no neurons anywhere. FCs-ReLU: ReLU after every FC except the
    last. SNN: a spiking neuron after every FC.
    """
    if spec.has_conv:
        raise SpecError("ablation variants are defined for FC-only structures")
    key = kind.replace("(", "-").replace(")", "").strip().lower()
    n = len(spec.neuron_modes)
    if key == "fcs-non":
        modes = ("none",) * n
    elif key == "fcs-relu":
        modes = ("relu",) * (n - 1) + ("none",) if n else ()
    elif key == "snn":
        modes = ("lif",) * n
    else:
        raise SpecError(f"unknown ablation variant {kind!r}")
    return replace(spec, neuron_modes=modes)


class VotingLayer:
    """Constant group-average readout: class i's score is the mean of its
    contiguous block of L_out/classes output units. Rows sum to 1."""

    def __init__(self, l_out: int, classes: int, dtype=np.float64):
        if classes < 1 or l_out < 1 or l_out % classes:
            raise SpecError(f"voting: {l_out} outputs not divisible by {classes} classes")
        group = l_out // classes
        m = np.zeros((classes, l_out), dtype=dtype)
        for i in range(classes):
            m[i, i * group : (i + 1) * group] = 1.0 / group
        self.matrix = m
        self.classes = classes
        self.l_out = l_out
        self.group = group

    def scores(self, o_mean: np.ndarray) -> np.ndarray:
        """[B, L_out] time-averaged outputs -> [B, classes] scores."""
        return o_mean @ self.matrix.T.astype(o_mean.dtype)


# ---------------------------------------------------------------------------
# forward stages
# ---------------------------------------------------------------------------


class _Flatten:
    def __call__(self, x: Value, train: bool) -> Value:
        t, b = x.data.shape[:2]
        return reshape(x, (t, b, -1))


class _Linear:
    def __init__(self, w: Parameter, b: Parameter | None):
        self.w, self.b = w, b

    def __call__(self, x: Value, train: bool) -> Value:
        t, b = x.data.shape[:2]
        flat = reshape(x, (t * b, x.data.shape[-1]))
        out = matmul(flat, self.w)
        if self.b is not None:
            out = add_bias(out, self.b)
        return reshape(out, (t, b, self.w.data.shape[1]))


class _Conv:
    def __init__(self, w: Parameter, b: Parameter | None, padding: int):
        self.w, self.b, self.padding = w, b, padding

    def __call__(self, x: Value, train: bool) -> Value:
        t, b = x.data.shape[:2]
        flat = reshape(x, (t * b,) + x.data.shape[2:])
        out = conv2d(flat, self.w, self.b, stride=1, padding=self.padding)
        return reshape(out, (t, b) + out.data.shape[1:])


class _BNStage:
    def __init__(self, bn: BatchNorm):
        self.bn = bn

    def __call__(self, x: Value, train: bool) -> Value:
        t, b = x.data.shape[:2]
        flat = reshape(x, (t * b,) + x.data.shape[2:])
        out = self.bn(flat, train)
        return reshape(out, (t, b) + out.data.shape[1:])


class _Pool:
    def __init__(self, kind: str):
        self.kind = kind

    def __call__(self, x: Value, train: bool) -> Value:
        t, b = x.data.shape[:2]
        flat = reshape(x, (t * b,) + x.data.shape[2:])
        out = pool2d(flat, self.kind)
        return reshape(out, (t, b) + out.data.shape[1:])


class _Dropout:
    def __init__(self, p: float, rng: np.random.Generator):
        self.p, self.rng = p, rng

    def __call__(self, x: Value, train: bool) -> Value:
        return dropout(x, self.p, self.rng, train)


class _Neuron:
    def __init__(self, mode: str, cfg: LIFConfig):
        self.mode, self.cfg = mode, cfg

    def __call__(self, x: Value, train: bool) -> Value:
        if self.mode == "lif":
            return lif_forward(x, self.cfg)
        if self.mode == "relu":
            return relu(x)
        return x


class _STSC:
    def __init__(self, cfg: STSCConfig, params: STSCParams):
        self.cfg, self.params = cfg, params

    def __call__(self, x: Value, train: bool) -> Value:
        return stsc_forward(x, self.cfg, self.params)


class Network:
    """Assembled forward pipeline with a named parameter registry.

    Parameters are created once and shared across timesteps. Names follow
    the layer structure: fc.<i>.W, conv.<i>.W, bn.<i>.gamma,
    stsc.<k>.trf.W_F, stsc.<k>.fli.W_G1, ... with 1-based ordinals.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        input_shape: tuple[int, ...],
        *,
        lif: LIFConfig | None = None,
        dtype=np.float32,
        use_bias: bool = True,
        seed: int = 0,
    ):
        if len(input_shape) not in (1, 3):
            raise InvalidArgument(f"input shape must be (N,) or (C, H, W), got {input_shape}")
        self.spec = spec
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.use_bias = use_bias
        self.lif = lif if lif is not None else LIFConfig()
        root = np.random.default_rng(seed)
        init_rng, self._dropout_rng = root.spawn(2)

        self._params: dict[str, Parameter] = {}
        self._bns: list[tuple[str, BatchNorm]] = []
        self.stages: list = []
        self.stsc_placements: list[tuple[int, str, int]] = []  # (ordinal, variant, channels)

        cur = self.input_shape
        fc_i = conv_i = 0
        neuron_i = 0
        ordinal = 0
        site_set = set(spec.stsc_sites)
        eligible = set(_eligible_sites(spec.layers))

        for li, layer in enumerate(spec.layers):
            if layer.kind == "fc":
                if len(cur) > 1:
                    self.stages.append(_Flatten())
                    cur = (int(np.prod(cur)),)
                if li in eligible:
                    ordinal += 1
                    if li in site_set:
                        self._add_stsc(ordinal, "dense-1D", cur[0], init_rng)
                fc_i += 1
                fan_in = cur[0]
                bound = 1.0 / np.sqrt(fan_in)
                w = Parameter(
                    init_rng.uniform(-bound, bound, (fan_in, layer.width)).astype(self.dtype),
                    name=f"fc.{fc_i}.W",
                )
                b = None
                if use_bias:
                    b = Parameter(
                        init_rng.uniform(-bound, bound, layer.width).astype(self.dtype),
                        name=f"fc.{fc_i}.b",
                    )
                self._register(w, b)
                self.stages.append(_Linear(w, b))
                cur = (layer.width,)
                self.stages.append(_Neuron(spec.neuron_modes[neuron_i], self.lif))
                neuron_i += 1
            elif layer.kind == "conv":
                if len(cur) != 3:
                    raise InvalidArgument(
                        f"conv layer {layer.token()} needs (C, H, W) input, has {cur}"
                    )
                if li in eligible:
                    ordinal += 1
                    if li in site_set:
                        self._add_stsc(ordinal, "conv-3D", cur[0], init_rng)
                conv_i += 1
                k = layer.kernel
                fan_in = cur[0] * k * k
                bound = 1.0 / np.sqrt(fan_in)
                w = Parameter(
                    init_rng.uniform(
                        -bound, bound, (layer.channels, cur[0], k, k)
                    ).astype(self.dtype),
                    name=f"conv.{conv_i}.W",
                )
                b = None
                if use_bias:
                    b = Parameter(
                        init_rng.uniform(-bound, bound, layer.channels).astype(self.dtype),
                        name=f"conv.{conv_i}.b",
                    )
                self._register(w, b)
                self.stages.append(_Conv(w, b, padding=k // 2))
                bn = BatchNorm(layer.channels, dtype=self.dtype, name=f"bn.{conv_i}")
                self._register(bn.gamma, bn.beta)
                self._bns.append((f"bn.{conv_i}", bn))
                self.stages.append(_BNStage(bn))
                cur = (layer.channels, cur[1], cur[2])
                self.stages.append(_Neuron(spec.neuron_modes[neuron_i], self.lif))
                neuron_i += 1
            elif layer.kind == "pool":
                if len(cur) != 3:
                    raise InvalidArgument(f"pool layer needs (C, H, W) input, has {cur}")
                if cur[1] < 2 or cur[2] < 2:
                    raise InvalidArgument(f"cannot pool spatial dims {cur[1]}x{cur[2]}")
                self.stages.append(_Pool(layer.pool))
                cur = (cur[0], cur[1] // 2, cur[2] // 2)
            elif layer.kind == "dropout":
                self.stages.append(_Dropout(layer.p, self._dropout_rng))
            else:  # pragma: no cover - parse_spec emits only the kinds above
                raise SpecError(f"unknown layer kind {layer.kind!r}")

        if len(cur) > 1:
            self.stages.append(_Flatten())
            cur = (int(np.prod(cur)),)
        self.l_out = cur[0]
        self.classes = spec.classes
        self.voting = VotingLayer(self.l_out, self.classes, dtype=self.dtype)

    def _add_stsc(self, ordinal: int, variant: str, channels: int,
                  rng: np.random.Generator) -> None:
        cfg = replace(self.spec.stsc, variant=variant)
        params = make_stsc_params(channels, cfg, self.dtype, rng, name=f"stsc.{ordinal}")
        if params.trf is not None:
            self._register(params.trf.W_F)
        if params.fli is not None:
            self._register(params.fli.W_G1, params.fli.W_G2)
        self.stages.append(_STSC(cfg, params))
        self.stsc_placements.append((ordinal, variant, channels))

    def _register(self, *params: Parameter | None) -> None:
        for p in params:
            if p is None:
                continue
            if p.name in self._params:
                raise SpecError(f"duplicate parameter name {p.name!r}")
            self._params[p.name] = p

    # -- execution ----------------------------------------------------------

    def forward(self, x, train: bool = False) -> Value:
        v = x if isinstance(x, Value) else Value(np.asarray(x, dtype=self.dtype))
        want = 2 + len(self.input_shape)
        if v.data.ndim != want or tuple(v.data.shape[2:]) != self.input_shape:
            raise InvalidArgument(
                f"forward: expected [T, B, {', '.join(map(str, self.input_shape))}], "
                f"got {v.data.shape}"
            )
        for stage in self.stages:
            v = stage(v, train)
        return v

    # -- parameter access ----------------------------------------------------

    def parameters(self) -> dict[str, Parameter]:
        return dict(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def param_count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self._params.items()}
        for name, bn in self._bns:
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise CorruptInput(
                f"checkpoint mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise CorruptInput(
                    f"checkpoint {name}: shape {arr.shape} != {p.data.shape}"
                )
            p.data = arr.copy()
        for name, bn in self._bns:
            bn.load_state(arrays[f"{name}.running_mean"], arrays[f"{name}.running_var"])

    # -- reporting -----------------------------------------------------------

    def describe(self) -> str:
        lines = [f"input: {self.input_shape}"]
        shown_sites = {o: (v, c) for o, v, c in self.stsc_placements}
        ordinal = 0
        fc_i = conv_i = 0
        neuron_i = 0
        eligible = set(_eligible_sites(self.spec.layers))
        for li, layer in enumerate(self.spec.layers):
            if layer.kind in ("fc", "conv"):
                if li in eligible:
                    ordinal += 1
                    if ordinal in shown_sites:
                        variant, ch = shown_sites[ordinal]
                        cfg = self.spec.stsc
                        lines.append(
                            f"  stsc.{ordinal}: {variant} on {ch} channels "
                            f"(K_F={cfg.k_f}, K_G={cfg.k_g}, r={cfg.r}, "
                            f"params={stsc_param_count(ch, cfg)})"
                        )
                mode = self.spec.neuron_modes[neuron_i]
                neuron_i += 1
                if layer.kind == "fc":
                    fc_i += 1
                    w = self._params[f"fc.{fc_i}.W"]
                    lines.append(
                        f"  fc.{fc_i}: {w.data.shape[0]} -> {w.data.shape[1]}"
                        f"{' + bias' if self.use_bias else ''}, neuron={mode}"
                    )
                else:
                    conv_i += 1
                    w = self._params[f"conv.{conv_i}.W"]
                    lines.append(
                        f"  conv.{conv_i}: {w.data.shape[1]} -> {w.data.shape[0]} "
                        f"k={layer.kernel}{' + bias' if self.use_bias else ''} + bn, "
                        f"neuron={mode}"
                    )
            elif layer.kind == "pool":
                lines.append(f"  pool: {layer.pool} 2x2")
            else:
                lines.append(f"  dropout: p={layer.p}")
        lines.append(
            f"voting: {self.l_out} -> {self.classes} (groups of {self.voting.group})"
        )
        lines.append(f"parameters: {self.param_count()}")
        return "\n".join(lines)
