"""Run configuration: per-dataset defaults, key=value files, overrides.

Every tunable of a training run lives in one flat TrainConfig; a config
file (or repeated --override flags) sets fields by name with KEY=VALUE
lines, and the effective configuration can be printed back out in the
same format so any run is reproducible from its log.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .errors import InvalidArgument, IOFailure, SpecError

__all__ = [
    "TrainConfig",
    "SPECS",
    "INPUT_SHAPES",
    "DATASETS",
    "default_config",
    "parse_config_file",
    "parse_override",
    "apply_overrides",
    "format_effective",
    "DATA_DIR_ENV",
]

DATA_DIR_ENV = "STSC_DATA_DIR"

SPECS = {
    "shd": "Input-128FC-128FC-100FC-Voting-20",
    "nmnist": "Input-128C3-AP2-128C3-AP2-0.5DP-2048FC-0.5DP-100FC-Voting-10",
    "dvs128": (
        "Input-128C3-MP2-128C3-MP2-128C3-MP2-128C3-MP2-128C3-MP2-"
        "0.5DP-512FC-0.5DP-110FC-Voting-11"
    ),
    "cifar10dvs": (
        "Input-64C3-128C3-AP2-256C3-256C3-AP2-512C3-512C3-AP2-"
        "512C3-512C3-AP2-100FC-Voting-10"
    ),
    "synth": "Input-64FC-64FC-32FC-Voting-4",
}

INPUT_SHAPES = {
    "shd": (700,),
    "nmnist": (2, 34, 34),
    "dvs128": (2, 128, 128),
    "cifar10dvs": (2, 128, 128),
    "synth": (32,),
}

DATASETS = tuple(SPECS)

# (epochs, batch_size, learning_rate, T, tau, v_th, K_F, K_G, r)
_TABLE = {
    "shd": (200, 256, 1e-4, 15, 10.0, 0.3, 5, 3, 1),
    "nmnist": (300, 16, 1e-3, 10, 2.0, 1.0, 3, 3, 1),
    "dvs128": (1000, 16, 1e-3, 20, 2.0, 1.0, 3, 5, 2),
    "cifar10dvs": (1000, 16, 1e-3, 10, 2.0, 1.0, 3, 3, 2),
    "synth": (10, 32, 1e-2, 8, 2.0, 0.3, 3, 3, 1),
}


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "shd"
    spec: str = SPECS["shd"]
    policy: str = "none"
    variant: str = ""  # ablation variant; empty keeps the spec's default neurons
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-4
    T: int = 15
    tau: float = 10.0
    v_th: float = 0.3
    K_F: int = 5
    K_G: int = 3
    r: int = 1
    seed: int = 0
    precision: str = "float32"
    use_bias: bool = True
    enable_trf: bool = True
    enable_fli: bool = True
    surrogate_alpha: float = 2.0
    fire_at_threshold: bool = True
    detach_reset: bool = False
    causal_padding: bool = False
    fixed_duration_us: int = 0  # 0 = per-sample duration
    train_limit: int = 0  # 0 = whole split
    test_limit: int = 0
    wall_clock: bool = True  # False writes 0.0 seconds for bitwise-comparable logs
    data_dir: str = ""

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise SpecError(f"unknown dataset {self.dataset!r}; know {DATASETS}")
        if self.precision not in ("float32", "float64"):
            raise InvalidArgument(f"precision must be float32 or float64, got {self.precision!r}")
        for name in ("epochs", "batch_size", "T", "K_F", "K_G", "r"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise InvalidArgument(f"learning_rate must be > 0, got {self.learning_rate}")

    def resolved_data_dir(self) -> str:
        return self.data_dir or os.environ.get(DATA_DIR_ENV, "")


def default_config(dataset: str) -> TrainConfig:
    """Published hyper-parameter column for the dataset, seed 0."""
    if dataset not in _TABLE:
        raise SpecError(f"unknown dataset {dataset!r}; know {DATASETS}")
    epochs, batch, lr, t, tau, v_th, k_f, k_g, r = _TABLE[dataset]
    return TrainConfig(
        dataset=dataset,
        spec=SPECS[dataset],
        epochs=epochs,
        batch_size=batch,
        learning_rate=lr,
        T=t,
        tau=tau,
        v_th=v_th,
        K_F=k_f,
        K_G=k_g,
        r=r,
    )


_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


def _coerce(name: str, raw: str):
    if name not in _FIELDS:
        raise SpecError(f"unknown config field {name!r}")
    kind = _FIELDS[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise SpecError(f"config field {name}: {e}") from e


def parse_override(pair: str) -> tuple[str, str]:
    if "=" not in pair:
        raise SpecError(f"override must be KEY=VALUE, got {pair!r}")
    key, _, value = pair.partition("=")
    key = key.strip()
    if not key:
        raise SpecError(f"override must be KEY=VALUE, got {pair!r}")
    return key, value


def parse_config_file(path: str) -> dict[str, str]:
    """Read KEY=VALUE lines; blank lines and #-comments are skipped."""
    if not os.path.isfile(path):
        raise IOFailure(f"config file not found: {path}")
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise SpecError(f"{path}:{lineno}: expected KEY=VALUE, got {stripped!r}")
            key, value = parse_override(stripped)
            pairs[key] = value
    return pairs


def apply_overrides(cfg: TrainConfig, pairs: dict[str, str]) -> TrainConfig:
    """Typed field replacement; unknown keys or unparsable values are
    configuration errors. Changing `dataset` re-bases every field the
    override set does not mention onto that dataset's defaults."""
    if "dataset" in pairs and pairs["dataset"] != cfg.dataset:
        base = default_config(_coerce("dataset", pairs["dataset"]))
        rest = {k: v for k, v in pairs.items() if k != "dataset"}
        return apply_overrides(base, rest)
    updates = {name: _coerce(name, raw) for name, raw in pairs.items()}
    return dataclasses.replace(cfg, **updates)


def format_effective(cfg: TrainConfig) -> str:
    lines = ["# effective-config"]
    for f in dataclasses.fields(TrainConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines)
