"""Dataset access for training: raw-to-frame conversion, on-disk caches,
balanced subsets, and a synthetic event corpus for fast end-to-end runs.

The synthetic corpus assigns each class a band of input units and a half
of the sample duration; signal events cluster there while a smaller
uniform noise floor covers everything. It is learnable by a small network
within a few epochs and is generated deterministically from a fixed seed,
independent of the training seed, so runs with different seeds still see
identical data.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import DATA_DIR_ENV, INPUT_SHAPES, TrainConfig
from .errors import CorruptInput, InvalidArgument, IOFailure
from .events import (
    FRAME_MAGIC,
    FRAME_VERSION,
    EventStream,
    aggregate_frames,
    load_nmnist,
    load_shd,
    read_frames,
    write_frames,
    write_frames_stream,
)

__all__ = [
    "SplitData",
    "DatasetBundle",
    "synth_streams",
    "balanced_subset",
    "with_duration",
    "load_dataset",
    "prepare_cache",
    "cache_basename",
]

SYNTH_SEED = 1234
SYNTH_TRAIN = 640
SYNTH_TEST = 160
SYNTH_UNITS = 32
SYNTH_CLASSES = 4
SYNTH_DURATION_US = 100_000


@dataclass
class SplitData:
    frames: np.ndarray  # [S, T, ...] float32 counts
    labels: np.ndarray  # [S] int64

    def __len__(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class DatasetBundle:
    train: SplitData
    test: SplitData
    input_shape: tuple[int, ...]
    classes: int


def synth_streams(split: str, samples: int = 0, seed: int = SYNTH_SEED) -> list[EventStream]:
    """Deterministic synthetic 1-D event streams over 32 units, 4 classes."""
    if split == "train":
        count, salt = samples or SYNTH_TRAIN, 1
    elif split == "test":
        count, salt = samples or SYNTH_TEST, 2
    else:
        raise InvalidArgument(f"synth_streams: split must be train or test, got {split!r}")
    rng = np.random.default_rng([seed, salt])
    band = SYNTH_UNITS // SYNTH_CLASSES
    half = SYNTH_DURATION_US // 2
    streams = []
    for i in range(count):
        label = i % SYNTH_CLASSES
        n_sig, n_noise = 60, 20
        units = np.concatenate(
            [
                rng.integers(label * band, (label + 1) * band, n_sig),
                rng.integers(0, SYNTH_UNITS, n_noise),
            ]
        )
        t0 = (label % 2) * half
        times = np.concatenate(
            [
                rng.integers(t0, t0 + half, n_sig),
                rng.integers(0, SYNTH_DURATION_US, n_noise),
            ]
        )
        order = np.argsort(times, kind="stable")
        streams.append(
            EventStream(
                times_us=times[order],
                addresses=units[order],
                spatial_shape=(SYNTH_UNITS,),
                duration_us=SYNTH_DURATION_US,
                label=label,
            )
        )
    return streams


def balanced_subset(streams: list[EventStream], limit: int) -> list[EventStream]:
    """First ``limit`` samples drawn round-robin across class labels, in
    stable per-class order. Returns the input list when limit is 0 or
    covers everything."""
    if limit <= 0 or limit >= len(streams):
        return streams
    by_label: dict[int, list[EventStream]] = {}
    for s in streams:
        by_label.setdefault(s.label, []).append(s)
    labels = sorted(by_label)
    picked: list[EventStream] = []
    k = 0
    while len(picked) < limit:
        progressed = False
        for lab in labels:
            bucket = by_label[lab]
            if k < len(bucket):
                picked.append(bucket[k])
                progressed = True
                if len(picked) == limit:
                    break
        if not progressed:
            break
        k += 1
    return picked


def with_duration(stream: EventStream, duration_us: int) -> EventStream:
    """Re-clock a stream to a fixed duration, dropping later events."""
    keep = stream.times_us < duration_us
    return EventStream(
        times_us=stream.times_us[keep],
        addresses=stream.addresses[keep] if stream.addresses.ndim == 1
        else stream.addresses[keep, :],
        spatial_shape=stream.spatial_shape,
        duration_us=duration_us,
        label=stream.label,
    )


def _frames_of(streams: list[EventStream], t_steps: int,
               fixed_duration_us: int = 0) -> tuple[np.ndarray, np.ndarray]:
    frames = np.stack(
        [
            aggregate_frames(
                with_duration(s, fixed_duration_us) if fixed_duration_us else s,
                t_steps,
            )
            for s in streams
        ]
    )
    labels = np.asarray([s.label for s in streams], dtype=np.int64)
    return frames, labels


def cache_basename(dataset: str, split: str, t_steps: int,
                   fixed_duration_us: int = 0, limit: int = 0) -> str:
    name = f"{dataset}_{split}_T{t_steps}"
    if fixed_duration_us:
        name += f"_D{fixed_duration_us}"
    if limit:
        name += f"_L{limit}"
    return name


def _load_raw(dataset: str, data_dir: str, split: str, limit: int) -> list[EventStream]:
    if dataset == "shd":
        streams = load_shd(data_dir, split)
        return balanced_subset(streams, limit)
    if dataset == "nmnist":
        return load_nmnist(data_dir, split, limit=limit)
    if dataset == "synth":
        return synth_streams(split, samples=limit)
    raise IOFailure(f"no raw loader for dataset {dataset!r}")


def _split_frames(cfg: TrainConfig, split: str, limit: int) -> SplitData:
    if cfg.dataset == "synth":
        frames, labels = _frames_of(
            synth_streams(split, samples=limit), cfg.T, cfg.fixed_duration_us
        )
        return SplitData(frames=frames, labels=labels)
    data_dir = cfg.resolved_data_dir()
    if not data_dir:
        raise IOFailure(
            f"dataset {cfg.dataset!r} needs a data directory (--data-dir or ${DATA_DIR_ENV})"
        )
    cache_dir = os.path.join(data_dir, "cache")
    base = cache_basename(cfg.dataset, split, cfg.T, cfg.fixed_duration_us, limit)
    f_frames = os.path.join(cache_dir, base + ".frames")
    f_labels = os.path.join(cache_dir, base + ".labels")
    if os.path.isfile(f_frames) and os.path.isfile(f_labels):
        frames = read_frames(f_frames)
        labels = read_frames(f_labels).astype(np.int64)
        return SplitData(frames=frames, labels=labels)
    streams = _load_raw(cfg.dataset, data_dir, split, limit)
    frames, labels = _frames_of(streams, cfg.T, cfg.fixed_duration_us)
    os.makedirs(cache_dir, exist_ok=True)
    write_frames(f_frames, frames)
    write_frames(f_labels, labels.astype(np.float32))
    return SplitData(frames=frames, labels=labels)


def load_dataset(cfg: TrainConfig) -> DatasetBundle:
    """Frame tensors for both splits, cached next to the raw data when a
    data directory is in play. Subset limits come from the config."""
    train = _split_frames(cfg, "train", cfg.train_limit)
    test = _split_frames(cfg, "test", cfg.test_limit)
    input_shape = tuple(train.frames.shape[2:])
    expected = INPUT_SHAPES.get(cfg.dataset)
    if expected is not None and input_shape != expected:
        raise IOFailure(
            f"dataset {cfg.dataset}: cached shape {input_shape} != expected {expected}"
        )
    classes = int(max(train.labels.max(), test.labels.max())) + 1
    return DatasetBundle(train=train, test=test, input_shape=input_shape, classes=classes)


def _label_histogram(labels: np.ndarray) -> str:
    vals, counts = np.unique(labels, return_counts=True)
    return ",".join(f"{int(v)}:{int(c)}" for v, c in zip(vals, counts))


def prepare_cache(dataset: str, data_dir: str, t_steps: int,
                  fixed_duration_us: int = 0, log=None) -> dict:
    """Build the frame caches for both splits plus a manifest; a rerun on
    existing caches is a no-op. Returns per-split sample counts/shapes."""
    emit = log or (lambda s: None)
    cache_dir = os.path.join(data_dir, "cache")
    manifest_path = os.path.join(
        cache_dir, cache_basename(dataset, "all", t_steps, fixed_duration_us) + "_manifest.txt"
    )
    info: dict = {"dataset": dataset, "T": t_steps, "splits": {}}
    all_cached = os.path.isfile(manifest_path)
    lines = [f"dataset={dataset}", f"T={t_steps}"]
    if fixed_duration_us:
        lines.append(f"fixed_duration_us={fixed_duration_us}")
    for split in ("train", "test"):
        base = cache_basename(dataset, split, t_steps, fixed_duration_us)
        f_frames = os.path.join(cache_dir, base + ".frames")
        f_labels = os.path.join(cache_dir, base + ".labels")
        if os.path.isfile(f_frames) and os.path.isfile(f_labels):
            labels = read_frames(f_labels).astype(np.int64)
            frames_shape = _peek_shape(f_frames)
            emit(f"{split}: up to date ({frames_shape[0]} samples)")
        else:
            all_cached = False
            streams = _load_raw(dataset, data_dir, split, limit=0)
            os.makedirs(cache_dir, exist_ok=True)
            sample_shape = (t_steps,) + tuple(streams[0].spatial_shape)
            frames_shape = (len(streams),) + sample_shape

            def chunks():
                for s in streams:
                    src = with_duration(s, fixed_duration_us) if fixed_duration_us else s
                    yield aggregate_frames(src, t_steps)[None]

            write_frames_stream(f_frames, frames_shape, chunks())
            labels = np.asarray([s.label for s in streams], dtype=np.int64)
            write_frames(f_labels, labels.astype(np.float32))
            emit(f"{split}: built {frames_shape[0]} samples of shape {sample_shape}")
        info["splits"][split] = {
            "samples": int(frames_shape[0]),
            "shape": tuple(int(d) for d in frames_shape[1:]),
        }
        lines.append(
            f"split={split} samples={frames_shape[0]} "
            f"shape={tuple(int(d) for d in frames_shape[1:])}"
        )
        lines.append(f"labels[{split}]={_label_histogram(labels)}")
    if all_cached:
        emit("manifest: up to date")
    else:
        with open(manifest_path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        emit(f"manifest: {manifest_path}")
    info["up_to_date"] = all_cached
    return info


def _peek_shape(path: str) -> tuple[int, ...]:
    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != FRAME_MAGIC:
            raise CorruptInput(f"{path} is not a frame cache")
        version, rank = struct.unpack("<II", head[4:])
        if version != FRAME_VERSION:
            raise CorruptInput(f"{path} has unsupported version {version}")
        dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
    return tuple(int(d) for d in dims)
