"""Neuromorphic event streams: parsing, frame aggregation, binary caching.

An event stream is a time-sorted list of microsecond-stamped events with
either a 1-D address (unit index) or a 3-D address (polarity, y, x).
Aggregation slices the stream into T equal bins of width duration/T and
counts events per address per bin; event times are kept as integer
microseconds so binning has no floating-point ambiguity.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import h5py
import numpy as np

from .errors import CorruptInput, InvalidArgument, IOFailure

__all__ = [
    "Event",
    "EventStream",
    "aggregate_frames",
    "load_shd",
    "load_nmnist",
    "decode_nmnist_events",
    "write_frames",
    "write_frames_stream",
    "read_frames",
    "round_up_ms",
]

SHD_UNITS = 700
SHD_CLASSES = 20
NMNIST_SHAPE = (2, 34, 34)
NMNIST_CLASSES = 10

FRAME_MAGIC = b"STSC"
FRAME_VERSION = 1


@dataclass(frozen=True)
class Event:
    """A single spike: microsecond timestamp plus spatial address, either
    (unit,) or (polarity, y, x)."""

    time: int
    address: tuple[int, ...]


@dataclass
class EventStream:
    """Time-sorted events over a fixed spatial shape and duration.

    ``addresses`` is [n] of unit indices for 1-D shapes or [n, 3] of
    (polarity, y, x) rows for 3-D shapes. All times lie in [0, duration).
    """

    times_us: np.ndarray
    addresses: np.ndarray
    spatial_shape: tuple[int, ...]
    duration_us: int
    label: int

    def __post_init__(self):
        self.times_us = np.asarray(self.times_us, dtype=np.int64)
        self.addresses = np.asarray(self.addresses, dtype=np.int64)
        if self.duration_us < 1:
            raise InvalidArgument(f"event stream: duration must be >= 1 us, got {self.duration_us}")
        n = self.times_us.shape[0]
        want_cols = len(self.spatial_shape)
        if want_cols == 1:
            if self.addresses.shape != (n,):
                raise CorruptInput(
                    f"event stream: expected {n} unit indices, got shape {self.addresses.shape}"
                )
            addr_matrix = self.addresses.reshape(n, 1)
        else:
            if self.addresses.shape != (n, want_cols):
                raise CorruptInput(
                    f"event stream: expected [{n}, {want_cols}] addresses, "
                    f"got shape {self.addresses.shape}"
                )
            addr_matrix = self.addresses
        if n:
            if self.times_us.min() < 0:
                raise CorruptInput("event stream: negative event time")
            if self.times_us.max() >= self.duration_us:
                raise CorruptInput(
                    f"event stream: event time {self.times_us.max()} outside "
                    f"duration {self.duration_us}"
                )
            if np.any(np.diff(self.times_us) < 0):
                order = np.argsort(self.times_us, kind="stable")
                self.times_us = self.times_us[order]
                self.addresses = self.addresses[order]
                addr_matrix = addr_matrix[order]
            bounds = np.asarray(self.spatial_shape, dtype=np.int64)
            if addr_matrix.min() < 0 or np.any(addr_matrix >= bounds):
                raise CorruptInput("event stream: address outside spatial shape")

    def __len__(self) -> int:
        return int(self.times_us.shape[0])

    def __iter__(self):
        one_d = len(self.spatial_shape) == 1
        for i in range(len(self)):
            addr = (
                (int(self.addresses[i]),)
                if one_d
                else tuple(int(v) for v in self.addresses[i])
            )
            yield Event(time=int(self.times_us[i]), address=addr)


def round_up_ms(t_us: int) -> int:
    """Smallest whole-millisecond duration strictly greater than t_us."""
    return (int(t_us) // 1000 + 1) * 1000


def aggregate_frames(stream: EventStream, t_steps: int, mode: str = "accumulate",
                     dtype=np.float32) -> np.ndarray:
    """Bin a stream into a dense [T, *spatial_shape] count tensor.

    Bin width is duration/T; an event at time t lands in floor(t/width),
    clamped to T-1 on the exact right edge. Only count accumulation is
    supported. The total of the output equals the event count exactly.
    """
    if t_steps < 1:
        raise InvalidArgument(f"aggregate_frames: T must be >= 1, got {t_steps}")
    if mode != "accumulate":
        raise InvalidArgument(f"aggregate_frames: unsupported mode {mode!r}")
    out = np.zeros((t_steps,) + tuple(stream.spatial_shape), dtype=dtype)
    if len(stream) == 0:
        return out
    # floor(t / (duration/T)) == floor(t*T / duration) exactly, in integers
    bins = (stream.times_us * t_steps) // stream.duration_us
    np.minimum(bins, t_steps - 1, out=bins)
    if len(stream.spatial_shape) == 1:
        np.add.at(out, (bins, stream.addresses), 1)
    else:
        idx = (bins,) + tuple(stream.addresses[:, j] for j in range(stream.addresses.shape[1]))
        np.add.at(out, idx, 1)
    return out


# ---------------------------------------------------------------------------
# SHD: HDF5 container with per-sample spike times (seconds) and unit indices
# ---------------------------------------------------------------------------


def _shd_file(path: str, split: str) -> str:
    if split not in ("train", "test"):
        raise InvalidArgument(f"load_shd: split must be train or test, got {split!r}")
    if os.path.isdir(path):
        return os.path.join(path, f"shd_{split}.h5")
    return path


def load_shd(path: str, split: str) -> list[EventStream]:
    """Load the 700-unit spoken-digit spike container, converting per-sample
    spike times to integer microseconds. Each sample's duration is its last
    spike time rounded up to the next whole millisecond (strictly greater,
    so every event stays inside [0, duration))."""
    fname = _shd_file(path, split)
    if not os.path.isfile(fname):
        raise IOFailure(f"load_shd: missing file {fname}")
    streams: list[EventStream] = []
    try:
        handle = h5py.File(fname, "r")
    except OSError as e:
        raise CorruptInput(f"load_shd: cannot read {fname}: {e}") from e
    with handle as f:
        try:
            times = f["spikes"]["times"]
            units = f["spikes"]["units"]
            labels = f["labels"]
        except KeyError as e:
            raise CorruptInput(f"load_shd: {fname} missing dataset {e}") from e
        n = len(labels)
        labels_arr = np.asarray(labels, dtype=np.int64)
        for i in range(n):
            t_us = np.round(np.asarray(times[i], dtype=np.float64) * 1e6).astype(np.int64)
            u = np.asarray(units[i], dtype=np.int64)
            label = int(labels_arr[i])
            if u.size and (u.min() < 0 or u.max() >= SHD_UNITS):
                raise CorruptInput(
                    f"load_shd: sample {i} has unit index outside [0, {SHD_UNITS})"
                )
            if not 0 <= label < SHD_CLASSES:
                raise CorruptInput(f"load_shd: sample {i} has label {label}")
            duration = round_up_ms(int(t_us.max()) if t_us.size else 0)
            streams.append(
                EventStream(
                    times_us=t_us,
                    addresses=u,
                    spatial_shape=(SHD_UNITS,),
                    duration_us=duration,
                    label=label,
                )
            )
    return streams


# ---------------------------------------------------------------------------
# N-MNIST: per-sample binary files of 5-byte events under <split>/<digit>/
# ---------------------------------------------------------------------------


def decode_nmnist_events(raw: bytes, origin: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Unpack 5-byte event records: x, y, then polarity in the top bit of
    byte 2 with a 23-bit microsecond timestamp in the remaining bits.
    Returns (times_us, addresses[n, 3]) with address rows (polarity, y, x).
    """
    if len(raw) % 5:
        raise CorruptInput(f"load_nmnist: {origin}: length {len(raw)} not a multiple of 5")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x = rec[:, 0]
    y = rec[:, 1]
    pol = rec[:, 2] >> 7
    t = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    h, w = NMNIST_SHAPE[1], NMNIST_SHAPE[2]
    if rec.shape[0] and (x.max() >= w or y.max() >= h):
        raise CorruptInput(f"load_nmnist: {origin}: pixel address outside {h}x{w}")
    return t, np.stack([pol, y, x], axis=1)


def _nmnist_stream(raw: bytes, label: int, origin: str) -> EventStream:
    t, addr = decode_nmnist_events(raw, origin)
    duration = round_up_ms(int(t.max()) if t.size else 0)
    return EventStream(
        times_us=t,
        addresses=addr,
        spatial_shape=NMNIST_SHAPE,
        duration_us=duration,
        label=label,
    )


def load_nmnist(root: str, split: str, limit: int = 0) -> list[EventStream]:
    """Load per-digit event files laid out as <root>/<split>/<0..9>/*.bin;
    the directory name is the label. Files are read in sorted order per
    digit. A positive ``limit`` loads only that many samples, drawn
    round-robin across digits so the subset stays class-balanced."""
    if split not in ("train", "test"):
        raise InvalidArgument(f"load_nmnist: split must be train or test, got {split!r}")
    base = os.path.join(root, split)
    if not os.path.isdir(base):
        raise IOFailure(f"load_nmnist: missing directory {base}")
    per_digit: list[list[str]] = []
    for digit in range(NMNIST_CLASSES):
        ddir = os.path.join(base, str(digit))
        names = (
            sorted(n for n in os.listdir(ddir) if n.endswith(".bin"))
            if os.path.isdir(ddir)
            else []
        )
        per_digit.append([os.path.join(ddir, n) for n in names])
    picks: list[tuple[str, int]] = []
    if limit > 0:
        rounds = max(len(files) for files in per_digit) if any(per_digit) else 0
        for k in range(rounds):
            for digit, files in enumerate(per_digit):
                if k < len(files):
                    picks.append((files[k], digit))
                if len(picks) == limit:
                    break
            if len(picks) == limit:
                break
    else:
        for digit, files in enumerate(per_digit):
            picks.extend((f, digit) for f in files)
    streams: list[EventStream] = []
    for fname, digit in picks:
        try:
            with open(fname, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise IOFailure(f"load_nmnist: cannot read {fname}: {e}") from e
        streams.append(_nmnist_stream(raw, digit, fname))
    if not streams:
        raise IOFailure(f"load_nmnist: no .bin files under {base}")
    return streams


# ---------------------------------------------------------------------------
# dense frame cache: little-endian {magic, version, rank, dims}, f32 payload
# ---------------------------------------------------------------------------


def write_frames(path: str, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    write_frames_stream(path, arr.shape, [arr])


def write_frames_stream(path: str, shape: tuple[int, ...], chunks) -> None:
    """Write a frame cache incrementally: ``chunks`` yields consecutive
    blocks along the leading axis whose sizes must sum to shape[0]."""
    header = FRAME_MAGIC + struct.pack("<II", FRAME_VERSION, len(shape))
    header += struct.pack(f"<{len(shape)}I", *shape)
    tmp = path + ".tmp"
    written = 0
    try:
        with open(tmp, "wb") as f:
            f.write(header)
            for chunk in chunks:
                arr = np.ascontiguousarray(chunk, dtype="<f4")
                if arr.shape[1:] != tuple(shape[1:]):
                    raise InvalidArgument(
                        f"write_frames_stream: chunk shape {arr.shape} under header {shape}"
                    )
                written += arr.shape[0]
                f.write(arr.tobytes(order="C"))
        if written != shape[0]:
            raise InvalidArgument(
                f"write_frames_stream: got {written} leading rows, header says {shape[0]}"
            )
        os.replace(tmp, path)
    except OSError as e:
        raise IOFailure(f"write_frames: cannot write {path}: {e}") from e
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def read_frames(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise IOFailure(f"read_frames: missing file {path}")
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IOFailure(f"read_frames: cannot read {path}: {e}") from e
    buf = io.BytesIO(raw)
    head = buf.read(12)
    if len(head) < 12 or head[:4] != FRAME_MAGIC:
        raise CorruptInput(f"read_frames: {path} is not a frame cache")
    version, rank = struct.unpack("<II", head[4:])
    if version != FRAME_VERSION:
        raise CorruptInput(f"read_frames: {path} has unsupported version {version}")
    if rank < 1 or rank > 8:
        raise CorruptInput(f"read_frames: {path} has implausible rank {rank}")
    dim_bytes = buf.read(4 * rank)
    if len(dim_bytes) < 4 * rank:
        raise CorruptInput(f"read_frames: {path} truncated header")
    dims = struct.unpack(f"<{rank}I", dim_bytes)
    count = int(np.prod(dims, dtype=np.int64))
    payload = buf.read()
    if len(payload) != 4 * count:
        raise CorruptInput(
            f"read_frames: {path} payload is {len(payload)} bytes, expected {4 * count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
