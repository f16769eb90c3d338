"""Shared fixtures: synthetic raw-data trees shaped like the real corpora,
plus detection of real datasets for the desk-scale acceptance runs."""

import os

import h5py
import numpy as np
import pytest

from stscnet.config import DATA_DIR_ENV

SHD_UNITS = 700
NMNIST_HW = 34


def data_root() -> str:
    return os.environ.get(DATA_DIR_ENV, "")


def have_shd() -> bool:
    root = data_root()
    return bool(root) and all(
        os.path.isfile(os.path.join(root, f"shd_{s}.h5")) for s in ("train", "test")
    )


def have_nmnist() -> bool:
    root = data_root()
    return bool(root) and all(
        os.path.isdir(os.path.join(root, s, "0")) for s in ("train", "test")
    )


# ---------------------------------------------------------------------------
# fake raw corpora
# ---------------------------------------------------------------------------


def build_fake_shd(dir_path, split: str, n_samples: int = 24, seed: int = 0) -> str:
    """An HDF5 container with the real corpus layout: variable-length spike
    times in seconds and unit indices per sample, plus a label table."""
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    path = os.path.join(dir_path, f"shd_{split}.h5")
    with h5py.File(path, "w") as f:
        times_ds = f.create_dataset(
            "spikes/times", (n_samples,), dtype=h5py.vlen_dtype(np.float64)
        )
        units_ds = f.create_dataset(
            "spikes/units", (n_samples,), dtype=h5py.vlen_dtype(np.int64)
        )
        labels = np.array([i % 20 for i in range(n_samples)], dtype=np.int64)
        f.create_dataset("labels", data=labels)
        for i in range(n_samples):
            k = int(rng.integers(5, 40))
            t = np.sort(rng.uniform(0.0, 0.8, k))
            u = rng.integers(0, SHD_UNITS, k)
            times_ds[i] = t
            units_ds[i] = u
    return path


def encode_nmnist(times_us, xs, ys, pols) -> bytes:
    """Pack events into the 5-byte on-disk record format."""
    out = bytearray()
    for t, x, y, p in zip(times_us, xs, ys, pols):
        out.append(int(x) & 0xFF)
        out.append(int(y) & 0xFF)
        out.append(((int(p) & 1) << 7) | ((int(t) >> 16) & 0x7F))
        out.append((int(t) >> 8) & 0xFF)
        out.append(int(t) & 0xFF)
    return bytes(out)


def build_fake_nmnist(root, split: str, per_digit: int = 3, seed: int = 0) -> None:
    rng = np.random.default_rng([seed, 7 if split == "train" else 8])
    for digit in range(10):
        ddir = os.path.join(root, split, str(digit))
        os.makedirs(ddir, exist_ok=True)
        for s in range(per_digit):
            k = int(rng.integers(10, 60))
            t = np.sort(rng.integers(0, 300_000, k))
            x = rng.integers(0, NMNIST_HW, k)
            y = rng.integers(0, NMNIST_HW, k)
            p = rng.integers(0, 2, k)
            with open(os.path.join(ddir, f"{s:05d}.bin"), "wb") as f:
                f.write(encode_nmnist(t, x, y, p))


@pytest.fixture
def fake_shd_dir(tmp_path):
    build_fake_shd(tmp_path, "train")
    build_fake_shd(tmp_path, "test", n_samples=12)
    return str(tmp_path)


@pytest.fixture
def fake_nmnist_dir(tmp_path):
    build_fake_nmnist(str(tmp_path), "train")
    build_fake_nmnist(str(tmp_path), "test", per_digit=2)
    return str(tmp_path)


@pytest.fixture
def no_data_env(monkeypatch):
    monkeypatch.delenv(DATA_DIR_ENV, raising=False)
