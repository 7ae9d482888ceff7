"""Dataset ingestion (IDX files) and encoded-sample caching."""

from __future__ import annotations

import gzip
import hashlib
import json
import shutil
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import (
    FilterBank,
    apply_filter_bank,
    default_dog_bank,
    intensity_lateral_inhibition,
    intensity_to_latency_grid,
    local_normalization,
)
from .tensor import TimeConfig, latencies_to_spikewave, spikewave_to_latencies
from .textio import atomic_write_text, tensor_to_text, text_to_tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


def read_idx(path, expected_magic=None):
    """Read an unsigned-byte IDX file (optionally gzipped) into an array."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    magic = int.from_bytes(raw[:4], "big")
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"{path}: magic {magic:#010x}, expected {expected_magic:#010x}")
    if magic >> 8 != 0x08:
        raise IdxFormatError(f"{path}: only unsigned-byte IDX files are supported")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if data.size != int(np.prod(dims)):
        raise IdxFormatError(f"{path}: {data.size} bytes of data for shape {tuple(dims)}")
    return data.reshape(dims)


def _find(directory, stem):
    # both the dash and dot spellings of the MNIST names are common
    for name in (stem, stem.replace("-idx", ".idx")):
        for suffix in ("", ".gz"):
            p = Path(directory) / (name + suffix)
            if p.exists():
                return p
    raise FileNotFoundError(f"no IDX file named {stem}[.gz] in {directory}")


def load_mnist(directory, split="train", limit=None):
    """Images ``(n, 28, 28)`` uint8 and labels ``(n,)`` from an MNIST folder."""
    img_stem, lbl_stem = MNIST_FILES[split]
    images = read_idx(_find(directory, img_stem), IDX_IMAGES_MAGIC)
    labels = read_idx(_find(directory, lbl_stem), IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return images, labels.astype(np.int64)


@dataclass(frozen=True)
class ImageTransform:
    """Filter bank, local normalization, then rank-order latency coding.

    An optional intensity lateral-inhibition kernel runs between the last
    two steps.
    """

    bank: FilterBank
    norm_radius: int = 8
    t_max: int = 15
    epsilon: float = 1e-12
    inhibition_kernel: tuple | None = None

    def latencies(self, image):
        x = apply_filter_bank(image, self.bank)
        x = local_normalization(x, self.norm_radius, self.epsilon)
        if self.inhibition_kernel is not None:
            x = intensity_lateral_inhibition(x, np.asarray(self.inhibition_kernel))
        return intensity_to_latency_grid(x, TimeConfig(self.t_max))

    def __call__(self, image):
        return latencies_to_spikewave(self.latencies(image), TimeConfig(self.t_max))

    @property
    def fingerprint(self):
        h = hashlib.sha256()
        h.update(self.bank.weights.astype("<f8").tobytes())
        meta = {
            "padding": self.bank.padding,
            "threshold": repr(float(self.bank.threshold)),
            "norm_radius": self.norm_radius,
            "t_max": self.t_max,
            "epsilon": repr(float(self.epsilon)),
            "inhibition": None
            if self.inhibition_kernel is None
            else np.asarray(self.inhibition_kernel).tolist(),
        }
        h.update(json.dumps(meta, sort_keys=True).encode())
        return h.hexdigest()[:16]


def default_transform(t_max=15):
    return ImageTransform(default_dog_bank(), norm_radius=8, t_max=t_max)


class CachedDataset(Sequence):
    """Lazily encoded dataset that caches each sample after first access.

    ``transform`` maps a raw sample to a spike-wave and must expose
    ``fingerprint`` and ``t_max`` attributes. Samples are stored as latency
    grids, which expand back into the exact spike-wave, either in memory or
    as one text-tensor file per sample under ``directory`` next to a
    ``manifest.json`` carrying the fingerprint. A manifest with a different
    fingerprint wipes the directory.
    """

    def __init__(self, source, transform, mode="memory", directory=None):
        if mode not in ("memory", "disk"):
            raise ValueError(f"cache mode must be 'memory' or 'disk', got {mode!r}")
        if mode == "disk" and directory is None:
            raise ValueError("disk caching needs a directory")
        self.source = source
        self.transform = transform
        self.mode = mode
        self.fingerprint = str(transform.fingerprint)
        self.t_max = int(transform.t_max)
        self._memory = {}
        self.directory = None
        if mode == "disk":
            self.directory = Path(directory)
            self._open_disk()

    def _open_disk(self):
        d = self.directory
        manifest = d / "manifest.json"
        meta = {
            "fingerprint": self.fingerprint,
            "count": len(self.source),
            "t_max": self.t_max,
            "format": "latency-grid",
        }
        if manifest.exists():
            if json.loads(manifest.read_text()) == meta:
                return
            shutil.rmtree(d)
        d.mkdir(parents=True, exist_ok=True)
        atomic_write_text(manifest, json.dumps(meta, sort_keys=True))

    def __len__(self):
        return len(self.source)

    def _path(self, i):
        return self.directory / f"sample_{i:06d}.txt"

    def _encode(self, i):
        return spikewave_to_latencies(self.transform(self.source[i])).astype(np.int16)

    def latencies(self, i):
        """Cached latency grid of sample ``i`` (NO_SPIKE = -1)."""
        i = range(len(self))[i]
        if self.mode == "memory":
            lat = self._memory.get(i)
            if lat is None:
                lat = self._memory[i] = self._encode(i)
            return lat
        path = self._path(i)
        if path.exists():
            return text_to_tensor(path, dtype=np.int16)
        lat = self._encode(i)
        tensor_to_text(lat, path)
        return lat

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return latencies_to_spikewave(self.latencies(i), TimeConfig(self.t_max))


def cache_dataset(source, transform, mode="memory", directory=None):
    return CachedDataset(source, transform, mode=mode, directory=directory)

