"""Skeleton sequence containers and on-disk formats.

SKSEQ1 binary layout: magic "SKSEQ1", little-endian u32 C, T, V, u32
label, then C*T*V float32 values (C-major, T-middle, V-minor).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

MAGIC = b"SKSEQ1"


@dataclass(frozen=True)
class SkeletonSequence:
    data: np.ndarray        # (C, T, V) float32
    label: int = 0
    layout: str = "ntu25"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"sequence data must be (C, T, V), got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def joints(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "SkeletonSequence":
        return replace(self, data=data)

    def with_label(self, label: int) -> "SkeletonSequence":
        return replace(self, label=label)


def write_skseq(seq: SkeletonSequence, path):
    c, t, v = seq.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", c, t, v, seq.label))
        fh.write(seq.data.astype("<f4").tobytes())


def read_skseq(path, layout: str = "ntu25") -> SkeletonSequence:
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        c, t, v, label = struct.unpack("<4I", fh.read(16))
        raw = fh.read(4 * c * t * v)
        if len(raw) != 4 * c * t * v:
            raise ValueError(f"{path}: truncated payload")
        data = np.frombuffer(raw, dtype="<f4").reshape(c, t, v)
    return SkeletonSequence(data=data, label=label, layout=layout)


@dataclass(frozen=True)
class LabeledDataset:
    items: tuple[SkeletonSequence, ...]
    class_names: tuple[str, ...]
    layout: str = "ntu25"

    def __post_init__(self):
        if self.items:
            c, v = self.items[0].channels, self.items[0].joints
            for s in self.items:
                if (s.channels, s.joints) != (c, v):
                    raise ValueError("all sequences must share channel and joint counts")
                if not (0 <= s.label < len(self.class_names)):
                    raise ValueError(f"label {s.label} outside class catalog")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return len(self.items)

    def by_class(self) -> dict[int, list[int]]:
        buckets: dict[int, list[int]] = {c: [] for c in range(self.num_classes)}
        for i, s in enumerate(self.items):
            buckets[s.label].append(i)
        return buckets

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(tuple(self.items[i] for i in indices), self.class_names, self.layout)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into (N, C, T, V) float32 plus (N,) int labels."""
        x = np.stack([s.data for s in self.items]).astype(np.float32)
        y = np.array([s.label for s in self.items], dtype=np.int64)
        return x, y


def save_dataset(ds: LabeledDataset, out_dir):
    """Directory layout: <class_id>_<sample_id>.skq + classes.txt."""
    os.makedirs(out_dir, exist_ok=True)
    counters: dict[int, int] = {}
    for seq in ds.items:
        k = counters.get(seq.label, 0)
        counters[seq.label] = k + 1
        write_skseq(seq, os.path.join(out_dir, f"{seq.label}_{k}.skq"))
    with open(os.path.join(out_dir, "classes.txt"), "w", encoding="utf-8") as fh:
        for name in ds.class_names:
            fh.write(name + "\n")


def load_dataset(in_dir, layout: str = "ntu25") -> LabeledDataset:
    classes_path = os.path.join(in_dir, "classes.txt")
    with open(classes_path, encoding="utf-8") as fh:
        class_names = tuple(line.rstrip("\n") for line in fh if line.strip())
    files = sorted(f for f in os.listdir(in_dir) if f.endswith(".skq"))
    items = []
    for f in files:
        seq = read_skseq(os.path.join(in_dir, f), layout=layout)
        items.append(seq)
    return LabeledDataset(tuple(items), class_names, layout)


def write_manifest(names, path):
    with open(path, "w", encoding="utf-8") as fh:
        for n in names:
            fh.write(n + "\n")
