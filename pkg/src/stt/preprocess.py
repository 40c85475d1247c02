"""Sequence preprocessing: view normalization, temporal resampling,
augmentation, and stratified splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence import LabeledDataset, SkeletonSequence


def _rot_y(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def view_normalize(seq: SkeletonSequence, left_hip: int, right_hip: int,
                   root: int) -> SkeletonSequence:
    """Root the skeleton at the origin and fix its yaw.

    The frame-0 root position is subtracted from every frame, then the
    whole sequence is rotated about the vertical (y) axis so the frame-0
    left-hip -> right-hip vector, projected onto the ground plane, points
    along +x.
    """
    data = seq.data.astype(np.float64)      # (3, T, V)
    origin = data[:, 0, root].copy()
    data = data - origin[:, None, None]
    hip = data[:, 0, right_hip] - data[:, 0, left_hip]
    vx, vz = hip[0], hip[2]
    if np.hypot(vx, vz) < 1e-8:
        raise ValueError("degenerate orientation: hip vector has no ground-plane component")
    r = _rot_y(np.arctan2(vz, vx))
    out = np.einsum("ij,jtv->itv", r, data)
    return seq.with_data(out.astype(np.float32))


def resample(seq: SkeletonSequence, target_frames: int = 64) -> SkeletonSequence:
    """Linearly resample the time axis to `target_frames` frames.

    Endpoints map exactly; a same-length input is returned bitwise equal.
    """
    t = seq.frames
    if t < 2 or target_frames < 2:
        raise ValueError(f"need at least 2 frames, got T={t} target={target_frames}")
    if t == target_frames:
        return seq
    src = np.arange(target_frames, dtype=np.float64) * (t - 1) / (target_frames - 1)
    lo = np.floor(src).astype(np.intp)
    lo = np.minimum(lo, t - 2)
    w = (src - lo).astype(np.float64)
    data = seq.data.astype(np.float64)
    out = data[:, lo, :] * (1.0 - w)[None, :, None] + data[:, lo + 1, :] * w[None, :, None]
    out[:, 0, :] = data[:, 0, :]
    out[:, -1, :] = data[:, -1, :]
    return seq.with_data(out.astype(np.float32))


@dataclass(frozen=True)
class AugmentSpec:
    factor: int = 4
    rotation_range_deg: float = 15.0
    scale_range: float = 0.1
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("factor must be >= 1")
        if self.rotation_range_deg < 0 or self.scale_range < 0 or self.noise_std < 0:
            raise ValueError("augmentation ranges must be non-negative")


def augment(seq: SkeletonSequence, spec: AugmentSpec,
            sample_index: int = 0) -> list[SkeletonSequence]:
    """Expand one sequence into `spec.factor` copies.

    Copy 0 is the untouched input.  Each further copy applies a random
    y-rotation, uniform scale and Gaussian joint noise, seeded by
    (spec.seed, sample_index, copy) so results are order-independent.
    """
    out = [seq]
    for copy in range(1, spec.factor):
        rng = np.random.default_rng([spec.seed, sample_index, copy])
        angle = np.deg2rad(rng.uniform(-spec.rotation_range_deg, spec.rotation_range_deg))
        scale = 1.0 + rng.uniform(-spec.scale_range, spec.scale_range)
        data = seq.data.astype(np.float64)
        data = np.einsum("ij,jtv->itv", _rot_y(angle), data) * scale
        data = data + rng.normal(0.0, spec.noise_std, size=data.shape)
        out.append(seq.with_data(data.astype(np.float32)))
    return out


def augment_dataset(ds: LabeledDataset, spec: AugmentSpec) -> LabeledDataset:
    items = []
    for i, seq in enumerate(ds.items):
        items.extend(augment(seq, spec, sample_index=i))
    return LabeledDataset(tuple(items), ds.class_names, ds.layout)


def split_dataset(ds: LabeledDataset, train_ratio: float,
                  seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split: per class, floor(ratio * n) samples (at least 1)
    go to train; the rest to test.  Deterministic by seed."""
    if not (0.0 < train_ratio < 1.0):
        raise ValueError(f"train_ratio must be in (0, 1), got {train_ratio}")
    train_idx, test_idx = [], []
    for cls, members in sorted(ds.by_class().items()):
        if not members:
            raise ValueError(f"class {cls} has no samples")
        n_train = max(1, int(np.floor(train_ratio * len(members))))
        rng = np.random.default_rng([seed, cls])
        picked = rng.choice(len(members), size=n_train, replace=False)
        picked_set = set(int(p) for p in picked)
        for k, idx in enumerate(members):
            (train_idx if k in picked_set else test_idx).append(idx)
    return ds.subset(sorted(train_idx)), ds.subset(sorted(test_idx))
