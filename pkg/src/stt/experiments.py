"""Training, transfer and evaluation pipelines plus a synthetic corpus
generator used for desk-scale verification."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import NetworkConfig, SpatialTransformerNet, freeze_and_reinit_fc
from .nn import SGD, Linear
from .preprocess import AugmentSpec, augment_dataset, split_dataset
from .sequence import LabeledDataset, SkeletonSequence
from .skeletons import NTU25_BONES, ntu25_rest_pose


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.1
    lr_drop_epochs: tuple[int, ...] = (50, 70, 90)
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    val_ratio: float = 0.1
    seed: int = 0
    desk_divisor: int = 1       # scales epochs (and drop epochs) down for desk runs

    def __post_init__(self):
        drops = self.lr_drop_epochs
        if list(drops) != sorted(drops) or (drops and drops[-1] >= self.epochs):
            raise ValueError("lr_drop_epochs must be ascending and below epochs")
        if self.desk_divisor < 1:
            raise ValueError("desk_divisor must be >= 1")

    @property
    def effective_epochs(self) -> int:
        return max(1, self.epochs // self.desk_divisor)

    @property
    def effective_drops(self) -> tuple[int, ...]:
        return tuple(sorted({max(1, d // self.desk_divisor) for d in self.lr_drop_epochs}))

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch under the step schedule."""
        drops = sum(1 for d in self.effective_drops if epoch >= d + 1)
        return self.lr / (self.lr_drop_factor ** drops)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    confusion: np.ndarray       # (K, K) counts, rows = true class
    per_class: np.ndarray       # (K,) accuracy per class

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_val_acc: float
    log_lines: list[str]


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 10
    samples_per_class: int = 20
    num_joints: int = 25
    frames: int = 64
    num_oscillators: int = 6
    class_distance: float = 1.0     # scales class-to-class parameter separation
    sample_noise: float = 0.02
    class_offset: int = 0           # shifts class identities to carve out held-out classes
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise ValueError("need at least one class and one sample per class")


def _class_motion_params(spec: SynthSpec, cls: int):
    """Oscillator bank for one class: shared base plus a class-specific
    offset scaled by the distance knob."""
    base = np.random.default_rng([spec.seed, 777])
    delta = np.random.default_rng([spec.seed, 1000 + spec.class_offset + cls])
    k = spec.num_oscillators
    freq = base.uniform(0.5, 2.0, k) + spec.class_distance * delta.uniform(-0.5, 0.5, k)
    phase = base.uniform(0, 2 * np.pi, k) + spec.class_distance * delta.uniform(-np.pi, np.pi, k)
    amp = base.uniform(0.05, 0.25, k) * (1 + spec.class_distance * delta.uniform(-0.5, 0.5, k))
    directions = base.normal(size=(k, 3)) + spec.class_distance * delta.normal(size=(k, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True) + 1e-12
    weights = np.abs(base.normal(size=(k, spec.num_joints))
                     + spec.class_distance * delta.normal(size=(k, spec.num_joints)))
    weights /= weights.max(axis=1, keepdims=True) + 1e-12
    return freq, phase, amp, directions, weights


def synth_dataset(spec: SynthSpec) -> LabeledDataset:
    """Deterministic sinusoidal-motion corpus over a fixed 25-joint skeleton.

    Each class owns an oscillator bank (frequency, phase, amplitude,
    direction, joint weighting); samples add per-sample phase jitter and
    Gaussian noise.  Positions are in normalized units (rest pose / 100).
    """
    rest = ntu25_rest_pose() / 100.0            # (V, 3)
    if spec.num_joints != rest.shape[0]:
        # fall back to a generic chain layout for non-25-joint requests
        rest = np.zeros((spec.num_joints, 3))
        rest[:, 1] = np.arange(spec.num_joints) * 0.1
    t_axis = np.arange(spec.frames) / spec.frames
    items = []
    for cls in range(spec.num_classes):
        freq, phase, amp, directions, weights = _class_motion_params(spec, cls)
        for i in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, spec.class_offset + cls, i])
            jitter = rng.uniform(-0.3, 0.3, spec.num_oscillators)
            data = np.broadcast_to(rest.T[:, None, :],
                                   (3, spec.frames, spec.num_joints)).copy()
            for k in range(spec.num_oscillators):
                signal = amp[k] * np.sin(2 * np.pi * freq[k] * t_axis + phase[k] + jitter[k])
                data += (directions[k][:, None, None]
                         * signal[None, :, None]
                         * weights[k][None, None, :])
            data += rng.normal(0.0, spec.sample_noise, size=data.shape)
            items.append(SkeletonSequence(data.astype(np.float32), label=cls, layout="ntu25"))
    names = tuple(f"motion_{spec.class_offset + c}" for c in range(spec.num_classes))
    return LabeledDataset(tuple(items), names, "ntu25")


# ---------------------------------------------------------------------------
# evaluation

def _batched_logits(net: SpatialTransformerNet, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = []
    for start in range(0, len(x), batch_size):
        logits = net(x[start : start + batch_size], train=False)
        outs.append(logits.data.copy())
    return np.concatenate(outs, axis=0)


def metrics_from_predictions(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> Metrics:
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    totals = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), totals, out=np.zeros(num_classes), where=totals > 0)
    accuracy = float(np.trace(confusion)) / max(1, len(labels))
    return Metrics(accuracy=accuracy, confusion=confusion, per_class=per_class)


def evaluate(net: SpatialTransformerNet, ds: LabeledDataset, batch_size: int = 64) -> Metrics:
    if ds.num_classes != net.config.num_classes:
        raise ValueError(
            f"class-count mismatch: dataset has {ds.num_classes}, network {net.config.num_classes}")
    x, y = ds.as_arrays()
    logits = _batched_logits(net, x, batch_size)
    return metrics_from_predictions(logits.argmax(axis=1), y, ds.num_classes)


# ---------------------------------------------------------------------------
# training loops

def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _train_epoch(net, opt, x, y, rng, batch_size):
    losses, correct = [], 0
    for batch in _epoch_batches(len(x), batch_size, rng):
        logits = net(x[batch], train=True)
        loss = ad.cross_entropy(logits, y[batch])
        if not np.isfinite(loss.item()):
            raise RuntimeError(f"training diverged: loss={loss.item()}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item() * len(batch))
        correct += int((logits.data.argmax(axis=1) == y[batch]).sum())
    return float(np.sum(losses) / len(x)), correct / len(x)


def pretrain(ds: LabeledDataset, net_config: NetworkConfig, train_config: TrainConfig,
             bones=NTU25_BONES, log_fn=None) -> TrainResult:
    """Train from scratch with the step-decayed SGD recipe; returns the
    best-validation-accuracy parameter snapshot and the per-epoch log."""
    if ds.num_classes != net_config.num_classes:
        raise ValueError(
            f"dataset has {ds.num_classes} classes, config expects {net_config.num_classes}")
    train_ds, val_ds = split_dataset(ds, 1.0 - train_config.val_ratio, seed=train_config.seed)
    x_train, y_train = train_ds.as_arrays()
    x_val, y_val = val_ds.as_arrays()
    net = SpatialTransformerNet(net_config, bones, seed=train_config.seed)
    opt = SGD(net.named_parameters(), lr=train_config.lr, momentum=train_config.momentum)

    best_state, best_epoch, best_acc = net.state_dict(), 0, -1.0
    log_lines = []
    for epoch in range(1, train_config.effective_epochs + 1):
        opt.lr = train_config.lr_at(epoch)
        rng = np.random.default_rng([train_config.seed, epoch])
        train_loss, train_acc = _train_epoch(net, opt, x_train, y_train, rng,
                                             train_config.batch_size)
        val_pred = _batched_logits(net, x_val).argmax(axis=1)
        val_acc = float((val_pred == y_val).mean())
        line = f"{epoch},{opt.lr:g},{train_loss:.6f},{train_acc:.4f},{val_acc:.4f}"
        log_lines.append(line)
        if log_fn:
            log_fn(line)
        if val_acc > best_acc:
            best_state, best_epoch, best_acc = net.state_dict(), epoch, val_acc
    return TrainResult(best_state, best_epoch, best_acc, log_lines)


def _train_head_on_features(head: Linear, feats: np.ndarray, labels: np.ndarray,
                            train_config: TrainConfig) -> Linear:
    opt = SGD([head.weight, head.bias], lr=train_config.lr, momentum=train_config.momentum)
    for epoch in range(1, train_config.effective_epochs + 1):
        opt.lr = train_config.lr_at(epoch)
        rng = np.random.default_rng([train_config.seed, epoch])
        for batch in _epoch_batches(len(feats), train_config.batch_size, rng):
            logits = head(Tensor(feats[batch], requires_grad=False))
            loss = ad.cross_entropy(logits, labels[batch])
            if not np.isfinite(loss.item()):
                raise RuntimeError(f"fine-tuning diverged: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
    return head


def _batched_features(net: SpatialTransformerNet, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = []
    for start in range(0, len(x), batch_size):
        outs.append(net.features(x[start : start + batch_size], train=False).data.copy())
    return np.concatenate(outs, axis=0)


def finetune(checkpoint: dict[str, np.ndarray] | None, target_ds: LabeledDataset,
             ratio: float, aug_factor: int, net_config: NetworkConfig,
             train_config: TrainConfig, bones=NTU25_BONES,
             aug_spec: AugmentSpec | None = None) -> tuple[Metrics, SpatialTransformerNet]:
    """Transfer protocol: split, augment the train side, freeze the backbone,
    retrain only the classifier head, evaluate on the untouched test side.

    `checkpoint=None` keeps the randomly initialized backbone (baseline).
    Since the backbone is frozen and batch norm runs on fixed statistics,
    the head is trained on cached backbone features.
    """
    net = SpatialTransformerNet(net_config, bones, seed=train_config.seed)
    if checkpoint is not None:
        net.load_state_dict(checkpoint)
    train_ds, test_ds = split_dataset(target_ds, ratio, seed=train_config.seed)
    if aug_spec is None:
        aug_spec = AugmentSpec(factor=aug_factor, seed=train_config.seed)
    else:
        aug_spec = replace(aug_spec, factor=aug_factor)
    train_ds = augment_dataset(train_ds, aug_spec)

    freeze_and_reinit_fc(net, target_ds.num_classes, seed=train_config.seed)

    x_train, y_train = train_ds.as_arrays()
    x_test, y_test = test_ds.as_arrays()
    feats_train = _batched_features(net, x_train)
    feats_test = _batched_features(net, x_test)
    _train_head_on_features(net.fc, feats_train, y_train, train_config)

    logits = feats_test @ net.fc.weight.data + net.fc.bias.data
    metrics = metrics_from_predictions(logits.argmax(axis=1), y_test, target_ds.num_classes)
    return metrics, net


def run_grid(checkpoint: dict[str, np.ndarray] | None, target_ds: LabeledDataset,
             net_config: NetworkConfig, train_config: TrainConfig,
             ratios=(0.1, 0.3, 0.5, 0.7), factors=(2, 4, 8),
             bones=NTU25_BONES, max_workers: int = 1):
    """Evaluate every (train ratio, augmentation factor) cell.

    Returns a list of (ratio, factor, Metrics) in row-major grid order.
    Cells are independent; with max_workers > 1 they run on a thread pool
    and are re-sorted afterwards, so output order is deterministic.
    """
    cells = [(r, f) for r in ratios for f in factors]

    def run_cell(cell):
        r, f = cell
        metrics, _ = finetune(checkpoint, target_ds, r, f, net_config, train_config, bones)
        return (r, f, metrics)

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run_cell, cells))   # map preserves cell order
    else:
        results = [run_cell(c) for c in cells]
    return results


# ---------------------------------------------------------------------------
# config files

def load_config_text(text: str) -> tuple[NetworkConfig, TrainConfig]:
    """Single key=value file holding both network and training settings."""
    train_kwargs = {}
    net_fields = NetworkConfig.__dataclass_fields__
    train_fields = TrainConfig.__dataclass_fields__
    net_lines, rest = [], []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got '{raw}'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in net_fields:
            net_lines.append(line)
        elif key in train_fields:
            rest.append((ln, key, value))
        else:
            raise ValueError(f"config line {ln}: unknown key '{key}'")
    net_config = NetworkConfig.from_text("\n".join(net_lines)) if net_lines else NetworkConfig()
    for ln, key, value in rest:
        if key == "lr_drop_epochs":
            train_kwargs[key] = tuple(int(v) for v in value.split(","))
        elif key in ("lr", "lr_drop_factor", "momentum", "val_ratio"):
            train_kwargs[key] = float(value)
        else:
            train_kwargs[key] = int(value)
    return net_config, TrainConfig(**train_kwargs)


def load_config(path) -> tuple[NetworkConfig, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        return load_config_text(fh.read())
