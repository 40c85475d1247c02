"""Spatial transformer action recognition network.

Per block: joint self-attention (multi-head, with a trainable positional
pair bias and a trainable partitioned skeleton adjacency) followed by a
temporal convolution, each with batch norm, ReLU and a residual path.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .nn import BatchNorm2d, Conv2dTemporal, Linear, Module, uniform_init

CKPT_MAGIC = b"CKPT1"


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int = 49
    num_joints: int = 25
    frames: int = 64
    in_channels: int = 3
    block_channels: tuple[int, ...] = (64, 64, 64, 128, 128, 128, 256, 256, 256)
    block_strides: tuple[int, ...] = (1, 1, 1, 2, 1, 1, 2, 1, 1)
    temporal_kernel: int = 9
    num_heads: int = 8
    head_dim_ratio: float = 0.25
    channel_scale: int = 1          # divisor applied to block channels for desk-scale runs
    fusion: str = "post"            # adjacency added pre- or post-softmax
    adjacency_trainable: bool = True

    def __post_init__(self):
        if len(self.block_channels) != len(self.block_strides):
            raise ValueError("block_channels and block_strides length mismatch")
        if any(s not in (1, 2) for s in self.block_strides):
            raise ValueError("block strides must be 1 or 2")
        if self.fusion not in ("pre", "post"):
            raise ValueError(f"fusion must be 'pre' or 'post', got '{self.fusion}'")
        if self.channel_scale < 1:
            raise ValueError("channel_scale must be >= 1")

    @property
    def scaled_channels(self) -> tuple[int, ...]:
        return tuple(max(1, c // self.channel_scale) for c in self.block_channels)

    def to_text(self) -> str:
        lines = []
        for key, value in vars(self).items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        kwargs = {}
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {ln}: expected key=value, got '{raw}'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in cls.__dataclass_fields__:
                raise ValueError(f"config line {ln}: unknown key '{key}'")
            ftype = cls.__dataclass_fields__[key].type
            if key in ("block_channels", "block_strides"):
                kwargs[key] = tuple(int(v) for v in value.split(","))
            elif key == "head_dim_ratio":
                kwargs[key] = float(value)
            elif key == "fusion":
                kwargs[key] = value
            elif key == "adjacency_trainable":
                kwargs[key] = value.lower() in ("1", "true", "yes")
            else:
                kwargs[key] = int(value)
            del ftype
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# adjacency

def build_adjacency(bones, num_joints: int, root: int = 0) -> np.ndarray:
    """Partitioned skeleton adjacency, shape (3, V, V).

    Slices: self-loops; edges toward the root (centripetal, child row ->
    parent column); edges away from the root (centrifugal).  Each slice is
    symmetrically normalized by its degree vector with a 1e-6 guard.
    """
    seen = set()
    edges = []
    for a, b in bones:
        if not (0 <= a < num_joints and 0 <= b < num_joints):
            raise ValueError(f"bone ({a}, {b}) out of range for {num_joints} joints")
        key = (min(a, b), max(a, b))
        if key in seen:
            warnings.warn(f"duplicate bone {key} ignored")
            continue
        seen.add(key)
        edges.append(key)

    # orient edges by BFS distance from the root
    neighbors: dict[int, list[int]] = {i: [] for i in range(num_joints)}
    for a, b in edges:
        neighbors[a].append(b)
        neighbors[b].append(a)
    depth = {root: 0}
    queue = [root]
    while queue:
        cur = queue.pop(0)
        for nb in neighbors[cur]:
            if nb not in depth:
                depth[nb] = depth[cur] + 1
                queue.append(nb)

    a = np.zeros((3, num_joints, num_joints))
    a[0] = np.eye(num_joints)
    for u, v in edges:
        du, dv = depth.get(u, 0), depth.get(v, 0)
        child, parent = (u, v) if du >= dv else (v, u)
        a[1, child, parent] = 1.0    # centripetal: toward the root
        a[2, parent, child] = 1.0    # centrifugal: away from the root
    return np.stack([_sym_normalize(a[k]) for k in range(3)])


def _sym_normalize(adj: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    deg = adj.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg + eps)
    return adj * inv_sqrt[:, None] * inv_sqrt[None, :]


# ---------------------------------------------------------------------------
# layers

class SpatialAttention(Module):
    """Multi-head self-attention over joints within each frame.

    The positional pair bias P is added to the pre-softmax logits; the
    summed adjacency partitions are added either pre-softmax (fusion="pre")
    or to the post-softmax attention matrix (fusion="post", default).
    """

    def __init__(self, in_channels: int, out_channels: int, num_heads: int, head_dim: int,
                 pos_bias: Parameter, adjacency: Tensor, fusion: str,
                 rng: np.random.Generator, name: str, dtype=np.float32):
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.pos_bias = pos_bias
        self.adjacency = adjacency
        self.fusion = fusion
        width = num_heads * head_dim
        self.w_query = Parameter(uniform_init(rng, (in_channels, width), in_channels, dtype),
                                 name=f"{name}.w_query")
        self.w_key = Parameter(uniform_init(rng, (in_channels, width), in_channels, dtype),
                               name=f"{name}.w_key")
        self.w_value = Parameter(uniform_init(rng, (in_channels, width), in_channels, dtype),
                                 name=f"{name}.w_value")
        self.proj = Linear(width, out_channels, rng, name=f"{name}.proj", dtype=dtype)

    def _heads(self, x: Tensor, w: Parameter, nt: int, v: int) -> Tensor:
        y = ad.matmul(x, w)                                   # (NT, V, H*d)
        y = ad.reshape(y, (nt, v, self.num_heads, self.head_dim))
        return ad.transpose(y, (0, 2, 1, 3))                  # (NT, H, V, d)

    def __call__(self, x: Tensor) -> Tensor:
        nt, v, _ = x.shape
        q = self._heads(x, self.w_query, nt, v)
        k = self._heads(x, self.w_key, nt, v)
        val = self._heads(x, self.w_value, nt, v)
        logits = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
        logits = ad.mul(logits, ad._wrap(1.0 / np.sqrt(self.head_dim), logits.dtype))
        logits = ad.add(logits, self.pos_bias)
        adj = ad.tsum(self.adjacency, axis=0)                 # (V, V)
        if self.fusion == "pre":
            attn = ad.softmax(ad.add(logits, adj), axis=-1)
            mix = attn
        else:
            attn = ad.softmax(logits, axis=-1)
            mix = ad.add(attn, adj)
        out = ad.matmul(mix, val)                             # (NT, H, V, d)
        out = ad.transpose(out, (0, 2, 1, 3))
        out = ad.reshape(out, (nt, v, self.num_heads * self.head_dim))
        return self.proj(out)

    def attention_matrix(self, x: Tensor) -> np.ndarray:
        """Post-softmax attention rows (NT, H, V, V); diagnostics only."""
        nt, v, _ = x.shape
        q = self._heads(x, self.w_query, nt, v)
        k = self._heads(x, self.w_key, nt, v)
        logits = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
        logits = ad.mul(logits, ad._wrap(1.0 / np.sqrt(self.head_dim), logits.dtype))
        logits = ad.add(logits, self.pos_bias)
        if self.fusion == "pre":
            logits = ad.add(logits, ad.tsum(self.adjacency, axis=0))
        return ad.softmax(logits, axis=-1).data


class STBlock(Module):
    """Spatial attention branch followed by a temporal convolution branch,
    each normalized, rectified, and wrapped with a residual connection."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, kernel_t: int,
                 num_heads: int, head_dim: int, pos_bias: Parameter, adjacency: Tensor,
                 fusion: str, rng: np.random.Generator, name: str, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.attention = SpatialAttention(in_channels, out_channels, num_heads, head_dim,
                                          pos_bias, adjacency, fusion, rng,
                                          name=f"{name}.attention", dtype=dtype)
        self.bn_spatial = BatchNorm2d(out_channels, name=f"{name}.bn_spatial", dtype=dtype)
        self.spatial_residual = None
        if in_channels != out_channels:
            self.spatial_residual = Conv2dTemporal(in_channels, out_channels, 1, 1, rng,
                                                   name=f"{name}.spatial_residual", dtype=dtype)
        self.tcn = Conv2dTemporal(out_channels, out_channels, kernel_t, stride, rng,
                                  name=f"{name}.tcn", dtype=dtype)
        self.bn_temporal = BatchNorm2d(out_channels, name=f"{name}.bn_temporal", dtype=dtype)
        self.temporal_residual = None
        if stride != 1:
            self.temporal_residual = Conv2dTemporal(out_channels, out_channels, 1, stride, rng,
                                                    name=f"{name}.temporal_residual", dtype=dtype)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        n, c, t, v = x.shape
        xs = ad.transpose(x, (0, 2, 3, 1))
        xs = ad.reshape(xs, (n * t, v, c))
        y = self.attention(xs)
        y = ad.reshape(y, (n, t, v, self.out_channels))
        y = ad.transpose(y, (0, 3, 1, 2))
        y = self.bn_spatial(y, train)
        res = x if self.spatial_residual is None else self.spatial_residual(x)
        y = ad.relu(ad.add(y, res))

        z = self.bn_temporal(self.tcn(y), train)
        res_t = y if self.temporal_residual is None else self.temporal_residual(y)
        z = ad.relu(ad.add(z, res_t))
        return z


class SpatialTransformerNet(Module):
    def __init__(self, config: NetworkConfig, bones, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng([seed])
        v = config.num_joints
        adj0 = build_adjacency(bones, v).astype(dtype)
        if config.adjacency_trainable:
            self.adjacency = Parameter(adj0, name="adjacency")
        else:
            self.adjacency = Tensor(adj0, requires_grad=False)
        self.pos_bias = Parameter(np.zeros((v, v), dtype=dtype), name="pos_bias")
        self.data_bn = BatchNorm2d(config.in_channels * v, name="data_bn", dtype=dtype)
        channels = config.scaled_channels
        blocks = []
        c_in = config.in_channels
        for i, (c_out, stride) in enumerate(zip(channels, config.block_strides)):
            head_dim = max(1, int(config.head_dim_ratio * c_out))
            blocks.append(STBlock(c_in, c_out, stride, config.temporal_kernel,
                                  config.num_heads, head_dim, self.pos_bias, self.adjacency,
                                  config.fusion, rng, name=f"block{i}", dtype=dtype))
            c_in = c_out
        self.blocks = blocks
        self.fc = Linear(c_in, config.num_classes, rng, name="fc", dtype=dtype)

    # -- forward -----------------------------------------------------------

    def _input_bn(self, x: Tensor, train: bool) -> Tensor:
        n, c, t, v = x.shape
        y = ad.transpose(x, (0, 1, 3, 2))             # (N, C, V, T)
        y = ad.reshape(y, (n, c * v, t, 1))
        y = self.data_bn(y, train)
        y = ad.reshape(y, (n, c, v, t))
        return ad.transpose(y, (0, 1, 3, 2))

    def features(self, x, train: bool = False) -> Tensor:
        """Pooled backbone features, shape (N, C_last)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype), requires_grad=False)
        y = self._input_bn(x, train)
        for block in self.blocks:
            y = block(y, train)
        return ad.tmean(y, axis=(2, 3))

    def __call__(self, x, train: bool = False) -> Tensor:
        return self.fc(self.features(x, train))

    def predict_proba(self, x) -> np.ndarray:
        logits = self(x, train=False)
        return ad.softmax(logits, axis=-1).data

    # -- parameter snapshotting --------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {p.name: p.data.copy() for p in self.named_parameters()}
        for mod in self.modules():
            if isinstance(mod, BatchNorm2d):
                state[f"{mod.name}.running_mean"] = mod.running_mean.copy()
                state[f"{mod.name}.running_var"] = mod.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        params = {p.name: p for p in self.named_parameters()}
        loaded = set()
        for name, p in params.items():
            if name not in state:
                if strict:
                    raise KeyError(f"checkpoint missing parameter '{name}'")
                continue
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for '{name}': {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()
            loaded.add(name)
        for mod in self.modules():
            if isinstance(mod, BatchNorm2d):
                for suffix, target in (("running_mean", "running_mean"),
                                       ("running_var", "running_var")):
                    key = f"{mod.name}.{suffix}"
                    if key in state:
                        setattr(mod, target, np.asarray(state[key], dtype=self.dtype).copy())
                        loaded.add(key)
                    elif strict:
                        raise KeyError(f"checkpoint missing '{key}'")
        if strict:
            extra = set(state) - loaded
            if extra:
                raise KeyError(f"checkpoint has unknown entries: {sorted(extra)}")


def freeze_and_reinit_fc(net: SpatialTransformerNet, new_num_classes: int,
                         seed: int = 0) -> SpatialTransformerNet:
    """Freeze everything except a freshly re-initialized classifier head.

    Batch-norm layers also stop updating running statistics, so the frozen
    backbone is a fixed function.
    """
    for p in net.named_parameters():
        p.frozen = True
    for mod in net.modules():
        if isinstance(mod, BatchNorm2d):
            mod.stats_frozen = True
    rng = np.random.default_rng([seed])
    net.fc = Linear(net.fc.in_features, new_num_classes, rng, name="fc", dtype=net.dtype)
    net.config = replace(net.config, num_classes=new_num_classes)
    return net


# ---------------------------------------------------------------------------
# checkpoint io

def save_checkpoint(state: dict[str, np.ndarray], path):
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape)
            state[name] = data.copy()
    return state
