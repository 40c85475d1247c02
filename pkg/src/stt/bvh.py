"""BVH motion-capture ingest: parsing, forward kinematics, retargeting.

A BVH file has two sections: HIERARCHY describes the joint tree (names,
offsets, channel lists) and MOTION holds one row of channel values per
frame.  World-space joint coordinates fall out of chaining per-joint
4x4 transforms from the root down.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

POSITION_CHANNELS = ("Xposition", "Yposition", "Zposition")
ROTATION_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
VALID_CHANNELS = POSITION_CHANNELS + ROTATION_CHANNELS


class BvhError(ValueError):
    """Malformed BVH input. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class BvhJoint:
    name: str
    parent: int | None          # index into BvhDocument.joints, None for root
    offset: np.ndarray          # (3,) float64, file units
    channels: tuple[str, ...]   # ordered channel names, empty for end sites
    is_end_site: bool = False

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64))
        if self.is_end_site and self.channels:
            raise BvhError(f"end site '{self.name}' must not declare channels")
        for ch in self.channels:
            if ch not in VALID_CHANNELS:
                raise BvhError(f"unknown channel '{ch}' on joint '{self.name}'")


@dataclass(frozen=True)
class BvhDocument:
    joints: tuple[BvhJoint, ...]
    frame_count: int
    frame_time: float
    motion: np.ndarray          # (frame_count, total_channels) float64

    def __post_init__(self):
        object.__setattr__(self, "motion", np.asarray(self.motion, dtype=np.float64))
        roots = [i for i, j in enumerate(self.joints) if j.parent is None]
        if len(roots) != 1:
            raise BvhError(f"expected exactly one root joint, found {len(roots)}")
        for i, j in enumerate(self.joints):
            if j.parent is not None and not (0 <= j.parent < i):
                raise BvhError(f"joint {i} ('{j.name}') parent index {j.parent} not topological")
        total = self.total_channels
        if self.motion.shape != (self.frame_count, total):
            raise BvhError(
                f"motion shape {self.motion.shape} does not match "
                f"frames={self.frame_count} channels={total}"
            )

    @property
    def total_channels(self) -> int:
        return sum(len(j.channels) for j in self.joints)

    @property
    def channel_offsets(self) -> list[int]:
        """Start index of each joint's channel slice in a motion row."""
        offs, acc = [], 0
        for j in self.joints:
            offs.append(acc)
            acc += len(j.channels)
        return offs

    def joint_index(self, name: str) -> int:
        for i, j in enumerate(self.joints):
            if not j.is_end_site and j.name == name:
                return i
        raise KeyError(f"no joint named '{name}'")


@dataclass(frozen=True)
class JointMapping:
    """Target layout definition: target slot -> source joint name."""

    entries: tuple[tuple[int, str], ...]
    v_out: int

    def __post_init__(self):
        targets = sorted(t for t, _ in self.entries)
        if targets != list(range(self.v_out)):
            raise ValueError(
                f"mapping targets must cover 0..{self.v_out - 1} exactly once, got {targets}"
            )

    def validate_against(self, doc: BvhDocument):
        names = {j.name for j in doc.joints if not j.is_end_site}
        for _, src in self.entries:
            if src not in names:
                raise KeyError(f"mapping references unknown joint '{src}'")


# ---------------------------------------------------------------------------
# parsing

class _TokenStream:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for ln, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, ln))
        self.pos = 0

    def peek(self):
        if self.pos >= len(self.items):
            raise BvhError("unexpected end of file")
        return self.items[self.pos]

    def next(self, expect: str | None = None) -> str:
        tok, ln = self.peek()
        self.pos += 1
        if expect is not None and tok.upper() != expect.upper():
            raise BvhError(f"expected '{expect}', got '{tok}'", ln)
        return tok

    def next_float(self) -> float:
        tok, ln = self.peek()
        self.pos += 1
        try:
            return float(tok)
        except ValueError:
            raise BvhError(f"expected a number, got '{tok}'", ln) from None

    def next_int(self) -> int:
        tok, ln = self.peek()
        self.pos += 1
        try:
            return int(tok)
        except ValueError:
            raise BvhError(f"expected an integer, got '{tok}'", ln) from None

    @property
    def line(self) -> int:
        if self.pos < len(self.items):
            return self.items[self.pos][1]
        return self.items[-1][1] if self.items else 0


def _parse_joint_body(ts: _TokenStream, joints: list[BvhJoint], name: str, parent: int | None):
    ts.next("{")
    ts.next("OFFSET")
    offset = np.array([ts.next_float() for _ in range(3)])
    tok, ln = ts.peek()
    channels: tuple[str, ...] = ()
    if tok.upper() == "CHANNELS":
        ts.next()
        n = ts.next_int()
        chans = []
        for _ in range(n):
            ch, cl = ts.peek()
            ts.next()
            if ch not in VALID_CHANNELS:
                raise BvhError(f"unknown channel '{ch}'", cl)
            chans.append(ch)
        channels = tuple(chans)
    joints.append(BvhJoint(name, parent, offset, channels))
    my_index = len(joints) - 1

    while True:
        tok, ln = ts.peek()
        up = tok.upper()
        if up == "JOINT":
            ts.next()
            child = ts.next()
            _parse_joint_body(ts, joints, child, my_index)
        elif up == "END":
            ts.next()
            ts.next("Site")
            ts.next("{")
            ts.next("OFFSET")
            end_off = np.array([ts.next_float() for _ in range(3)])
            joints.append(BvhJoint(f"{name}_end", my_index, end_off, (), is_end_site=True))
            ts.next("}")
        elif up == "}":
            ts.next()
            return
        else:
            raise BvhError(f"unexpected token '{tok}' in joint body", ln)


def parse_bvh(text: str) -> BvhDocument:
    """Parse BVH text into a document; raises BvhError with line numbers."""
    ts = _TokenStream(text)
    ts.next("HIERARCHY")
    ts.next("ROOT")
    root_name = ts.next()
    joints: list[BvhJoint] = []
    _parse_joint_body(ts, joints, root_name, None)

    ts.next("MOTION")
    ts.next("Frames:")
    frame_count = ts.next_int()
    ts.next("Frame")
    ts.next("Time:")
    frame_time = ts.next_float()

    total = sum(len(j.channels) for j in joints)
    values = []
    while ts.pos < len(ts.items):
        values.append(ts.next_float())
    if frame_count <= 0 or not values:
        raise BvhError("empty motion section")
    if len(values) % total != 0:
        raise BvhError(
            f"motion data length {len(values)} is not a multiple of channel count {total}"
        )
    rows = len(values) // total
    if rows != frame_count:
        raise BvhError(f"frame count mismatch: header declares {frame_count}, found {rows} rows")
    motion = np.array(values, dtype=np.float64).reshape(frame_count, total)
    return BvhDocument(tuple(joints), frame_count, frame_time, motion)


def write_bvh(doc: BvhDocument) -> str:
    """Re-emit a document as BVH text (canonical %.6f floats)."""
    out = io.StringIO()
    out.write("HIERARCHY\n")
    children: dict[int, list[int]] = {}
    for i, j in enumerate(doc.joints):
        if j.parent is not None:
            children.setdefault(j.parent, []).append(i)

    def emit(idx: int, depth: int):
        j = doc.joints[idx]
        pad = "  " * depth
        if j.is_end_site:
            out.write(f"{pad}End Site\n{pad}{{\n")
            out.write(f"{pad}  OFFSET {j.offset[0]:.6f} {j.offset[1]:.6f} {j.offset[2]:.6f}\n")
            out.write(f"{pad}}}\n")
            return
        kw = "ROOT" if j.parent is None else "JOINT"
        out.write(f"{pad}{kw} {j.name}\n{pad}{{\n")
        out.write(f"{pad}  OFFSET {j.offset[0]:.6f} {j.offset[1]:.6f} {j.offset[2]:.6f}\n")
        if j.channels:
            out.write(f"{pad}  CHANNELS {len(j.channels)} {' '.join(j.channels)}\n")
        for c in children.get(idx, []):
            emit(c, depth + 1)
        out.write(f"{pad}}}\n")

    emit(0, 0)
    out.write("MOTION\n")
    out.write(f"Frames: {doc.frame_count}\n")
    out.write(f"Frame Time: {doc.frame_time:.6f}\n")
    for row in doc.motion:
        out.write(" ".join(f"{v:.6f}" for v in row) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# kinematics

def _axis_matrix(axis: str, angle_rad: float | np.ndarray) -> np.ndarray:
    """Single-axis rotation matrix; vectorized over a trailing angle array."""
    a = np.asarray(angle_rad, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(c), np.zeros_like(c)
    if axis == "X":
        rows = [[one, zero, zero], [zero, c, -s], [zero, s, c]]
    elif axis == "Y":
        rows = [[c, zero, s], [zero, one, zero], [-s, zero, c]]
    elif axis == "Z":
        rows = [[c, -s, zero], [s, c, zero], [zero, zero, one]]
    else:
        raise ValueError(f"bad axis '{axis}'")
    m = np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
    return m


def euler_to_matrix(angles_deg, order: str) -> np.ndarray:
    """Compose R = R_o0(a0) @ R_o1(a1) @ R_o2(a2) for channel order `order`.

    `order` is a 3-letter permutation of XYZ as declared by the joint's
    rotation channels; angles are degrees in that same order.
    """
    if sorted(order.upper()) != ["X", "Y", "Z"]:
        raise ValueError(f"order must be a permutation of XYZ, got '{order}'")
    angles = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    r = np.eye(3)
    for axis, ang in zip(order.upper(), angles):
        r = r @ _axis_matrix(axis, ang)
    return r


def local_transform(rotation: np.ndarray, translation) -> np.ndarray:
    """4x4 homogeneous transform embedding a rotation and a translation."""
    m = np.eye(4, dtype=np.float64)
    m[:3, :3] = rotation
    m[:3, 3] = np.asarray(translation, dtype=np.float64)
    return m


def _joint_local_transforms(doc: BvhDocument, joint: int, frames: np.ndarray) -> np.ndarray:
    """Local 4x4 transforms of one joint for the given frame rows, shape (F,4,4)."""
    j = doc.joints[joint]
    n = frames.shape[0]
    trans = np.broadcast_to(j.offset, (n, 3)).copy()
    rot_axes, rot_vals = [], []
    off = doc.channel_offsets[joint]
    for k, ch in enumerate(j.channels):
        col = frames[:, off + k]
        if ch in POSITION_CHANNELS:
            trans[:, POSITION_CHANNELS.index(ch)] += col
        else:
            rot_axes.append(ch[0])
            rot_vals.append(col)
    m = np.tile(np.eye(4), (n, 1, 1))
    r = np.tile(np.eye(3), (n, 1, 1))
    for axis, vals in zip(rot_axes, rot_vals):
        r = r @ _axis_matrix(axis, np.deg2rad(vals))
    m[:, :3, :3] = r
    m[:, :3, 3] = trans
    return m


def _world_transforms(doc: BvhDocument, frames: np.ndarray) -> list[np.ndarray]:
    """Memoized FK: per joint, world transforms (F,4,4), parents before children."""
    world: list[np.ndarray] = []
    for i, j in enumerate(doc.joints):
        local = _joint_local_transforms(doc, i, frames)
        if j.parent is None:
            world.append(local)
        else:
            world.append(world[j.parent] @ local)
    return world


def forward_kinematics(doc: BvhDocument, frame: int) -> np.ndarray:
    """World positions of all non-end-site joints at one frame, shape (V, 3)."""
    if not (0 <= frame < doc.frame_count):
        raise IndexError(f"frame {frame} out of range [0, {doc.frame_count})")
    world = _world_transforms(doc, doc.motion[frame : frame + 1])
    pos = [w[0, :3, 3] for w, j in zip(world, doc.joints) if not j.is_end_site]
    return np.array(pos)


def all_frame_positions(doc: BvhDocument, joint_indices=None) -> np.ndarray:
    """World positions for every frame at once, shape (T, V, 3)."""
    world = _world_transforms(doc, doc.motion)
    if joint_indices is None:
        joint_indices = [i for i, j in enumerate(doc.joints) if not j.is_end_site]
    return np.stack([world[i][:, :3, 3] for i in joint_indices], axis=1)


def retarget(doc: BvhDocument, mapping: JointMapping):
    """Map FK world positions onto the target joint layout.

    Returns a SkeletonSequence of shape (3, T, V_out) with channels (x, y, z).
    """
    from .sequence import SkeletonSequence

    mapping.validate_against(doc)
    order = [None] * mapping.v_out
    for tgt, src in mapping.entries:
        order[tgt] = doc.joint_index(src)
    pos = all_frame_positions(doc, order)           # (T, V_out, 3)
    data = pos.transpose(2, 0, 1).astype(np.float32)
    return SkeletonSequence(data=data, label=0, layout="custom")


# ---------------------------------------------------------------------------
# mapping files

def parse_mapping(text: str) -> JointMapping:
    """Mapping file: one `<target_index> <source_joint_name>` per line, # comments."""
    entries = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ValueError(f"mapping line {ln}: expected '<index> <name>', got '{raw}'")
        try:
            idx = int(parts[0])
        except ValueError:
            raise ValueError(f"mapping line {ln}: bad target index '{parts[0]}'") from None
        entries.append((idx, parts[1].strip()))
    if not entries:
        raise ValueError("empty mapping file")
    v_out = max(t for t, _ in entries) + 1
    return JointMapping(tuple(entries), v_out)


def load_mapping(path) -> JointMapping:
    with open(path, encoding="utf-8") as fh:
        return parse_mapping(fh.read())
