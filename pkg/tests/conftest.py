import numpy as np
import pytest

from stt.bvh import (BvhDocument, BvhJoint, euler_to_matrix, local_transform)

ROT_ORDERS = ("XYZ", "ZXY", "ZYX", "YXZ", "XZY", "YZX")


def random_document(rng, max_joints=72, max_depth=6, frames=10, root_translation=True):
    """Random joint tree with random rotation orders and motion."""
    n_joints = int(rng.integers(2, max_joints + 1))
    joints = []
    depths = []
    for i in range(n_joints):
        if i == 0:
            parent = None
            depth = 0
        else:
            candidates = [j for j in range(i) if depths[j] < max_depth]
            parent = int(rng.choice(candidates))
            depth = depths[parent] + 1
        depths.append(depth)
        order = ROT_ORDERS[int(rng.integers(len(ROT_ORDERS)))]
        channels = tuple(f"{ax}rotation" for ax in order)
        if i == 0 and root_translation:
            channels = ("Xposition", "Yposition", "Zposition") + channels
        offset = rng.uniform(-10, 10, 3)
        joints.append(BvhJoint(f"j{i}", parent, offset, channels))
    total = sum(len(j.channels) for j in joints)
    motion = rng.uniform(-180, 180, (frames, total))
    return BvhDocument(tuple(joints), frames, 1 / 30, motion)


def fk_oracle(doc, frame):
    """Unmemoized FK: full ancestor chain product per joint, scalar math."""
    row = doc.motion[frame]
    offs = doc.channel_offsets
    locals_ = []
    for i, j in enumerate(doc.joints):
        trans = j.offset.copy()
        order = ""
        angles = []
        for k, ch in enumerate(j.channels):
            val = row[offs[i] + k]
            if ch.endswith("position"):
                trans["XYZ".index(ch[0])] += val
            else:
                order += ch[0]
                angles.append(val)
        rot = euler_to_matrix(angles, order) if order else np.eye(3)
        locals_.append(local_transform(rot, trans))
    out = []
    for i, j in enumerate(doc.joints):
        if j.is_end_site:
            continue
        chain = []
        k = i
        while k is not None:
            chain.append(k)
            k = doc.joints[k].parent
        m = np.eye(4)
        for k in reversed(chain):
            m = m @ locals_[k]
        out.append((m @ np.array([0.0, 0.0, 0.0, 1.0]))[:3])
    return np.array(out)


# 72-joint Axis Neuron style rig used by retargeting tests

def axis72_names():
    names = [
        ("Hips", None), ("RightUpLeg", "Hips"), ("RightLeg", "RightUpLeg"),
        ("RightFoot", "RightLeg"), ("RightToe", "RightFoot"),
        ("LeftUpLeg", "Hips"), ("LeftLeg", "LeftUpLeg"),
        ("LeftFoot", "LeftLeg"), ("LeftToe", "LeftFoot"),
        ("Spine", "Hips"), ("Spine1", "Spine"), ("Spine2", "Spine1"),
        ("Spine3", "Spine2"), ("Neck", "Spine3"), ("Neck1", "Neck"), ("Head", "Neck1"),
    ]
    for side in ("Right", "Left"):
        names += [
            (f"{side}Shoulder", "Spine3"),
            (f"{side}Arm", f"{side}Shoulder"),
            (f"{side}ForeArm", f"{side}Arm"),
            (f"{side}Hand", f"{side}ForeArm"),
        ]
        for finger in ("Thumb", "Index", "Middle", "Ring", "Pinky"):
            parent = f"{side}Hand"
            if finger != "Thumb":
                names.append((f"{side}InHand{finger}", f"{side}Hand"))
                parent = f"{side}InHand{finger}"
            for seg in range(1, 5):
                name = f"{side}Hand{finger}{seg}"
                names.append((name, parent))
                parent = name
    return names


def make_axis72_document(rng, frames=8):
    names = axis72_names()
    assert len(names) == 72
    index = {}
    joints = []
    for i, (name, parent_name) in enumerate(names):
        index[name] = i
        parent = index[parent_name] if parent_name else None
        channels = tuple(f"{ax}rotation" for ax in "YXZ")
        if parent is None:
            channels = ("Xposition", "Yposition", "Zposition") + channels
        joints.append(BvhJoint(name, parent, rng.uniform(-15, 15, 3), channels))
    total = sum(len(j.channels) for j in joints)
    motion = rng.uniform(-45, 45, (frames, total))
    return BvhDocument(tuple(joints), frames, 1 / 60, motion)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
