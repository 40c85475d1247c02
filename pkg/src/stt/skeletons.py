"""Joint layouts: the 25-joint target skeleton and the 72-joint source rig.

The 25-joint layout follows the Kinect V2 ordering (spine base first);
the 72-joint names follow the Axis Neuron export (full finger chains).
"""

from __future__ import annotations

import os

NTU25_NAMES = (
    "spine_base", "spine_mid", "neck", "head",
    "shoulder_left", "elbow_left", "wrist_left", "hand_left",
    "shoulder_right", "elbow_right", "wrist_right", "hand_right",
    "hip_left", "knee_left", "ankle_left", "foot_left",
    "hip_right", "knee_right", "ankle_right", "foot_right",
    "spine_shoulder",
    "handtip_left", "thumb_left", "handtip_right", "thumb_right",
)

# (child, parent) pairs, 0-based, rooted at spine_base (0)
NTU25_BONES = (
    (1, 0), (20, 1), (2, 20), (3, 2),
    (4, 20), (5, 4), (6, 5), (7, 6), (21, 7), (22, 7),
    (8, 20), (9, 8), (10, 9), (11, 10), (23, 11), (24, 11),
    (12, 0), (13, 12), (14, 13), (15, 14),
    (16, 0), (17, 16), (18, 17), (19, 18),
)

NTU25_ROOT = 0
NTU25_LEFT_HIP = 12
NTU25_RIGHT_HIP = 16

# Rest-pose offsets (cm-ish units) used by the synthetic generator; y is up.
NTU25_REST_OFFSETS = {
    0: (0.0, 90.0, 0.0),
    1: (0.0, 25.0, 0.0),
    20: (0.0, 25.0, 0.0),
    2: (0.0, 10.0, 0.0),
    3: (0.0, 15.0, 0.0),
    4: (-18.0, -3.0, 0.0),
    5: (-28.0, 0.0, 0.0),
    6: (-25.0, 0.0, 0.0),
    7: (-8.0, 0.0, 0.0),
    21: (-7.0, 0.0, 0.0),
    22: (-4.0, 0.0, 4.0),
    8: (18.0, -3.0, 0.0),
    9: (28.0, 0.0, 0.0),
    10: (25.0, 0.0, 0.0),
    11: (8.0, 0.0, 0.0),
    23: (7.0, 0.0, 0.0),
    24: (4.0, 0.0, 4.0),
    12: (-10.0, -5.0, 0.0),
    13: (0.0, -40.0, 0.0),
    14: (0.0, -40.0, 0.0),
    15: (0.0, -5.0, 12.0),
    16: (10.0, -5.0, 0.0),
    17: (0.0, -40.0, 0.0),
    18: (0.0, -40.0, 0.0),
    19: (0.0, -5.0, 12.0),
}


def ntu25_rest_pose():
    """Absolute rest-pose positions, shape (25, 3), accumulated down the tree."""
    import numpy as np

    parent = {c: p for c, p in NTU25_BONES}
    pos = np.zeros((25, 3))
    order = [NTU25_ROOT] + [c for c, _ in NTU25_BONES]
    for j in order:
        off = np.array(NTU25_REST_OFFSETS[j])
        if j == NTU25_ROOT:
            pos[j] = off
        else:
            pos[j] = pos[parent[j]] + off
    return pos


def data_path(name: str) -> str:
    return os.path.join(os.path.dirname(__file__), "data", name)


def load_bones(path) -> tuple[int, tuple[tuple[int, int], ...]]:
    """Bone list file: first line V, then one `parent child` pair per line."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    v = int(lines[0])
    bones = []
    for ln in lines[1:]:
        p, c = ln.split()
        bones.append((int(c), int(p)))
    return v, tuple(bones)


def write_bones(v: int, bones, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{v}\n")
        for child, parent in bones:
            fh.write(f"{parent} {child}\n")
