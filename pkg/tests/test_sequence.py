import numpy as np
import pytest

from stt.sequence import (LabeledDataset, SkeletonSequence, load_dataset,
                          read_skseq, save_dataset, write_skseq)


def make_seq(rng, label=0, t=16):
    return SkeletonSequence(rng.normal(size=(3, t, 25)).astype(np.float32), label=label)


def test_skseq_round_trip(tmp_path, rng):
    seq = make_seq(rng, label=7)
    path = tmp_path / "a.skq"
    write_skseq(seq, path)
    back = read_skseq(path)
    assert back.label == 7
    assert np.array_equal(back.data, seq.data)


def test_skseq_layout_is_little_endian_c_major(tmp_path):
    data = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "b.skq"
    write_skseq(SkeletonSequence(data, label=9, layout="custom"), path)
    raw = path.read_bytes()
    assert raw[:6] == b"SKSEQ1"
    c, t, v, label = np.frombuffer(raw[6:22], dtype="<u4")
    assert (c, t, v, label) == (2, 3, 4, 9)
    assert np.array_equal(np.frombuffer(raw[22:], dtype="<f4"), data.reshape(-1))


def test_skseq_bad_magic(tmp_path):
    path = tmp_path / "bad.skq"
    path.write_bytes(b"NOTSEQ" + b"\0" * 32)
    with pytest.raises(ValueError, match="magic"):
        read_skseq(path)


def test_dataset_dir_round_trip(tmp_path, rng):
    items = tuple(make_seq(rng, label=i % 3) for i in range(9))
    ds = LabeledDataset(items, ("a", "b", "c"))
    save_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.class_names == ("a", "b", "c")
    assert len(back) == 9
    assert sorted(s.label for s in back.items) == sorted(s.label for s in ds.items)
    # per-class payloads survive
    orig = {s.data.tobytes() for s in ds.items}
    assert {s.data.tobytes() for s in back.items} == orig


def test_dataset_rejects_mixed_shapes(rng):
    a = make_seq(rng)
    b = SkeletonSequence(np.zeros((3, 16, 24), dtype=np.float32))
    with pytest.raises(ValueError):
        LabeledDataset((a, b), ("x",))


def test_dataset_rejects_label_outside_catalog(rng):
    with pytest.raises(ValueError):
        LabeledDataset((make_seq(rng, label=5),), ("only",))
