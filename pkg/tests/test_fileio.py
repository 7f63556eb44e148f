import numpy as np
import pytest

from taskgate.data import generate_synthetic
from taskgate.fileio import (
    FormatError,
    read_features,
    read_labels,
    read_task,
    write_features,
    write_labels,
    write_task,
)

from conftest import small_synth


def test_round_trip_is_lossless(tmp_path):
    tasks = generate_synthetic(small_synth(uncertain_fraction=0.2, missing_fraction=0.1))
    for task in tasks:
        manifest = write_task(task, tmp_path / f"task{task.task_id}")
        loaded = read_task(manifest)
        for orig, back in zip(task.all_splits(), loaded.all_splits()):
            assert orig.equals(back)


def test_round_trip_random_matrices(tmp_path):
    gen = np.random.default_rng(99)
    for trial in range(10):
        n, d = int(gen.integers(1, 20)), int(gen.integers(2, 9))
        feats = gen.standard_normal((n, d)).astype(np.float32)
        path = tmp_path / f"f{trial}.cxfe"
        write_features(path, feats)
        assert np.array_equal(read_features(path), feats)


def test_header_layout_is_as_documented(tmp_path):
    feats = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "x.cxfe"
    write_features(path, feats)
    raw = path.read_bytes()
    assert raw[:4] == b"CXFE"
    assert int.from_bytes(raw[4:6], "little") == 1  # version
    assert int.from_bytes(raw[6:10], "little") == 3  # d
    assert int.from_bytes(raw[10:18], "little") == 2  # N
    assert raw[18:] == feats.astype("<f4").tobytes()

    labels = np.array([[0, 1], [-1, -2]], dtype=np.int8)
    lpath = tmp_path / "x.cxlb"
    write_labels(lpath, labels)
    lraw = lpath.read_bytes()
    assert lraw[:4] == b"CXLB"
    assert lraw[18:] == labels.tobytes()


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.cxfe"
    write_features(path, np.zeros((10, 4), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[: 18 + 9 * 4 * 4])  # drop the last row
    with pytest.raises(FormatError, match="truncated"):
        read_features(path)


def test_unknown_label_code_rejected(tmp_path):
    path = tmp_path / "t.cxlb"
    write_labels(path, np.zeros((3, 2), dtype=np.int8))
    raw = bytearray(path.read_bytes())
    raw[-1] = 0x03
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="unknown label code 3"):
        read_labels(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "t.cxfe"
    write_features(path, np.zeros((2, 2), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    swapped = bytes(b"XXXX") + bytes(raw[4:])
    path.write_bytes(swapped)
    with pytest.raises(FormatError, match="bad magic"):
        read_features(path)
    raw[4] = 9  # version low byte
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_features(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.cxfe"
    write_features(path, np.zeros((2, 2), dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        read_features(path)


def test_non_finite_features_rejected(tmp_path):
    path = tmp_path / "t.cxfe"
    with pytest.raises(FormatError, match="non-finite"):
        write_features(path, np.array([[np.inf, 0.0]], dtype=np.float32))
    write_features(path, np.zeros((1, 2), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[18:22] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="non-finite"):
        read_features(path)


def test_manifest_requires_train_and_test(tmp_path):
    tasks = generate_synthetic(small_synth())
    manifest = write_task(tasks[0], tmp_path / "t0")
    text = manifest.read_text()
    manifest.write_text(
        "\n".join(l for l in text.splitlines() if not l.startswith("test.")) + "\n"
    )
    with pytest.raises(FormatError, match="train and test"):
        read_task(manifest)
