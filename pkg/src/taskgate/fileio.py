"""Bit-exact dataset files: CXFE feature matrices, CXLB label matrices,
and the plain-text task manifest that ties splits together.

Layouts (little-endian):
  CXFE: magic "CXFE", version u16, d u32, N u64, N*d float32 row-major.
  CXLB: magic "CXLB", version u16, C u32, N u64, N*C int8 label codes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import VALID_LABEL_CODES, Split, TaskDataset, TaskSplits

FEATURE_MAGIC = b"CXFE"
LABEL_MAGIC = b"CXLB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<HIQ")  # version, width, rows


class FormatError(ValueError):
    """Malformed CXFE/CXLB payload or manifest."""


def write_features(path: Path | str, features: np.ndarray) -> None:
    features = np.ascontiguousarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise FormatError("feature matrix must be 2-D")
    if not np.all(np.isfinite(features)):
        raise FormatError("refusing to write non-finite feature entries")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, d, n))
        fh.write(features.astype("<f4").tobytes())


def read_features(path: Path | str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    d, n, payload = _split_payload(path, raw, FEATURE_MAGIC, "feature")
    expected = n * d * 4
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload, header declares {n} rows of {d} floats "
            f"({expected} bytes) but {len(payload)} bytes remain"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    features = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    if not np.all(np.isfinite(features)):
        raise FormatError(f"{path}: non-finite feature entries")
    return np.ascontiguousarray(features, dtype=np.float32)


def write_labels(path: Path | str, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.int8)
    if labels.ndim != 2:
        raise FormatError("label matrix must be 2-D")
    if not np.isin(labels, list(VALID_LABEL_CODES)).all():
        raise FormatError("refusing to write unknown label codes")
    n, c = labels.shape
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, c, n))
        fh.write(labels.tobytes())


def read_labels(path: Path | str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    c, n, payload = _split_payload(path, raw, LABEL_MAGIC, "label")
    expected = n * c
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload, header declares {n} rows of {c} codes "
            f"but {len(payload)} bytes remain"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    labels = np.frombuffer(payload, dtype=np.int8).reshape(n, c)
    bad = ~np.isin(labels, list(VALID_LABEL_CODES))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise FormatError(
            f"{path}: unknown label code {int(labels[i, j])} at row {i}, col {j}"
        )
    return np.ascontiguousarray(labels)


def _split_payload(
    path: Path | str, raw: bytes, magic: bytes, kind: str
) -> tuple[int, int, bytes]:
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    header = raw[4 : 4 + _HEADER.size]
    if len(header) < _HEADER.size:
        raise FormatError(f"{path}: truncated {kind} header")
    version, width, rows = _HEADER.unpack(header)
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported {kind} format version {version}, "
            f"expected {FORMAT_VERSION}"
        )
    return width, rows, raw[4 + _HEADER.size :]


def write_dataset(dataset: TaskDataset, directory: Path | str) -> tuple[Path, Path]:
    """Write one split's cxfe/cxlb pair; returns the two paths."""
    dataset.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = dataset.split.value
    fpath = directory / f"{stem}.features.cxfe"
    lpath = directory / f"{stem}.labels.cxlb"
    write_features(fpath, dataset.features)
    write_labels(lpath, dataset.labels)
    return fpath, lpath


def write_task(task: TaskSplits, directory: Path | str) -> Path:
    """Write all splits plus manifest.txt; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in task.class_names:
        if "," in name:
            raise FormatError(f"class name {name!r} must not contain a comma")
    lines = [
        "# taskgate dataset manifest",
        f"name = {task.name}",
        f"task_id = {task.task_id}",
        f"classes = {', '.join(task.class_names)}",
    ]
    for ds in task.all_splits():
        fpath, lpath = write_dataset(ds, directory)
        lines.append(f"{ds.split.value}.features = {fpath.name}")
        lines.append(f"{ds.split.value}.labels = {lpath.name}")
    manifest = directory / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def parse_manifest_text(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise FormatError(f"manifest line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def read_task(manifest_path: Path | str) -> TaskSplits:
    manifest_path = Path(manifest_path)
    entries = parse_manifest_text(manifest_path.read_text(encoding="utf-8"))
    for key in ("name", "task_id", "classes"):
        if key not in entries:
            raise FormatError(f"{manifest_path}: missing manifest key '{key}'")
    name = entries["name"]
    task_id = int(entries["task_id"])
    class_names = [c.strip() for c in entries["classes"].split(",") if c.strip()]
    base = manifest_path.parent
    datasets: dict[Split, TaskDataset] = {}
    for split in Split:
        fkey, lkey = f"{split.value}.features", f"{split.value}.labels"
        if fkey not in entries and lkey not in entries:
            continue
        if fkey not in entries or lkey not in entries:
            raise FormatError(
                f"{manifest_path}: split '{split.value}' needs both features and labels"
            )
        features = read_features(base / entries[fkey])
        labels = read_labels(base / entries[lkey])
        if labels.shape[1] != len(class_names):
            raise FormatError(
                f"{manifest_path}: {split.value} labels have {labels.shape[1]} "
                f"columns but manifest lists {len(class_names)} classes"
            )
        datasets[split] = TaskDataset(
            task_id=task_id,
            name=name,
            class_names=class_names,
            features=features,
            labels=labels,
            split=split,
        )
    if Split.TRAIN not in datasets or Split.TEST not in datasets:
        raise FormatError(f"{manifest_path}: manifest must provide train and test splits")
    return TaskSplits(
        train=datasets[Split.TRAIN],
        test=datasets[Split.TEST],
        val=datasets.get(Split.VAL),
    )
