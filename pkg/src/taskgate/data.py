"""Domain types and the synthetic multi-task generator.

Labels are 4-state per finding: negative / positive / uncertain / missing,
stored as int8 with the serialization codes 0 / 1 / -1 / -2. Features are
stored float32 and promoted to float64 inside the engine.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng


class LabelCode(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    UNCERTAIN = -1
    MISSING = -2


VALID_LABEL_CODES = frozenset(int(c) for c in LabelCode)


class Split(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class DataError(ValueError):
    """Invalid dataset contents or configuration."""


@dataclass
class TaskDataset:
    """One task's samples for a single split.

    features: (N, d) float32, all finite.
    labels:   (N, C) int8 using LabelCode codes.
    """

    task_id: int
    name: str
    class_names: list[str]
    features: np.ndarray
    labels: np.ndarray
    split: Split

    def __post_init__(self) -> None:
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int8)
        self.validate()

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> None:
        if self.task_id < 0:
            raise DataError(f"task_id must be >= 0, got {self.task_id}")
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DataError("features and labels must be 2-D matrices")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"row mismatch: {self.features.shape[0]} feature rows vs "
                f"{self.labels.shape[0]} label rows"
            )
        if self.labels.shape[1] != len(self.class_names):
            raise DataError(
                f"label columns ({self.labels.shape[1]}) != class names "
                f"({len(self.class_names)})"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite entries")
        bad = ~np.isin(self.labels, list(VALID_LABEL_CODES))
        if bad.any():
            i, c = np.argwhere(bad)[0]
            raise DataError(
                f"unknown label code {int(self.labels[i, c])} at row {i}, col {c}"
            )
        if self.split is Split.TRAIN and self.labels.size:
            all_missing = np.all(self.labels == int(LabelCode.MISSING), axis=1)
            if all_missing.any():
                row = int(np.argmax(all_missing))
                raise DataError(f"train sample {row} has no non-missing label")

    def equals(self, other: "TaskDataset") -> bool:
        return (
            self.task_id == other.task_id
            and self.name == other.name
            and self.class_names == other.class_names
            and self.split == other.split
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass
class TaskSplits:
    """Train/val/test datasets for one task. val may be absent for loaded tasks."""

    train: TaskDataset
    test: TaskDataset
    val: TaskDataset | None = None

    @property
    def task_id(self) -> int:
        return self.train.task_id

    @property
    def name(self) -> str:
        return self.train.name

    @property
    def class_names(self) -> list[str]:
        return self.train.class_names

    def all_splits(self) -> list[TaskDataset]:
        out = [self.train]
        if self.val is not None:
            out.append(self.val)
        out.append(self.test)
        return out


@dataclass
class SynthConfig:
    """Synthetic stand-in for frozen-backbone features.

    Samples per task are class-conditional isotropic Gaussians; class means
    sit at class_separation from their task center, task centers mutually
    separated by task_center_separation.
    """

    d: int = 32
    num_tasks: int = 2
    classes_per_task: list[int] = field(default_factory=lambda: [4, 4])
    samples_per_split: list[int] = field(default_factory=lambda: [2000, 500, 500])
    task_center_separation: float = 10.0
    class_separation: float = 2.0
    noise_sigma: float = 1.0
    uncertain_fraction: float = 0.0
    missing_fraction: float = 0.0
    seed: int = 1337

    def validate(self) -> None:
        if self.d < 2:
            raise DataError(f"feature dim must be >= 2, got {self.d}")
        if self.num_tasks < 1:
            raise DataError("need at least one task")
        if self.num_tasks > self.d:
            raise DataError(
                f"num_tasks ({self.num_tasks}) exceeds d ({self.d}); task centers "
                "are placed on distinct axes"
            )
        if len(self.classes_per_task) != self.num_tasks:
            raise DataError(
                f"classes_per_task has {len(self.classes_per_task)} entries for "
                f"{self.num_tasks} tasks"
            )
        if any(c < 1 for c in self.classes_per_task):
            raise DataError("every task needs at least one class")
        if len(self.samples_per_split) != 3:
            raise DataError("samples_per_split must be [train, val, test]")
        if any(n < 1 for n in self.samples_per_split):
            raise DataError("zero samples in a split")
        if self.task_center_separation < 0 or self.class_separation < 0:
            raise DataError("separations must be >= 0")
        if self.noise_sigma <= 0:
            raise DataError("noise_sigma must be > 0")
        for key in ("uncertain_fraction", "missing_fraction"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{key} must lie in [0, 1], got {v}")
        if self.uncertain_fraction + self.missing_fraction > 1.0:
            raise DataError(
                "uncertain_fraction + missing_fraction must be <= 1, got "
                f"{self.uncertain_fraction + self.missing_fraction}"
            )


def task_centers(config: SynthConfig) -> np.ndarray:
    """(K, d) centers with exact pairwise distance task_center_separation."""
    centers = np.zeros((config.num_tasks, config.d))
    scale = config.task_center_separation / math.sqrt(2.0)
    for k in range(config.num_tasks):
        centers[k, k] = scale
    return centers


def class_means(config: SynthConfig, task_id: int) -> np.ndarray:
    """(C_k, d) class means at distance class_separation from the task center."""
    center = task_centers(config)[task_id]
    c = config.classes_per_task[task_id]
    gen = rng.stream(config.seed, "classdir", task_id)
    dirs = gen.standard_normal((c, config.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return center + config.class_separation * dirs


def _corrupt_labels(
    labels: np.ndarray, config: SynthConfig, gen: np.random.Generator, is_train: bool
) -> np.ndarray:
    n, c = labels.shape
    total = n * c
    n_unc = int(round(config.uncertain_fraction * total))
    n_miss = int(round(config.missing_fraction * total))
    perm = gen.permutation(total)
    original = labels.reshape(-1)
    out = original.copy()
    out[perm[:n_unc]] = int(LabelCode.UNCERTAIN)
    out[perm[n_unc : n_unc + n_miss]] = int(LabelCode.MISSING)
    out = out.reshape(n, c)
    if is_train and n_miss:
        # Keep at least one non-missing label per train row: restore one missing
        # cell in each starved row and recode a definite cell elsewhere, so the
        # uncertain/missing counts are preserved exactly.
        missing = int(LabelCode.MISSING)
        starved = np.flatnonzero(np.all(out == missing, axis=1))
        for row in starved:
            non_missing_per_row = np.sum(out != missing, axis=1)
            definite = (out == int(LabelCode.NEGATIVE)) | (
                out == int(LabelCode.POSITIVE)
            )
            donor_rows = np.flatnonzero((non_missing_per_row >= 2) & definite.any(axis=1))
            if donor_rows.size == 0:
                raise DataError(
                    "missing_fraction too high to keep a non-missing label in "
                    "every train row"
                )
            col = int(gen.integers(c))
            out[row, col] = original.reshape(n, c)[row, col]
            donor = int(donor_rows[gen.integers(donor_rows.size)])
            donor_cols = np.flatnonzero(definite[donor])
            out[donor, int(donor_cols[gen.integers(donor_cols.size)])] = missing
    return out


def generate_synthetic(config: SynthConfig) -> list[TaskSplits]:
    """Generate one TaskSplits per task; byte-reproducible for equal configs."""
    config.validate()
    tasks: list[TaskSplits] = []
    split_sizes = dict(
        zip((Split.TRAIN, Split.VAL, Split.TEST), config.samples_per_split)
    )
    for k in range(config.num_tasks):
        means = class_means(config, k)
        c_k = config.classes_per_task[k]
        names = [f"finding_{k}_{j}" for j in range(c_k)]
        datasets: dict[Split, TaskDataset] = {}
        for split, n in split_sizes.items():
            gen = rng.stream(config.seed, "samples", k, split.value)
            cls = gen.integers(0, c_k, size=n)
            features = means[cls] + config.noise_sigma * gen.standard_normal(
                (n, config.d)
            )
            labels = np.zeros((n, c_k), dtype=np.int8)
            labels[np.arange(n), cls] = int(LabelCode.POSITIVE)
            labels = _corrupt_labels(
                labels,
                config,
                rng.stream(config.seed, "corrupt", k, split.value),
                is_train=split is Split.TRAIN,
            )
            datasets[split] = TaskDataset(
                task_id=k,
                name=f"synth-task-{k}",
                class_names=names,
                features=features.astype(np.float32),
                labels=labels,
                split=split,
            )
        tasks.append(
            TaskSplits(
                train=datasets[Split.TRAIN],
                val=datasets[Split.VAL],
                test=datasets[Split.TEST],
            )
        )
    return tasks
