"""Shared helpers: independent brute-force oracles and small synthetic configs.

The oracles here are deliberately naive (pairwise loops, scalar recounts) so
they stay independent of the vectorized implementations they check."""

from __future__ import annotations

import numpy as np
import pytest

from taskgate.data import LabelCode, SynthConfig, generate_synthetic


def brute_force_macro_auroc(scores: np.ndarray, labels: np.ndarray):
    """All-pairs AUROC per class over valid {0,1} labels; macro mean.

    Returns (macro, per_class list with None for skipped classes)."""
    per_class = []
    values = []
    for c in range(labels.shape[1]):
        valid = (labels[:, c] == int(LabelCode.NEGATIVE)) | (
            labels[:, c] == int(LabelCode.POSITIVE)
        )
        s = scores[valid, c]
        y = labels[valid, c] == int(LabelCode.POSITIVE)
        pos = s[y]
        neg = s[~y]
        if pos.size == 0 or neg.size == 0:
            per_class.append(None)
            continue
        total = 0.0
        for sp in pos:
            for sn in neg:
                if sp > sn:
                    total += 1.0
                elif sp == sn:
                    total += 0.5
        auc = total / (pos.size * neg.size)
        per_class.append(auc)
        values.append(auc)
    return (np.mean(values) if values else None), per_class


def scalar_masked_bce(logits: np.ndarray, labels: np.ndarray, targets: np.ndarray):
    """Cell-by-cell BCE-with-logits over non-missing cells, plain floats."""
    import math

    total = 0.0
    count = 0
    for i in range(labels.shape[0]):
        for c in range(labels.shape[1]):
            if labels[i, c] == int(LabelCode.MISSING):
                continue
            x = float(logits[i, c])
            t = float(targets[i, c])
            total += max(x, 0.0) - x * t + math.log1p(math.exp(-abs(x)))
            count += 1
    return total / count


def random_label_matrix(gen: np.random.Generator, n: int, c: int) -> np.ndarray:
    codes = np.array(
        [
            int(LabelCode.NEGATIVE),
            int(LabelCode.POSITIVE),
            int(LabelCode.UNCERTAIN),
            int(LabelCode.MISSING),
        ],
        dtype=np.int8,
    )
    return codes[gen.integers(0, 4, size=(n, c))]


def small_synth(**overrides) -> SynthConfig:
    base = dict(
        d=16,
        num_tasks=2,
        classes_per_task=[3, 3],
        samples_per_split=[200, 50, 100],
        task_center_separation=10.0,
        class_separation=2.0,
        noise_sigma=1.0,
        seed=1337,
    )
    base.update(overrides)
    return SynthConfig(**base)


@pytest.fixture
def two_separated_tasks():
    return generate_synthetic(small_synth())
