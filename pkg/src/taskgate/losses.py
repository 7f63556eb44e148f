"""Training objectives.

masked_bce averages binary cross-entropy over non-missing label cells only;
uncertain cells train against soft targets drawn uniformly from (alpha, beta).
All functions return (value, gradient) pairs and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabelCode
from .diffnet import sigmoid


class EmptyMaskError(ValueError):
    """Every label cell is missing; the masked loss is undefined."""


@dataclass(frozen=True)
class SoftTargetPolicy:
    alpha: float = 0.55
    beta: float = 0.85
    mode: str = "per_batch"  # per_batch | per_epoch | fixed

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < self.beta < 1.0:
            raise ValueError(
                f"need 0 < alpha < beta < 1, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.mode not in ("per_batch", "per_epoch", "fixed"):
            raise ValueError(f"unknown resample mode '{self.mode}'")


@dataclass(frozen=True)
class LossWeights:
    lambda_ortho: float = 0.05
    lambda_mem: float = 0.5

    def __post_init__(self) -> None:
        if self.lambda_ortho < 0 or self.lambda_mem < 0:
            raise ValueError("loss weights must be >= 0")


def sample_soft_targets(
    labels: np.ndarray, policy: SoftTargetPolicy, rng: np.random.Generator
) -> np.ndarray:
    """Full (B, C) float target matrix: y for definite cells, U(alpha, beta)
    for uncertain cells, 0 placeholder at missing cells (never read)."""
    targets = np.zeros(labels.shape, dtype=np.float64)
    targets[labels == int(LabelCode.POSITIVE)] = 1.0
    uncertain = labels == int(LabelCode.UNCERTAIN)
    n_unc = int(uncertain.sum())
    if n_unc:
        targets[uncertain] = rng.uniform(policy.alpha, policy.beta, size=n_unc)
    return targets


def masked_bce(
    logits: np.ndarray,
    labels: np.ndarray,
    policy: SoftTargetPolicy | None = None,
    rng: np.random.Generator | None = None,
    targets: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean BCE-with-logits over non-missing cells.

    Missing cells contribute nothing to the value or gradient (bit-invariant
    to their logits). Pass precomputed `targets` for per-epoch/fixed resample
    modes; otherwise targets are sampled here from `rng`.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.shape != labels.shape:
        raise ValueError(f"logits {logits.shape} vs labels {labels.shape}")
    mask = labels != int(LabelCode.MISSING)
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("all label cells are missing")
    if targets is None:
        if policy is None or rng is None:
            raise ValueError("need a policy and rng when targets are not given")
        targets = sample_soft_targets(labels, policy, rng)
    idx = np.nonzero(mask)
    x = logits[idx]
    t = np.asarray(targets, dtype=np.float64)[idx]
    # stable: max(x,0) - x*t + log(1 + exp(-|x|))
    cell = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    loss = float(cell.sum() / count)
    dlogits = np.zeros_like(logits)
    dlogits[idx] = (sigmoid(x) - t) / count
    return loss, dlogits


def ortho_penalty(z: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean off-diagonal cosine similarity of the batch rows."""
    z = np.asarray(z, dtype=np.float64)
    b = z.shape[0]
    if b < 2:
        raise ValueError(f"orthogonality penalty needs a batch of >= 2 rows, got {b}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm row in orthogonality penalty input")
    zh = z / norms[:, None]
    s = zh @ zh.T
    denom = b * (b - 1)
    loss = float((s.sum() - np.trace(s)) / denom)
    # d/dzh_i of sum_{p != q} s_pq is 2 * sum_{j != i} zh_j
    g = (2.0 / denom) * (zh.sum(axis=0)[None, :] - zh)
    # back through row normalization
    dz = (g - (g * zh).sum(axis=1, keepdims=True) * zh) / norms[:, None]
    return loss, dz


def task_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    z_tilde: np.ndarray,
    weights: LossWeights,
    policy: SoftTargetPolicy,
    rng: np.random.Generator | None = None,
    targets: np.ndarray | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """BCE plus weighted orthogonality penalty.

    Returns (loss, dlogits, dz_tilde). The ortho term needs >= 2 rows; with a
    single-row batch it is skipped (weight treated as 0 for that batch).
    """
    bce, dlogits = masked_bce(logits, labels, policy, rng, targets)
    if weights.lambda_ortho and z_tilde.shape[0] >= 2:
        ortho, dz = ortho_penalty(z_tilde)
        return bce + weights.lambda_ortho * ortho, dlogits, weights.lambda_ortho * dz
    return bce, dlogits, np.zeros_like(np.asarray(z_tilde, dtype=np.float64))


def selector_ce(
    selector_logits: np.ndarray, task_labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy of task logits against integer task ids."""
    logits = np.asarray(selector_logits, dtype=np.float64)
    labels = np.asarray(task_labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} task labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"task label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = float(-log_p[np.arange(b), labels].mean())
    grad = np.exp(log_p)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def prototype_loss(z_tilde: np.ndarray, prototype: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared distance of batch rows to the task prototype."""
    z = np.asarray(z_tilde, dtype=np.float64)
    m = np.asarray(prototype, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != m.shape[0]:
        raise ValueError(f"shape mismatch: z {z.shape} vs prototype {m.shape}")
    diff = z - m[None, :]
    loss = float((diff * diff).sum() / z.shape[0])
    return loss, 2.0 * diff / z.shape[0]
