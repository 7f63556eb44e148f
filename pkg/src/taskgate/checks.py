"""Finite-difference verification of every trainable composite: each adapter
variant through its head and the full task loss, and the selector through
the full selector loss. Networks are kept tiny so the sweep stays fast."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rng_streams
from .adapters import VARIANTS, AdapterConfig, TaskModule
from .data import LabelCode
from .diffnet import grad_check
from .losses import (
    LossWeights,
    SoftTargetPolicy,
    prototype_loss,
    sample_soft_targets,
    selector_ce,
    task_loss,
)
from .selector import SelectorState


@dataclass
class CheckResult:
    composite: str
    max_rel_error: float
    passed: bool


def _random_labels(gen: np.random.Generator, b: int, c: int) -> np.ndarray:
    codes = np.array(
        [
            int(LabelCode.NEGATIVE),
            int(LabelCode.POSITIVE),
            int(LabelCode.UNCERTAIN),
            int(LabelCode.MISSING),
        ],
        dtype=np.int8,
    )
    labels = codes[gen.integers(0, 4, size=(b, c))]
    labels[:, 0] = int(LabelCode.POSITIVE)  # keep the mask non-empty
    return labels


def check_adapter_composite(
    variant: str, *, d: int = 16, c: int = 3, b: int = 4, seed: int = 7, tol: float = 1e-3
) -> CheckResult:
    """Adapter + head + masked BCE + orthogonality penalty, FD-checked."""
    gen = rng_streams.stream(seed, "gradcheck", variant)
    config = AdapterConfig(variant=variant, bottleneck=4, attn_heads=4)
    module = TaskModule(0, d, c, config, gen)
    z = gen.standard_normal((b, d))
    labels = _random_labels(gen, b, c)
    policy = SoftTargetPolicy()
    targets = sample_soft_targets(labels, policy, gen)
    weights = LossWeights()

    def loss_and_backward(do_backward: bool) -> float:
        z_tilde = module.adapt(z)
        logits = module.predict_logits(z_tilde)
        loss, dlogits, dz_ortho = task_loss(
            logits, labels, z_tilde, weights, policy, targets=targets
        )
        if do_backward:
            dz = module.head.backward(dlogits) + dz_ortho
            module.adapter.backward(dz)
        return loss

    err = grad_check(module.parameters(), loss_and_backward)
    return CheckResult(f"{variant}+head+task_loss", err, err < tol)


def check_selector_composite(
    *, d: int = 12, k: int = 3, b: int = 6, seed: int = 11, tol: float = 1e-3
) -> CheckResult:
    """Selector + cross-entropy + weighted prototype consistency, FD-checked.

    The prototype term has no selector-parameter gradient; including it in the
    FD loss verifies exactly that."""
    gen = rng_streams.stream(seed, "gradcheck", "selector")
    sel = SelectorState(d=d, hidden=8, dropout=0.0, rng=gen)
    for j in range(k):
        sel.expand_tasks(j + 1)
        sel.memory.m[j] = gen.standard_normal(d)
    z = gen.standard_normal((b, d))
    task_labels = gen.integers(0, k, size=b)
    current = task_labels == 0
    if not current.any():
        task_labels[0] = 0
        current = task_labels == 0
    lam = LossWeights().lambda_mem

    def loss_and_backward(do_backward: bool) -> float:
        logits = sel.net.forward(z, training=False)
        ce, dlogits = selector_ce(logits, task_labels)
        mem, _ = prototype_loss(z[current], sel.memory.prototype(0))
        if do_backward:
            sel.net.backward(dlogits)
        return ce + lam * mem

    err = grad_check(sel.net.parameters(), loss_and_backward)
    return CheckResult("selector+selector_loss", err, err < tol)


def run_all_checks(tol: float = 1e-3) -> list[CheckResult]:
    results = [check_adapter_composite(v, tol=tol) for v in VARIANTS]
    results.append(check_selector_composite(tol=tol))
    return results
