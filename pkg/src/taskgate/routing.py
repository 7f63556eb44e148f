"""Task-unknown inference: diagonal selector routing (primary), cosine
prototype routing, lowest-entropy routing, and oracle evaluation.

Every strategy consumes adapter-conditioned features z_j = A_j(z), never the
raw feature vector, and resolves ties to the lowest task index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapters import TaskModule
from .data import TaskDataset
from .diffnet import sigmoid
from .metrics import MacroMetric, RoutingAccuracy, auroc_masked, macro_f1, routing_accuracy
from .selector import PrototypeMemory, SelectorNet

STRATEGIES = ("selector", "memory", "entropy")


class RoutingError(RuntimeError):
    pass


@dataclass
class RoutingDecision:
    sample_index: int
    scores: np.ndarray  # (K,) per-task score (entropy: lower is better)
    chosen: int
    strategy: str
    logits: np.ndarray  # chosen head's logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    interior = (p > 0.0) & (p < 1.0)
    q = p[interior]
    out[interior] = -q * np.log(q) - (1.0 - q) * np.log(1.0 - q)
    return out


def selector_scores(
    modules: list[TaskModule], selector: SelectorNet, z: np.ndarray
) -> np.ndarray:
    """(N, K) diagonal confidences: softmax(s(A_j(z)))_j per task j."""
    if not modules:
        raise RoutingError("no task modules to route among")
    z = np.asarray(z, dtype=np.float64)
    scores = np.empty((z.shape[0], len(modules)))
    for j, module in enumerate(modules):
        z_j = module.adapt(z)
        probs = _softmax(selector.forward(z_j, training=False))
        scores[:, j] = probs[:, j]
    return scores


def memory_scores(
    modules: list[TaskModule], memory: PrototypeMemory, z: np.ndarray
) -> np.ndarray:
    """(N, K) cosine similarities cos(A_j(z), M_j); zero-norm prototypes
    score -inf so an untrained prototype can never win."""
    if memory.num_tasks != len(modules):
        raise RoutingError("prototype memory does not cover all tasks")
    norms = np.linalg.norm(memory.m, axis=1)
    if np.all(norms == 0.0):
        raise RoutingError("all prototypes are zero vectors")
    z = np.asarray(z, dtype=np.float64)
    scores = np.full((z.shape[0], len(modules)), -np.inf)
    for j, module in enumerate(modules):
        if norms[j] == 0.0:
            continue
        z_j = module.adapt(z)
        z_norms = np.linalg.norm(z_j, axis=1)
        safe = z_norms > 0.0
        scores[safe, j] = (z_j[safe] @ memory.m[j]) / (z_norms[safe] * norms[j])
        scores[~safe, j] = 0.0
    return scores


def entropy_scores(modules: list[TaskModule], z: np.ndarray) -> np.ndarray:
    """(N, K) mean predictive binary entropy per head, in nats (lower wins)."""
    if not modules:
        raise RoutingError("no task modules to route among")
    z = np.asarray(z, dtype=np.float64)
    scores = np.empty((z.shape[0], len(modules)))
    for j, module in enumerate(modules):
        probs = sigmoid(module.predict_logits(module.adapt(z)))
        scores[:, j] = _binary_entropy(probs).mean(axis=1)
    return scores


def route_batch(
    modules: list[TaskModule],
    z: np.ndarray,
    strategy: str,
    selector: SelectorNet | None = None,
    memory: PrototypeMemory | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Routes every row of z; returns (chosen (N,), scores (N, K)).

    argmax / argmin resolve ties to the lowest task index."""
    if strategy == "selector":
        if selector is None:
            raise RoutingError("selector strategy needs a trained selector")
        scores = selector_scores(modules, selector, z)
        chosen = scores.argmax(axis=1)
    elif strategy == "memory":
        if memory is None:
            raise RoutingError("memory strategy needs prototype memory")
        scores = memory_scores(modules, memory, z)
        chosen = scores.argmax(axis=1)
    elif strategy == "entropy":
        scores = entropy_scores(modules, z)
        chosen = scores.argmin(axis=1)
    else:
        raise RoutingError(f"unknown routing strategy '{strategy}'")
    return chosen.astype(np.int64), scores


def _decide(
    modules: list[TaskModule],
    z: np.ndarray,
    strategy: str,
    selector: SelectorNet | None,
    memory: PrototypeMemory | None,
    sample_index: int,
) -> RoutingDecision:
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    chosen, scores = route_batch(modules, z, strategy, selector, memory)
    j = int(chosen[0])
    logits = modules[j].predict_logits(modules[j].adapt(z))[0]
    return RoutingDecision(
        sample_index=sample_index,
        scores=scores[0],
        chosen=j,
        strategy=strategy,
        logits=logits,
    )


def route_selector(
    modules: list[TaskModule], selector: SelectorNet, z: np.ndarray, sample_index: int = 0
) -> RoutingDecision:
    return _decide(modules, z, "selector", selector, None, sample_index)


def route_memory(
    modules: list[TaskModule], memory: PrototypeMemory, z: np.ndarray, sample_index: int = 0
) -> RoutingDecision:
    return _decide(modules, z, "memory", None, memory, sample_index)


def route_entropy(
    modules: list[TaskModule], z: np.ndarray, sample_index: int = 0
) -> RoutingDecision:
    return _decide(modules, z, "entropy", None, None, sample_index)


@dataclass
class TaskEval:
    auroc: MacroMetric
    f1: MacroMetric


@dataclass
class EvalResult:
    mode: str  # oracle | routed
    strategy: str | None
    per_task: dict[int, TaskEval]
    routing: RoutingAccuracy | None

    def auroc_of(self, task_id: int) -> float:
        return self.per_task[task_id].auroc.value


def evaluate_oracle(
    modules: list[TaskModule], datasets: list[TaskDataset]
) -> EvalResult:
    """Task-known evaluation: each dataset through its own frozen module."""
    per_task: dict[int, TaskEval] = {}
    for ds in datasets:
        module = modules[ds.task_id]
        probs = sigmoid(module.predict_logits(module.adapt(ds.features)))
        per_task[ds.task_id] = TaskEval(
            auroc=auroc_masked(probs, ds.labels), f1=macro_f1(probs, ds.labels)
        )
    return EvalResult(mode="oracle", strategy=None, per_task=per_task, routing=None)


def evaluate_routed(
    modules: list[TaskModule],
    datasets: list[TaskDataset],
    strategy: str,
    selector: SelectorNet | None = None,
    memory: PrototypeMemory | None = None,
    trace_path: Path | str | None = None,
) -> EvalResult:
    """Task-unknown evaluation over all datasets under one routing strategy.

    Predictions come from the routed head. When a routed head's class count
    differs from the true task's, that sample scores 0.5 for every class
    (an uninformative prediction)."""
    k = len(modules)
    all_chosen: list[np.ndarray] = []
    all_true: list[np.ndarray] = []
    per_task: dict[int, TaskEval] = {}
    trace_rows: list[list] = []
    for ds in datasets:
        z = np.asarray(ds.features, dtype=np.float64)
        chosen, scores = route_batch(modules, z, strategy, selector, memory)
        probs = np.full((z.shape[0], ds.num_classes), 0.5)
        for j in range(k):
            rows = np.flatnonzero(chosen == j)
            if rows.size == 0 or modules[j].num_classes != ds.num_classes:
                continue
            logits = modules[j].predict_logits(modules[j].adapt(z[rows]))
            probs[rows] = sigmoid(logits)
        per_task[ds.task_id] = TaskEval(
            auroc=auroc_masked(probs, ds.labels), f1=macro_f1(probs, ds.labels)
        )
        all_chosen.append(chosen)
        all_true.append(np.full(z.shape[0], ds.task_id, dtype=np.int64))
        if trace_path is not None:
            for i in range(z.shape[0]):
                trace_rows.append(
                    [ds.task_id, i, *(f"{s:.6f}" for s in scores[i]), int(chosen[i])]
                )
    routing = routing_accuracy(
        np.concatenate(all_chosen), np.concatenate(all_true), num_tasks=k
    )
    if trace_path is not None:
        with open(trace_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["true_task", "sample", *(f"score_{j}" for j in range(k)), "routed_task"]
            )
            writer.writerows(trace_rows)
    return EvalResult(mode="routed", strategy=strategy, per_task=per_task, routing=routing)
