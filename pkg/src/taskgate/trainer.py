"""Run orchestration: per-task adapter/head training with isolate-then-freeze,
selector training with prototype EMA updates and feature-level replay, the
joint-training baseline, per-phase metric snapshots, and run persistence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_streams
from .adapters import AdapterConfig, TaskModule
from .config import RunConfig
from .data import TaskDataset, TaskSplits
from .diffnet import AdamW, DiffnetError, ParamTensor, load_blob, restore_params, save_blob
from .fileio import read_task
from .losses import (
    LossWeights,
    SoftTargetPolicy,
    prototype_loss,
    sample_soft_targets,
    selector_ce,
    task_loss,
)
from .routing import EvalResult, evaluate_oracle, evaluate_routed
from .selector import SelectorState, mixed_batch


@dataclass
class PhaseSnapshot:
    """Metrics captured right after one task (or the joint pass) completes."""

    phase: int
    trained_task: str
    trainable_bytes: int
    oracle: EvalResult
    routed: EvalResult


@dataclass
class RunState:
    config: RunConfig
    tasks: list[TaskSplits]
    modules: list[TaskModule] = field(default_factory=list)
    selector: SelectorState | None = None
    phases: list[PhaseSnapshot] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].train.feature_dim

    def trainable_bytes(self) -> int:
        total = sum(m.param_bytes for m in self.modules)
        if self.selector is not None:
            total += sum(p.values.nbytes for p in self.selector.net.parameters())
        return total

    def trainable_params(self) -> int:
        total = sum(m.param_count for m in self.modules)
        if self.selector is not None:
            total += sum(p.size for p in self.selector.net.parameters())
        return total

    def check_frozen_modules(self) -> None:
        for module in self.modules:
            if module.frozen:
                module.check_frozen_intact()


def load_tasks(manifest_paths: list[str]) -> list[TaskSplits]:
    tasks = [read_task(p) for p in manifest_paths]
    dims = {ds.feature_dim for t in tasks for ds in t.all_splits()}
    if len(dims) != 1:
        raise DiffnetError(f"feature dim differs across tasks/splits: {sorted(dims)}")
    # task order is the training order; ids are reassigned to match it
    for order, t in enumerate(tasks):
        for ds in t.all_splits():
            ds.task_id = order
    return tasks


def _adapter_config(config: RunConfig) -> AdapterConfig:
    return AdapterConfig(
        variant=config.adapter,
        bottleneck=config.bottleneck,
        branches=config.branches,
        attn_heads=config.attn_heads,
        activation=config.activation,
    )


def _batch_indices(n: int, batch_size: int, gen: np.random.Generator) -> list[np.ndarray]:
    perm = gen.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _policy(config: RunConfig) -> SoftTargetPolicy:
    return SoftTargetPolicy(
        alpha=config.soft_target_alpha,
        beta=config.soft_target_beta,
        mode=config.soft_target_mode,
    )


def _epoch_targets(
    dataset: TaskDataset,
    policy: SoftTargetPolicy,
    config: RunConfig,
    task_id: int,
    epoch: int,
) -> np.ndarray | None:
    """Precomputed soft-target matrix for per-epoch / fixed resample modes."""
    if policy.mode == "per_batch":
        return None
    if policy.mode == "fixed":
        gen = rng_streams.stream(config.seed, "targets", task_id)
    else:
        gen = rng_streams.stream(config.seed, "targets", task_id, epoch)
    return sample_soft_targets(dataset.labels, policy, gen)


def train_task(state: RunState, task: TaskSplits, config: RunConfig) -> TaskModule:
    """E epochs of shuffled minibatches on task k's train split; only this
    module's parameters are updated, and it is frozen at the end."""
    k = task.task_id
    if len(state.modules) != k:
        raise DiffnetError(f"tasks must be trained in order; expected task {len(state.modules)}")
    state.check_frozen_modules()
    module = TaskModule(
        task_id=k,
        d=state.feature_dim,
        num_classes=task.train.num_classes,
        config=_adapter_config(config),
        rng=rng_streams.stream(config.seed, "module-init", k),
    )
    optimizer = AdamW(
        module.parameters(), lr=config.adapter_lr, weight_decay=config.weight_decay
    )
    policy = _policy(config)
    weights = LossWeights(lambda_ortho=config.lambda_ortho, lambda_mem=config.lambda_mem)
    features = np.asarray(task.train.features, dtype=np.float64)
    labels = task.train.labels
    for epoch in range(config.epochs):
        gen = rng_streams.stream(config.seed, "task-train", k, epoch)
        targets = _epoch_targets(task.train, policy, config, k, epoch)
        for idx in _batch_indices(features.shape[0], config.batch_size, gen):
            z = features[idx]
            z_tilde = module.adapt(z, training=True, rng=gen)
            logits = module.predict_logits(z_tilde)
            loss, dlogits, dz_ortho = task_loss(
                logits,
                labels[idx],
                z_tilde,
                weights,
                policy,
                rng=gen,
                targets=None if targets is None else targets[idx],
            )
            if not math.isfinite(loss):
                raise DiffnetError(
                    f"non-finite task loss at task {k}, epoch {epoch}"
                )
            module.zero_grad_all()
            dz = module.head.backward(dlogits) + dz_ortho
            module.adapter.backward(dz)
            optimizer.step()
    module.freeze()
    state.modules.append(module)
    return module


def train_selector(state: RunState, task: TaskSplits, config: RunConfig) -> None:
    """E_S epochs of mixed-batch selector updates on frozen adapted features.

    Per batch: descend the selector loss, then EMA-update the current task's
    prototype, then push the current features into the replay buffer."""
    k = task.task_id
    module = state.modules[k]
    if not module.frozen:
        raise DiffnetError("selector training requires the frozen task module")
    sel = state.selector
    assert sel is not None
    if sel.num_tasks != k + 1:
        raise DiffnetError(
            f"selector must be expanded to {k + 1} tasks before training"
        )
    optimizer = AdamW(
        sel.net.parameters(), lr=config.selector_lr, weight_decay=config.weight_decay
    )
    features = np.asarray(task.train.features, dtype=np.float64)
    for epoch in range(config.selector_epochs):
        gen = rng_streams.stream(config.seed, "selector-train", k, epoch)
        for idx in _batch_indices(features.shape[0], config.batch_size, gen):
            z_tilde = module.adapt(features[idx])
            mixed, labels, n_current = mixed_batch(
                z_tilde, k, sel.buffer, config.replay_ratio, gen
            )
            logits = sel.net.forward(mixed, training=True, rng=gen)
            ce, dlogits = selector_ce(logits, labels)
            mem, _ = prototype_loss(z_tilde, sel.memory.prototype(k))
            loss = ce + config.lambda_mem * mem
            if not math.isfinite(loss):
                raise DiffnetError(
                    f"non-finite selector loss at task {k}, epoch {epoch}"
                )
            sel.net.zero_grad()
            sel.net.backward(dlogits)
            optimizer.step()
            sel.memory.ema_update(k, z_tilde)
            sel.buffer.push(z_tilde, k)


def _snapshot(state: RunState, phase: int, trained_task: str) -> PhaseSnapshot:
    """Oracle + selector-routed metrics on the test splits of observed tasks,
    in fixed task order."""
    datasets = [state.tasks[j].test for j in range(len(state.modules))]
    oracle = evaluate_oracle(state.modules, datasets)
    routed = evaluate_routed(
        state.modules, datasets, "selector", selector=state.selector.net
    )
    snap = PhaseSnapshot(
        phase=phase,
        trained_task=trained_task,
        trainable_bytes=state.trainable_bytes(),
        oracle=oracle,
        routed=routed,
    )
    state.phases.append(snap)
    return snap


def run_sequential(config: RunConfig, tasks: list[TaskSplits] | None = None) -> RunState:
    config.validate()
    if tasks is None:
        tasks = load_tasks(config.tasks)
    state = RunState(config=config, tasks=tasks)
    state.selector = SelectorState(
        d=state.feature_dim,
        hidden=config.selector_hidden,
        dropout=config.selector_dropout,
        activation=config.activation,
        ema_rate=config.ema_rate,
        buffer_capacity=config.buffer_capacity,
        rng=rng_streams.stream(config.seed, "selector-init"),
    )
    for k, task in enumerate(tasks):
        state.selector.expand_tasks(k + 1)
        train_task(state, task, config)
        train_selector(state, task, config)
        state.check_frozen_modules()
        _snapshot(state, phase=k, trained_task=task.name)
    return state


def run_joint(config: RunConfig, tasks: list[TaskSplits] | None = None) -> RunState:
    """All task modules and the selector trained concurrently over a
    round-robin interleave of per-task shuffled batches; no replay buffer,
    no freezing until the end."""
    config.validate()
    if tasks is None:
        tasks = load_tasks(config.tasks)
    if len(tasks) < 2:
        raise DiffnetError("joint mode needs at least two tasks")
    state = RunState(config=config, tasks=tasks)
    k_total = len(tasks)
    state.selector = SelectorState(
        d=state.feature_dim,
        hidden=config.selector_hidden,
        dropout=config.selector_dropout,
        activation=config.activation,
        ema_rate=config.ema_rate,
        buffer_capacity=0,
        rng=rng_streams.stream(config.seed, "selector-init"),
    )
    for k in range(k_total):
        state.selector.expand_tasks(k + 1)
        state.modules.append(
            TaskModule(
                task_id=k,
                d=state.feature_dim,
                num_classes=tasks[k].train.num_classes,
                config=_adapter_config(config),
                rng=rng_streams.stream(config.seed, "module-init", k),
            )
        )
    module_opts = [
        AdamW(m.parameters(), lr=config.adapter_lr, weight_decay=config.weight_decay)
        for m in state.modules
    ]
    selector_opt = AdamW(
        state.selector.net.parameters(),
        lr=config.selector_lr,
        weight_decay=config.weight_decay,
    )
    policy = _policy(config)
    weights = LossWeights(lambda_ortho=config.lambda_ortho, lambda_mem=config.lambda_mem)
    all_features = [np.asarray(t.train.features, dtype=np.float64) for t in tasks]
    for epoch in range(config.epochs):
        gens = [
            rng_streams.stream(config.seed, "joint-train", k, epoch)
            for k in range(k_total)
        ]
        queues = [
            _batch_indices(all_features[k].shape[0], config.batch_size, gens[k])
            for k in range(k_total)
        ]
        targets = [
            _epoch_targets(tasks[k].train, policy, config, k, epoch)
            for k in range(k_total)
        ]
        cursors = [0] * k_total
        while any(cursors[k] < len(queues[k]) for k in range(k_total)):
            for k in range(k_total):
                if cursors[k] >= len(queues[k]):
                    continue
                idx = queues[k][cursors[k]]
                cursors[k] += 1
                module, gen = state.modules[k], gens[k]
                z = all_features[k][idx]
                z_tilde = module.adapt(z, training=True, rng=gen)
                logits = module.predict_logits(z_tilde)
                loss, dlogits, dz_ortho = task_loss(
                    logits,
                    tasks[k].train.labels[idx],
                    z_tilde,
                    weights,
                    policy,
                    rng=gen,
                    targets=None if targets[k] is None else targets[k][idx],
                )
                if not math.isfinite(loss):
                    raise DiffnetError(f"non-finite joint loss at task {k}, epoch {epoch}")
                module.zero_grad_all()
                dz = module.head.backward(dlogits) + dz_ortho
                module.adapter.backward(dz)
                module_opts[k].step()
                # selector rides along on this task's freshly adapted features
                z_sel = module.adapt(z)
                sel_logits = state.selector.net.forward(z_sel, training=True, rng=gen)
                ce, dsel = selector_ce(sel_logits, np.full(z_sel.shape[0], k, dtype=np.int64))
                state.selector.net.zero_grad()
                state.selector.net.backward(dsel)
                selector_opt.step()
                state.selector.memory.ema_update(k, z_sel)
    for module in state.modules:
        module.freeze()
    state.check_frozen_modules()
    _snapshot(state, phase=k_total - 1, trained_task="joint")
    return state


# --- run persistence --------------------------------------------------------


def save_run(state: RunState, run_dir: Path | str) -> None:
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for module in state.modules:
        save_blob(
            ckpt_dir / f"task_{module.task_id:03d}.ckpt",
            "task_module",
            module.manifest(),
            module.parameters(),
        )
    sel = state.selector
    if sel is not None:
        feats, tids = sel.buffer.to_arrays()
        extras = [
            ParamTensor("memory.m", sel.memory.m),
            ParamTensor("buffer.features", feats),
            ParamTensor("buffer.task_ids", tids.astype(np.float64)),
        ]
        save_blob(
            ckpt_dir / "selector.ckpt",
            "selector_state",
            {
                "selector": sel.net.manifest(),
                "ema_rate": sel.memory.ema_rate,
                "buffer_capacity": sel.buffer.capacity,
                "dropout": state.config.selector_dropout,
                "activation": state.config.activation,
            },
            list(sel.net.parameters()) + extras,
        )


def load_run(config: RunConfig, run_dir: Path | str) -> RunState:
    """Rebuild frozen modules + selector state from a run directory so
    evaluation can resume without retraining."""
    run_dir = Path(run_dir)
    tasks = load_tasks(config.tasks)
    state = RunState(config=config, tasks=tasks)
    ckpt_dir = run_dir / "checkpoints"
    dummy = rng_streams.stream(0, "load")
    for k in range(len(tasks)):
        path = ckpt_dir / f"task_{k:03d}.ckpt"
        kind, manifest, arrays = load_blob(path)
        if kind != "task_module":
            raise DiffnetError(f"{path}: expected a task_module checkpoint")
        module = TaskModule(
            task_id=manifest["task_id"],
            d=manifest["d"],
            num_classes=manifest["num_classes"],
            config=AdapterConfig(
                variant=manifest["variant"],
                bottleneck=manifest["bottleneck"],
                branches=manifest["branches"],
                attn_heads=manifest["attn_heads"],
                activation=manifest["activation"],
            ),
            rng=dummy,
        )
        restore_params(module.parameters(), arrays)
        module.freeze()
        state.modules.append(module)
    sel_path = ckpt_dir / "selector.ckpt"
    if sel_path.exists():
        kind, manifest, arrays = load_blob(sel_path)
        if kind != "selector_state":
            raise DiffnetError(f"{sel_path}: expected a selector_state checkpoint")
        sel = SelectorState(
            d=manifest["selector"]["d"],
            hidden=manifest["selector"]["hidden"],
            dropout=manifest["dropout"],
            activation=manifest["activation"],
            ema_rate=manifest["ema_rate"],
            buffer_capacity=manifest["buffer_capacity"],
            rng=dummy,
        )
        for k in range(manifest["selector"]["num_tasks"]):
            sel.expand_tasks(k + 1)
        restore_params(sel.net.parameters(), arrays)
        sel.memory.m = arrays["memory.m"].copy()
        feats = arrays["buffer.features"]
        tids = arrays["buffer.task_ids"].astype(np.int64)
        from .selector import ReplayBuffer

        sel.buffer = ReplayBuffer.from_arrays(manifest["buffer_capacity"], feats, tids)
        state.selector = sel
    return state
