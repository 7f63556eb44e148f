"""taskgate: continual adapter-routing engine.

Trains task-specific residual adapters and heads over frozen (precomputed or
synthetic) feature vectors, one task at a time with isolate-then-freeze; a
shared latent selector stabilized by prototype memory and feature-level
replay routes task-unknown samples at inference."""

from .adapters import AdapterConfig, TaskModule, build_adapter
from .config import RunConfig
from .data import (
    LabelCode,
    Split,
    SynthConfig,
    TaskDataset,
    TaskSplits,
    generate_synthetic,
)
from .fileio import read_task, write_task
from .losses import LossWeights, SoftTargetPolicy, masked_bce, ortho_penalty
from .metrics import auroc_masked, forgetting, macro_f1, routing_accuracy
from .routing import route_entropy, route_memory, route_selector
from .selector import PrototypeMemory, ReplayBuffer, SelectorNet, SelectorState
from .trainer import RunState, load_run, run_joint, run_sequential, save_run

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "LabelCode",
    "LossWeights",
    "PrototypeMemory",
    "ReplayBuffer",
    "RunConfig",
    "RunState",
    "SelectorNet",
    "SelectorState",
    "SoftTargetPolicy",
    "Split",
    "SynthConfig",
    "TaskDataset",
    "TaskModule",
    "TaskSplits",
    "auroc_masked",
    "build_adapter",
    "forgetting",
    "generate_synthetic",
    "load_run",
    "macro_f1",
    "masked_bce",
    "ortho_penalty",
    "read_task",
    "route_entropy",
    "route_memory",
    "route_selector",
    "routing_accuracy",
    "run_joint",
    "run_sequential",
    "save_run",
    "write_task",
]
