"""Shared latent task selector, EMA prototype memory, and the bounded
feature-level replay buffer with mixed-batch construction.

The buffer stores adapted feature vectors plus task ids only; raw inputs
never enter this module."""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from .diffnet import Activation, Dropout, Linear, ParamTensor, Sequential


class SelectorError(RuntimeError):
    pass


class SelectorNet:
    """MLP d -> hidden -> K task logits; output width grows with K.

    New output rows are zero-initialized, so expansion preserves the logits
    of already-observed tasks on any input.
    """

    def __init__(
        self,
        d: int,
        hidden: int = 256,
        dropout: float = 0.1,
        activation: str = "gelu",
        rng: np.random.Generator | None = None,
        name: str = "selector",
    ):
        self.d = d
        self.hidden = hidden
        self.trunk = Sequential(
            [
                Linear(d, hidden, rng, init="fanin", name=f"{name}.in"),
                Activation(activation),
                Dropout(dropout),
            ]
        )
        self.out_w = ParamTensor(f"{name}.out.w", np.zeros((hidden, 0)))
        self.out_b = ParamTensor(f"{name}.out.b", np.zeros(0))
        self._h: np.ndarray | None = None

    @property
    def num_tasks(self) -> int:
        return self.out_w.values.shape[1]

    def parameters(self) -> list[ParamTensor]:
        return self.trunk.parameters() + [self.out_w, self.out_b]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def expand(self, new_k: int) -> None:
        if new_k != self.num_tasks + 1:
            raise SelectorError(
                f"selector can only grow by one task at a time "
                f"({self.num_tasks} -> {new_k} requested)"
            )
        self.out_w.values = np.hstack([self.out_w.values, np.zeros((self.hidden, 1))])
        self.out_w.grad = np.zeros_like(self.out_w.values)
        self.out_b.values = np.append(self.out_b.values, 0.0)
        self.out_b.grad = np.zeros_like(self.out_b.values)

    def forward(self, z, *, training: bool = False, rng=None) -> np.ndarray:
        if self.num_tasks == 0:
            raise SelectorError("selector has no task outputs yet")
        h = self.trunk.forward(
            np.asarray(z, dtype=np.float64), training=training, rng=rng
        )
        self._h = h
        return h @ self.out_w.values + self.out_b.values

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        if self._h is None:
            raise SelectorError("selector backward without forward")
        self.out_w.grad += self._h.T @ dlogits
        self.out_b.grad += dlogits.sum(axis=0)
        dh = dlogits @ self.out_w.values.T
        return self.trunk.backward(dh)

    def manifest(self) -> dict:
        return {
            "d": self.d,
            "hidden": self.hidden,
            "num_tasks": self.num_tasks,
            "spec": self.trunk.spec(),
        }


class PrototypeMemory:
    """One EMA-maintained embedding per observed task."""

    def __init__(self, d: int, ema_rate: float = 0.05):
        if not 0.0 < ema_rate <= 1.0:
            raise ValueError(f"ema_rate must be in (0, 1], got {ema_rate}")
        self.d = d
        self.ema_rate = ema_rate
        self.m = np.zeros((0, d), dtype=np.float64)

    @property
    def num_tasks(self) -> int:
        return self.m.shape[0]

    def expand(self, new_k: int) -> None:
        if new_k != self.num_tasks + 1:
            raise SelectorError(
                f"prototype memory can only grow by one task "
                f"({self.num_tasks} -> {new_k} requested)"
            )
        self.m = np.vstack([self.m, np.zeros((1, self.d))])

    def ema_update(self, task_id: int, z_batch: np.ndarray) -> None:
        if not 0 <= task_id < self.num_tasks:
            raise SelectorError(f"unknown task {task_id} for prototype update")
        mean = np.asarray(z_batch, dtype=np.float64).mean(axis=0)
        self.m[task_id] = (1.0 - self.ema_rate) * self.m[task_id] + self.ema_rate * mean

    def prototype(self, task_id: int) -> np.ndarray:
        return self.m[task_id]


class ReplayBuffer:
    """Bounded FIFO of (adapted feature vector, task id), oldest-first eviction.

    Capacity 0 is a legal no-op buffer (the no-replay ablation)."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("buffer capacity must be >= 0")
        self.capacity = capacity
        self._entries: deque[tuple[np.ndarray, int]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, z_batch: np.ndarray, task_id: int) -> None:
        if self.capacity == 0:
            return
        z = np.asarray(z_batch, dtype=np.float64)
        for row in z:
            self._entries.append((row.copy(), task_id))

    def sample(
        self, n: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """n uniformly drawn pairs; without replacement when n <= len, with
        replacement otherwise. Empty buffer yields empty arrays."""
        size = len(self._entries)
        if n <= 0 or size == 0:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        replace = n > size
        idx = rng.choice(size, size=n, replace=replace)
        feats = np.stack([self._entries[i][0] for i in idx])
        tids = np.array([self._entries[i][1] for i in idx], dtype=np.int64)
        return feats, tids

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._entries:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        feats = np.stack([e[0] for e in self._entries])
        tids = np.array([e[1] for e in self._entries], dtype=np.int64)
        return feats, tids

    @classmethod
    def from_arrays(
        cls, capacity: int, feats: np.ndarray, tids: np.ndarray
    ) -> "ReplayBuffer":
        buf = cls(capacity)
        for row, tid in zip(feats, tids):
            buf._entries.append((np.asarray(row, dtype=np.float64).copy(), int(tid)))
        return buf


def mixed_batch(
    current: np.ndarray,
    task_id: int,
    buffer: ReplayBuffer,
    ratio: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Current-task batch plus ceil(ratio * B) replayed pairs.

    Returns (features, task_labels, n_current); the first n_current rows are
    the current-task slice (the only rows the prototype loss may touch)."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"replay ratio must be in [0, 1], got {ratio}")
    current = np.asarray(current, dtype=np.float64)
    b = current.shape[0]
    n_replay = math.ceil(ratio * b)
    feats, tids = buffer.sample(n_replay, rng)
    labels = np.full(b, task_id, dtype=np.int64)
    if feats.shape[0] == 0:
        return current, labels, b
    return np.vstack([current, feats]), np.concatenate([labels, tids]), b


class SelectorState:
    """Selector network + prototype memory + replay buffer, expanded together."""

    def __init__(
        self,
        d: int,
        hidden: int = 256,
        dropout: float = 0.1,
        activation: str = "gelu",
        ema_rate: float = 0.05,
        buffer_capacity: int = 5000,
        rng: np.random.Generator | None = None,
    ):
        self.net = SelectorNet(d, hidden, dropout, activation, rng)
        self.memory = PrototypeMemory(d, ema_rate)
        self.buffer = ReplayBuffer(buffer_capacity)

    @property
    def num_tasks(self) -> int:
        return self.net.num_tasks

    def expand_tasks(self, new_k: int) -> None:
        self.net.expand(new_k)
        self.memory.expand(new_k)
