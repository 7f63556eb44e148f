"""Task adapter variants, per-task heads, and the freeze contract.

All variants are residual around the input, start as the identity map
(zero-initialized up-projections / output projections), and keep the
parameter ordering simple < continuum < hope for fixed d and bottleneck.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .diffnet import (
    Activation,
    BranchSum,
    DiffnetError,
    Linear,
    Module,
    ParamTensor,
    Residual,
    Sequential,
)

VARIANTS = ("simple", "continuum", "hope")


@dataclass(frozen=True)
class AdapterConfig:
    variant: str = "simple"
    bottleneck: int = 64
    branches: int = 3
    attn_heads: int = 8
    activation: str = "gelu"

    def validate(self, d: int) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown adapter variant '{self.variant}'")
        if self.bottleneck < 1:
            raise ValueError("bottleneck dim must be >= 1")
        if d < self.bottleneck:
            raise ValueError(
                f"feature dim {d} must be >= bottleneck {self.bottleneck}"
            )
        if self.variant == "continuum" and self.branches != 3:
            raise ValueError("continuum adapter uses exactly 3 branches")
        if self.variant == "hope":
            if self.branches != 3:
                raise ValueError("hope adapter's continuum block uses 3 branches")
            if self.attn_heads < 1 or d % self.attn_heads != 0:
                raise ValueError(
                    f"attention head count {self.attn_heads} must divide d={d}"
                )


def _bottleneck(d: int, r: int, activation: str, rng, name: str) -> Sequential:
    # down-projection fan-in random, up-projection zero: branch starts at 0
    return Sequential(
        [
            Linear(d, r, rng, init="fanin", name=f"{name}.down"),
            Activation(activation),
            Linear(r, d, init="zeros", name=f"{name}.up"),
        ]
    )


class TokenAttention(Module):
    """Single-layer self-attention over h tokens from reshaping the feature
    vector; shared per-token Q/K/V maps plus a zero-initialized output
    projection so the residual starts at identity."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, name: str):
        if d % heads != 0:
            raise ValueError(f"heads {heads} must divide d={d}")
        self.d = d
        self.h = heads
        self.dk = d // heads
        dk = self.dk
        self.wq = ParamTensor(f"{name}.wq", rng.standard_normal((dk, dk)) / np.sqrt(dk))
        self.bq = ParamTensor(f"{name}.bq", np.zeros(dk))
        self.wk = ParamTensor(f"{name}.wk", rng.standard_normal((dk, dk)) / np.sqrt(dk))
        self.bk = ParamTensor(f"{name}.bk", np.zeros(dk))
        self.wv = ParamTensor(f"{name}.wv", rng.standard_normal((dk, dk)) / np.sqrt(dk))
        self.bv = ParamTensor(f"{name}.bv", np.zeros(dk))
        self.wo = ParamTensor(f"{name}.wo", np.zeros((d, d)))
        self.bo = ParamTensor(f"{name}.bo", np.zeros(d))
        self._cache = None

    def parameters(self) -> list[ParamTensor]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo]

    def forward(self, x, *, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise DiffnetError(f"attention expects (B, {self.d}), got {x.shape}")
        b = x.shape[0]
        t = x.reshape(b, self.h, self.dk)
        q = t @ self.wq.values + self.bq.values
        k = t @ self.wk.values + self.bk.values
        v = t @ self.wv.values + self.bv.values
        scale = 1.0 / np.sqrt(self.dk)
        s = (q @ k.transpose(0, 2, 1)) * scale
        s_shift = s - s.max(axis=2, keepdims=True)
        e = np.exp(s_shift)
        p = e / e.sum(axis=2, keepdims=True)
        o = p @ v
        flat = o.reshape(b, self.d)
        out = flat @ self.wo.values + self.bo.values
        self._cache = (t, q, k, v, p, flat)
        return out

    def backward(self, dout):
        t, q, k, v, p, flat = self._require_cache(self._cache, "attention")
        b = t.shape[0]
        scale = 1.0 / np.sqrt(self.dk)
        self.wo.grad += flat.T @ dout
        self.bo.grad += dout.sum(axis=0)
        do = (dout @ self.wo.values.T).reshape(b, self.h, self.dk)
        dp = do @ v.transpose(0, 2, 1)
        dv = p.transpose(0, 2, 1) @ do
        ds = p * (dp - (dp * p).sum(axis=2, keepdims=True))
        dq = scale * (ds @ k)
        dk_ = scale * (ds.transpose(0, 2, 1) @ q)
        t2 = t.reshape(-1, self.dk)
        self.wq.grad += t2.T @ dq.reshape(-1, self.dk)
        self.bq.grad += dq.sum(axis=(0, 1))
        self.wk.grad += t2.T @ dk_.reshape(-1, self.dk)
        self.bk.grad += dk_.sum(axis=(0, 1))
        self.wv.grad += t2.T @ dv.reshape(-1, self.dk)
        self.bv.grad += dv.sum(axis=(0, 1))
        dt = dq @ self.wq.values.T + dk_ @ self.wk.values.T + dv @ self.wv.values.T
        return dt.reshape(b, self.d)

    def spec(self) -> dict:
        return {"kind": "token_attention", "d": self.d, "heads": self.h}


def build_adapter(
    config: AdapterConfig, d: int, rng: np.random.Generator, name: str = "adapter"
) -> Module:
    config.validate(d)
    r = config.bottleneck
    act = config.activation
    if config.variant == "simple":
        return Residual(_bottleneck(d, r, act, rng, f"{name}.mlp"))
    continuum = Residual(
        BranchSum(
            [
                _bottleneck(d, r, act, rng, f"{name}.branch{m}")
                for m in range(config.branches)
            ]
        )
    )
    if config.variant == "continuum":
        return continuum
    attention = Residual(TokenAttention(d, config.attn_heads, rng, f"{name}.attn"))
    return Sequential([attention, continuum])


class TaskModule:
    """Frozen-after-training pair of adapter and head for one task."""

    def __init__(
        self,
        task_id: int,
        d: int,
        num_classes: int,
        config: AdapterConfig,
        rng: np.random.Generator,
    ):
        self.task_id = task_id
        self.d = d
        self.num_classes = num_classes
        self.config = config
        prefix = f"task{task_id}"
        self.adapter = build_adapter(config, d, rng, name=f"{prefix}.adapter")
        self.head = Linear(d, num_classes, rng, init="fanin", name=f"{prefix}.head")
        self.frozen = False
        self.frozen_hash: str | None = None

    def parameters(self) -> list[ParamTensor]:
        return self.adapter.parameters() + self.head.parameters()

    def zero_grad_all(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    @property
    def param_bytes(self) -> int:
        return sum(p.values.nbytes for p in self.parameters())

    def adapt(self, z: np.ndarray, *, training: bool = False, rng=None) -> np.ndarray:
        return self.adapter.forward(
            np.asarray(z, dtype=np.float64), training=training, rng=rng
        )

    def predict_logits(self, z_tilde: np.ndarray) -> np.ndarray:
        logits = self.head.forward(np.asarray(z_tilde, dtype=np.float64))
        if not np.all(np.isfinite(logits)):
            raise DiffnetError(f"task {self.task_id} head produced non-finite logits")
        return logits

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(p.name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.values, dtype="<f8").tobytes())
        return digest.hexdigest()

    def freeze(self) -> None:
        if self.frozen:
            warnings.warn(f"task {self.task_id} module frozen twice", stacklevel=2)
            return
        for p in self.parameters():
            p.frozen = True
        self.frozen = True
        self.frozen_hash = self.param_hash()

    def check_frozen_intact(self) -> None:
        if not self.frozen:
            raise DiffnetError(f"task {self.task_id} module is not frozen")
        current = self.param_hash()
        if current != self.frozen_hash:
            raise DiffnetError(
                f"frozen task {self.task_id} module changed: hash {current} != "
                f"{self.frozen_hash}"
            )

    def manifest(self) -> dict:
        return {
            "task_id": self.task_id,
            "d": self.d,
            "num_classes": self.num_classes,
            "variant": self.config.variant,
            "bottleneck": self.config.bottleneck,
            "branches": self.config.branches,
            "attn_heads": self.config.attn_heads,
            "activation": self.config.activation,
            "frozen": self.frozen,
            "adapter_spec": self.adapter.spec(),
        }
