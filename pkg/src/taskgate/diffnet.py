"""Minimal differentiable-network core on numpy float64.

Explicit forward/backward modules (no autodiff graph), an adaptive-moment
optimizer with decoupled weight decay, a central-difference gradient
checker, and the checkpoint blob format.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DiffnetError(RuntimeError):
    pass


class FrozenParamError(DiffnetError):
    """Optimizer step attempted on a frozen parameter."""


class NonFiniteGradError(DiffnetError):
    """Gradient contained NaN/Inf; the step was aborted."""


class ParamTensor:
    """A named trainable array with a matching gradient buffer."""

    __slots__ = ("name", "values", "grad", "frozen")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.frozen = False

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"ParamTensor({self.name}, shape={self.values.shape}, frozen={self.frozen})"


class Module:
    """Base forward/backward unit. One backward per forward, grads accumulate."""

    def parameters(self) -> list[ParamTensor]:
        return []

    def forward(
        self, x: np.ndarray, *, training: bool = False, rng: np.random.Generator | None = None
    ) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    @property
    def frozen(self) -> bool:
        params = self.parameters()
        return bool(params) and all(p.frozen for p in params)

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def param_bytes(self) -> int:
        return sum(p.values.nbytes for p in self.parameters())

    def spec(self) -> dict:
        raise NotImplementedError

    def _require_cache(self, cache, what: str):
        if cache is None:
            raise DiffnetError(f"backward called on {what} without a forward pass")
        return cache


class Linear(Module):
    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator | None = None,
        *,
        init: str = "fanin",
        name: str = "linear",
    ):
        if init == "fanin":
            if rng is None:
                raise ValueError("fan-in init needs an rng")
            w = rng.standard_normal((d_in, d_out)) / np.sqrt(d_in)
        elif init == "zeros":
            w = np.zeros((d_in, d_out))
        else:
            raise ValueError(f"unknown init '{init}'")
        self.w = ParamTensor(f"{name}.w", w)
        self.b = ParamTensor(f"{name}.b", np.zeros(d_out))
        self._x: np.ndarray | None = None

    @property
    def d_in(self) -> int:
        return self.w.values.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.values.shape[1]

    def parameters(self) -> list[ParamTensor]:
        return [self.w, self.b]

    def forward(self, x, *, training=False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DiffnetError(
                f"linear expects (B, {self.d_in}) input, got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise DiffnetError("non-finite input to linear layer")
        self._x = x
        return x @ self.w.values + self.b.values

    def backward(self, dout):
        x = self._require_cache(self._x, "linear")
        if dout.shape != (x.shape[0], self.d_out):
            raise DiffnetError(
                f"linear backward expects {(x.shape[0], self.d_out)}, got {dout.shape}"
            )
        self.w.grad += x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.w.values.T

    def spec(self) -> dict:
        return {"kind": "linear", "d_in": self.d_in, "d_out": self.d_out}


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / SQRT2)) + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI


class Activation(Module):
    KINDS = ("relu", "gelu")

    def __init__(self, kind: str = "gelu"):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation '{kind}'")
        self.kind = kind
        self._x: np.ndarray | None = None

    def forward(self, x, *, training=False, rng=None):
        self._x = x
        return np.maximum(x, 0.0) if self.kind == "relu" else gelu(x)

    def backward(self, dout):
        x = self._require_cache(self._x, "activation")
        local = (x > 0).astype(np.float64) if self.kind == "relu" else gelu_grad(x)
        return dout * local

    def spec(self) -> dict:
        return {"kind": "activation", "fn": self.kind}


class Dropout(Module):
    """Inverted dropout: active only in training mode, identity in eval."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self._mask: np.ndarray | None = None

    def forward(self, x, *, training=False, rng=None):
        if not training or self.p == 0.0:
            self._mask = np.ones(0)  # sentinel: identity backward
            return x
        if rng is None:
            raise DiffnetError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dout):
        mask = self._require_cache(self._mask, "dropout")
        if mask.size == 0:
            return dout
        return dout * mask

    def spec(self) -> dict:
        return {"kind": "dropout", "p": self.p}


class Sequential(Module):
    def __init__(self, layers: Sequence[Module]):
        self.layers = list(layers)

    def parameters(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x, *, training=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def spec(self) -> dict:
        return {"kind": "sequential", "layers": [l.spec() for l in self.layers]}


class Residual(Module):
    """y = x + inner(x)."""

    def __init__(self, inner: Module):
        self.inner = inner

    def parameters(self) -> list[ParamTensor]:
        return self.inner.parameters()

    def forward(self, x, *, training=False, rng=None):
        return x + self.inner.forward(x, training=training, rng=rng)

    def backward(self, dout):
        return dout + self.inner.backward(dout)

    def spec(self) -> dict:
        return {"kind": "residual", "inner": self.inner.spec()}


class BranchSum(Module):
    """y = sum of branch_i(x); the concat-sum layer kind."""

    def __init__(self, branches: Sequence[Module]):
        if not branches:
            raise ValueError("BranchSum needs at least one branch")
        self.branches = list(branches)

    def parameters(self) -> list[ParamTensor]:
        return [p for b in self.branches for p in b.parameters()]

    def forward(self, x, *, training=False, rng=None):
        out = self.branches[0].forward(x, training=training, rng=rng)
        for b in self.branches[1:]:
            out = out + b.forward(x, training=training, rng=rng)
        return out

    def backward(self, dout):
        dx = self.branches[0].backward(dout)
        for b in self.branches[1:]:
            dx = dx + b.backward(dout)
        return dx

    def spec(self) -> dict:
        return {"kind": "branch_sum", "branches": [b.spec() for b in self.branches]}


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay.

    Grads are zeroed after a successful step; a non-finite grad aborts the
    whole step before any parameter is touched.
    """

    def __init__(
        self,
        params: Sequence[ParamTensor],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.frozen:
                raise FrozenParamError(f"optimizer step on frozen parameter {p.name}")
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradError(
                    f"non-finite gradient in {p.name}; step aborted"
                )
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.values -= self.lr * update
            if self.weight_decay:
                p.values -= self.lr * self.weight_decay * p.values
            p.grad[...] = 0.0


def grad_check(
    params: Sequence[ParamTensor],
    loss_and_backward: Callable[[bool], float],
    *,
    step: float = 1e-4,
    eps: float = 1e-8,
) -> float:
    """Max relative error between analytic grads and central differences.

    loss_and_backward(do_backward) must recompute the loss from scratch
    (deterministically) and, when asked, accumulate grads into params.
    """
    total = sum(p.size for p in params)
    if total > 10_000:
        raise DiffnetError(f"grad_check limited to 1e4 params, got {total}")
    for p in params:
        p.grad[...] = 0.0
    loss_and_backward(True)
    analytic = [p.grad.copy() for p in params]
    max_err = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = loss_and_backward(False)
            flat[i] = orig - step
            lm = loss_and_backward(False)
            flat[i] = orig
            cd = (lp - lm) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(cd), eps)
            max_err = max(max_err, abs(gflat[i] - cd) / denom)
    return max_err


# --- checkpoint blob -------------------------------------------------------

BLOB_MAGIC = b"TGCK"
BLOB_VERSION = 1


def save_blob(path, kind: str, layers: list | dict, params: Sequence[ParamTensor]) -> None:
    manifest = {
        "kind": kind,
        "layers": layers,
        "params": [{"name": p.name, "shape": list(p.values.shape)} for p in params],
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<HI", BLOB_VERSION, len(header)))
        fh.write(header)
        for p in params:
            fh.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_blob(path) -> tuple[str, list | dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != BLOB_MAGIC:
        raise DiffnetError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != BLOB_VERSION:
        raise DiffnetError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(raw[10 : 10 + hlen].decode("utf-8"))
    offset = 10 + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise DiffnetError(f"{path}: truncated checkpoint payload")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise DiffnetError(f"{path}: trailing bytes in checkpoint")
    return manifest["kind"], manifest["layers"], arrays


def restore_params(params: Sequence[ParamTensor], arrays: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in arrays:
            raise DiffnetError(f"checkpoint missing parameter {p.name}")
        saved = arrays[p.name]
        if saved.shape != p.values.shape:
            raise DiffnetError(
                f"checkpoint shape {saved.shape} != live shape {p.values.shape} "
                f"for {p.name}"
            )
        p.values[...] = saved
