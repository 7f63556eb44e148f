"""Run configuration: plain `key = value` text with '#' comments, plus
--set overrides; the effective config is echoed into every output."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv_text(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def load_config_file(path: Path | str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_kv_text(text)


def apply_overrides(base: dict[str, str], overrides: list[str]) -> dict[str, str]:
    merged = dict(base)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        merged[key.strip()] = value.strip()
    return merged


@dataclass
class RunConfig:
    """Every knob of a training run; echoed verbatim into run outputs."""

    tasks: list[str] = field(default_factory=list)  # manifest paths, in order
    mode: str = "sequential"  # sequential | joint
    adapter: str = "simple"  # simple | continuum | hope
    bottleneck: int = 64
    branches: int = 3
    attn_heads: int = 8
    activation: str = "gelu"
    epochs: int = 20
    selector_epochs: int = 20
    batch_size: int = 32
    adapter_lr: float = 1e-4
    selector_lr: float = 5e-4
    weight_decay: float = 1e-4
    lambda_ortho: float = 0.05
    lambda_mem: float = 0.5
    soft_target_alpha: float = 0.55
    soft_target_beta: float = 0.85
    soft_target_mode: str = "per_batch"
    ema_rate: float = 0.05
    buffer_capacity: int = 5000
    replay_ratio: float = 0.5
    selector_hidden: int = 256
    selector_dropout: float = 0.1
    seed: int = 1337

    def validate(self) -> None:
        if self.mode not in ("sequential", "joint"):
            raise ConfigError(f"mode must be sequential or joint, got '{self.mode}'")
        if not self.tasks:
            raise ConfigError("no task manifests configured")
        if self.mode == "joint" and len(self.tasks) < 2:
            raise ConfigError("joint mode needs at least two tasks")
        if self.epochs < 1 or self.selector_epochs < 1:
            raise ConfigError("epochs and selector_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.replay_ratio <= 1.0:
            raise ConfigError("replay_ratio must lie in [0, 1]")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity must be >= 0")

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "RunConfig":
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
            ftype = known[key].type
            try:
                if key == "tasks":
                    kwargs[key] = [p.strip() for p in raw.split(",") if p.strip()]
                elif ftype == "int":
                    kwargs[key] = int(raw)
                elif ftype == "float":
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = raw
            except ValueError as exc:
                raise ConfigError(f"config key '{key}': {exc}") from exc
        config = cls(**kwargs)
        config.validate()
        return config

    def echo_lines(self) -> list[str]:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "tasks":
                value = ", ".join(value)
            lines.append(f"{f.name} = {value}")
        return lines

    def echo_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = ", ".join(value) if f.name == "tasks" else str(value)
        return out
