"""Pipeline hyperparameters and their validation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

CONFIG_ENV = "MMJRE_CONFIG"


@dataclass(frozen=True)
class PipelineConfig:
    d_T: int = 768
    d_I: int = 4096
    d_z: int = 100
    d_l: int = 100
    max_tokens: int = 70
    max_objects: int = 10
    sinkhorn_inner: int = 20
    sinkhorn_outer: int = 5
    epsilon: float = 0.1
    alpha: float = 0.4
    lam: float = 0.6
    heads: int = 8
    encoder_layers: int = 1
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    sd_cap: int = 32
    co_cap: int = 16
    seed: int = 0
    learning_rate: float = 2e-5
    lr_decay: float = 0.5
    patience: int = 5
    max_epochs: int = 50
    align_init: str = "node"

    def __post_init__(self):
        for name in ("d_T", "d_I", "d_z", "d_l", "max_tokens", "max_objects", "sinkhorn_inner",
                     "sinkhorn_outer", "heads", "ffn_mult", "max_epochs"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive (got {getattr(self, name)})")
        for name in ("encoder_layers", "sd_cap", "co_cap", "patience"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be non-negative (got {getattr(self, name)})")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1] (got {self.alpha})")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0 (got {self.lam})")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0 (got {self.epsilon})")
        if self.d_T % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_T={self.d_T}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0 (got {self.learning_rate})")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1] (got {self.lr_decay})")
        if not self.ln_eps > 0:
            raise ConfigError(f"ln_eps must be > 0 (got {self.ln_eps})")
        if self.align_init not in ("node", "product"):
            raise ConfigError(f"align_init must be 'node' or 'product' (got {self.align_init!r})")

    def updated(self, **overrides) -> "PipelineConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **_coerce(overrides))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def _coerce(values: dict) -> dict:
    known = {f.name: f for f in fields(PipelineConfig)}
    out = {}
    for key, value in values.items():
        name = "lam" if key == "lambda" else key
        if name not in known:
            raise ConfigError(f"unknown config field {key!r}")
        default = getattr(PipelineConfig, name)
        try:
            if isinstance(default, bool) or isinstance(default, str):
                out[name] = type(default)(value)
            elif isinstance(default, int):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError
                out[name] = int(value)
            else:
                out[name] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: cannot interpret {value!r}") from None
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    """Defaults, then the JSON file (explicit path or ``$MMJRE_CONFIG``), then overrides."""
    path = path or os.environ.get(CONFIG_ENV)
    cfg = PipelineConfig()
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        cfg = replace(cfg, **_coerce(data))
    return cfg.updated(**overrides)
