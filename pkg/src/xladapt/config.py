"""Layered run configuration: compiled-in defaults, a flat TOML file,
then command-line overrides, in rising precedence.

Keys are flat and typed; unknown keys and type mismatches are rejected
rather than ignored so a typo cannot silently fall back to a default.
The training-recipe fields near the bottom are carried as reference
defaults for manifests; nothing in this package consumes them to train.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from .errors import ConfigError
from .manifest import sha256_bytes


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 0  # 0 means use the machine's core count

    # tokenizer
    vocab_size: int = 30000
    prefix_space: bool = True

    # embedding
    init_std: float = 0.02

    # quantization and adapters
    rank: int = 64
    alpha: float = 16.0
    lora_dropout: float = 0.1
    block_size: int = 64
    context_len: int = 2048

    # corpus cleaning
    min_tokens: int = 10
    strip_special: bool = False

    # dedup
    perms: int = 256
    bands: int = 32
    threshold: float = 0.8
    epsilon: float = 0.1
    epsilon_convention: str = "gap"
    kmeans_k: int = 0  # 0 means one cluster per 1000 points

    # dialogue
    group_size: int = 4
    keep_side: str = "prefix"

    # judge
    score_pattern: str = r"\[\[(\d+)\]\]"
    cjk_threshold: float = 0.3
    retries: int = 3
    backoff: float = 0.5

    # adaptation-stage recipe (reference values, not consumed here)
    cpt_peak_lr: float = 3e-4
    cpt_warmup_steps: int = 2000
    cpt_weight_decay: float = 0.1
    cpt_grad_clip: float = 1.0
    cpt_batch_size: int = 64

    # instruction-tuning recipe (reference values, not consumed here)
    sft_epochs: int = 5
    sft_peak_lr: float = 1e-4
    sft_warmup_ratio: float = 0.03
    sft_grad_norm: float = 0.3
    sft_dropout: float = 0.05

    def hash(self) -> str:
        return sha256_bytes(
            json.dumps(dataclasses.asdict(self), sort_keys=True).encode("utf-8")
        )


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _check_type(key: str, value):
    want = _FIELDS[key]
    if want == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
    elif want == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        value = float(value)
    elif want == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean, got {value!r}")
    elif want == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
    return value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build the effective config: overrides > file > defaults."""
    cfg = RunConfig()
    if path is not None:
        try:
            data = _toml.loads(Path(path).read_text(encoding="utf-8"))
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: not valid TOML: {exc}") from exc
        for key, value in data.items():
            if isinstance(value, dict):
                raise ConfigError(f"config key {key!r}: nested tables are not supported")
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _check_type(key, value))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _check_type(key, value))
    return cfg
