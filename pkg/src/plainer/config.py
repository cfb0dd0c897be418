"""Run configuration: one flat record shared by every command.

Values come from (lowest to highest precedence) the dataclass defaults, a
flat ``key = value`` config file, and command-line flags. The resolved
record is serialized into every checkpoint and report so results carry
their provenance. ``PLAINER_DATA`` sets the default data directory.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .model import ModelConfig

DATA_DIR_ENV = "PLAINER_DATA"


class ConfigurationError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    mode: str = "base"
    layers: int = 4
    heads: int = 5
    embedding_dim: int = 300
    d_ff: int = 0  # 0 means 4 * embedding_dim
    dropout: float = 0.2
    memory_query_layer: int = 1
    max_len: int = 85
    # preprocessing
    min_count: int = 3
    # optimization
    learning_rate: float = 0.1
    accumulator_init: float = 0.1
    gradient_clip: float = 4.0
    clip_mode: str = "norm"
    batch_size: int = 32
    train_steps: int = 2000
    critic_ratio: int = 1  # seq steps per critic step in critic modes
    checkpoint_every: int = 500
    validate_every: int = 0  # 0 disables validation during training
    seed: int = 13
    # decoding
    beam_size: int = 1
    length_normalize: bool = False
    # rulebase
    min_rule_weight: float = 0.0
    slots_per_rule: int = 1
    # paths (resolved against data_dir when relative)
    data_dir: str = field(default_factory=lambda: os.environ.get(DATA_DIR_ENV, "."))
    train_normal: str = ""
    train_simple: str = ""
    valid_normal: str = ""
    valid_simple: str = ""
    rulebase: str = ""
    embeddings: str = ""
    vocab: str = ""
    checkpoint: str = ""
    output: str = ""

    def path(self, name: str) -> Path:
        value = getattr(self, name)
        if not value:
            raise ConfigurationError(f"config field {name!r} is required but unset")
        p = Path(value)
        return p if p.is_absolute() else Path(self.data_dir) / p

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            layers=self.layers,
            heads=self.heads,
            d_model=self.embedding_dim,
            d_ff=self.d_ff or 4 * self.embedding_dim,
            vocab_size=vocab_size,
            dropout=self.dropout,
            memory_query_layer=self.memory_query_layer,
            mode=self.mode,
            max_len=self.max_len,
        )

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> RunConfig:
    """Rebuild a RunConfig from its `to_text` serialization."""
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kinds = {"str": str, "int": int, "float": float, "bool": bool}
    values = {}
    for line in text.splitlines():
        if " = " not in line:
            continue
        name, raw = line.split(" = ", 1)
        if name not in types:
            raise ConfigurationError(f"unknown config key {name!r} in serialized config")
        values[name] = _parse_value(name, raw, kinds[str(types[name])])
    return RunConfig(**values)


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigurationError(f"config field {name!r}: cannot parse {raw!r}") from exc


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; unknown keys are an error."""
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kinds = {"str": str, "int": int, "float": float, "bool": bool}
    values: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            name, raw = line.split("=", 1)
            name = name.strip()
            if name not in types:
                raise ConfigurationError(f"{path}:{lineno}: unknown config key {name!r}")
            values[name] = _parse_value(name, raw, kinds[str(types[name])])
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides."""
    values: dict = {}
    if file_path is not None:
        values.update(read_config_file(file_path))
    for name, value in (overrides or {}).items():
        if value is not None:
            values.update({name: value})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
