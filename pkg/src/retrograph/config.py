"""``key = value`` run configuration covering model and training knobs."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from retrograph.model import ModelConfig
from retrograph.training import TrainConfig


class ConfigError(ValueError):
    pass


MODEL_KEYS = {f.name: str(f.type) for f in dataclasses.fields(ModelConfig) if f.name != "vocab_size"}
TRAIN_KEYS = {f.name: str(f.type) for f in dataclasses.fields(TrainConfig)}


def _convert(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind.startswith("tuple"):
            return tuple(float(x) for x in raw.split(","))
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return None if raw.lower() in ("none", "") else float(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from e
    return raw


def parse_config_text(text: str, source: str = "<config>") -> tuple[dict, dict]:
    """Split a config file into (model overrides, train overrides)."""
    model, train = {}, {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in MODEL_KEYS:
            model[key] = _convert(key, MODEL_KEYS[key], value)
        elif key in TRAIN_KEYS:
            train[key] = _convert(key, TRAIN_KEYS[key], value)
        else:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
    return model, train


def load_config(path) -> tuple[dict, dict]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))


def resolved(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    """Every knob with defaults materialized, for manifests."""
    out = {f"model.{k}": v for k, v in dataclasses.asdict(model_cfg).items()}
    out.update({f"train.{k}": v for k, v in dataclasses.asdict(train_cfg).items()})
    return out
