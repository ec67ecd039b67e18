"""Flat pipeline configuration: defaults, TOML file, command-line overrides."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

# key -> default. None means "use the stage default" (pretraining vs fine-tuning).
DEFAULTS = {
    # lexicon filter
    "alpha": 2.5,
    "beta": 1000,
    "split_ratio": 0.8,
    "max_iterations": 50,
    "cold_start": False,
    # trainer
    "backend": "reference",  # or "transformer" (needs the transformers extra)
    "model": "",  # hub id or local directory for the transformer backend
    "learning_rate": None,  # 0.02 for the reference encoder, 2e-5 for transformers
    "max_epochs": None,  # 100 for lexicon pretraining, 20 for fine-tuning
    "patience": 5,
    "dropout": 0.2,
    "max_length": None,  # 10 for lexicon pretraining, 512 for fine-tuning
    "batch_size": None,  # 4 for lexicon pretraining, 32 for fine-tuning
    "dim": 32,
    "seed": 0,
    "seeds": [0, 1, 2, 3, 4],
    "objective": "regression",
    "task": "binary",
    # lexicon handling
    "merge_policy": "mean",
    "case_fold": False,
    # few-shot
    "n_train": 100,
    "n_dev": 50,
    "stratified": False,
    # prompting
    "normalization": "label",
    "parallelism": 4,
    "retries": 3,
}

STAGE_DEFAULTS = {
    "pretrain": {"max_epochs": 100, "max_length": 10, "batch_size": 4},
    "finetune": {"max_epochs": 20, "max_length": 512, "batch_size": 32},
}


class ConfigError(ValueError):
    pass


# types of keys whose default is None
NONE_DEFAULT_TYPES = {"learning_rate": float, "max_epochs": int, "max_length": int, "batch_size": int}


def _coerce(key, value):
    default = DEFAULTS[key]
    if value is None:
        return value
    if default is None:
        default = NONE_DEFAULT_TYPES[key]()
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        return [int(v) for v in value]
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot read {value!r} as {type(default).__name__}") from None


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the TOML file, then command-line overrides.

    Unknown keys are rejected.
    """
    config = dict(DEFAULTS)
    layers = []
    if path is not None:
        with open(path, "rb") as fh:
            layers.append(tomllib.load(fh))
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    for layer in layers:
        unknown = sorted(set(layer) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key, value in layer.items():
            config[key] = _coerce(key, value)
    return config


BACKEND_LEARNING_RATES = {"reference": 0.02, "transformer": 2e-5}


def learning_rate(config: dict) -> float:
    value = config["learning_rate"]
    return BACKEND_LEARNING_RATES[config["backend"]] if value is None else value


def stage_value(config: dict, key: str, stage: str):
    value = config[key]
    return STAGE_DEFAULTS[stage][key] if value is None else value


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_hash(path) -> str:
    """Hash of a file, or of every file under a directory (by relative path)."""
    path = Path(path)
    if path.is_file():
        return file_hash(path)
    h = hashlib.sha256()
    for child in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(child.relative_to(path)).encode("utf-8"))
        h.update(file_hash(child).encode("ascii"))
    return h.hexdigest()
