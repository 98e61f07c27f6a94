"""Experiment configuration: schema, defaults, validation, hashing, overrides.

Configs are plain nested mappings loaded from YAML and merged over the
defaults below. The config hash is taken over the canonical JSON form
(sorted keys), so it is stable under key reordering.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigurationError

DEFAULTS: dict = {
    "source": "synthetic_source",
    "target": "synthetic_target",
    "datasets_root": "datasets",
    "encoder": "conv",
    "seeds": [0, 1, 2, 3, 4],
    "folds": [0, 1, 2, 3, 4],
    "n_per_class": [2, 5, 10, 50, 100],
    "pseudo_label_threshold": 0.30,
    "loss_weights": {"lambda1": 0.7, "lambda2": 0.8},
    "nt_xent_temperature": 0.1,
    "kl_direction": "pseudo_to_student",  # or "student_to_pseudo"
    "ablation": {
        "simclr_loss": True,
        "consistency": True,
        "source_augmentation": True,
    },
    "teacher": {
        "lr": 1e-3,
        "weight_decay": 1e-5,
        "batch_size": 256,
        "epochs": 100,
        "patience": 15,
    },
    "student": {
        "lr": 5e-4,
        "weight_decay": 1e-5,
        "batch_size": 256,
        "epochs": 100,
        "patience": 15,
    },
    "fewshot": {
        "lr": 1e-3,
        "weight_decay": 0.0,
        "batch_size": 0,  # 0 = scale with the number of sampled windows
        "epochs": 100,
        "patience": 15,
    },
    "simclr": {
        "lr": 1e-3,
        "weight_decay": 1e-5,
        "batch_size": 1024,
        "epochs": 50,
        "patience": 10,
    },
    "cpc": {
        "lr": 5e-4,
        "weight_decay": 1e-5,
        "batch_size": 64,
        "epochs": 50,
        "patience": 10,
        "prediction_steps": 28,
    },
    "window": {"length": 50, "overlap": 0.5, "rate_hz": 50.0},
}

# Published reference values; deviations trigger warnings.
PUBLISHED_DEFAULTS = {
    "pseudo_label_threshold": 0.30,
    "loss_weights": {"lambda1": 0.7, "lambda2": 0.8},
    "teacher": {"batch_size": 256},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def load_config(path: Path | None = None, overrides: list[str] | None = None) -> dict:
    config = default_config()
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        config = _deep_merge(config, loaded)
    for item in overrides or []:
        config = apply_override(config, item)
    return config


def apply_override(config: dict, item: str) -> dict:
    """Apply one dotted `key=value` override, e.g. `student.lr=1e-3`."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} must look like key=value")
    dotted, raw = item.split("=", 1)
    keys = dotted.strip().split(".")
    node = config
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigurationError(f"unknown config section {key!r} in override {item!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 only accepts scientific notation with a dot ("1.0e-4");
        # accept the common shorthand "1e-4" too.
        try:
            value = float(value)
        except ValueError:
            pass
    node[keys[-1]] = value
    return config


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def stage_hash(config: dict, stage: str, seed: int | None = None, fold: int | None = None) -> str:
    """Hash of the config slice a stage depends on, so unrelated edits do
    not invalidate its cache."""
    relevant = {
        "ingest": ["source", "target", "datasets_root", "window", "folds"],
        "teacher": ["source", "datasets_root", "window", "encoder", "teacher",
                    "ablation", "folds"],
        "pseudolabel": ["source", "target", "datasets_root", "window", "encoder",
                        "teacher", "pseudo_label_threshold", "ablation", "folds"],
        "student": ["source", "target", "datasets_root", "window", "encoder", "teacher",
                    "pseudo_label_threshold", "loss_weights", "nt_xent_temperature",
                    "kl_direction", "student", "ablation", "folds"],
        "fewshot": None,  # depends on everything upstream
        "baseline": None,
        "report": None,
        "search": None,
        "ablate": None,
    }[stage]
    blob = config if relevant is None else {k: config[k] for k in relevant}
    payload = {"stage": stage, "config": blob, "seed": seed, "fold": fold}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def validate_config(config: dict) -> list[str]:
    """Range checks plus warnings for deviations from the published defaults.

    Returns diagnostics as strings prefixed with `error:` or `warning:`.
    """
    diags: list[str] = []
    thr = config.get("pseudo_label_threshold")
    if not (isinstance(thr, (int, float)) and 0 < thr < 1):
        diags.append(f"error: pseudo_label_threshold must be in (0, 1), got {thr}")
    elif abs(thr - PUBLISHED_DEFAULTS["pseudo_label_threshold"]) > 1e-12:
        diags.append(f"warning: pseudo_label_threshold {thr} deviates from the published 0.30")

    weights = config.get("loss_weights", {})
    for name in ("lambda1", "lambda2"):
        value = weights.get(name)
        if not (isinstance(value, (int, float)) and value >= 0):
            diags.append(f"error: loss_weights.{name} must be >= 0, got {value}")
    if not diags and weights != PUBLISHED_DEFAULTS["loss_weights"]:
        diags.append(
            f"warning: loss weights {weights} deviate from the published "
            f"{PUBLISHED_DEFAULTS['loss_weights']}"
        )

    n_values = config.get("n_per_class", [])
    if not n_values or any((not isinstance(n, int)) or n <= 0 for n in n_values):
        diags.append(f"error: n_per_class must be positive integers, got {n_values}")

    if not config.get("seeds"):
        diags.append("error: seeds list must be nonempty")

    if config.get("encoder") not in ("conv", "deepconvlstm"):
        diags.append(f"error: unknown encoder {config.get('encoder')!r}")

    for stage in ("teacher", "student", "fewshot"):
        hp = config.get(stage, {})
        if hp.get("lr", 0) <= 0:
            diags.append(f"error: {stage}.lr must be positive")
        if hp.get("epochs", 0) < 0:
            diags.append(f"error: {stage}.epochs must be >= 0")
    return diags
