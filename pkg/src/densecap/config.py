"""Run configuration: documented defaults, JSON loading, strict validation.

Precedence is defaults < config file < command-line flags. Unknown keys are
rejected so typos never silently fall back to a default.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import ConfigError, FormatError
from .ioutil import atomic_path

DEFAULTS: dict = {
    "seed": 0,
    "synth": {
        "n_videos": 200,
        "n_videos_val": 50,
        "duration_min": 30.0,
        "duration_max": 120.0,
        "fps": 64.0,
        "feature_dim": 32,
        "n_topics": 8,
        "events_min": 1,
        "events_max": 4,
        "mixture_means": [0.1, 0.3, 0.7],
        "mixture_weights": [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        "mixture_sigma": 0.03,
        "noise_sigma": 0.3,
    },
    "context": {"decay": 0.9},
    "cluster": {"k": 20},
    "propose": {"pos_tiou": 0.7, "neg_tiou": 0.5},
    "ranker": {
        "hidden": 128,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 256,
        "epochs": 20,
        "threshold": 0.5,
    },
    "captioner": {
        "d_embed": 64,
        "d_hidden": 128,
        "max_len": 20,
        "min_count": 1,
        "xe_epochs": 10,
        "lr": 1e-3,
        "clip": 5.0,
        "boundary_context": False,
        "topic_epochs": 30,
        "topic_lr": 1e-2,
    },
    "scst": {
        "epochs": 1,
        "lr": 1e-4,
        "alpha_cider": 1.0,
        "alpha_meteor": 1.0,
        "clip": 5.0,
    },
    "caption": {"beam": 5},
    "rerank": {"top_k": 10},
    "eval": {"thresholds": [0.3, 0.5, 0.7]},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | os.PathLike | None = None) -> dict:
    """Materialize the full config, merging an optional JSON file over defaults."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config '{path}' is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"config '{path}': top level must be an object")
    return _merge(DEFAULTS, user)


def apply_overrides(cfg: dict, overrides: dict[str, object]) -> dict:
    """Apply dotted-path overrides (e.g. ``{"cluster.k": 10}``), skipping Nones."""
    out = copy.deepcopy(cfg)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = out
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key '{dotted}'")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config key '{dotted}'")
        node[leaf] = value
    return out


def write_resolved(cfg: dict, extra: dict, path: str | os.PathLike) -> None:
    """Record the fully-resolved config plus invocation paths for replay."""
    obj = dict(cfg)
    obj["invocation"] = extra
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
