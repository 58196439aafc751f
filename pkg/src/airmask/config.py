"""Single-document run configuration with strict key checking.

One JSON file drives every CLI workflow. Unknown keys anywhere in the
document are rejected up front so typos cannot silently fall back to
defaults. `--set section.key=value` overrides individual entries.
"""

import copy
import json

import numpy as np

from .channel import AugmentConfig
from .errors import ConfigError
from .room_sim import RoomGenConfig, RoomTemplate

DEFAULTS = {
    "seed": 2026,
    "corpus": {
        "letters": "abcdef",
        "count": 2000,
        "len_min": 2,
        "len_max": 6,
    },
    "asr": {
        "hidden1": 48,
        "hidden2": 48,
        "epochs": 12,
        "learning_rate": 0.05,
        "momentum": 0.9,
        "batch_size": 16,
        "holdout_fraction": 0.1,
    },
    "rooms": {
        "count": 30,
        "wall_jitter_m": 0.5,
        "position_jitter_m": 0.3,
        "max_order": 6,
        "rir_seconds": 0.25,
        "template": {
            "size": [5.0, 4.0, 2.7],
            "speaker": [1.2, 1.0, 1.2],
            "mic": [3.4, 2.7, 1.1],
            "sofa_origin": [2.2, 0.5, 0.0],
            "sofa_size": [1.8, 0.8, 0.7],
            "absorption": {
                "floor": 0.25,
                "ceiling": 0.15,
                "wall_x0": 0.10,
                "wall_x1": 0.10,
                "wall_y0": 0.10,
                "wall_y1": 0.40,
            },
            "sofa_absorption": 0.60,
            "curtain_wall": "wall_y1",
        },
    },
    "augment": {
        "enable_fr": True,
        "enable_rooms": True,
        "enable_timeshift": True,
        "pad_max": 1600,
        "room_batch": "all",
    },
    "attack": {
        "lambda_step": 0.05,
        "lambda_max": 1.0,
        "check_interval": 10,
        "learning_rate": 0.02,
        "max_iterations": 20000,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "clip": 0.5,
        "generation_rooms": 20,
        "checkpoint_every": 0,
    },
    "eval": {
        "trials": 10,
    },
}


def _check_keys(doc, schema, path=""):
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a section")
            # template absorption carries a fixed key set of its own
            _check_keys(value, schema[key], where)


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_set_override(expr):
    if "=" not in expr:
        raise ConfigError(f"--set expects KEY=VALUE, got {expr!r}")
    key, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    doc = value
    for part in reversed(key.strip().split(".")):
        if not part:
            raise ConfigError(f"--set key {key!r} is malformed")
        doc = {part: doc}
    return doc


def load_config(path=None, sets=(), seed=None):
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
    for expr in sets:
        doc = _deep_merge(doc, parse_set_override(expr))
    _check_keys(doc, DEFAULTS)
    merged = _deep_merge(DEFAULTS, doc)
    if seed is not None:
        merged["seed"] = int(seed)
    return merged


def sub_seed(cfg, stream):
    """Stable per-component seed derived from the master seed."""
    streams = {"corpus": 1, "train": 2, "rooms": 3, "attack": 4, "eval": 5, "channel": 6}
    ss = np.random.SeedSequence(entropy=cfg["seed"], spawn_key=(streams[stream],))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def room_template(cfg) -> RoomTemplate:
    t = cfg["rooms"]["template"]
    return RoomTemplate(
        size=t["size"],
        speaker=t["speaker"],
        mic=t["mic"],
        sofa_origin=t["sofa_origin"],
        sofa_size=t["sofa_size"],
        absorption=t["absorption"],
        sofa_absorption=t["sofa_absorption"],
        curtain_wall=t["curtain_wall"],
    )


def room_gen_config(cfg) -> RoomGenConfig:
    r = cfg["rooms"]
    return RoomGenConfig(
        count=r["count"],
        wall_jitter_m=r["wall_jitter_m"],
        position_jitter_m=r["position_jitter_m"],
        seed=sub_seed(cfg, "rooms"),
    )


def augment_config(cfg, seed_stream="channel") -> AugmentConfig:
    a = cfg["augment"]
    return AugmentConfig(
        enable_fr=a["enable_fr"],
        enable_rooms=a["enable_rooms"],
        enable_timeshift=a["enable_timeshift"],
        pad_max=a["pad_max"],
        room_batch=a["room_batch"],
        seed=sub_seed(cfg, seed_stream),
    )
