"""Run configuration: JSON schema, defaults and command-line overrides."""

import copy
import json

import jsonschema

from .errors import ConfigError
from .optimizers import KINDS as OPTIMIZER_KINDS
from .sdmlp import MODES

DEFAULTS = {
    "model": {"kind": "sdmlp", "r": 1000, "k_target": 10, "s": 10, "mode": "anneal_subtract"},
    "optimizer": {"kind": "sgd", "lr": 0.1},
    "regularizer": {"method": "none"},
    "data": {},
    "tasks": {"classes_per_task": 2, "epochs_per_task": 50, "seeds": [0], "class_seed": None},
    "training": {"batch_size": 128, "precision": "float32", "eval_every": 1},
    "deterministic": False,
    "output_dir": "results",
}

_optimizer = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "lr"],
    "properties": {
        "kind": {"enum": list(OPTIMIZER_KINDS)},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta1": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta2": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eps": {"type": "number", "minimum": 0},
        "sparse_mode": {"type": "boolean"},
        "standard_adam": {"type": "boolean"},
    },
}

_data = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mnist_dir": {"type": "string"},
        "train_images": {"type": "string"},
        "train_labels": {"type": "string"},
        "val_images": {"type": "string"},
        "val_labels": {"type": "string"},
        "train_embeddings": {"type": "string"},
        "val_embeddings": {"type": "string"},
        "max_train": {"type": "integer", "minimum": 1},
        "max_val": {"type": "integer", "minimum": 1},
    },
}

_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "optimizer", "tasks"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["sdmlp", "relu", "topk", "flymodel"]},
                "r": _count,
                "k_target": _count,
                "k_max": _count,
                "s": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": list(MODES)},
                "detach_inhibition": {"type": "boolean"},
                "topk_mode": {"enum": ["mask", "subtract"]},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "ablations": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        name: {"type": "boolean"}
                        for name in ("allow_negative_weights", "disable_l2_norm", "hidden_bias", "output_bias")
                    },
                },
                "q": _count,
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "decay": {"type": "boolean"},
            },
        },
        "optimizer": _optimizer,
        "regularizer": {
            "type": "object",
            "additionalProperties": False,
            "required": ["method"],
            "properties": {
                "method": {"enum": ["none", "ewc", "mas", "si", "l2"]},
                "lambda_reg": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "xi": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "data": _data,
        "tasks": {
            "type": "object",
            "additionalProperties": False,
            "required": ["epochs_per_task"],
            "properties": {
                "classes_per_task": _count,
                "epochs_per_task": {"type": "integer", "minimum": 0},
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "class_seed": {"type": ["integer", "null"]},
            },
        },
        "pretrain": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["epochs"],
            "properties": {"epochs": _count, "data": _data, "optimizer": _optimizer},
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch_size": _count,
                "precision": {"enum": ["float32", "float64"]},
                "eval_every": _count,
            },
        },
        "deterministic": {"type": "boolean"},
        "output_dir": {"type": "string"},
    },
}


def merge(base, extra):
    """Recursive dict merge; values from ``extra`` win."""
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    model = doc["model"]
    if model["kind"] in ("sdmlp", "topk") and model.get("k_target", 1) > model.get("r", 1000):
        raise ConfigError("k_target cannot exceed r")
    return doc


def resolve(doc, overrides=None):
    """Validate a user document, fill defaults and apply dotted-key overrides."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    validate(doc)  # reject unknown keys in what the user wrote
    # the model default only applies when the user kept the same model kind
    base = copy.deepcopy(DEFAULTS)
    if doc["model"]["kind"] != base["model"]["kind"]:
        base["model"] = {"kind": doc["model"]["kind"], "r": 1000}
    cfg = merge(base, doc)
    for key, value in (overrides or {}).items():
        set_dotted(cfg, key, value)
    model = cfg["model"]
    if model["kind"] == "sdmlp":
        model.setdefault("k_max", model["r"])
    return validate(cfg)


def set_dotted(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def load(path, overrides=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return resolve(doc, overrides)


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True)
