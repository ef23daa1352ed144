"""Experiment configuration: JSON schema, loading, hashing and presets."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .analysis import DATASET_RULES
from .embeddings import ENTANGLERS
from .embeddings import KINDS as EMBEDDINGS
from .losses import MEASUREMENT_KINDS
from .qnn import BLOCK_LAYOUTS
from .qnn import KINDS as QNNS

EXPERIMENTS = ("variance-sweep", "fi-spectrum", "hs-sweep", "prop1-check", "theorem1-check", "train")
SECTION_OF = {
    "variance-sweep": "sweep",
    "fi-spectrum": "sweep",
    "hs-sweep": "sweep",
    "theorem1-check": "theorem1",
    "prop1-check": "prop1",
    "train": "train",
}
# keys that change only how a run executes, never its numbers
EXECUTION_KEYS = ("threads", "output_dir")


class ConfigError(ValueError):
    pass


_EMBEDDING = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(EMBEDDINGS)},
        "layers": {"type": "integer", "minimum": 1},
        "entangler": {"enum": list(ENTANGLERS)},
    },
}
_QUBITS = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["qubit_range"],
            "properties": {
                "qubit_range": _QUBITS,
                "embeddings": {"type": "array", "items": _EMBEDDING, "minItems": 1},
                "qnns": {"type": "array", "items": {"enum": list(QNNS)}, "minItems": 1},
                "block_param_count": {"enum": sorted(BLOCK_LAYOUTS)},
                "measurement": {"enum": list(MEASUREMENT_KINDS[:2])},
                "losses": {"type": "array", "items": {"enum": ["Linear", "MSE", "NLL"]}, "minItems": 1},
                "clip_floor": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "dataset_rule": {"enum": list(DATASET_RULES)},
                "include_single_point": {"type": "boolean"},
                "points_per_n": {"type": ["integer", "null"], "minimum": 1},
                "param_samples": {"type": "integer", "minimum": 2},
                "grad_index": {"oneOf": [{"type": "integer", "minimum": 0}, {"enum": ["all", "first-measured"]}]},
                "hs_points": {"type": "integer", "minimum": 1},
                "data_dir": {"type": "string"},
            },
        },
        "theorem1": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "configurations": {"type": "integer", "minimum": 1},
                "qubit_choices": _QUBITS,
                "losses": {"type": "array", "items": {"enum": ["Linear", "MSE", "NLL"]}, "minItems": 1},
                "param_samples": {"type": "integer", "minimum": 2},
                "points_per_n": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "prop1": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s": {"type": "integer", "minimum": 1},
                "qubit_range": _QUBITS,
                "states": {"type": "integer", "minimum": 2},
                "trials": {"type": "integer", "minimum": 1000},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_qubits": {"type": "integer", "minimum": 2},
                "qnn": {"enum": list(QNNS)},
                "block_param_count": {"enum": sorted(BLOCK_LAYOUTS)},
                "embeddings": {"type": "array", "items": _EMBEDDING, "minItems": 1},
                "measurement": {"enum": list(MEASUREMENT_KINDS[:2])},
                "iterations": {"type": "integer", "minimum": 0},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "runs": {"type": "integer", "minimum": 1},
                "train_count": {"type": "integer", "minimum": 1},
                "test_count": {"type": "integer", "minimum": 1},
                "data_dir": {"type": "string"},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "sweep": {
        "embeddings": [{"kind": "TPE", "layers": 1}],
        "qnns": ["TensorRY"],
        "block_param_count": 15,
        "measurement": "GlobalParity",
        "losses": ["NLL"],
        "clip_floor": 1e-9,
        "dataset_rule": "random-uniform",
        "include_single_point": False,
        "points_per_n": None,
        "param_samples": 200,
        "grad_index": 0,
        "hs_points": 2000,
    },
    "theorem1": {
        "configurations": 100,
        "qubit_choices": [2, 4, 6],
        "losses": ["MSE", "NLL"],
        "param_samples": 2000,
        "points_per_n": None,
    },
    "prop1": {"s": 2, "qubit_range": [4, 6], "states": 6, "trials": 2000},
    "train": {
        "n_qubits": 8,
        "qnn": "QCNN",
        "block_param_count": 15,
        "embeddings": [{"kind": "HEE", "layers": 1}, {"kind": "CHE", "layers": 2}],
        "measurement": "LocalParity2",
        "iterations": 200,
        "learning_rate": 0.02,
        "runs": 10,
        "train_count": 400,
        "test_count": 40,
    },
}

def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    section = SECTION_OF[doc["experiment"]]
    stray = [k for k in SECTION_OF.values() if k in doc and k != section]
    if stray:
        raise ConfigError(f"sections {stray} do not apply to experiment {doc['experiment']!r}")
    if section == "sweep" and section not in doc:
        raise ConfigError(f"experiment {doc['experiment']!r} needs a 'sweep' section")
    if section == "sweep":
        qr = doc["sweep"]["qubit_range"]
        if any(b <= a for a, b in zip(qr, qr[1:])):
            raise ConfigError("sweep.qubit_range must be strictly ascending")


def with_defaults(doc: dict) -> dict:
    """Validated copy of ``doc`` with every omitted field filled in."""
    validate(doc)
    out = copy.deepcopy(doc)
    out.setdefault("seed", DEFAULTS["seed"])
    out.setdefault("threads", DEFAULTS["threads"])
    section = SECTION_OF[out["experiment"]]
    merged = copy.deepcopy(DEFAULTS[section])
    merged.update(out.get(section, {}))
    for emb in merged.get("embeddings", []):
        emb.setdefault("layers", 1)
        emb.setdefault("entangler", "CNOT")
    out[section] = merged
    return out


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def canonical(doc: dict) -> bytes:
    numeric = {k: v for k, v in doc.items() if k not in EXECUTION_KEYS}
    return json.dumps(numeric, sort_keys=True, separators=(",", ":")).encode()


def config_hash(doc: dict) -> str:
    """Git blob id of the canonical JSON of the fully defaulted config."""
    body = canonical(doc)
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def preset_names() -> list[str]:
    files = resources.files("qmlplateau").joinpath("presets").iterdir()
    return sorted(p.name[: -len(".json")] for p in files if p.name.endswith(".json"))


def preset(name: str) -> dict:
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}")
    return json.loads(resources.files("qmlplateau").joinpath("presets", f"{name}.json").read_text())
