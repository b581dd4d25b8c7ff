"""Experiment configuration: a JSON document validated against a fixed schema.

Unknown keys are rejected so typos fail loudly before any compute happens.
The full schema with defaults is printed by `fedcil central --print-schema`
and documented in the README.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .cil import (CentralizedTrainer, FederatedTrainer, TaskSchedule,
                  build_schedule, generate_synthetic)
from .dataset import Dataset, load_flow_csv, normalize, stratified_split
from .errors import ConfigError
from .fed import FedConfig
from .replay import ClearConfig

# leaf spec: (type tag, default). "number" accepts ints for float fields.
SCHEMA: dict = {
    "seed": ("int", 0),
    "dataset": {
        "flow_csv": ("str?", None),
        "label_column": ("str", "label"),
        "class_names": ("str_list?", None),
        "normalize": ("str", "minmax"),  # minmax | zscore | none
    },
    "synthetic": {
        "enabled": ("bool", False),
        "classes": ("int", 4),
        "per_class": ("int", 500),
        "dim": ("int", 12),
        "separation": ("number", 3.5),
        "clusters_per_class": ("int", 1),
    },
    "split": {
        "train": ("number", 0.7),
        "test": ("number", 0.3),
    },
    "model": {
        "hidden_dims": ("int_list", [300, 300, 300]),
        "value_head": ("bool", False),
    },
    "train": {
        "lr": ("number", 0.01),
        "batch_size": ("int", 32),
        "iterations": ("int", 1000),
    },
    "clear": {
        "enabled": ("bool", True),
        "buffer_capacity": ("int", 100),
        "replay_fraction": ("number", 0.5),
        "kl_weight": ("number", 1.0),
        "value_weight": ("number", 0.0),
    },
    "schedule": {
        "order": ("str", "random"),
        "explicit": ("str_list?", None),
    },
    "federation": {
        "clients": ("int", 10),
        "participation": ("number", 1.0),
        "rounds": ("int", 10),
        "local_iterations": ("int?", 300),
        "local_epochs": ("int?", None),
        "batch_size": ("int", 32),
        "partition": ("str", "iid"),  # iid | dirichlet
        "dirichlet_alpha": ("number", 0.5),
        "timeout": ("number", 30.0),
    },
    "output": {
        "dir": ("str", "runs"),
    },
}


def _check_leaf(path: str, spec: tuple, value):
    tag, default = spec
    if value is None:
        if tag.endswith("?"):
            return None
        return default
    base = tag.rstrip("?")
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "int_list": lambda v: isinstance(v, list) and all(
            isinstance(x, int) and not isinstance(x, bool) for x in v),
        "str_list": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
    }[base]
    if not ok(value):
        raise ConfigError(f"config key {path!r} must be {base}, got {value!r}")
    return float(value) if base == "number" else value


def validate_config(doc: dict) -> dict:
    """Fill defaults and reject unknown keys; returns the normalized tree."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")

    def walk(schema: dict, node: dict, prefix: str) -> dict:
        unknown = set(node) - set(schema)
        if unknown:
            raise ConfigError(f"unknown config keys at {prefix or 'top level'}: {sorted(unknown)}")
        out = {}
        for key, spec in schema.items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(spec, dict):
                sub = node.get(key, {})
                if not isinstance(sub, dict):
                    raise ConfigError(f"config key {path!r} must be an object")
                out[key] = walk(spec, sub, path)
            else:
                out[key] = _check_leaf(path, spec, node.get(key, spec[1]))
        return out

    return walk(SCHEMA, doc, "")


def schema_text() -> str:
    """Human-readable schema listing (key: type = default)."""
    lines = []

    def walk(schema: dict, prefix: str):
        for key, spec in schema.items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(spec, dict):
                walk(spec, path)
            else:
                lines.append(f"{path}: {spec[0]} = {spec[1]!r}")

    walk(SCHEMA, "")
    return "\n".join(lines)


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = cls(validate_config(doc))
        for key, value in (overrides or {}).items():
            if value is not None:
                node = cfg.raw
                *parents, leaf = key.split(".")
                for p in parents:
                    node = node[p]
                node[leaf] = value
        return cfg

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return cls(validate_config(doc))

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def uses_synthetic(self) -> bool:
        synth = self.raw["synthetic"]["enabled"]
        csv = self.raw["dataset"]["flow_csv"]
        if synth and csv:
            raise ConfigError("set either dataset.flow_csv or synthetic.enabled, not both")
        if not synth and not csv:
            raise ConfigError("config needs dataset.flow_csv or synthetic.enabled=true")
        return synth

    def load_full_dataset(self) -> Dataset:
        if self.uses_synthetic():
            s = self.raw["synthetic"]
            return generate_synthetic(s["classes"], s["per_class"], s["dim"],
                                      s["separation"], self.seed,
                                      s["clusters_per_class"])
        d = self.raw["dataset"]
        return load_flow_csv(d["flow_csv"], d["label_column"],
                             class_names=d["class_names"])

    def prepare_splits(self) -> tuple[Dataset, Dataset]:
        """Load, split, and normalize with train-split statistics."""
        full = self.load_full_dataset()
        s = self.raw["split"]
        train, test = stratified_split(full, (s["train"], s["test"]), self.seed)
        method = self.raw["dataset"]["normalize"]
        if method != "none":
            from .dataset import apply_normalization
            train, stats = normalize(train, method)
            test = apply_normalization(test, stats)
        return train, test

    def make_schedule(self, class_names: list[str]) -> TaskSchedule:
        s = self.raw["schedule"]
        return build_schedule(class_names, s["order"], self.seed, s["explicit"])

    def make_clear_config(self) -> ClearConfig | None:
        c = self.raw["clear"]
        if not c["enabled"]:
            return None
        return ClearConfig(c["replay_fraction"], c["kl_weight"], c["value_weight"],
                           c["buffer_capacity"])

    def make_fed_config(self) -> FedConfig:
        f = self.raw["federation"]
        if f["local_iterations"] is not None and f["local_epochs"] is not None:
            raise ConfigError("set only one of federation.local_iterations / local_epochs")
        return FedConfig(
            num_clients=f["clients"], rounds=f["rounds"], batch_size=f["batch_size"],
            local_epochs=f["local_epochs"], local_iterations=f["local_iterations"],
            participation=f["participation"], lr=self.raw["train"]["lr"],
            seed=self.seed, timeout=f["timeout"],
        )

    def make_centralized_trainer(self) -> CentralizedTrainer:
        t = self.raw["train"]
        return CentralizedTrainer(self.make_clear_config(), t["lr"], t["batch_size"],
                                  t["iterations"], self.seed)

    def make_federated_trainer(self, f32_boundary: bool = False) -> FederatedTrainer:
        f = self.raw["federation"]
        clear_cfg = self.make_clear_config()
        return FederatedTrainer(self.make_fed_config(),
                                "clear" if clear_cfg else "plain", clear_cfg,
                                f["partition"], f["dirichlet_alpha"], f32_boundary)
