"""Experiment configuration files.

INI-style sections of ``key = value`` pairs. ``[meta] schema_version`` is
mandatory and every key must be known; a typo is an error, never a silent
default. Example::

    [meta]
    schema_version = 1
    name = desk-tngd

    [dataset]
    kind = blobs
    n_train = 2000
    n_test = 1000

    [optimizer]
    update_rule = sgd
    learning_rate = 0.01
    gradient_source = natural-gradient
    damping = 0.01

    [solver]
    kind = thermodynamic
    analog_time = 50
    step_size = 0.1

    [training]
    epochs = 10
    batch_size = 64
    seeds = 0, 1, 2, 3, 4

    [output]
    directory = runs/desk-tngd
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..curvature import ModelSpec
from ..errors import ConfigError
from ..optim import OptimizerConfig
from ..second_order import SolverChoice
from ..thermo_solver import TlsConfig
from .data import Dataset, load_idx, synth_dataset

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "TNGD_OUTPUT_ROOT"


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


# section -> key -> (parser, default); a default of REQUIRED must be given
REQUIRED = object()
SCHEMA = {
    "meta": {"schema_version": (int, REQUIRED), "name": (str, "experiment")},
    "dataset": {
        "kind": (str, "blobs"),
        "n_train": (int, 2000),
        "n_test": (int, 1000),
        "noise": (float, 1.0),
        "seed": (int, 0),
        "input_dim": (int, 10),
        "classes": (int, 3),
        "separation": (float, 3.0),
        "train_images": (str, ""),
        "train_labels": (str, ""),
        "test_images": (str, ""),
        "test_labels": (str, ""),
    },
    "model": {
        "hidden": (_ints, [16]),
        "activation": (str, "tanh"),
        "loss": (str, "auto"),
    },
    "optimizer": {
        "update_rule": (str, "sgd"),
        "learning_rate": (_opt_float, None),
        "momentum": (float, 0.0),
        "adam_beta1": (_opt_float, None),
        "adam_beta2": (_opt_float, None),
        "adam_eps": (float, 1e-8),
        "gradient_source": (str, "natural-gradient"),
        "damping": (float, 0.01),
        "lm_a": (_opt_float, None),
        "lm_alpha": (_opt_float, None),
        "delay_time": (float, 0.0),
    },
    "solver": {
        "kind": (str, "thermodynamic"),
        "cg_iterations": (int, 200),
        "analog_time": (float, 50.0),
        "step_size": (float, 0.1),
        "noise_variance": (float, 0.0),
        "window_fraction": (float, 0.1),
        "warm_start": (str, "keep-previous"),
    },
    "training": {
        "epochs": (int, 10),
        "batch_size": (int, 64),
        "seeds": (_ints, [0, 1, 2, 3, 4]),
        "max_iterations": (_opt_int, None),
        "jobs": (int, 1),
    },
    "output": {"directory": (str, "runs/experiment")},
}

# sweep axis -> (section, key)
SWEEP_AXES = {
    "t": ("solver", "analog_time"),
    "t_d": ("optimizer", "delay_time"),
    "kappa0": ("solver", "noise_variance"),
    "lambda": ("optimizer", "damping"),
    "eta": ("optimizer", "learning_rate"),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, section):
        return self.values[section]

    @property
    def name(self):
        return self.values["meta"]["name"]

    def with_value(self, section, key, value):
        values = {s: dict(kv) for s, kv in self.values.items()}
        values[section][key] = value
        cfg = ExperimentConfig(values, self.source)
        cfg.validate()
        return cfg

    def output_dir(self):
        path = Path(self.values["output"]["directory"])
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path

    def to_dict(self):
        return {s: dict(kv) for s, kv in self.values.items()}

    def optimizer_config(self):
        o, s = self.values["optimizer"], self.values["solver"]
        lm = None
        if o["lm_a"] is not None or o["lm_alpha"] is not None:
            lm = (o["lm_a"] if o["lm_a"] is not None else 0.75,
                  o["lm_alpha"] if o["lm_alpha"] is not None else 2.0 / 3.0)
        tls = TlsConfig(s["noise_variance"], s["step_size"], s["analog_time"], s["window_fraction"], s["warm_start"])
        adam = o["update_rule"] == "adam"
        # TNGD-Adam defaults to (0, 0) moments; plain Adam to the usual (0.9, 0.999)
        hybrid = adam and o["gradient_source"] == "natural-gradient"
        lr = o["learning_rate"] if o["learning_rate"] is not None else (0.001 if adam else 0.01)
        beta1 = o["adam_beta1"] if o["adam_beta1"] is not None else (0.0 if hybrid else 0.9)
        beta2 = o["adam_beta2"] if o["adam_beta2"] is not None else (0.0 if hybrid else 0.999)
        return OptimizerConfig(
            update_rule=o["update_rule"],
            learning_rate=lr,
            momentum=o["momentum"],
            adam_beta1=beta1,
            adam_beta2=beta2,
            adam_eps=o["adam_eps"],
            gradient_source=o["gradient_source"],
            solver=SolverChoice(s["kind"], s["cg_iterations"], tls),
            damping=o["damping"],
            lm_schedule=lm,
            delay_time=o["delay_time"],
        )

    def load_dataset(self):
        d = self.values["dataset"]
        if d["kind"] == "idx":
            train_x, train_y = load_idx(d["train_images"], d["train_labels"])
            test_x, test_y = load_idx(d["test_images"], d["test_labels"])
            return Dataset(train_x[: d["n_train"]], train_y[: d["n_train"]], test_x[: d["n_test"]], test_y[: d["n_test"]])
        return synth_dataset(
            d["kind"], d["n_train"], d["seed"], d["noise"], d["n_test"],
            d["input_dim"], d["classes"], d["separation"],
        )

    def model_spec(self, dataset):
        m = self.values["model"]
        loss = m["loss"]
        if loss == "auto":
            loss = "softmax-cross-entropy" if dataset.task == "classification" else "mean-squared-error"
        sizes = [dataset.input_dim, *m["hidden"], dataset.output_dim]
        return ModelSpec.mlp(sizes, m["activation"], loss)

    def validate(self):
        try:
            opt = self.optimizer_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        d = self.values["dataset"]
        if d["kind"] == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not d[key] or not Path(d[key]).is_file():
                    raise ConfigError(f"[dataset] {key} must name an existing file")
        elif d["kind"] not in ("blobs", "two-moons", "least-squares"):
            raise ConfigError(f"unknown dataset kind {d['kind']!r}")
        t = self.values["training"]
        if t["batch_size"] < 1 or t["batch_size"] > d["n_train"]:
            raise ConfigError("batch_size must lie between 1 and n_train")
        if t["epochs"] < 0 or not t["seeds"]:
            raise ConfigError("need a non-negative epoch count and at least one seed")
        if t["jobs"] < 1:
            raise ConfigError("jobs must be at least 1")
        return opt


def parse_config(text, source=None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(parser.sections()) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    values = {}
    for section, keys in SCHEMA.items():
        given = dict(parser[section]) if parser.has_section(section) else {}
        extra = set(given) - set(keys)
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
        values[section] = {}
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    values[section][key] = conv(given[key])
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
            elif default is REQUIRED:
                raise ConfigError(f"[{section}] {key} is required")
            else:
                values[section][key] = default
    if values["meta"]["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {values['meta']['schema_version']} is not supported (expected {SCHEMA_VERSION})")
    cfg = ExperimentConfig(values, source)
    cfg.validate()
    return cfg


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), str(path))


def sweep_override(config, axis, value):
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    o = config["optimizer"]
    thermo = config["solver"]["kind"] == "thermodynamic" and o["gradient_source"] == "natural-gradient"
    if axis in ("t", "t_d", "kappa0") and not thermo:
        raise ConfigError(f"axis {axis!r} needs the thermodynamic natural-gradient optimizer")
    if axis == "lambda" and o["gradient_source"] != "natural-gradient":
        raise ConfigError("axis 'lambda' needs a natural-gradient optimizer")
    section, key = SWEEP_AXES[axis]
    return config.with_value(section, key, float(value))
