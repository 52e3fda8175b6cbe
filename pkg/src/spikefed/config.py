"""Experiment configuration: JSON tree with strict validation.

Every key has a default; unknown keys are rejected with their dotted path.
``resolve`` returns a ResolvedConfig whose serialized form is itself a valid
config that reproduces the run exactly (the snapshot written next to the
metrics is the reproduction recipe).

Two configs are built in: "default" (the full synthetic reference setup)
and "smoke" (seconds-scale, for CI and equivalence tests).
"""

import copy
import json
from dataclasses import dataclass

from .data import DataConfig
from .energy import INPUT_CONVENTIONS, EnergyConstants
from .errors import ConfigError, DimensionError
from .federated import REGIMES, ExperimentPlan, TrainConfig
from .models import ArchitectureSpec, conv1d, dense
from .spiking import LIFConfig

BACKENDS = ("auto", "python", "cython")

DEFAULTS = {
    "seed": 1,
    "backend": "auto",
    "output_dir": "runs/latest",
    "regimes": ["pfl-snn", "pfl-ann", "fl-snn", "fl-ann"],
    "train": {
        "learning_rate": 0.01,
        "batch_size": 64,
        "local_epochs": 2,
        "mu": 1e-5,
        "rounds": 30,
    },
    "model": {
        "architecture": None,
    },
    "lif": {
        "steps": 6,
        "leak": 0.5,
        "eta": 2.0,
        "threshold": 1.0,
    },
    "data": {
        "source": "synthetic",
        "num_clients": 3,
        "train_per_client": 480,
        "test_per_client": 120,
        "channels": 8,
        "length": 128,
        "num_classes": 4,
        "heterogeneity": 0.6,
        "snr_db": 10.0,
        "path": None,
        "normalize": False,
        "resplit": None,
    },
    "diagnostics": {
        "enabled": True,
        "cadence": 10,
        "prox_steps": 50,
    },
    "energy": {
        "e_mac_pj": 4.6,
        "e_ac_pj": 0.9,
        "input_layer": "ac_once",
    },
}

BUILTIN_CONFIGS = {
    "default": {},
    "smoke": {
        "seed": 7,
        "output_dir": "runs/smoke",
        "train": {"rounds": 2, "batch_size": 16, "local_epochs": 1},
        "lif": {"steps": 4},
        "model": {
            "architecture": [
                {"kind": "conv1d", "out_channels": 8, "kernel_size": 5, "stride": 2},
                {"kind": "dense", "width": 16},
                {"kind": "dense", "width": 4},
            ],
        },
        "data": {
            "num_clients": 2,
            "train_per_client": 48,
            "test_per_client": 16,
            "channels": 4,
            "length": 32,
            "heterogeneity": 0.5,
        },
        "diagnostics": {"cadence": 1},
    },
}


def load_config(source):
    """Raw config dict from a builtin name, a file path, or a dict."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    name = str(source)
    if name in BUILTIN_CONFIGS:
        return copy.deepcopy(BUILTIN_CONFIGS[name])
    try:
        with open(name, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=name)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
            path=name)
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", path=name)
    return raw


def _reject_unknown(raw, schema, prefix):
    for key, value in raw.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in schema:
            raise ConfigError("unknown key", path=path)
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected an object", path=path)
            _reject_unknown(value, schema[key], path)


def _deep_update(base, over):
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _int(tree, path, lo=None, hi=None):
    v = _leaf(tree, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}", path=path)
    if lo is not None and v < lo:
        raise ConfigError(f"must be >= {lo}, got {v}", path=path)
    if hi is not None and v > hi:
        raise ConfigError(f"must be <= {hi}, got {v}", path=path)
    return v


def _float(tree, path, lo=None, lo_open=None, hi=None):
    v = _leaf(tree, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", path=path)
    v = float(v)
    if lo is not None and v < lo:
        raise ConfigError(f"must be >= {lo}, got {v}", path=path)
    if lo_open is not None and v <= lo_open:
        raise ConfigError(f"must be > {lo_open}, got {v}", path=path)
    if hi is not None and v > hi:
        raise ConfigError(f"must be <= {hi}, got {v}", path=path)
    return v


def _bool(tree, path):
    v = _leaf(tree, path)
    if not isinstance(v, bool):
        raise ConfigError(f"expected true or false, got {v!r}", path=path)
    return v


def _choice(tree, path, options):
    v = _leaf(tree, path)
    if v not in options:
        raise ConfigError(f"must be one of {list(options)}, got {v!r}", path=path)
    return v


def _leaf(tree, path):
    node = tree
    for part in path.split("."):
        node = node[part]
    return node


_CONV_KEYS = {"kind", "out_channels", "kernel_size", "stride"}
_DENSE_KEYS = {"kind", "width"}


def _layer_int(item, key, path, default=None):
    if key not in item:
        if default is not None:
            return default
        raise ConfigError(f"missing required key {key!r}", path=path)
    v = item[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{key} must be a positive integer, got {v!r}", path=path)
    return v


def _parse_layers(value, path):
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        raise ConfigError("must be null or a non-empty list of layer objects",
                          path=path)
    specs = []
    for i, item in enumerate(value):
        p = f"{path}[{i}]"
        if not isinstance(item, dict):
            raise ConfigError("layer must be an object", path=p)
        kind = item.get("kind")
        if kind == "conv1d":
            unknown = set(item) - _CONV_KEYS
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)}", path=p)
            specs.append(conv1d(
                _layer_int(item, "out_channels", p),
                _layer_int(item, "kernel_size", p),
                _layer_int(item, "stride", p, default=1),
            ))
        elif kind == "dense":
            unknown = set(item) - _DENSE_KEYS
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)}", path=p)
            specs.append(dense(_layer_int(item, "width", p)))
        else:
            raise ConfigError(
                f"layer kind must be 'conv1d' or 'dense', got {kind!r}",
                path=f"{p}.kind")
    return tuple(specs)


@dataclass
class ResolvedConfig:
    """Validated full config tree plus parsed layer specs."""

    tree: dict
    layers: tuple = None

    @property
    def seed(self):
        return self.tree["seed"]

    @property
    def backend(self):
        return self.tree["backend"]

    @property
    def output_dir(self):
        return self.tree["output_dir"]

    @property
    def regimes(self):
        return tuple(self.tree["regimes"])

    def train_config(self):
        return TrainConfig(**self.tree["train"])

    def lif_config(self):
        lif = self.tree["lif"]
        return LIFConfig(steps=lif["steps"], leak=lif["leak"],
                         eta=lif["eta"], threshold=lif["threshold"])

    def data_config(self):
        return DataConfig(**self.tree["data"])

    def energy_constants(self):
        e = self.tree["energy"]
        return EnergyConstants(e_mac_pj=e["e_mac_pj"], e_ac_pj=e["e_ac_pj"],
                               input_layer=e["input_layer"])

    def plan(self):
        d = self.tree["diagnostics"]
        return ExperimentPlan(
            train=self.train_config(),
            regimes=self.regimes,
            seed=self.seed,
            lif=self.lif_config(),
            layers=self.layers,
            diag_cadence=d["cadence"],
            prox_steps=d["prox_steps"],
            diagnostics_enabled=d["enabled"],
        )

    def to_json(self):
        return json.dumps(self.tree, indent=2, sort_keys=True) + "\n"


def resolve(raw, overrides=None):
    """Validate a raw config dict against the schema and fill defaults.

    ``overrides`` (same tree shape) wins over the file contents; the CLI
    maps its flags through here so the snapshot reflects what actually ran.
    """
    _reject_unknown(raw, DEFAULTS, "")
    tree = copy.deepcopy(DEFAULTS)
    _deep_update(tree, raw)
    if overrides:
        _reject_unknown(overrides, DEFAULTS, "")
        _deep_update(tree, overrides)

    _int(tree, "seed", lo=0)
    _choice(tree, "backend", BACKENDS)
    if not isinstance(tree["output_dir"], str) or not tree["output_dir"]:
        raise ConfigError("expected a non-empty string", path="output_dir")

    regimes = tree["regimes"]
    if not isinstance(regimes, list) or not regimes:
        raise ConfigError("expected a non-empty list of regimes", path="regimes")
    seen = set()
    for i, reg in enumerate(regimes):
        if reg not in REGIMES:
            raise ConfigError(f"must be one of {list(REGIMES)}, got {reg!r}",
                              path=f"regimes[{i}]")
        if reg in seen:
            raise ConfigError(f"duplicate regime {reg!r}", path=f"regimes[{i}]")
        seen.add(reg)

    _float(tree, "train.learning_rate", lo_open=0.0)
    _int(tree, "train.batch_size", lo=1)
    _int(tree, "train.local_epochs", lo=1)
    _float(tree, "train.mu", lo=0.0)
    _int(tree, "train.rounds", lo=1)

    _int(tree, "lif.steps", lo=1)
    _float(tree, "lif.leak", lo_open=0.0, hi=1.0)
    _float(tree, "lif.eta", lo_open=0.0)
    _float(tree, "lif.threshold", lo_open=0.0)

    _choice(tree, "data.source", ("synthetic", "file"))
    _int(tree, "data.num_clients", lo=1)
    _int(tree, "data.train_per_client", lo=1)
    _int(tree, "data.test_per_client", lo=1)
    _int(tree, "data.channels", lo=1)
    _int(tree, "data.length", lo=2)
    _int(tree, "data.num_classes", lo=2)
    _float(tree, "data.heterogeneity", lo=0.0, hi=1.0)
    _float(tree, "data.snr_db")
    if tree["data"]["path"] is not None and not isinstance(tree["data"]["path"], str):
        raise ConfigError("expected a string or null", path="data.path")
    _bool(tree, "data.normalize")
    if tree["data"]["resplit"] is not None:
        _float(tree, "data.resplit", lo_open=0.0)
        if tree["data"]["resplit"] >= 1.0:
            raise ConfigError("must be < 1", path="data.resplit")
    if tree["data"]["source"] == "file" and not tree["data"]["path"]:
        raise ConfigError("file source requires a path", path="data.path")
    if tree["data"]["source"] == "synthetic":
        if tree["data"]["test_per_client"] < tree["data"]["num_classes"]:
            raise ConfigError(
                "test split too small to cover every class",
                path="data.test_per_client")

    _bool(tree, "diagnostics.enabled")
    _int(tree, "diagnostics.cadence", lo=1)
    _int(tree, "diagnostics.prox_steps", lo=1)

    _float(tree, "energy.e_mac_pj", lo_open=0.0)
    _float(tree, "energy.e_ac_pj", lo_open=0.0)
    _choice(tree, "energy.input_layer", INPUT_CONVENTIONS)

    layers = _parse_layers(tree["model"]["architecture"], "model.architecture")
    if layers is not None and tree["data"]["source"] == "synthetic":
        # Full geometry is known up front for synthetic data; fail fast.
        try:
            ArchitectureSpec(
                input_channels=tree["data"]["channels"],
                input_length=tree["data"]["length"],
                num_classes=tree["data"]["num_classes"],
                layers=layers,
            )
        except DimensionError as exc:
            raise ConfigError(str(exc), path="model.architecture")

    return ResolvedConfig(tree=tree, layers=layers)
