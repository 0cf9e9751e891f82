"""Experiment configuration: an INI file with five sections.

Schema (``schema_version = 1``)::

    [meta]          schema_version
    [neuron]        variant, lam, tau, lam_u, lam_i, v_th, gamma,
                    mpiu_enabled, ciu_enabled
    [architecture]  layers (comma list, input first)
    [training]      epochs, lr, weight_decay, batch_size, seed, optimizer,
                    loss, cosine
    [data]          source, T, n_samples, features, train_fraction, rates,
                    noise, images, labels, events, height, width, bin_mode
    [outputs]       directory, formats, mac_mode, inhibitory_policy

Missing keys take their defaults.  Unknown sections or keys, bad values and
broken invariants raise :class:`ConfigError` naming the field path, e.g.
``neuron.gamma``.  The output directory may be overridden with the
``ILIFNET_OUT`` environment variable.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

from .neuron import NeuronParams, Variant

SCHEMA_VERSION = 1
OUT_ENV = "ILIFNET_OUT"

DATA_SOURCES = ("rate-pair", "temporal-order", "idx", "events")
OUTPUT_FORMATS = ("csv", "json")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class NeuronSection:
    variant: str = "ILIF"
    lam: float = 1.0
    tau: Optional[float] = None
    lam_u: float = 1.0
    lam_i: float = 0.03
    v_th: float = 1.0
    gamma: float = 1.0
    mpiu_enabled: bool = True
    ciu_enabled: bool = True

    def to_params(self) -> NeuronParams:
        """Neuron constants with the ablation toggles applied.

        A disabled unit has its decay forced to 0; non-inhibitory variants
        ignore both inhibitory decays.
        """
        variant = Variant(self.variant)
        lam_u = self.lam_u if variant.inhibitory and self.mpiu_enabled else 0.0
        lam_i = self.lam_i if variant.inhibitory and self.ciu_enabled else 0.0
        return NeuronParams(
            lam=self.lam,
            lam_u=lam_u,
            lam_i=lam_i,
            v_th=self.v_th,
            gamma=self.gamma,
            variant=variant,
            tau=self.tau,
        )


@dataclass(frozen=True)
class ArchitectureSection:
    layers: Tuple[int, ...] = (20, 64, 64, 2)


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 30
    lr: float = 0.1
    weight_decay: float = 5e-4
    batch_size: int = 32
    seed: int = 1234
    optimizer: str = "sgd"
    loss: str = "mse"
    cosine: bool = False


@dataclass(frozen=True)
class DataSection:
    source: str = "rate-pair"
    T: int = 8
    n_samples: int = 600
    features: int = 20
    train_fraction: float = 2 / 3
    rates: Tuple[float, ...] = (0.8, 0.2)
    noise: float = 0.02
    images: Optional[str] = None
    labels: Optional[str] = None
    events: Optional[str] = None
    height: int = 0
    width: int = 0
    bin_mode: str = "or"


@dataclass(frozen=True)
class OutputsSection:
    directory: str = "out"
    formats: Tuple[str, ...] = ("csv", "json")
    mac_mode: Optional[str] = None
    inhibitory_policy: str = "match"


SECTIONS = {
    "neuron": NeuronSection,
    "architecture": ArchitectureSection,
    "training": TrainingSection,
    "data": DataSection,
    "outputs": OutputsSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    neuron: NeuronSection = field(default_factory=NeuronSection)
    architecture: ArchitectureSection = field(default_factory=ArchitectureSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    data: DataSection = field(default_factory=DataSection)
    outputs: OutputsSection = field(default_factory=OutputsSection)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        validate(self)

    @property
    def params(self) -> NeuronParams:
        return self.neuron.to_params()

    @property
    def out_dir(self) -> str:
        return os.environ.get(OUT_ENV) or self.outputs.directory

    def updated(self, section: str, **changes) -> "ExperimentConfig":
        if section not in SECTIONS:
            raise ConfigError(section, "unknown section")
        return replace(self, **{section: replace(getattr(self, section), **changes)})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.updated("training", seed=int(seed))

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser["meta"] = {"schema_version": str(self.schema_version)}
        for name in SECTIONS:
            section = getattr(self, name)
            parser[name] = {
                f.name: _format(getattr(section, f.name))
                for f in fields(section)
                if getattr(section, f.name) is not None
            }
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_ini())


# ---------------------------------------------------------------------------
# text conversion


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(path: str, text: str, default):
    """Convert ``text`` to the type of the field's default value."""
    text = text.strip()
    kind = type(default)
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(f"expected a boolean, got {text!r}")
            return low in _TRUE
        if isinstance(default, tuple):
            item = type(default[0]) if default else str
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(item(p) for p in parts)
        if default is None:
            # the one optional number
            return None if text.lower() in ("", "none") else float(text)
        if kind is int:
            return int(text)
        return kind(text)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


_PATH_FIELDS = {"images", "labels", "events", "mac_mode"}


def parse_ini(text: str) -> ExperimentConfig:
    # "; note" after whitespace is a comment
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).splitlines()[0]) from None
    version = SCHEMA_VERSION
    if parser.has_section("meta"):
        for key in parser["meta"]:
            if key != "schema_version":
                raise ConfigError(f"meta.{key}", "unknown key")
        if "schema_version" in parser["meta"]:
            version = _parse("meta.schema_version", parser["meta"]["schema_version"], 0)
    if version != SCHEMA_VERSION:
        raise ConfigError("meta.schema_version", f"unsupported version {version}")

    sections = {}
    for name in parser.sections():
        if name != "meta" and name not in SECTIONS:
            raise ConfigError(name, "unknown section")
    for name, cls in SECTIONS.items():
        defaults = cls()
        known = {f.name: f for f in fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser[name].items():
                # configparser lowercases keys; T is the one uppercase field
                attr = "T" if key == "t" and name == "data" else key
                if attr not in known:
                    raise ConfigError(f"{name}.{key}", "unknown key")
                path = f"{name}.{attr}"
                if attr in _PATH_FIELDS:
                    values[attr] = raw.strip() or None
                else:
                    values[attr] = _parse(path, raw, getattr(defaults, attr))
        sections[name] = cls(**values)
    return ExperimentConfig(schema_version=version, **sections)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            return parse_ini(f.read())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# validation


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(path, message)


def validate(cfg: ExperimentConfig) -> None:
    n = cfg.neuron
    _require(n.variant in {v.value for v in Variant}, "neuron.variant", f"unknown variant {n.variant!r}")
    _require(n.gamma > 0, "neuron.gamma", "must be positive")
    _require(n.v_th > 0, "neuron.v_th", "must be positive")
    _require(0 < n.lam <= 1, "neuron.lam", "must lie in (0, 1]")
    _require(n.tau is None or n.tau > 1, "neuron.tau", "must exceed 1")
    _require(0 <= n.lam_u <= 1, "neuron.lam_u", "must lie in [0, 1]")
    _require(0 <= n.lam_i <= 1, "neuron.lam_i", "must lie in [0, 1]")

    layers = cfg.architecture.layers
    _require(len(layers) >= 2, "architecture.layers", "need an input and at least one layer")
    _require(all(s >= 1 for s in layers), "architecture.layers", "sizes must be positive")

    t = cfg.training
    _require(t.epochs >= 1, "training.epochs", "must be at least 1")
    _require(t.lr > 0, "training.lr", "must be positive")
    _require(t.weight_decay >= 0, "training.weight_decay", "must be nonnegative")
    _require(t.batch_size >= 1, "training.batch_size", "must be at least 1")
    _require(0 <= t.seed < 2**64, "training.seed", "must be an unsigned 64-bit integer")
    _require(t.optimizer == "sgd", "training.optimizer", "only 'sgd' is supported")
    _require(t.loss in ("mse", "ce"), "training.loss", "must be 'mse' or 'ce'")

    d = cfg.data
    _require(d.source in DATA_SOURCES, "data.source", f"must be one of {', '.join(DATA_SOURCES)}")
    _require(d.T >= 1, "data.T", "must be at least 1")
    _require(0 < d.train_fraction < 1, "data.train_fraction", "must lie in (0, 1)")
    if d.source in ("rate-pair", "temporal-order"):
        _require(d.n_samples >= 2, "data.n_samples", "need at least 2 samples")
        _require(d.features >= 2, "data.features", "need at least 2 features")
        _require(len(d.rates) == 2, "data.rates", "need two rates")
        _require(all(0 <= r <= 1 for r in d.rates), "data.rates", "rates must lie in [0, 1]")
        _require(0 <= d.noise <= 1, "data.noise", "must lie in [0, 1]")
        _require(d.source != "temporal-order" or d.T >= 4, "data.T", "temporal-order needs T >= 4")
        _require(layers[0] == d.features, "architecture.layers",
                 f"input size {layers[0]} does not match data.features = {d.features}")
    elif d.source == "idx":
        _require(bool(d.images), "data.images", "required for the idx source")
    else:
        _require(bool(d.events), "data.events", "required for the events source")
        _require(d.height >= 1 and d.width >= 1, "data.height", "height and width must be positive")
        _require(d.bin_mode in ("or", "count"), "data.bin_mode", "must be 'or' or 'count'")

    o = cfg.outputs
    _require(all(f in OUTPUT_FORMATS for f in o.formats), "outputs.formats",
             f"formats must be among {', '.join(OUTPUT_FORMATS)}")
    _require(o.mac_mode in (None, "ann", "snn-lif", "snn-ilif"), "outputs.mac_mode", "unknown MAC mode")
    _require(o.inhibitory_policy in ("match", "per-neuron"), "outputs.inhibitory_policy",
             "must be 'match' or 'per-neuron'")


__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "NeuronSection",
    "ArchitectureSection",
    "TrainingSection",
    "DataSection",
    "OutputsSection",
    "parse_ini",
    "load_config",
    "validate",
]
