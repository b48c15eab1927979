"""Run configuration files.

Runs are described by INI files with ``key = value`` sections::

    [run]
    dataset = mnist
    architecture = 784-400-10
    output_dir = runs/baseline

    [model]
    variant = non-leaky
    tau = 1.0

    [cost]
    gamma1 = 1e-4
    t_ref = 8.0

    [train]
    eta = 1e-4
    epochs = 20
    seed = 0

    [sweep]
    parameter = gamma2
    values = 0, 1e-6, 5e-6, 1.3e-5
    seeds = 3

Unknown sections or keys are rejected rather than ignored, so typos fail
loudly. Every field has a default; a minimal file needs only the [run]
section. :func:`config_lines` renders the full effective configuration
for embedding in result files.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path
from typing import List, Optional, Tuple, Union

from .neuron import NeuronModelConfig, Variant
from .objectives import CostConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "parse_run_config",
           "config_lines"]


class ConfigError(ValueError):
    """A run configuration file is malformed."""


@dataclass
class RunConfig:
    dataset: str = "mnist"
    architecture: str = "784-400-10"
    output_dir: str = "runs/out"
    subset: int = 0              # 0 = full dataset
    tau_in: float = 5.0
    augment_seed: Optional[int] = None

    variant: str = "non-leaky"
    tau: float = 1.0
    v_threshold: float = 1.0
    padding: int = 0

    cost: CostConfig = field(default_factory=CostConfig)

    eta: float = 1e-4
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    shuffle: bool = True
    horizon: Optional[float] = None

    sweep_parameter: Optional[str] = None
    sweep_values: Tuple[float, ...] = ()
    sweep_seeds: int = 3

    def model(self) -> NeuronModelConfig:
        return NeuronModelConfig(variant=Variant.from_string(self.variant),
                                 tau=self.tau, v_threshold=self.v_threshold)

    def train_config(self, seed: Optional[int] = None,
                     cost: Optional[CostConfig] = None) -> TrainConfig:
        return TrainConfig(cost=cost if cost is not None else self.cost,
                           eta=self.eta, batch_size=self.batch_size,
                           epochs=self.epochs,
                           seed=self.seed if seed is None else seed,
                           shuffle=self.shuffle, horizon=self.horizon)


_RUN_KEYS = {"dataset", "architecture", "output_dir", "subset", "tau_in",
             "augment_seed"}
_MODEL_KEYS = {"variant", "tau", "v_threshold", "padding"}
_COST_KEYS = {f.name for f in dc_fields(CostConfig)}
_TRAIN_KEYS = {"eta", "batch_size", "epochs", "seed", "shuffle", "horizon"}
_SWEEP_KEYS = {"parameter", "values", "seeds"}
_SECTIONS = {"run": _RUN_KEYS, "model": _MODEL_KEYS, "cost": _COST_KEYS,
             "train": _TRAIN_KEYS, "sweep": _SWEEP_KEYS}
_SWEEPABLE = {"gamma1", "gamma2", "gamma3", "xi", "eta"}


def _get(parser: configparser.ConfigParser, section: str, key: str,
         default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return None
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None
    return raw


def parse_run_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = _SECTIONS[section]
        for key in parser.options(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    cfg = RunConfig()
    cfg.dataset = _get(parser, "run", "dataset", cfg.dataset)
    cfg.architecture = _get(parser, "run", "architecture", cfg.architecture)
    cfg.output_dir = _get(parser, "run", "output_dir", cfg.output_dir)
    cfg.subset = _get(parser, "run", "subset", cfg.subset) or 0
    cfg.tau_in = _get(parser, "run", "tau_in", cfg.tau_in)
    if parser.has_option("run", "augment_seed"):
        cfg.augment_seed = _get(parser, "run", "augment_seed", 0)

    cfg.variant = _get(parser, "model", "variant", cfg.variant)
    cfg.tau = _get(parser, "model", "tau", cfg.tau)
    cfg.v_threshold = _get(parser, "model", "v_threshold", cfg.v_threshold)
    cfg.padding = _get(parser, "model", "padding", cfg.padding)
    try:
        Variant.from_string(cfg.variant)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    kw = {}
    base = CostConfig()
    for f in dc_fields(CostConfig):
        default = getattr(base, f.name)
        if parser.has_option("cost", f.name):
            probe = default
            if probe is None:          # Optional[float] fields
                probe = 0.0
            kw[f.name] = _get(parser, "cost", f.name, probe)
    try:
        cfg.cost = CostConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"[cost] {exc}") from None

    cfg.eta = _get(parser, "train", "eta", cfg.eta)
    cfg.batch_size = _get(parser, "train", "batch_size", cfg.batch_size)
    cfg.epochs = _get(parser, "train", "epochs", cfg.epochs)
    cfg.seed = _get(parser, "train", "seed", cfg.seed)
    cfg.shuffle = _get(parser, "train", "shuffle", cfg.shuffle)
    if parser.has_option("train", "horizon"):
        cfg.horizon = _get(parser, "train", "horizon", 0.0)

    if parser.has_section("sweep"):
        cfg.sweep_parameter = _get(parser, "sweep", "parameter", None)
        if cfg.sweep_parameter is not None \
                and cfg.sweep_parameter not in _SWEEPABLE:
            raise ConfigError(
                f"[sweep] parameter must be one of {sorted(_SWEEPABLE)}, "
                f"got {cfg.sweep_parameter!r}")
        raw = _get(parser, "sweep", "values", None)
        if raw:
            try:
                cfg.sweep_values = tuple(float(v) for v in raw.split(","))
            except ValueError as exc:
                raise ConfigError(f"[sweep] values: {exc}") from None
        cfg.sweep_seeds = _get(parser, "sweep", "seeds", cfg.sweep_seeds)
        if cfg.sweep_seeds < 1:
            raise ConfigError("[sweep] seeds must be at least 1")

    for name, value in (("tau_in", cfg.tau_in), ("eta", cfg.eta)):
        if value is None or value <= 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.batch_size < 1 or cfg.epochs < 0:
        raise ConfigError("batch_size must be >= 1 and epochs >= 0")
    if cfg.dataset not in ("mnist", "cifar10", "iris"):
        raise ConfigError(f"unknown dataset {cfg.dataset!r} "
                          "(expected mnist, cifar10, or iris)")
    return cfg


def load_run_config(path: Union[str, Path]) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_run_config(p.read_text())


def config_lines(cfg: RunConfig) -> List[str]:
    """The full effective configuration as ``section.key = value`` lines."""
    out = []
    for label, pairs in (
        ("run", [("dataset", cfg.dataset), ("architecture", cfg.architecture),
                 ("output_dir", cfg.output_dir), ("subset", cfg.subset),
                 ("tau_in", cfg.tau_in), ("augment_seed", cfg.augment_seed)]),
        ("model", [("variant", cfg.variant), ("tau", cfg.tau),
                   ("v_threshold", cfg.v_threshold),
                   ("padding", cfg.padding)]),
        ("cost", [(f.name, getattr(cfg.cost, f.name))
                  for f in dc_fields(CostConfig)]),
        ("train", [("eta", cfg.eta), ("batch_size", cfg.batch_size),
                   ("epochs", cfg.epochs), ("seed", cfg.seed),
                   ("shuffle", cfg.shuffle), ("horizon", cfg.horizon)]),
        ("sweep", [("parameter", cfg.sweep_parameter),
                   ("values", ",".join(repr(v) for v in cfg.sweep_values)),
                   ("seeds", cfg.sweep_seeds)]),
    ):
        for key, value in pairs:
            out.append(f"{label}.{key} = {value}")
    return out
