"""Experiment configuration: dataclasses, presets and strict JSON round trip."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

VARIANTS = (
    "PUQ",
    "w/o G",
    "w/o Dropout",
    "NLL w/ G",
    "NLL w/o G",
    "NLL+MD w/ G",
    "NLL+MD w/o G",
    "zero-filled+LSQ",
)

# row order of the ablation table
ABLATION_VARIANTS = (
    "w/o Dropout",
    "w/o G",
    "PUQ",
    "NLL w/o G",
    "NLL w/ G",
    "NLL+MD w/o G",
    "NLL+MD w/ G",
)

PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass
class PhantomConfig:
    height: int = 64
    width: int = 64
    n_regions_min: int = 6
    n_regions_max: int = 10
    t1_range: list = field(default_factory=lambda: [300.0, 2000.0])
    t2_range: list = field(default_factory=lambda: [40.0, 250.0])
    pd_range: list = field(default_factory=lambda: [0.5, 1.0])
    # explicit ellipses [{center, semi_axes, angle, t1, t2, pd}]; null draws random phantoms
    regions: typing.Optional[list] = None


@dataclass
class ReconSection:
    iterations: int = 5
    hidden: int = 16
    epochs: int = 50
    lr: float = 0.01
    batch_size: int = 4
    clip: float = 0.01


@dataclass
class FitSection:
    hidden: int = 64
    layers: int = 5
    epochs: int = 200
    lr: float = 0.001
    batch_size: int = 1024


@dataclass
class ExperimentConfig:
    preset: str = "desk"
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    sequence: str = "T2prep"
    timings: typing.Optional[list] = None  # null: the standard schedule of the sequence
    coils: int = 4
    accel: float = 4.0
    acs_frac: float = 0.06
    snr: typing.Optional[float] = 30.0  # null: noiseless
    n_train: int = 28
    n_val: int = 6
    n_test: int = 6
    dropout: float = 0.3
    mc_samples: int = 20
    variant: str = "PUQ"
    repeats: int = 1
    seed: int = 0
    seeds: typing.Optional[list] = None  # explicit per-repeat seeds; null: seed + r
    data_seed: int = 0
    recon: ReconSection = field(default_factory=ReconSection)
    fit: FitSection = field(default_factory=FitSection)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.sequence not in ("T2prep", "MOLLI"):
            raise ConfigError(f"unknown sequence {self.sequence!r}")
        if not 1 <= self.accel <= 12:
            raise ConfigError(f"acceleration must be in [1, 12], got {self.accel}")
        if not 0 < self.acs_frac < 1:
            raise ConfigError("acs_frac must be in (0, 1)")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.mc_samples < 1 or self.repeats < 1 or self.coils < 1:
            raise ConfigError("mc_samples, repeats and coils must be >= 1")
        if min(self.n_train, self.n_test) < 1 or self.n_val < 0:
            raise ConfigError("need at least one training and one test slice")
        if self.seeds is not None and len(self.seeds) != self.repeats:
            raise ConfigError("seeds must list one seed per repeat")

    @property
    def repeat_seeds(self) -> list[int]:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.seed + r for r in range(self.repeats)]

    @property
    def n_slices(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def parameter(self) -> str:
        return "T2" if self.sequence == "T2prep" else "T1"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from err
        return cls.from_dict(data)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    missing = [n for n in names if n not in data]
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")
    kwargs = {}
    for name in names:
        value = data[name]
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, f"{where}.{name}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(f"{where}: {err}") from err


def desk_config(**changes) -> ExperimentConfig:
    return ExperimentConfig(**changes)


def paper_config(**changes) -> ExperimentConfig:
    base = dict(
        preset="paper",
        phantom=PhantomConfig(height=160, width=160),
        coils=8,
        accel=8.0,
        n_train=280,
        n_val=60,
        n_test=60,
        mc_samples=100,
        recon=ReconSection(hidden=64, epochs=2000, batch_size=32),
        fit=FitSection(epochs=200),
    )
    base.update(changes)
    return ExperimentConfig(**base)


def preset_config(name: str, **changes) -> ExperimentConfig:
    if name == "desk":
        return desk_config(**changes)
    if name == "paper":
        return paper_config(**changes)
    raise ConfigError(f"unknown preset {name!r}")


# sweep grids per preset
SWEEP_GRIDS = {
    "paper": {"mc_samples": [10, 20, 50, 100, 200], "dropout": [0.2, 0.3, 0.4], "accel": [6, 8, 10]},
    "desk": {"mc_samples": [10, 20, 50, 100, 200], "dropout": [0.2, 0.3, 0.4], "accel": [2, 4, 6]},
}

# ACS fraction paired with each acceleration of the full-scale sweep
PAPER_ACS = {6: 0.06, 8: 0.06, 10: 0.08}
