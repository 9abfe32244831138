"""Declarative run configuration (YAML or JSON)."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .encoder import EncoderConfig
from .pairs import SamplerConfig
from .synth import SynthConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    min_freq: int = 2
    threshold: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = d or {}
        unknown = set(d) - {"encoder", "train", "sampler", "min_freq", "threshold", "synth"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            encoder=EncoderConfig.from_dict(d.get("encoder", {})),
            train=TrainConfig.from_dict(d.get("train", {})),
            sampler=SamplerConfig(**d.get("sampler", {})),
            min_freq=d.get("min_freq", 2),
            threshold=d.get("threshold", 0.5),
        )


def read_file(path) -> dict:
    # JSON is a subset of YAML, so one loader serves both
    return yaml.safe_load(Path(path).read_text()) or {}


def load_run_config(path=None) -> RunConfig:
    return RunConfig.from_dict(read_file(path) if path else {})


def load_synth_config(path=None) -> SynthConfig:
    if path is None:
        return SynthConfig()
    d = read_file(path)
    return SynthConfig.from_dict(d.get("synth", d))
