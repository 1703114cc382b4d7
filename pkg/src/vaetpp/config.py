"""Experiment configuration: one flat record mirrored by the JSON config file."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import torch

MODEL_NAMES = ("vaetpp", "vaetpp-static", "exponential", "lognormmix")
_DTYPES = {"float64": torch.float64, "float32": torch.float32}


@dataclass
class ExperimentConfig:
    model: str = "vaetpp"
    num_intervals: int = 5
    embed_dim: int = 64
    hidden_dim: int = 64
    num_mix_components: int = 16
    num_edge_types: int = 2
    temperature: float = 0.5
    temperature_start: float | None = None  # e.g. 5.0 to anneal down to `temperature`
    anneal_epochs: int = 0
    num_elbo_samples: int = 1
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    deterministic: bool = True
    dtype: str = "float64"
    log_train_nll: bool = False

    def __post_init__(self) -> None:
        self.split_fractions = tuple(self.split_fractions)
        self.loss_weights = tuple(self.loss_weights)

    def validate(self) -> None:
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_NAMES}")
        positives = {
            "num_intervals": self.num_intervals,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "num_mix_components": self.num_mix_components,
            "temperature": self.temperature,
            "num_elbo_samples": self.num_elbo_samples,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
        }
        for name, value in positives.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.num_edge_types < 2:
            raise ValueError("num_edge_types must be at least 2 (type 0 = no dependency)")
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split_fractions}")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ValueError(f"loss weights must be three non-negative values")
        if self.temperature_start is not None and self.temperature_start <= 0:
            raise ValueError("temperature_start must be positive")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {tuple(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def temperature_at(self, epoch: int) -> float:
        """Linearly annealed concrete temperature for the given epoch."""
        if self.temperature_start is None or self.anneal_epochs <= 0:
            return self.temperature
        frac = min(epoch / self.anneal_epochs, 1.0)
        return self.temperature_start + frac * (self.temperature - self.temperature_start)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
