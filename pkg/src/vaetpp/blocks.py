"""Neural primitives: dense maps, concrete sampling, categorical KL and
log-normal mixture operations.

Everything here is a pure tensor-in/tensor-out computation; random sampling
takes an explicit ``torch.Generator`` so callers own determinism.  Gated
recurrent cells are taken from ``torch.nn.GRUCell`` (standard update rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

LOG_SIGMA_MIN = math.log(1e-3)
LOG_SIGMA_MAX = math.log(1e3)
_LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = {
    "elu": torch.nn.functional.elu,
    "relu": torch.relu,
    "identity": lambda x: x,
    "softmax": lambda x: torch.softmax(x, dim=-1),
    "exp": torch.exp,
}


class ShapeError(ValueError):
    """Raised when an input's trailing dimension disagrees with a layer."""


class MLP(nn.Module):
    """Affine layers with named activations.

    ``widths`` lists the input width followed by each layer's output width;
    ``activations`` is one name per layer (or a single name applied to all
    layers but the last, which defaults to identity).
    """

    def __init__(self, widths: Sequence[int], activations: Sequence[str] | str = "relu"):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        n_layers = len(widths) - 1
        if isinstance(activations, str):
            activations = [activations] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ValueError(f"expected {n_layers} activations, got {len(activations)}")
        for name in activations:
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")
        self.activations = list(activations)
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1]) for i in range(n_layers)
        )
        self.in_width = widths[0]
        self.out_width = widths[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_width:
            raise ShapeError(f"expected input width {self.in_width}, got {x.shape[-1]}")
        for layer, name in zip(self.layers, self.activations):
            x = _ACTIVATIONS[name](layer(x))
        return x


@dataclass
class ConcreteSample:
    """Relaxed one-hot sample over edge types (entries >= 0, sum to 1)."""

    value: torch.Tensor
    temperature: float

    def validate(self, atol: float = 1e-6) -> None:
        if torch.any(self.value < -atol):
            raise ValueError("concrete sample has negative entries")
        total = self.value.sum(dim=-1)
        if torch.any((total - 1.0).abs() > atol):
            raise ValueError("concrete sample does not lie on the simplex")


def gumbel_softmax_sample(
    logits: torch.Tensor,
    temperature: float,
    generator: torch.Generator | None = None,
    hard: bool = False,
) -> ConcreteSample:
    """Reparameterized concrete sample: softmax((logits + gumbel) / temperature).

    With ``hard=True`` the forward value is the one-hot argmax (an exact
    categorical sample, via the Gumbel-max trick) while gradients follow the
    relaxed sample (straight-through).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype)
    gumbels = -torch.log(-torch.log(u + 1e-20) + 1e-20)
    soft = torch.softmax((logits + gumbels) / temperature, dim=-1)
    if hard:
        index = soft.argmax(dim=-1, keepdim=True)
        one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
        value = one_hot + soft - soft.detach()
    else:
        value = soft
    return ConcreteSample(value=value, temperature=float(temperature))


def categorical_kl(q_logits: torch.Tensor, p_logits: torch.Tensor) -> torch.Tensor:
    """KL(softmax(q) || softmax(p)) over the trailing dimension, log-sum-exp stable."""
    log_q = torch.log_softmax(q_logits, dim=-1)
    log_p = torch.log_softmax(p_logits, dim=-1)
    return (log_q.exp() * (log_q - log_p)).sum(dim=-1)


@dataclass
class MixtureParams:
    """Log-normal mixture parameters; trailing dimension indexes components."""

    omega: torch.Tensor  # mixture weights, simplex
    mu: torch.Tensor     # log-time means
    sigma: torch.Tensor  # log-time standard deviations, positive

    @property
    def num_components(self) -> int:
        return self.omega.shape[-1]

    def validate(self, atol: float = 1e-6) -> None:
        if self.omega.shape != self.mu.shape or self.mu.shape != self.sigma.shape:
            raise ShapeError("omega, mu and sigma must share a shape")
        if torch.any(self.omega < -atol):
            raise ValueError("mixture weights must be non-negative")
        if torch.any((self.omega.sum(dim=-1) - 1.0).abs() > atol):
            raise ValueError("mixture weights must sum to one")
        if torch.any(self.sigma <= 0):
            raise ValueError("standard deviations must be positive")


def lognormal_mixture_logpdf(tau: torch.Tensor | float, params: MixtureParams) -> torch.Tensor:
    """Log-density of positive inter-event times under the mixture.

    Broadcasts ``tau`` against the leading shape of the parameters; computed
    with log-sum-exp over components.
    """
    tau = torch.as_tensor(tau, dtype=params.mu.dtype)
    if torch.any(tau <= 0):
        raise ValueError("inter-event times must be positive")
    log_tau = torch.log(tau)[..., None]
    z = (log_tau - params.mu) / params.sigma
    log_comp = (
        torch.log(params.omega)
        - log_tau
        - torch.log(params.sigma)
        - 0.5 * _LOG_2PI
        - 0.5 * z * z
    )
    return torch.logsumexp(log_comp, dim=-1)


def lognormal_mixture_mean(params: MixtureParams) -> torch.Tensor:
    """Closed-form mixture mean: sum_c omega_c * exp(mu_c + sigma_c^2 / 2)."""
    return (params.omega * torch.exp(params.mu + 0.5 * params.sigma**2)).sum(dim=-1)


class MixtureHeads(nn.Module):
    """Linear readouts mapping a hidden vector to valid mixture parameters.

    Weights go through a softmax, standard deviations through a bounded
    exponent (sigma is clamped to [1e-3, 1e3] to keep the likelihood finite
    on near-duplicate inter-event times), means are unconstrained.
    """

    def __init__(self, hidden_dim: int, num_components: int):
        super().__init__()
        self.weight_head = nn.Linear(hidden_dim, num_components)
        self.mean_head = nn.Linear(hidden_dim, num_components)
        self.log_sigma_head = nn.Linear(hidden_dim, num_components)
        self.in_width = hidden_dim

    def forward(self, h: torch.Tensor) -> MixtureParams:
        if h.shape[-1] != self.in_width:
            raise ShapeError(f"expected hidden width {self.in_width}, got {h.shape[-1]}")
        omega = torch.softmax(self.weight_head(h), dim=-1)
        log_sigma = torch.clamp(self.log_sigma_head(h), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return MixtureParams(omega=omega, mu=self.mean_head(h), sigma=torch.exp(log_sigma))


def save_named_tensors(path: str, tensors: dict[str, torch.Tensor]) -> None:
    """Persist a flat name -> tensor archive (little-endian npz)."""
    np.savez(path, **{k: v.detach().cpu().numpy() for k, v in tensors.items()})


def load_named_tensors(path: str) -> dict[str, torch.Tensor]:
    with np.load(path) as archive:
        return {k: torch.from_numpy(archive[k].copy()) for k in archive.files}
