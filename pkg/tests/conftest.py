"""Shared helpers: toy data builders and the finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from vaetpp.data import Event, EventSequence
from vaetpp.model import VAETPP


def toy_sequence(
    num_types: int = 2,
    num_events: int = 6,
    horizon: float = 6.0,
    seq_id: str = "toy",
    seed: int = 0,
) -> EventSequence:
    """Deterministic pseudo-random sequence with all types represented."""
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.05, horizon * 0.98, size=num_events))
    types = np.array([i % num_types for i in range(num_events)])
    rng.shuffle(types)
    events = tuple(Event(float(t), int(u)) for t, u in zip(times, types))
    return EventSequence(events, num_types=num_types, horizon=horizon, seq_id=seq_id)


def small_model(
    num_types: int = 2,
    num_intervals: int = 2,
    hidden: int = 8,
    num_mix: int = 2,
    num_edge_types: int = 2,
    seed: int = 0,
) -> VAETPP:
    torch.manual_seed(seed)
    return VAETPP(
        num_types=num_types,
        num_intervals=num_intervals,
        embed_dim=hidden,
        hidden_dim=hidden,
        num_mix_components=num_mix,
        num_edge_types=num_edge_types,
    )


def finite_difference_gradcheck(
    fn,
    params: list[torch.Tensor],
    h: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``fn`` must recompute the scalar objective from the current parameter
    values on every call (any sampling inside must be driven by a fixed
    seed).  Parameters are perturbed in place through detached views.
    """
    value = fn()
    grads = torch.autograd.grad(value, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        gflat = (
            torch.zeros_like(flat) if g is None else g.detach().reshape(-1)
        )
        n = flat.numel()
        if max_coords_per_tensor is None or n <= max_coords_per_tensor:
            coords = range(n)
        else:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        for c in coords:
            orig = float(flat[c])
            flat[c] = orig + h
            f_plus = float(fn().detach())
            flat[c] = orig - h
            f_minus = float(fn().detach())
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ad = float(gflat[c])
            err = abs(ad - fd) / max(abs(ad), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
