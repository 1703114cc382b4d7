"""Piecewise-regime multivariate Hawkes simulator used as ground truth.

Each sub-interval of the partition is a regime with its own base rates,
excitation jumps and exponential decay constants.  Simulation is by Ogata
thinning with the current total intensity as the upper bound (valid between
events because exponential kernels only decay); the bound is refreshed after
every candidate and at regime boundaries.

Regime switching rule: an event excites the future with the parameters of
the regime it occurred in, so past kernels keep decaying unchanged across
boundaries while new events pick up the new regime's parameters.  Base rates
always follow the current regime.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Event, EventSequence, SubIntervalPartition


class SimulationLimitError(RuntimeError):
    """Raised when a simulated sequence exceeds the event cap."""


@dataclass(frozen=True)
class HawkesParams:
    """Per-regime parameters: base rates, excitation jumps, decay times.

    Shapes: ``mu`` is (R, U); ``alpha`` and ``eta`` are (R, U, U) with
    ``alpha[r, v, u]`` the jump on type v's intensity caused by a type-u
    event that occurred in regime r, decaying with time constant
    ``eta[r, v, u]``.
    """

    mu: np.ndarray
    alpha: np.ndarray
    eta: np.ndarray

    def __post_init__(self) -> None:
        mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        alpha = np.asarray(self.alpha, dtype=np.float64)
        eta = np.asarray(self.eta, dtype=np.float64)
        if alpha.ndim == 2:
            alpha = alpha[None]
        if eta.ndim == 2:
            eta = eta[None]
        r, u = mu.shape
        if alpha.shape != (r, u, u) or eta.shape != (r, u, u):
            raise ValueError(
                f"inconsistent shapes: mu {mu.shape}, alpha {alpha.shape}, eta {eta.shape}"
            )
        if np.any(mu < 0) or np.any(alpha < 0):
            raise ValueError("base rates and excitations must be non-negative")
        if np.any(eta <= 0):
            raise ValueError("decay time constants must be positive")
        for name, arr in (("mu", mu), ("alpha", alpha), ("eta", eta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_regimes(self) -> int:
        return self.mu.shape[0]

    @property
    def num_types(self) -> int:
        return self.mu.shape[1]

    def regime(self, k: int) -> "HawkesParams":
        return HawkesParams(self.mu[k : k + 1], self.alpha[k : k + 1], self.eta[k : k + 1])

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "alpha": self.alpha.tolist(),
            "eta": self.eta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HawkesParams":
        return cls(np.array(d["mu"]), np.array(d["alpha"]), np.array(d["eta"]))


@dataclass(frozen=True)
class PlantedGraph:
    """Binary adjacency per regime: edge (v, u) present iff alpha[r, v, u] > 0."""

    adjacency: np.ndarray  # (R, U, U) bool

    @classmethod
    def from_params(cls, params: HawkesParams) -> "PlantedGraph":
        adj = params.alpha > 0
        adj.setflags(write=False)
        return cls(adj)

    def to_dict(self) -> dict:
        return {"adjacency": self.adjacency.astype(int).tolist()}


def check_stationarity(params: HawkesParams) -> tuple[bool, list[tuple[int, int, int]]]:
    """True iff alpha * eta < 1 for every pair in every regime.

    Returns the offending (regime, target, source) triples alongside.
    """
    bad = np.argwhere(params.alpha * params.eta >= 1.0)
    offenders = [tuple(int(x) for x in idx) for idx in bad]
    return len(offenders) == 0, offenders


def intensity(
    params: HawkesParams,
    history: EventSequence | Sequence[Event],
    t: float,
    v: int,
    regime: int = 0,
) -> float:
    """Conditional intensity of type v at time t under one regime's parameters.

    All history events must occur strictly before t.
    """
    events = history.events if isinstance(history, EventSequence) else tuple(history)
    mu = params.mu[regime]
    alpha = params.alpha[regime]
    eta = params.eta[regime]
    lam = mu[v]
    for e in events:
        if e.t >= t:
            raise ValueError(f"history event at {e.t} is not before evaluation time {t}")
        lam += alpha[v, e.type_id] * np.exp(-(t - e.t) / eta[v, e.type_id])
    return float(lam)


class _KernelState:
    """Streaming excitation sums for the piecewise process.

    ``excitation[r, v, u]`` accumulates ``sum_j exp(-(t - t_j) / eta[r, v, u])``
    over past events of type u that occurred in regime r, so per-type rates
    are O(R*U^2) regardless of history length.
    """

    def __init__(self, params: HawkesParams):
        self.params = params
        self.excitation = np.zeros_like(params.eta)

    def advance(self, dt: float) -> None:
        if dt > 0:
            self.excitation *= np.exp(-dt / self.params.eta)

    def add_event(self, type_id: int, regime: int) -> None:
        self.excitation[regime, :, type_id] += 1.0

    def rates(self, regime: int) -> np.ndarray:
        boost = (self.params.alpha * self.excitation).sum(axis=(0, 2))
        return self.params.mu[regime] + boost

    def integrated_boost(self, dt: float) -> float:
        """Pooled integral of the excitation part over the next dt (no events inside)."""
        decay = 1.0 - np.exp(-dt / self.params.eta)
        return float(
            (self.params.alpha * self.params.eta * self.excitation * decay).sum()
        )


def simulate(
    params: HawkesParams,
    part: SubIntervalPartition,
    seed: int,
    seq_id: str = "sim",
    max_events: int = 10**6,
    enforce_stationarity: bool = True,
) -> EventSequence:
    """Draw one exact sample of the piecewise Hawkes process on [0, T]."""
    if part.num_intervals != params.num_regimes:
        raise ValueError(
            f"partition has {part.num_intervals} intervals but params define "
            f"{params.num_regimes} regimes"
        )
    if enforce_stationarity:
        ok, offenders = check_stationarity(params)
        if not ok:
            raise ValueError(f"non-stationary parameters at (regime, v, u) = {offenders}")
    rng = np.random.default_rng(seed)
    state = _KernelState(params)
    horizon = part.horizon
    num_types = params.num_types
    t = 0.0
    k = 0
    events: list[Event] = []
    while True:
        bound = float(state.rates(k).sum())
        next_boundary = part.boundaries[k + 1]
        if bound <= 0.0:
            t_cand = np.inf
        else:
            t_cand = t + rng.exponential(1.0 / bound)
        if t_cand >= next_boundary:
            state.advance(next_boundary - t)
            t = next_boundary
            k += 1
            if k >= part.num_intervals:
                break
            continue
        state.advance(t_cand - t)
        t = t_cand
        rates = state.rates(k)
        total = float(rates.sum())
        if rng.uniform() * bound <= total:
            v = int(rng.choice(num_types, p=rates / total))
            events.append(Event(t=t, type_id=v))
            state.add_event(v, k)
            if len(events) > max_events:
                raise SimulationLimitError(
                    f"exceeded {max_events} events by time {t:.4g} of {horizon:.4g} "
                    f"(regime {k}); parameters are likely supercritical"
                )
    return EventSequence(tuple(events), num_types=num_types, horizon=horizon, seq_id=seq_id)


def piecewise_rates(
    params: HawkesParams, part: SubIntervalPartition, seq: EventSequence, t: float
) -> np.ndarray:
    """Per-type intensity at time t given the events of ``seq`` before t."""
    state = _KernelState(params)
    prev = 0.0
    for e in seq.events:
        if e.t >= t:
            break
        state.advance(e.t - prev)
        state.add_event(e.type_id, part.index_of(e.t))
        prev = e.t
    state.advance(t - prev)
    return state.rates(part.index_of(min(t, part.horizon)))


def rescaled_intervals(
    params: HawkesParams, part: SubIntervalPartition, seq: EventSequence
) -> np.ndarray:
    """Compensator increments of the pooled process between consecutive events.

    Uses the closed-form integral of the exponential kernels; under the true
    parameters the increments are i.i.d. unit-exponential (time-rescaling).
    """
    state = _KernelState(params)
    increments = []
    t_prev = 0.0
    boundaries = list(part.boundaries)
    for e in seq.events:
        acc = 0.0
        a = t_prev
        while a < e.t:
            k = part.index_of(a) if a < part.horizon else part.num_intervals - 1
            b = min(e.t, boundaries[k + 1]) if k + 1 < len(boundaries) else e.t
            b = max(b, a)
            if b > a:
                acc += float(params.mu[k].sum()) * (b - a)
                acc += state.integrated_boost(b - a)
                state.advance(b - a)
            a = b
            if a == e.t:
                break
            if b == a and k == part.num_intervals - 1:
                break
        increments.append(acc)
        state.add_event(e.type_id, part.index_of(e.t))
        t_prev = e.t
    return np.array(increments, dtype=np.float64)


@dataclass
class SimulationConfig:
    """Configuration for the ``simulate`` CLI subcommand."""

    num_types: int
    horizon: float
    num_intervals: int
    num_sequences: int
    mu: list
    alpha: list
    eta: list
    seed: int = 0
    max_events: int = 10**6
    enforce_stationarity: bool = True

    def params(self) -> HawkesParams:
        mu = np.asarray(self.mu, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        eta = np.asarray(self.eta, dtype=np.float64)
        if mu.ndim == 1:
            mu = np.tile(mu, (self.num_intervals, 1))
        if alpha.ndim == 2:
            alpha = np.tile(alpha, (self.num_intervals, 1, 1))
        if eta.ndim == 2:
            eta = np.tile(eta, (self.num_intervals, 1, 1))
        params = HawkesParams(mu, alpha, eta)
        if params.num_regimes != self.num_intervals or params.num_types != self.num_types:
            raise ValueError("parameter shapes disagree with num_intervals/num_types")
        return params

    @classmethod
    def from_json(cls, path: str) -> "SimulationConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def simulate_dataset(config: SimulationConfig) -> tuple[list[EventSequence], dict]:
    """Simulate a corpus plus the ground-truth sidecar dictionary."""
    params = config.params()
    part = SubIntervalPartition.regular(config.horizon, config.num_intervals)
    sequences = [
        simulate(
            params,
            part,
            seed=config.seed + i,
            seq_id=f"sim-{i:04d}",
            max_events=config.max_events,
            enforce_stationarity=config.enforce_stationarity,
        )
        for i in range(config.num_sequences)
    ]
    truth = {
        "boundaries": list(part.boundaries),
        **params.to_dict(),
        **PlantedGraph.from_params(params).to_dict(),
    }
    return sequences, truth
